//! Line-oriented g-code model with byte-exact round-tripping and an
//! absolute-extrusion simulator.
//!
//! Accepted grammar, one line at a time:
//!
//! ```text
//! line    := blank | comment | command
//! blank   := whitespace*
//! comment := whitespace* ';' text
//! command := CODE (ws PARAM)* ws* (';' text)?
//! CODE    := [A-Z] [0-9]+                 e.g. G1, M82, T0
//! PARAM   := [A-Z] decimal                e.g. X12.5, E0.03125, S200
//! decimal := [+-]? ( [0-9]+ ( '.' [0-9]* )? | '.' [0-9]+ )
//! ```
//!
//! Every line keeps its original text, so serializing an unmodified document
//! reproduces the input exactly. Edited lines are re-rendered from their
//! tokens with single spaces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcodeError {
    #[error("malformed line {text:?}: {reason}")]
    MalformedLine { text: String, reason: String },
    #[error("line {line_index}: {cause}")]
    MalformedFile {
        line_index: usize,
        #[source]
        cause: Box<GcodeError>,
    },
    #[error("line {line_index}: relative extrusion (M83) is not supported")]
    RelativeExtrusion { line_index: usize },
    #[error("line {line_index}: layer marker {layer} does not increase")]
    LayerOrder { line_index: usize, layer: i64 },
    #[error("input is not valid UTF-8 text")]
    NotText,
}

/// A command identifier such as `G1` or `M104`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Code {
    pub letter: char,
    pub number: u32,
}

impl Code {
    pub const G0: Code = Code::new('G', 0);
    pub const G1: Code = Code::new('G', 1);
    pub const G92: Code = Code::new('G', 92);
    pub const M82: Code = Code::new('M', 82);
    pub const M83: Code = Code::new('M', 83);

    pub const fn new(letter: char, number: u32) -> Self {
        Code { letter, number }
    }

    pub fn is_move(&self) -> bool {
        *self == Code::G0 || *self == Code::G1
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.letter, self.number)
    }
}

/// A decimal number that remembers how it was written.
#[derive(Debug, Clone, PartialEq)]
pub struct Decimal {
    text: String,
    value: f64,
}

impl Decimal {
    pub fn parse(text: &str) -> Option<Decimal> {
        let digits = text.strip_prefix(['+', '-']).unwrap_or(text);
        let (int, frac) = match digits.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (digits, None),
        };
        let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        let ok = all_digits(int)
            && frac.is_none_or(all_digits)
            && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
        if !ok {
            return None;
        }
        let value = text.parse::<f64>().ok()?;
        Some(Decimal {
            text: text.to_string(),
            value,
        })
    }

    /// Fixed-point rendering with exactly `decimals` digits after the point.
    pub fn fixed(value: f64, decimals: usize) -> Decimal {
        let text = format!("{value:.decimals$}");
        let value = text.parse().expect("formatted float parses");
        Decimal { text, value }
    }

    /// Shortest text that parses back to exactly `value`.
    pub fn minimal(value: f64) -> Decimal {
        Decimal {
            text: format!("{value}"),
            value,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of digits after the decimal point as written.
    pub fn decimals(&self) -> u32 {
        self.text
            .split_once('.')
            .map_or(0, |(_, frac)| frac.len() as u32)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub axis: char,
    pub value: Decimal,
}

impl Param {
    pub fn new(axis: char, value: Decimal) -> Self {
        Param { axis, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    Command,
    Comment,
    Blank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcodeLine {
    raw: String,
    kind: LineKind,
    code: Option<Code>,
    params: Vec<Param>,
    comment: Option<String>,
    line_index: usize,
}

impl GcodeLine {
    /// Builds a command line and renders its text.
    pub fn command(code: Code, params: Vec<Param>, comment: Option<String>) -> Self {
        let mut raw = code.to_string();
        for p in &params {
            raw.push(' ');
            raw.push(p.axis);
            raw.push_str(p.value.text());
        }
        if let Some(c) = &comment {
            raw.push_str(" ;");
            raw.push_str(c);
        }
        GcodeLine {
            raw,
            kind: LineKind::Command,
            code: Some(code),
            params,
            comment,
            line_index: 0,
        }
    }

    pub fn comment_line(text: &str) -> Self {
        GcodeLine {
            raw: format!(";{text}"),
            kind: LineKind::Comment,
            code: None,
            params: Vec::new(),
            comment: Some(text.to_string()),
            line_index: 0,
        }
    }

    pub fn raw_text(&self) -> &str {
        &self.raw
    }

    pub fn kind(&self) -> LineKind {
        self.kind
    }

    pub fn code(&self) -> Option<Code> {
        self.code
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn comment(&self) -> Option<&str> {
        self.comment.as_deref()
    }

    pub fn line_index(&self) -> usize {
        self.line_index
    }

    pub fn param(&self, axis: char) -> Option<&Decimal> {
        self.params
            .iter()
            .find(|p| p.axis == axis)
            .map(|p| &p.value)
    }

    pub fn is_code(&self, code: Code) -> bool {
        self.code == Some(code)
    }

    /// `G1` carrying an `E` parameter.
    pub fn is_extruding_g1(&self) -> bool {
        self.is_code(Code::G1) && self.param('E').is_some()
    }

    /// Layer number of a `;LAYER:n` marker comment.
    pub fn layer_marker(&self) -> Option<i64> {
        if self.kind != LineKind::Comment {
            return None;
        }
        self.comment
            .as_deref()?
            .trim()
            .strip_prefix("LAYER:")?
            .trim()
            .parse()
            .ok()
    }

    /// Copy with a different code and parameter list; the comment is kept.
    pub fn with_code_and_params(&self, code: Code, params: Vec<Param>) -> Self {
        GcodeLine::command(code, params, self.comment.clone())
    }

    /// Copy with one parameter's value replaced (or appended when absent).
    pub fn with_param(&self, axis: char, value: Decimal) -> Self {
        let mut params = self.params.clone();
        match params.iter_mut().find(|p| p.axis == axis) {
            Some(p) => p.value = value,
            None => params.push(Param::new(axis, value)),
        }
        let code = self.code.expect("with_param on a command line");
        GcodeLine::command(code, params, self.comment.clone())
    }
}

fn malformed(text: &str, reason: impl Into<String>) -> GcodeError {
    GcodeError::MalformedLine {
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parses a single line. `text` must not contain `\n`; a trailing `\r` is
/// tolerated and preserved.
pub fn parse_line(text: &str) -> Result<GcodeLine, GcodeError> {
    if text.contains('\n') {
        return Err(malformed(text, "embedded newline"));
    }
    let body = text.strip_suffix('\r').unwrap_or(text);
    let (code_part, comment) = match body.split_once(';') {
        Some((before, after)) => (before, Some(after.to_string())),
        None => (body, None),
    };
    let mut tokens = code_part.split_ascii_whitespace();
    let Some(first) = tokens.next() else {
        let kind = if comment.is_some() {
            LineKind::Comment
        } else {
            LineKind::Blank
        };
        return Ok(GcodeLine {
            raw: text.to_string(),
            kind,
            code: None,
            params: Vec::new(),
            comment,
            line_index: 0,
        });
    };

    let code = parse_code(first).ok_or_else(|| malformed(text, format!("bad code {first:?}")))?;
    let mut params: Vec<Param> = Vec::new();
    for tok in tokens {
        let mut chars = tok.chars();
        let axis = chars.next().expect("non-empty token");
        if !axis.is_ascii_uppercase() {
            return Err(malformed(text, format!("bad parameter {tok:?}")));
        }
        let value = Decimal::parse(chars.as_str())
            .ok_or_else(|| malformed(text, format!("parameter {axis} has no number")))?;
        if params.iter().any(|p| p.axis == axis) {
            return Err(malformed(text, format!("axis {axis} repeated")));
        }
        params.push(Param { axis, value });
    }
    Ok(GcodeLine {
        raw: text.to_string(),
        kind: LineKind::Command,
        code: Some(code),
        params,
        comment,
        line_index: 0,
    })
}

fn parse_code(tok: &str) -> Option<Code> {
    let mut chars = tok.chars();
    let letter = chars.next()?;
    let digits = chars.as_str();
    if !letter.is_ascii_uppercase() || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(Code::new(letter, digits.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMark {
    pub line_index: usize,
    pub layer: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcodeDocument {
    lines: Vec<GcodeLine>,
    layer_marks: Vec<LayerMark>,
    source_path: Option<String>,
    trailing_newline: bool,
}

impl GcodeDocument {
    /// Assembles a document from lines, renumbering them and re-deriving the
    /// layer marks.
    pub fn from_lines(mut lines: Vec<GcodeLine>) -> Result<Self, GcodeError> {
        let mut layer_marks: Vec<LayerMark> = Vec::new();
        for (i, line) in lines.iter_mut().enumerate() {
            line.line_index = i;
            if line.is_code(Code::M83) {
                return Err(GcodeError::RelativeExtrusion { line_index: i });
            }
            if let Some(layer) = line.layer_marker() {
                if layer_marks.last().is_some_and(|m| m.layer >= layer) {
                    return Err(GcodeError::LayerOrder {
                        line_index: i,
                        layer,
                    });
                }
                layer_marks.push(LayerMark {
                    line_index: i,
                    layer,
                });
            }
        }
        Ok(GcodeDocument {
            lines,
            layer_marks,
            source_path: None,
            trailing_newline: true,
        })
    }

    pub fn with_source_path(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn lines(&self) -> &[GcodeLine] {
        &self.lines
    }

    pub fn layer_marks(&self) -> &[LayerMark] {
        &self.layer_marks
    }

    pub fn source_path(&self) -> Option<&str> {
        self.source_path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn into_lines(self) -> Vec<GcodeLine> {
        self.lines
    }

    /// Rebuilds the document from edited lines, keeping the source path and
    /// newline convention.
    pub fn replace_lines(&self, lines: Vec<GcodeLine>) -> Result<Self, GcodeError> {
        let mut doc = GcodeDocument::from_lines(lines)?;
        doc.source_path = self.source_path.clone();
        doc.trailing_newline = self.trailing_newline;
        Ok(doc)
    }
}

pub fn parse_document(bytes: &[u8]) -> Result<GcodeDocument, GcodeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| GcodeError::NotText)?;
    if text.is_empty() {
        let mut doc = GcodeDocument::from_lines(Vec::new())?;
        doc.trailing_newline = false;
        return Ok(doc);
    }
    let trailing_newline = text.ends_with('\n');
    let body = if trailing_newline {
        &text[..text.len() - 1]
    } else {
        text
    };
    let lines = body
        .split('\n')
        .enumerate()
        .map(|(i, l)| {
            parse_line(l).map_err(|e| GcodeError::MalformedFile {
                line_index: i,
                cause: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut doc = GcodeDocument::from_lines(lines)?;
    doc.trailing_newline = trailing_newline;
    Ok(doc)
}

pub fn serialize(document: &GcodeDocument) -> Vec<u8> {
    let cap = document.lines.iter().map(|l| l.raw.len() + 1).sum();
    let mut out = Vec::with_capacity(cap);
    for (i, line) in document.lines.iter().enumerate() {
        if i > 0 {
            out.push(b'\n');
        }
        out.extend_from_slice(line.raw.as_bytes());
    }
    if document.trailing_newline && !document.lines.is_empty() {
        out.push(b'\n');
    }
    out
}

/// Machine state while stepping through a document in absolute extrusion mode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrinterState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub e: f64,
    /// Sum of positive E deltas.
    pub extruded_length: f64,
}

impl PrinterState {
    /// Applies one line and returns the filament it extruded.
    pub fn step(&mut self, line: &GcodeLine) -> f64 {
        let Some(code) = line.code() else { return 0.0 };
        if code.is_move() {
            if let Some(v) = line.param('X') {
                self.x = v.value();
            }
            if let Some(v) = line.param('Y') {
                self.y = v.value();
            }
            if let Some(v) = line.param('Z') {
                self.z = v.value();
            }
            if let Some(v) = line.param('E') {
                let target = v.value();
                let delta = target - self.e;
                self.e = target;
                if code == Code::G1 && delta > 0.0 {
                    self.extruded_length += delta;
                    return delta;
                }
            }
        } else if code == Code::G92 {
            for p in line.params() {
                match p.axis {
                    'X' => self.x = p.value.value(),
                    'Y' => self.y = p.value.value(),
                    'Z' => self.z = p.value.value(),
                    'E' => self.e = p.value.value(),
                    _ => {}
                }
            }
        }
        0.0
    }
}

/// Per-line extrusion amounts from a full simulation pass.
pub fn extrusion_trace(document: &GcodeDocument) -> Vec<f64> {
    let mut state = PrinterState::default();
    document.lines().iter().map(|l| state.step(l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    fn include(range: &mut Option<AxisRange>, v: f64) {
        match range {
            Some(r) => {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
            None => *range = Some(AxisRange { min: v, max: v }),
        }
    }
}

/// Extremes of the X/Y/Z values written on G0/G1 moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: Option<AxisRange>,
    pub y: Option<AxisRange>,
    pub z: Option<AxisRange>,
}

impl Bounds {
    pub fn is_empty(&self) -> bool {
        self.x.is_none() && self.y.is_none() && self.z.is_none()
    }

    /// `[xmin, xmax, ymin, ymax, zmin, zmax]`, zeros for axes never seen.
    pub fn flat(&self) -> [f64; 6] {
        let f = |r: Option<AxisRange>| r.map_or((0.0, 0.0), |r| (r.min, r.max));
        let (a, b) = f(self.x);
        let (c, d) = f(self.y);
        let (e, g) = f(self.z);
        [a, b, c, d, e, g]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrintSummary {
    pub final_e: f64,
    pub total_extruded: f64,
    pub bounds: Bounds,
    pub layer_count: usize,
    pub command_counts: BTreeMap<String, usize>,
    pub comment_lines: usize,
    pub blank_lines: usize,
    pub total_lines: usize,
    /// Decimal places of E values on G0/G1 moves -> occurrences.
    pub e_decimal_histogram: BTreeMap<u32, usize>,
}

impl PrintSummary {
    pub fn count(&self, code: &str) -> usize {
        self.command_counts.get(code).copied().unwrap_or(0)
    }
}

pub fn simulate(document: &GcodeDocument) -> PrintSummary {
    let mut state = PrinterState::default();
    let mut bounds = Bounds::default();
    let mut command_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut e_decimal_histogram: BTreeMap<u32, usize> = BTreeMap::new();
    let (mut comment_lines, mut blank_lines) = (0, 0);
    let mut top_extruding_z: Option<f64> = None;
    let mut z_layers = 0;

    for line in document.lines() {
        match line.kind() {
            LineKind::Blank => blank_lines += 1,
            LineKind::Comment => comment_lines += 1,
            LineKind::Command => {
                let code = line.code().expect("command has a code");
                *command_counts.entry(code.to_string()).or_default() += 1;
                if code.is_move() {
                    for (axis, slot) in [('X', &mut bounds.x), ('Y', &mut bounds.y), ('Z', &mut bounds.z)] {
                        if let Some(v) = line.param(axis) {
                            AxisRange::include(slot, v.value());
                        }
                    }
                    if let Some(e) = line.param('E') {
                        *e_decimal_histogram.entry(e.decimals()).or_default() += 1;
                    }
                }
            }
        }
        if state.step(line) > 0.0 && top_extruding_z.is_none_or(|z| state.z > z) {
            top_extruding_z = Some(state.z);
            z_layers += 1;
        }
    }

    let layer_count = if document.layer_marks().is_empty() {
        z_layers
    } else {
        document.layer_marks().len()
    };
    PrintSummary {
        final_e: state.e,
        total_extruded: state.extruded_length,
        bounds,
        layer_count,
        command_counts,
        comment_lines,
        blank_lines,
        total_lines: document.len(),
        e_decimal_histogram,
    }
}
