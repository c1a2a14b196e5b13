//! The six material-dropping compromise strategies and the victim planner.
//!
//! All strategies except the global 50% reduction attack one in every four
//! extruding `G1` moves inside the middle half of the layers. Because E is
//! an absolute register, the move after a tampered one silently absorbs the
//! missing filament, so the final E value of the file does not change.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcode::{self, Code, Decimal, GcodeDocument, GcodeLine, Param, PrinterState};
use crate::seed;
use crate::synth::{DatasetId, DatasetManifest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutateError {
    #[error("document has no layer markers")]
    NoLayers,
    #[error("nothing to mutate in the selected range")]
    EmptyRange,
    #[error("requested {requested} victims but the dataset has {available} files")]
    CountsExceedDataset { requested: usize, available: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("rebuilding document: {0}")]
    Rebuild(#[from] gcode::GcodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "ID1")]
    Id1,
    #[serde(rename = "ID2")]
    Id2,
    #[serde(rename = "ID3")]
    Id3,
    #[serde(rename = "ID4")]
    Id4,
    #[serde(rename = "ID5")]
    Id5,
    #[serde(rename = "ID6")]
    Id6,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::Id1,
        StrategyId::Id2,
        StrategyId::Id3,
        StrategyId::Id4,
        StrategyId::Id5,
        StrategyId::Id6,
    ];

    pub fn default_range(self) -> RangeMode {
        match self {
            StrategyId::Id3 => RangeMode::Full100,
            _ => RangeMode::Middle50,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            StrategyId::Id1 => "every 4th extruding G1 becomes a G0 travel",
            StrategyId::Id2 => "every 4th extruding G1 becomes a G0 travel followed by a stationary blob",
            StrategyId::Id3 => "every extrusion halved",
            StrategyId::Id4 => "every 4th extruding G1 repeats the previous E value",
            StrategyId::Id5 => "every 4th extruding G1 gets the previous E value plus 0.0001",
            StrategyId::Id6 => "every 4th extruding G1 deleted",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = StrategyId::ALL.iter().position(|s| s == self).expect("listed") + 1;
        write!(f, "ID{n}")
    }
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected ID1..ID6)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeMode {
    Middle50,
    Full100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: StrategyId,
    pub range_mode: RangeMode,
}

impl Strategy {
    pub fn new(id: StrategyId) -> Self {
        Strategy {
            id,
            range_mode: id.default_range(),
        }
    }
}

/// Every 4th extruding `G1` is targeted.
pub const DEFAULT_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationLog {
    pub file: String,
    pub strategy: Strategy,
    /// Indices into the original document.
    pub affected_line_indices: Vec<usize>,
    pub original_final_e: f64,
    pub mutated_final_e: f64,
    pub original_total_extruded: f64,
    pub mutated_total_extruded: f64,
    pub lines_deleted: usize,
    pub lines_converted: usize,
    pub blobs_added: usize,
    pub e_values_rewritten: usize,
}

/// Line span covered by a range mode. `Middle50` spans the layers
/// `[ceil(L/4), floor(3L/4))`; `Full100` spans everything from the first
/// layer marker to the end of the file.
pub fn select_range(document: &GcodeDocument, range_mode: RangeMode) -> Result<Range<usize>, MutateError> {
    let marks = document.layer_marks();
    if marks.is_empty() {
        return Err(MutateError::NoLayers);
    }
    let start_of = |layer: usize| marks.get(layer).map_or(document.len(), |m| m.line_index);
    match range_mode {
        RangeMode::Full100 => Ok(marks[0].line_index..document.len()),
        RangeMode::Middle50 => {
            let l = marks.len();
            let (first, end) = (l.div_ceil(4), 3 * l / 4);
            if first >= end {
                return Ok(start_of(first)..start_of(first));
            }
            Ok(start_of(first)..start_of(end))
        }
    }
}

pub fn apply_strategy(document: &GcodeDocument, strategy: Strategy) -> Result<(GcodeDocument, MutationLog), MutateError> {
    let span = select_range(document, strategy.range_mode)?;
    mutate_span(document, strategy, span, DEFAULT_STRIDE)
}

/// Applies a strategy to `span`, targeting the extruding `G1` moves at
/// 1-based ordinals `stride, 2*stride, ...` within it.
pub fn mutate_span(
    document: &GcodeDocument,
    strategy: Strategy,
    span: Range<usize>,
    stride: usize,
) -> Result<(GcodeDocument, MutationLog), MutateError> {
    if stride == 0 {
        return Err(MutateError::ZeroStride);
    }
    let mut out: Vec<GcodeLine> = Vec::with_capacity(document.len() + document.len() / stride);
    let mut log = MutationLog {
        file: document.source_path().unwrap_or_default().to_string(),
        strategy,
        affected_line_indices: Vec::new(),
        original_final_e: 0.0,
        mutated_final_e: 0.0,
        original_total_extruded: 0.0,
        mutated_total_extruded: 0.0,
        lines_deleted: 0,
        lines_converted: 0,
        blobs_added: 0,
        e_values_rewritten: 0,
    };
    // E register of the unmodified stream, and of the halved stream for ID3
    let mut original = PrinterState::default();
    let mut halved_e = 0.0;
    let mut ordinal = 0;

    for (i, line) in document.lines().iter().enumerate() {
        let e_before = original.e;
        original.step(line);
        let in_span = span.contains(&i);

        if strategy.id == StrategyId::Id3 {
            if line.is_code(Code::G92) && line.param('E').is_some() {
                halved_e = original.e;
            }
            match line.param('E').filter(|_| in_span && line.code().is_some_and(|c| c.is_move())) {
                Some(token) => {
                    halved_e += 0.5 * (original.e - e_before);
                    let decimals = token.decimals() as usize;
                    out.push(line.with_param('E', Decimal::fixed(halved_e, decimals)));
                    log.affected_line_indices.push(i);
                    log.e_values_rewritten += 1;
                }
                None => {
                    if line.code().is_some_and(|c| c.is_move()) && line.param('E').is_some() {
                        halved_e = original.e;
                    }
                    out.push(line.clone());
                }
            }
            continue;
        }

        let targeted = in_span && line.is_extruding_g1() && {
            ordinal += 1;
            ordinal % stride == 0
        };
        if !targeted {
            out.push(line.clone());
            continue;
        }
        log.affected_line_indices.push(i);
        match strategy.id {
            StrategyId::Id1 | StrategyId::Id2 => {
                let kept: Vec<Param> = line
                    .params()
                    .iter()
                    .filter(|p| matches!(p.axis, 'X' | 'Y' | 'Z'))
                    .cloned()
                    .collect();
                out.push(line.with_code_and_params(Code::G0, kept));
                log.lines_converted += 1;
                if strategy.id == StrategyId::Id2 {
                    let target = line.param('E').expect("extruding move").value();
                    out.push(GcodeLine::command(Code::G1, vec![Param::new('E', Decimal::minimal(target))], None));
                    log.blobs_added += 1;
                    log.e_values_rewritten += 1;
                }
            }
            StrategyId::Id4 => {
                out.push(line.with_param('E', Decimal::minimal(e_before)));
                log.e_values_rewritten += 1;
            }
            StrategyId::Id5 => {
                out.push(line.with_param('E', Decimal::minimal(e_before + 0.0001)));
                log.e_values_rewritten += 1;
            }
            StrategyId::Id6 => log.lines_deleted += 1,
            StrategyId::Id3 => unreachable!("handled above"),
        }
    }

    if log.affected_line_indices.is_empty() {
        return Err(MutateError::EmptyRange);
    }
    let mutated = document.replace_lines(out)?;
    let before = gcode::simulate(document);
    let after = gcode::simulate(&mutated);
    log.original_final_e = before.final_e;
    log.original_total_extruded = before.total_extruded;
    log.mutated_final_e = after.final_e;
    log.mutated_total_extruded = after.total_extruded;
    Ok((mutated, log))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Victim {
    pub path: String,
    pub strategy: StrategyId,
}

/// Which files get which strategy. Serialized as the ground-truth file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompromisePlan {
    pub dataset_id: DatasetId,
    pub seed: u64,
    pub victims: Vec<Victim>,
}

impl CompromisePlan {
    pub fn strategy_of(&self, path: &str) -> Option<StrategyId> {
        self.victims.iter().find(|v| v.path == path).map(|v| v.strategy)
    }
}

/// Draws victims uniformly without replacement. Strategies take their share
/// of the draw in ID order; victims are listed in manifest order.
pub fn plan_compromise(
    manifest: &DatasetManifest,
    per_strategy_counts: &BTreeMap<StrategyId, usize>,
    seed: u64,
) -> Result<CompromisePlan, MutateError> {
    let requested: usize = per_strategy_counts.values().sum();
    let available = manifest.len();
    if requested > available {
        return Err(MutateError::CountsExceedDataset { requested, available });
    }
    let mut rng = seed::rng(seed);
    let mut drawn = index::sample(&mut rng, available, requested).into_iter();
    let mut assigned: Vec<(usize, StrategyId)> = Vec::with_capacity(requested);
    for (&id, &count) in per_strategy_counts {
        assigned.extend(drawn.by_ref().take(count).map(|i| (i, id)));
    }
    assigned.sort_unstable();
    Ok(CompromisePlan {
        dataset_id: manifest.dataset_id,
        seed,
        victims: assigned
            .into_iter()
            .map(|(i, strategy)| Victim {
                path: manifest.entries[i].path.clone(),
                strategy,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcode::{extrusion_trace, parse_document, serialize, simulate};
    use crate::synth::{build_specimen, plan_dataset, SpecimenSpec};

    const SNIPPET: &[u8] = b"G1 X1 Y1 E1\nG1 X5 Y1 E2\nG1 X5 Y5 E3\n";

    fn layered(layers: usize) -> GcodeDocument {
        let mut text = String::from("G92 E0\n");
        let mut e = 0.0;
        for l in 0..layers {
            text.push_str(&format!(";LAYER:{l}\n"));
            for k in 0..8 {
                e += 0.5;
                text.push_str(&format!("G1 X{k} Y{l} E{e:.5}\n"));
            }
        }
        parse_document(text.as_bytes()).unwrap()
    }

    #[test]
    fn middle_half_of_twenty_layers() {
        let doc = layered(20);
        let span = select_range(&doc, RangeMode::Middle50).unwrap();
        let marks = doc.layer_marks();
        assert_eq!(span, marks[5].line_index..marks[15].line_index);
        let full = select_range(&doc, RangeMode::Full100).unwrap();
        assert_eq!(full, 1..doc.len());
    }

    #[test]
    fn single_layer_has_no_middle() {
        let doc = layered(1);
        assert!(select_range(&doc, RangeMode::Middle50).unwrap().is_empty());
        assert_eq!(apply_strategy(&doc, Strategy::new(StrategyId::Id1)), Err(MutateError::EmptyRange));
        let plain = parse_document(b"G1 X1 E1\n").unwrap();
        assert_eq!(select_range(&plain, RangeMode::Full100), Err(MutateError::NoLayers));
    }

    #[test]
    fn dropped_move_is_absorbed_by_the_next() {
        let doc = parse_document(SNIPPET).unwrap();
        let (m, log) = mutate_span(&doc, Strategy::new(StrategyId::Id1), 0..3, 2).unwrap();
        assert_eq!(serialize(&m), b"G1 X1 Y1 E1\nG0 X5 Y1\nG1 X5 Y5 E3\n");
        assert_eq!(extrusion_trace(&m), vec![1.0, 0.0, 2.0]);
        assert_eq!(simulate(&m).total_extruded, 3.0);
        assert_eq!(log.affected_line_indices, vec![1]);
        assert_eq!(log.lines_converted, 1);
    }

    #[test]
    fn blob_restores_material() {
        let doc = parse_document(SNIPPET).unwrap();
        let (m, log) = mutate_span(&doc, Strategy::new(StrategyId::Id2), 0..3, 2).unwrap();
        assert_eq!(serialize(&m), b"G1 X1 Y1 E1\nG0 X5 Y1\nG1 E2\nG1 X5 Y5 E3\n");
        assert_eq!(extrusion_trace(&m), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(log.blobs_added, 1);
    }

    #[test]
    fn repeat_previous_value_trims_decimals() {
        let doc = parse_document(b"G1 X1 E12.30000\nG1 X2 E12.34560\n").unwrap();
        let (m, _) = mutate_span(&doc, Strategy::new(StrategyId::Id4), 0..2, 2).unwrap();
        assert_eq!(m.lines()[1].param('E').unwrap().text(), "12.3");
        assert_eq!(m.lines()[1].raw_text(), "G1 X2 E12.3");
    }

    #[test]
    fn nudged_previous_value() {
        let doc = parse_document(b"G1 X1 E1.50000\nG1 X2 E3.00000\nG1 X3 E4.00000\n").unwrap();
        let (m, _) = mutate_span(&doc, Strategy::new(StrategyId::Id5), 0..3, 2).unwrap();
        let e = m.lines()[1].param('E').unwrap();
        assert_eq!(e.value(), 1.5 + 0.0001);
        assert_eq!(simulate(&m).final_e, 4.0);
    }

    #[test]
    fn deletion_and_halving_on_snippet() {
        let doc = parse_document(SNIPPET).unwrap();
        let (m, log) = mutate_span(&doc, Strategy::new(StrategyId::Id6), 0..3, 2).unwrap();
        assert_eq!(serialize(&m), b"G1 X1 Y1 E1\nG1 X5 Y5 E3\n");
        assert_eq!(log.lines_deleted, 1);

        let doc = parse_document(b"G1 X1 Y1 E1.00000\nG1 X5 Y1 E2.00000\nG1 X5 Y5 E3.00000\n").unwrap();
        let (m, log) = mutate_span(&doc, Strategy::new(StrategyId::Id3), 0..3, 4).unwrap();
        assert_eq!(serialize(&m), b"G1 X1 Y1 E0.50000\nG1 X5 Y1 E1.00000\nG1 X5 Y5 E1.50000\n");
        assert_eq!(log.e_values_rewritten, 3);
    }

    #[test]
    fn halving_respects_resets() {
        let doc = parse_document(b"G1 X1 E4.00\nG92 E0\nG1 X2 E2.00\n").unwrap();
        let (m, _) = mutate_span(&doc, Strategy::new(StrategyId::Id3), 0..3, 4).unwrap();
        assert_eq!(serialize(&m), b"G1 X1 E2.00\nG92 E0\nG1 X2 E1.00\n");
    }

    #[test]
    fn strategies_on_generated_file() {
        let spec = SpecimenSpec::tensile_bar();
        let doc = build_specimen(&spec, 17.0, 4).unwrap();
        let before = simulate(&doc);
        let span = select_range(&doc, RangeMode::Middle50).unwrap();
        let in_range = doc.lines()[span].iter().filter(|l| l.is_extruding_g1()).count();
        let targets = in_range / 4;

        for id in StrategyId::ALL {
            let (m, log) = apply_strategy(&doc, Strategy::new(id)).unwrap();
            let after = simulate(&m);
            match id {
                StrategyId::Id3 => {
                    assert!((after.final_e - 0.5 * before.final_e).abs() <= 1e-6 * before.final_e);
                }
                _ => assert!((after.final_e - before.final_e).abs() <= 1e-6, "{id}"),
            }
            match id {
                StrategyId::Id1 => {
                    assert_eq!(m.len(), doc.len());
                    assert_eq!(after.count("G1"), before.count("G1") - targets);
                    assert_eq!(after.count("G0"), before.count("G0") + targets);
                }
                StrategyId::Id2 => {
                    assert_eq!(m.len(), doc.len() + targets);
                    assert!((after.total_extruded - before.total_extruded).abs() <= 1e-6);
                }
                StrategyId::Id6 => assert_eq!(m.len(), doc.len() - targets),
                _ => assert_eq!(m.len(), doc.len()),
            }
            assert_eq!(log.affected_line_indices.len(), if id == StrategyId::Id3 { log.e_values_rewritten } else { targets });
            let bytes = serialize(&m);
            assert_eq!(serialize(&parse_document(&bytes).unwrap()), bytes);
        }
    }

    #[test]
    fn plan_sizes() {
        let manifest = plan_dataset(DatasetId::D2, 200, 1.0, 1).unwrap();
        let counts: BTreeMap<_, _> = StrategyId::ALL.iter().map(|&s| (s, 10)).collect();
        let plan = plan_compromise(&manifest, &counts, 9).unwrap();
        assert_eq!(plan.victims.len(), 60);
        let mut paths: Vec<_> = plan.victims.iter().map(|v| &v.path).collect();
        paths.dedup();
        assert_eq!(paths.len(), 60);
        for id in StrategyId::ALL {
            assert_eq!(plan.victims.iter().filter(|v| v.strategy == id).count(), 10);
        }
        assert_eq!(plan, plan_compromise(&manifest, &counts, 9).unwrap());

        let none = plan_compromise(&manifest, &BTreeMap::new(), 9).unwrap();
        assert!(none.victims.is_empty());

        let too_many = BTreeMap::from([(StrategyId::Id1, 201)]);
        assert!(matches!(
            plan_compromise(&manifest, &too_many, 9),
            Err(MutateError::CountsExceedDataset { requested: 201, available: 200 })
        ));
    }

    #[test]
    fn strategy_names() {
        assert_eq!(StrategyId::Id4.to_string(), "ID4");
        assert_eq!("id6".parse::<StrategyId>().unwrap(), StrategyId::Id6);
        assert_eq!(serde_json::to_string(&StrategyId::Id2).unwrap(), "\"ID2\"");
    }
}
