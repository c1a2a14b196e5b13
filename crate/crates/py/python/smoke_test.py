"""Smoke test for the gcode_sentinel extension module.

Run after building, e.g. `maturin develop -m crates/py/Cargo.toml` or by
placing the built library on PYTHONPATH as gcode_sentinel.so.
"""

import json
import pathlib
import tempfile

import gcode_sentinel as gs


def main():
    assert [s for s, _ in gs.strategies()] == ["ID1", "ID2", "ID3", "ID4", "ID5", "ID6"]
    assert "combined-stat" in gs.detectors()

    doc = gs.build_specimen("D1", 37.5, seed=1)
    data = doc.to_bytes()
    assert gs.Document.parse(data).to_bytes() == data
    before = doc.summary()
    mutated, log = doc.mutate("ID1")
    after = mutated.summary()
    assert abs(after["final_e"] - before["final_e"]) < 1e-6
    assert len(mutated) == len(doc) and log["lines_converted"] > 0
    halved, _ = doc.mutate("ID3")
    assert abs(halved.summary()["final_e"] - 0.5 * before["final_e"]) < 1e-6 * before["final_e"]
    assert len(doc.features()["core"]) == 11

    labels = gs.cluster_dbscan([[0, 0], [0, 0.1], [0.1, 0], [5, 5]], eps=0.5, min_samples=3)
    assert labels == [0, 0, 0, -1]
    blobs = [[i * 0.01, 0.0] for i in range(10)] + [[10 + i * 0.01, 0.0] for i in range(10)]
    assert len(set(gs.cluster_agglomerative(blobs))) == 2
    assert len(set(gs.cluster_meanshift(blobs, bandwidth=1.0))) == 2
    pca = gs.fit_pca([[1, 2, 3], [2, 4, 6], [3, 6, 9], [4, 8, 12.5]])
    assert len(pca["components"]) == 2 and len(pca["projected"]) == 4

    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        assert gs.generate("D1", root / "data", files=30, step=12.0, seed=3) == 30
        truth = gs.compromise(root / "data", root / "comp", {"ID1": 2}, seed=4)
        assert len(truth["victims"]) == 2
        flags = gs.run_detectors(root / "comp" / "blind", ["combined-stat"], {"z_threshold": 3.5}, out=root / "det")
        assert sorted(flags["combined-stat"]) == sorted(v["path"] for v in truth["victims"])
        report = gs.evaluate(root / "det" / "flags", root / "comp" / "truth.json", root / "comp" / "blind")
        confusion = report["datasets"][0]["detectors"][0]["confusion"]
        assert (confusion["tp"], confusion["fp"], confusion["tn"], confusion["fn"]) == (2, 0, 28, 0)

    try:
        gs.run_detectors(".", ["k-means"])
    except ValueError as e:
        assert "k-means" in str(e)
    else:
        raise AssertionError("unknown detector accepted")

    print(json.dumps({"smoke_test": "ok", "version": gs.__version__}))


if __name__ == "__main__":
    main()
