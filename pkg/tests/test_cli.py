import json

import numpy as np
import pytest

from shellvae.cli import main
from shellvae.data_io import save_dataset

TRAIN_SMALL = ["--epochs", "2", "--latent-dim", "2", "--batch-size", "64"]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def small_data(tmp_path, capsys):
    data = tmp_path / "d.npz"
    code, out, _ = _run(capsys, "synth", "--n", 300, "--dim", 6, "--components", 3, "--out", data)
    assert code == 0 and len(out.strip()) == 64
    region = tmp_path / "r.json"
    code, out, _ = _run(capsys, "cluster", "--data", data, "--k", 3, "--out", region)
    assert code == 0
    assert "feasible: W < delta = true" in out
    return data, region


def test_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--n", "10"])
    assert info.value.code == 1


def test_unknown_variant_is_usage_error(small_data, tmp_path):
    data, region = small_data
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", str(data), "--region", str(region), "--variant", "most", "--out-dir", str(tmp_path)])
    assert info.value.code == 1


def test_degenerate_synth(tmp_path, capsys):
    code, _, _ = _run(capsys, "synth", "--n", 5, "--components", 1, "--std", 0, "--out", tmp_path / "x.npz")
    assert code == 0


def test_missing_dataset_is_data_error(tmp_path, capsys):
    code, _, err = _run(capsys, "cluster", "--data", tmp_path / "nope.npz", "--out", tmp_path / "r.json")
    assert code == 2 and "error" in err


def test_zero_row_is_data_error(tmp_path, capsys):
    save_dataset(tmp_path / "z.npz", np.array([[1.0, 1.0], [1.0, 1.0], [3.0, 3.0], [-1.0, -1.0]]))
    code, _, err = _run(capsys, "cluster", "--data", tmp_path / "z.npz", "--k", 2, "--out", tmp_path / "r.json")
    assert code == 2 and "row" in err


def test_k_one_precondition_unmet(small_data, tmp_path, capsys):
    data, _ = small_data
    region = tmp_path / "k1.json"
    code, out, _ = _run(capsys, "cluster", "--data", data, "--k", 1, "--out", region)
    assert code == 0
    assert "delta_collapse=0\n" in out
    assert "feasible: W < delta = false" in out
    code, out, _ = _run(capsys, "verify-theorem", "--data", data, "--region", region)
    assert code == 4 and "PRECONDITION UNMET" in out


@pytest.mark.oracle
def test_four_point_fixture(tmp_path, capsys, four_points):
    save_dataset(tmp_path / "fp.npz", four_points)
    region = tmp_path / "fp.json"
    code, out, _ = _run(capsys, "cluster", "--data", tmp_path / "fp.npz", "--k", 2, "--skip-transform", "--out", region)
    assert code == 0
    code, out, _ = _run(capsys, "verify-theorem", "--data", tmp_path / "fp.npz", "--region", region)
    assert code == 0
    lines = out.splitlines()
    assert "W=0.0025" in lines and "delta_collapse=0.9025" in lines
    assert lines[-1] == "PASS"
    doc = json.loads(region.read_text())
    assert doc["shell"]["r_min"] == 0.85 and doc["shell"]["r_max"] == 1.0


def test_verify_theorem_passes(small_data, capsys):
    data, region = small_data
    code, out, _ = _run(capsys, "verify-theorem", "--data", data, "--region", region)
    assert code == 0 and out.splitlines()[-1] == "PASS"
    vals = dict(l.split("=", 1) for l in out.splitlines()[:3])
    assert float(vals["W"]) < float(vals["epsilon"]) < float(vals["delta_collapse"])


def test_verify_theorem_fails_on_tampered_region(small_data, capsys):
    data, region = small_data
    doc = json.loads(region.read_text())
    # stored W no longer matches the ideal decoder's loss
    doc["w"] = doc["w"] * 1.5
    region.write_text(json.dumps(doc))
    code, out, _ = _run(capsys, "verify-theorem", "--data", data, "--region", region)
    assert code == 3 and "FAIL" in out


def test_fingerprint_mismatch(small_data, tmp_path, capsys):
    _, region = small_data
    other = tmp_path / "other.npz"
    _run(capsys, "synth", "--n", 300, "--dim", 6, "--components", 3, "--seed", 9, "--out", other)
    code, _, err = _run(capsys, "train", "--data", other, "--region", region, "--out-dir", tmp_path / "t", *TRAIN_SMALL)
    assert code == 2 and "hash" in err


def test_train_and_eval(small_data, tmp_path, capsys):
    data, region = small_data
    out_dir = tmp_path / "run"
    code, out, _ = _run(capsys, "train", "--data", data, "--region", region, "--out-dir", out_dir, *TRAIN_SMALL)
    assert code == 0
    for name in ("model.npz", "report.jsonl", "series.csv", "manifest.json"):
        assert (out_dir / name).exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert {"dataset_hash", "region", "seeds", "tool_version", "config"} <= set(manifest)
    summary = [json.loads(l) for l in (out_dir / "report.jsonl").read_text().splitlines()][-1]
    code, out, _ = _run(capsys, "eval", "--data", data, "--region", region, "--checkpoint", out_dir / "model.npz", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["final"] == summary["final"]
    assert doc["collapse_verdict"] == summary["collapse_verdict"]


def test_eval_fresh_checkpoint_has_zero_kl(small_data, tmp_path, capsys):
    data, region = small_data
    out_dir = tmp_path / "fresh"
    _run(capsys, "train", "--data", data, "--region", region, "--out-dir", out_dir, "--epochs", 0, "--latent-dim", 2)
    code, out, _ = _run(capsys, "eval", "--data", data, "--region", region, "--checkpoint", out_dir / "model.npz")
    assert code == 0
    assert "avg_kl=0\n" in out and "collapsed=true" in out


def test_checkpoint_dimension_mismatch(small_data, tmp_path, capsys):
    data, region = small_data
    out_dir = tmp_path / "fresh"
    _run(capsys, "train", "--data", data, "--region", region, "--out-dir", out_dir, "--epochs", 0, "--latent-dim", 2)
    other = tmp_path / "o.npz"
    _run(capsys, "synth", "--n", 50, "--dim", 4, "--components", 2, "--out", other)
    oreg = tmp_path / "o.json"
    _run(capsys, "cluster", "--data", other, "--k", 2, "--out", oreg)
    code, _, _ = _run(capsys, "eval", "--data", other, "--region", oreg, "--checkpoint", out_dir / "model.npz")
    assert code == 2


def test_import_idx(tmp_path, capsys):
    from shellvae.data_io import write_idx_images, write_idx_labels

    write_idx_images(tmp_path / "i.idx", np.arange(5 * 4, dtype=np.uint8).reshape(5, 2, 2) * 10)
    write_idx_labels(tmp_path / "l.idx", np.arange(5))
    code, out, _ = _run(capsys, "import-idx", "--images", tmp_path / "i.idx", "--labels", tmp_path / "l.idx",
                        "--subset", 3, "--out", tmp_path / "m.npz")
    assert code == 0
    from shellvae.data_io import load_dataset

    data, labels, meta = load_dataset(tmp_path / "m.npz")
    assert data.shape == (3, 4) and len(labels) == 3 and meta["subset"] == 3


def test_bad_idx_is_data_error(tmp_path, capsys):
    (tmp_path / "bad.idx").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
    code, _, _ = _run(capsys, "import-idx", "--images", tmp_path / "bad.idx", "--out", tmp_path / "m.npz")
    assert code == 2


@pytest.mark.oracle
def test_synth_defaults_are_feasible(tmp_path, capsys):
    data, region = tmp_path / "d.npz", tmp_path / "r.json"
    assert _run(capsys, "synth", "--out", data)[0] == 0
    code, out, _ = _run(capsys, "cluster", "--data", data, "--k", 8, "--out", region)
    assert code == 0 and "feasible: W < delta = true" in out
    code, out, _ = _run(capsys, "verify-theorem", "--data", data, "--region", region)
    vals = dict(l.split("=", 1) for l in out.splitlines()[:3])
    assert code == 0 and out.splitlines()[-1] == "PASS"
    assert float(vals["W"]) < float(vals["epsilon"]) < float(vals["delta_collapse"])


def test_default_k_follows_dataset_source(tmp_path, capsys):
    from shellvae.data_io import write_idx_images

    pix = np.random.default_rng(0).integers(1, 256, size=(40, 3, 3), dtype=np.uint8)
    write_idx_images(tmp_path / "i.idx", pix)
    _run(capsys, "import-idx", "--images", tmp_path / "i.idx", "--out", tmp_path / "m.npz")
    assert _run(capsys, "cluster", "--data", tmp_path / "m.npz", "--out", tmp_path / "m.json")[0] == 0
    assert json.loads((tmp_path / "m.json").read_text())["kmeans"]["k"] == 10
    _run(capsys, "synth", "--n", 40, "--dim", 3, "--out", tmp_path / "g.npz")
    _run(capsys, "cluster", "--data", tmp_path / "g.npz", "--out", tmp_path / "g.json")
    assert json.loads((tmp_path / "g.json").read_text())["kmeans"]["k"] == 8
