import struct

import numpy as np
import pytest

from shellvae.data_io import (
    CSV_HEADER,
    GmmSpec,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    content_hash,
    gmm_centers,
    load_dataset,
    load_idx,
    read_series,
    save_dataset,
    synth_gmm,
    write_csv,
    write_idx_images,
    write_idx_labels,
    write_series,
)


def _two_images(path):
    raw = struct.pack(">IIII", 0x803, 2, 2, 2) + bytes([0, 255, 128, 64, 64, 128, 255, 0])
    path.write_bytes(raw)
    return path


@pytest.mark.oracle
def test_idx_fixture(tmp_path):
    labels = tmp_path / "l.idx"
    labels.write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 7]))
    images, lab = load_idx(_two_images(tmp_path / "i.idx"), labels)
    assert images.shape == (2, 4)
    np.testing.assert_allclose(images[0], [0.0, 1.0, 128 / 255, 64 / 255], atol=0)
    assert images[0, 2] == pytest.approx(0.50196078, abs=1e-8)
    assert images[0, 3] == pytest.approx(0.25098039, abs=1e-8)
    assert lab.tolist() == [3, 7]
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(struct.pack(">IIII", 0x801, 1, 1, 1) + b"\x00")
    with pytest.raises(IdxMagicError, match="0x00000803"):
        load_idx(p)


def test_idx_truncated(tmp_path):
    p = tmp_path / "short.idx"
    p.write_bytes(_two_images(tmp_path / "ok.idx").read_bytes()[:-1])
    with pytest.raises(IdxTruncatedError):
        load_idx(p)
    p.write_bytes(b"\x00\x00")
    with pytest.raises(IdxTruncatedError):
        load_idx(p)


def test_idx_count_mismatch(tmp_path):
    labels = tmp_path / "l.idx"
    write_idx_labels(labels, [1, 2, 3])
    with pytest.raises(IdxCountMismatchError):
        load_idx(_two_images(tmp_path / "i.idx"), labels)


def test_idx_empty(tmp_path):
    p = tmp_path / "empty.idx"
    write_idx_images(p, np.zeros((0, 28, 28), dtype=np.uint8))
    images, _ = load_idx(p)
    assert images.shape == (0, 784)


def test_idx_writer_round_trip(tmp_path, rng):
    pix = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    write_idx_images(tmp_path / "x.idx", pix)
    images, _ = load_idx(tmp_path / "x.idx")
    np.testing.assert_array_equal(np.round(images * 255).astype(np.uint8), pix.reshape(5, 12))


def test_gmm_degenerate():
    spec = GmmSpec(n_samples=10, dim=3, n_components=1, component_std=0.0)
    data, labels = synth_gmm(spec)
    np.testing.assert_array_equal(data, np.tile(gmm_centers(spec)[0], (10, 1)))
    assert not labels.any()


def test_gmm_centers_on_sphere():
    c = gmm_centers(GmmSpec(component_separation=4.0))
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 4.0, atol=1e-12)


def test_gmm_deterministic():
    a, la = synth_gmm(GmmSpec(n_samples=100, seed=5))
    b, lb = synth_gmm(GmmSpec(n_samples=100, seed=5))
    assert a.tobytes() == b.tobytes() and la.tolist() == lb.tolist()
    c, _ = synth_gmm(GmmSpec(n_samples=100, seed=6))
    assert a.tobytes() != c.tobytes()


@pytest.mark.oracle
def test_gmm_component_means():
    spec = GmmSpec(n_samples=50_000, dim=32, n_components=8, component_separation=4.0, component_std=0.5)
    data, labels = synth_gmm(spec)
    centers = gmm_centers(spec)
    for k in range(spec.n_components):
        members = data[labels == k]
        # RMS coordinate error of the component mean against 3 sigma of the estimator
        rms = np.sqrt(np.mean((members.mean(axis=0) - centers[k]) ** 2))
        assert rms < 3 * spec.component_std / np.sqrt(spec.n_samples / spec.n_components)
        assert abs(len(members) - spec.n_samples / spec.n_components) < 5 * np.sqrt(spec.n_samples / 8)


def test_gmm_spec_validation():
    with pytest.raises(ValueError):
        GmmSpec(n_components=0)
    with pytest.raises(ValueError):
        GmmSpec(component_std=-1.0)


def test_dataset_round_trip(tmp_path, rng):
    data = rng.normal(size=(7, 3))
    digest = save_dataset(tmp_path / "d.npz", data, np.arange(7), {"source": "test"})
    got, labels, meta = load_dataset(tmp_path / "d.npz")
    assert got.tobytes() == data.tobytes()
    assert labels.tolist() == list(range(7))
    assert meta == {"source": "test"}
    assert digest == content_hash(got)
    assert content_hash(data.reshape(3, 7)) != digest


def _records(n):
    return [
        {"epoch": e, "recon_nll": 1.0 / (e + 1), "kl": 0.1 * e, "l_c": 0.3, "boundary_penalty": 0.0,
         "norm_penalty": 1e-3, "total": 2.5, "beta": 0.1, "stage": 1}
        for e in range(n)
    ]


def test_series_round_trip(tmp_path):
    summary = {"type": "summary", "final": {"avg_kl": 1.0 / 3.0}}
    write_series(tmp_path / "r.jsonl", _records(3), summary)
    records, got = read_series(tmp_path / "r.jsonl")
    assert records == _records(3)
    assert got == summary


def test_csv_header(tmp_path):
    write_csv(tmp_path / "s.csv", _records(2))
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "epoch,recon_nll,kl,l_c,boundary_penalty,norm_penalty,total,beta,stage"
    assert lines[0].split(",") == list(CSV_HEADER)
    assert len(lines) == 3


def test_missing_directory(tmp_path):
    target = tmp_path / "new" / "r.jsonl"
    with pytest.raises(FileNotFoundError):
        write_series(target, _records(1), create_dirs=False)
    write_series(target, _records(1), create_dirs=True)
    assert target.exists()
