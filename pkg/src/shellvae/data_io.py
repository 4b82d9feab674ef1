"""Synthetic GMM data, IDX ingestion, dataset files and report series."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CSV_HEADER = (
    "epoch", "recon_nll", "kl", "l_c", "boundary_penalty", "norm_penalty", "total", "beta", "stage",
)


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class GmmSpec:
    n_samples: int = 5000
    dim: int = 32
    n_components: int = 8
    component_separation: float = 4.0
    component_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1 or self.n_samples < 1 or self.dim < 1:
            raise ValueError("n_samples, dim and n_components must be positive")
        if self.component_std < 0 or self.component_separation < 0:
            raise ValueError("std and separation must be non-negative")


def gmm_centers(spec: GmmSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    c = rng.standard_normal((spec.n_components, spec.dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return spec.component_separation * c


def synth_gmm(spec: GmmSpec) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight isotropic mixture with centers on a sphere of radius
    ``component_separation``. Labels are for diagnostics only."""
    centers = gmm_centers(spec)
    rng = np.random.default_rng([spec.seed, 1])
    labels = rng.integers(spec.n_components, size=spec.n_samples)
    noise = rng.standard_normal((spec.n_samples, spec.dim))
    return centers[labels] + spec.component_std * noise, labels


# -- IDX ---------------------------------------------------------------------

def _read_idx(path: Path, magic: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    body = raw[header:]
    if len(body) < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(body)}")
    return dims, body[:size]


def load_idx(images_path, labels_path=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Read an IDX image file (and optional label file); pixels scaled to [0, 1]."""
    dims, body = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    n = dims[0]
    width = int(np.prod(dims[1:], dtype=np.int64))
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(n, width)
    images = pixels.astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        ldims, lbody = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
        if ldims[0] != n:
            raise IdxCountMismatchError(f"{n} images but {ldims[0]} labels")
        labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images (N, rows, cols) in IDX format. Used for fixtures."""
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# -- dataset files -------------------------------------------------------------

def content_hash(data: np.ndarray) -> str:
    arr = np.ascontiguousarray(data, dtype="<f8")
    h = hashlib.sha256()
    h.update(json.dumps(list(arr.shape)).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def save_dataset(path, data: np.ndarray, labels: np.ndarray | None = None, meta: dict | None = None) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"data": np.asarray(data, dtype=np.float64)}
    if labels is not None:
        arrays["labels"] = np.asarray(labels, dtype=np.int64)
    arrays["meta"] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return content_hash(arrays["data"])


def load_dataset(path) -> tuple[np.ndarray, np.ndarray | None, dict]:
    with np.load(Path(path), allow_pickle=False) as store:
        data = np.array(store["data"])
        labels = np.array(store["labels"]) if "labels" in store.files else None
        meta = json.loads(bytes(store["meta"]).decode()) if "meta" in store.files else {}
    return data, labels, meta


# -- report series -------------------------------------------------------------

def _prepare_dir(path: Path, create: bool) -> None:
    if not path.parent.exists():
        if not create:
            raise FileNotFoundError(f"directory {path.parent} does not exist")
        path.parent.mkdir(parents=True)


def write_series(path, records: list[dict], summary: dict | None = None, create_dirs: bool = True) -> Path:
    """JSON Lines: one object per epoch, then the summary object (if any)."""
    path = Path(path)
    _prepare_dir(path, create_dirs)
    try:
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if summary is not None:
                fh.write(json.dumps(summary, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc
    return path


def read_series(path) -> tuple[list[dict], dict | None]:
    records, summary = [], None
    try:
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if obj.get("type") == "summary":
                    summary = obj
                else:
                    records.append(obj)
    except OSError as exc:
        raise OSError(f"reading {path}: {exc}") from exc
    return records, summary


def write_csv(path, records: list[dict], create_dirs: bool = True) -> Path:
    path = Path(path)
    _prepare_dir(path, create_dirs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow([repr(rec[k]) if isinstance(rec[k], float) else rec[k] for k in CSV_HEADER])
    return path
