"""Preprocessing pipeline and region files that bind a clustering to the exact
dataset it was computed on."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .clustering import Clustering, FeasibleRegion, feasible_region, kmeans, verify_identity
from .data_io import content_hash
from .geometry import ShellDataset, ShellParams, to_shell
from .trainer import Seeds, TrainConfig, TrainReport, train

REGION_VERSION = 1


class FingerprintMismatch(ValueError):
    pass


@dataclass
class Prepared:
    shell: ShellDataset
    region: FeasibleRegion
    dataset_hash: str
    shell_seed: int
    kmeans_seed: int
    skip_transform: bool = False


def preprocess(
    data: np.ndarray,
    k: int = 8,
    params: ShellParams = ShellParams(),
    shell_seed: int = 3,
    kmeans_seed: int = 4,
    skip_transform: bool = False,
    max_iters: int = 300,
    tol: float = 1e-8,
) -> Prepared:
    """Center, shell-transform (unless ``skip_transform``), cluster, and
    compute the feasible region."""
    if skip_transform:
        data = np.asarray(data, dtype=np.float64)
        shell = ShellDataset(data, params, np.zeros(data.shape[1]), np.full(len(data), np.nan))
    else:
        shell = to_shell(data, params, shell_seed)
    clustering = kmeans(shell.data, k, kmeans_seed, max_iters, tol)
    region = feasible_region(shell.data, clustering)
    return Prepared(shell, region, content_hash(data), shell_seed, kmeans_seed, skip_transform)


def region_to_dict(prep: Prepared) -> dict:
    reg = prep.region
    cl = reg.clustering
    return {
        "version": REGION_VERSION,
        "dataset_hash": prep.dataset_hash,
        "shell_hash": content_hash(prep.shell.data),
        "shell": {
            "r_min": prep.shell.params.r_min,
            "r_max": prep.shell.params.r_max,
            "seed": prep.shell_seed,
            "skip_transform": prep.skip_transform,
        },
        "kmeans": {"k": cl.k, "seed": prep.kmeans_seed, "iterations_run": cl.iterations_run},
        "tss": reg.tss,
        "w": reg.w,
        "delta_collapse": reg.delta_collapse,
        "identity_residual": verify_identity(reg),
        "feasible": reg.is_feasible,
        "data_mean": reg.data_mean.tolist(),
        "centers": cl.centers.tolist(),
        "proportions": cl.proportions.tolist(),
        "assignments": cl.assignments.tolist(),
    }


def save_region(path, prep: Prepared) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(region_to_dict(prep), sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def load_region(path, data: np.ndarray) -> tuple[Prepared, dict]:
    """Rebuild the shell dataset from raw ``data`` and attach the stored region.

    Raises :class:`FingerprintMismatch` if ``data`` is not the dataset the
    region was computed on.
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != REGION_VERSION:
        raise ValueError(f"{path}: unsupported region version {doc.get('version')}")
    got = content_hash(data)
    if got != doc["dataset_hash"]:
        raise FingerprintMismatch(
            f"dataset hash {got[:12]} does not match region's {doc['dataset_hash'][:12]}"
        )
    sh = doc["shell"]
    params = ShellParams(sh["r_min"], sh["r_max"])
    if sh.get("skip_transform"):
        shell = ShellDataset(
            np.asarray(data, dtype=np.float64), params, np.zeros(data.shape[1]), np.full(len(data), np.nan)
        )
    else:
        shell = to_shell(data, params, sh["seed"])
    if content_hash(shell.data) != doc["shell_hash"]:
        raise FingerprintMismatch("shell-transformed data differs from the region's record")
    clustering = Clustering(
        np.asarray(doc["assignments"], dtype=np.int64),
        np.asarray(doc["centers"], dtype=np.float64),
        np.asarray(doc["proportions"], dtype=np.float64),
        doc["kmeans"]["iterations_run"],
    )
    region = FeasibleRegion(
        doc["tss"], doc["w"], doc["delta_collapse"], np.asarray(doc["data_mean"], dtype=np.float64), clustering
    )
    prep = Prepared(shell, region, got, sh["seed"], doc["kmeans"]["seed"], bool(sh.get("skip_transform")))
    return prep, doc


ABLATION_VARIANTS = ("none", "boundary_only", "norm_only", "full")
ABLATION_COLUMNS = (
    "seed", "variant", "kl", "active_units", "feasible_coverage_pct", "norm_satisfaction_pct", "recon_error",
)


def run_ablation(
    prep: Prepared, base: TrainConfig, seeds: list[int], progress=None
) -> list[tuple[dict, TrainReport]]:
    """Train every constraint variant under each seed; rows follow ABLATION_COLUMNS."""
    out = []
    for s in seeds:
        tr_seeds = replace(Seeds.from_base(s), shell=prep.shell_seed, kmeans=prep.kmeans_seed)
        for variant in ABLATION_VARIANTS:
            cfg = replace(base, constraint_variant=variant, seeds=tr_seeds)
            _, report = train(prep.shell, prep.region, cfg)
            f = report.final
            row = {
                "seed": s,
                "variant": variant,
                "kl": f.avg_kl,
                "active_units": f.active_units,
                "feasible_coverage_pct": f.feasible_coverage_pct,
                "norm_satisfaction_pct": f.norm_satisfaction_pct,
                "recon_error": f.recon_error,
            }
            if progress is not None:
                progress(row)
            out.append((row, report))
    return out


def ablation_ordering(rows: list[dict]) -> dict[int, dict[str, bool]]:
    """Per seed, check the expected ordering of the four variants."""
    by_seed: dict[int, dict[str, dict]] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["variant"]] = r
    result = {}
    for s, v in by_seed.items():
        kl = {k: r["kl"] for k, r in v.items()}
        cov = {k: r["feasible_coverage_pct"] for k, r in v.items()}
        result[s] = {
            "full_max_kl": kl["full"] >= max(kl.values()),
            "full_max_coverage": cov["full"] >= max(cov.values()),
            "norm_beats_boundary_on_norm_sat": v["norm_only"]["norm_satisfaction_pct"]
            > v["boundary_only"]["norm_satisfaction_pct"],
            "none_min_kl": kl["none"] <= min(kl.values()),
        }
    return result
