"""Evaluation metrics: average KL, active units, feasible-region coverage,
norm satisfaction, and the collapse verdict.

All metrics use the posterior mean (no sampling) so they are deterministic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .clustering import FeasibleRegion
from .constraints import cluster_loss
from .geometry import ShellParams, row_norms
from .vae import VaeModel, decode, encode, kl_gaussian


@dataclass
class EvalResult:
    avg_kl: float
    active_units: int
    feasible_coverage_pct: float
    norm_satisfaction_pct: float
    per_dim_variance: list[float]
    recon_error: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def avg_kl(model: VaeModel, data: np.ndarray) -> float:
    mu, logvar = encode(model, data)
    return kl_gaussian(mu, logvar)


def latent_variance(model: VaeModel, data: np.ndarray) -> np.ndarray:
    """Per-dimension variance of the posterior means across ``data``."""
    mu, _ = encode(model, data)
    return mu.var(axis=0)


def active_units(model: VaeModel, data: np.ndarray, threshold: float = 0.01) -> int:
    if len(data) < 2:
        raise ValueError("active units need at least 2 samples")
    return int(np.sum(latent_variance(model, data) > threshold))


def coverage_from_per_sample(per_sample: np.ndarray, region: FeasibleRegion) -> float:
    inside = (per_sample >= region.w) & (per_sample <= region.delta_collapse)
    return 100.0 * float(np.mean(inside))


def feasible_coverage(
    model: VaeModel, data: np.ndarray, assignments: np.ndarray, region: FeasibleRegion
) -> float:
    """Percent of samples whose own cluster-aware loss lies in [W, delta_collapse]."""
    mu, _ = encode(model, data)
    _, per = cluster_loss(decode(model, mu), assignments, region.clustering.centers)
    return coverage_from_per_sample(per, region)


def norm_fraction(x_hat: np.ndarray, shell: ShellParams) -> float:
    norms = row_norms(x_hat)
    return 100.0 * float(np.mean((norms >= shell.r_min) & (norms <= shell.r_max)))


def norm_satisfaction(model: VaeModel, data: np.ndarray, shell: ShellParams = ShellParams()) -> float:
    mu, _ = encode(model, data)
    return norm_fraction(decode(model, mu), shell)


def evaluate(
    model: VaeModel,
    data: np.ndarray,
    assignments: np.ndarray,
    region: FeasibleRegion,
    shell: ShellParams = ShellParams(),
    threshold: float = 0.01,
) -> EvalResult:
    mu, logvar = encode(model, data)
    x_hat = decode(model, mu)
    _, per = cluster_loss(x_hat, assignments, region.clustering.centers)
    var = mu.var(axis=0)
    resid = data - x_hat
    return EvalResult(
        avg_kl=kl_gaussian(mu, logvar),
        active_units=int(np.sum(var > threshold)),
        feasible_coverage_pct=coverage_from_per_sample(per, region),
        norm_satisfaction_pct=norm_fraction(x_hat, shell),
        per_dim_variance=[float(v) for v in var],
        recon_error=float(np.mean(resid * resid)),
    )


def collapse_verdict(result: EvalResult, kl_threshold: float = 0.1, au_threshold: int = 1) -> bool:
    """Collapsed iff the KL is tiny *and* at most ``au_threshold`` units are active."""
    return result.avg_kl < kl_threshold and result.active_units <= au_threshold
