"""Cluster-aware reconstruction loss, boundary and norm penalties, and the
penalised VAE objective with its analytic gradient."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .clustering import FeasibleRegion
from .numeric_core import GradientBundle, mlp_backward, mlp_forward
from .vae import LOGVAR_CLAMP, VaeModel, kl_gaussian, reparameterize

VARIANTS = ("none", "boundary_only", "norm_only", "full")


@dataclass
class ConstraintConfig:
    region: FeasibleRegion
    lambda_boundary: float = 200.0
    lambda_norm: float = 200.0
    r_target: float = 0.925

    def __post_init__(self):
        if self.lambda_boundary < 0 or self.lambda_norm < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.r_target <= 0:
            raise ValueError("r_target must be positive")

    def for_variant(self, variant: str) -> "ConstraintConfig":
        """Zero the weights that an ablation variant switches off."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown constraint variant {variant!r}")
        lb = self.lambda_boundary if variant in ("boundary_only", "full") else 0.0
        ln = self.lambda_norm if variant in ("norm_only", "full") else 0.0
        return ConstraintConfig(self.region, lb, ln, self.r_target)


@dataclass
class LossBreakdown:
    recon_nll: float
    kl: float
    boundary_penalty: float
    norm_penalty: float
    total: float
    l_c: float

    def as_dict(self) -> dict:
        return asdict(self)


def cluster_loss(x_hat: np.ndarray, assignments: np.ndarray, centers: np.ndarray):
    """Mean squared distance of each reconstruction to its input's cluster center.

    Returns ``(l_c, per_sample)``.
    """
    assignments = np.asarray(assignments)
    k = centers.shape[0]
    if assignments.shape != (x_hat.shape[0],):
        raise ValueError("one assignment per reconstruction required")
    if assignments.size and (assignments.min() < 0 or assignments.max() >= k):
        raise IndexError(f"assignment out of range for {k} centers")
    diff = x_hat - centers[assignments]
    per_sample = np.einsum("ij,ij->i", diff, diff)
    return float(per_sample.mean()), per_sample


def boundary_penalty(l_c: float, region: FeasibleRegion) -> float:
    return max(0.0, region.w - l_c) + max(0.0, l_c - region.delta_collapse)


def boundary_slope(l_c: float, region: FeasibleRegion) -> float:
    """d(boundary_penalty)/d(l_c); 0 at the kinks."""
    if l_c < region.w:
        return -1.0
    if l_c > region.delta_collapse:
        return 1.0
    return 0.0


def norm_penalty(x_hat: np.ndarray, r_target: float) -> float:
    norms = np.sqrt(np.einsum("ij,ij->i", x_hat, x_hat))
    return float(np.mean((norms - r_target) ** 2))


def total_loss(
    recon: float,
    kl: float,
    l_c: float,
    p_norm: float,
    config: ConstraintConfig,
    beta: float,
) -> LossBreakdown:
    parts = {"recon_nll": recon, "kl": kl, "l_c": l_c, "norm_penalty": p_norm}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite {name}: {value}")
    p_b = boundary_penalty(l_c, config.region)
    total = recon + beta * kl + config.lambda_boundary * p_b + config.lambda_norm * p_norm
    return LossBreakdown(recon, kl, p_b, p_norm, total, l_c)


def loss_and_gradients(
    model: VaeModel,
    x: np.ndarray,
    assignments: np.ndarray,
    eps: np.ndarray,
    config: ConstraintConfig,
    beta: float,
) -> tuple[LossBreakdown, GradientBundle, GradientBundle]:
    """Penalised objective on one batch with fixed noise, plus gradients for
    encoder and decoder parameters."""
    b, d = x.shape
    n = model.latent_dim
    region = config.region
    centers = region.clustering.centers

    head, enc_tape = mlp_forward(model.encoder, x)
    mu = head[:, :n]
    raw_lv = head[:, n:]
    logvar = np.clip(raw_lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    lat = reparameterize(mu, logvar, eps=eps)
    x_hat, dec_tape = mlp_forward(model.decoder, lat.z)

    s2 = model.sigma_sq
    resid = x_hat - x
    recon = float(
        np.mean(np.einsum("ij,ij->i", resid, resid)) / (2.0 * s2)
        + 0.5 * d * math.log(2.0 * math.pi * s2)
    )
    var = np.exp(logvar)
    kl = kl_gaussian(mu, logvar)
    l_c, _ = cluster_loss(x_hat, assignments, centers)
    norms = np.sqrt(np.einsum("ij,ij->i", x_hat, x_hat))
    p_norm = float(np.mean((norms - config.r_target) ** 2))
    parts = total_loss(recon, kl, l_c, p_norm, config, beta)

    # dL/dx_hat
    g_xhat = resid / (s2 * b)
    lb = config.lambda_boundary * boundary_slope(l_c, region)
    if lb:
        g_xhat += lb * 2.0 * (x_hat - centers[assignments]) / b
    if config.lambda_norm:
        safe = np.where(norms > 0.0, norms, 1.0)
        scale = np.where(norms > 0.0, (norms - config.r_target) / safe, 0.0)
        g_xhat += config.lambda_norm * 2.0 * scale[:, None] * x_hat / b

    dec_grads, g_z = mlp_backward(model.decoder, dec_tape, g_xhat)
    std = np.exp(0.5 * logvar)
    g_mu = g_z + beta * mu / b
    g_lv = g_z * lat.eps * 0.5 * std + beta * 0.5 * (var - 1.0) / b
    # clamp passes no gradient outside its range
    g_lv = g_lv * ((raw_lv > -LOGVAR_CLAMP) & (raw_lv < LOGVAR_CLAMP))
    enc_grads, _ = mlp_backward(model.encoder, enc_tape, np.hstack([g_mu, g_lv]))
    return parts, enc_grads, dec_grads


@dataclass
class ExclusionCheck:
    w: float
    epsilon: float
    delta_collapse: float
    l_c_collapse: float
    l_c_ideal: float
    collapse_residual: float
    ideal_residual: float
    precondition: bool
    collapse_excluded: bool
    ideal_feasible: bool
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.precondition
            and self.collapse_residual <= self.tol
            and self.ideal_residual <= self.tol
            and self.collapse_excluded
            and self.ideal_feasible
        )


def check_collapse_exclusion(
    data: np.ndarray, region: FeasibleRegion, epsilon: float | None = None, tol: float = 1e-9
) -> ExclusionCheck:
    """Evaluate the cluster-aware loss for the collapsed decoder (every output
    equal to the data mean) and the ideal decoder (outputs equal inputs)."""
    cl = region.clustering
    eps = region.epsilon if epsilon is None else epsilon
    collapse = np.broadcast_to(region.data_mean, data.shape)
    lc_collapse, _ = cluster_loss(collapse, cl.assignments, cl.centers)
    lc_ideal, _ = cluster_loss(data, cl.assignments, cl.centers)
    scale = max(1.0, region.tss)
    return ExclusionCheck(
        w=region.w,
        epsilon=eps,
        delta_collapse=region.delta_collapse,
        l_c_collapse=lc_collapse,
        l_c_ideal=lc_ideal,
        collapse_residual=abs(lc_collapse - region.delta_collapse) / scale,
        ideal_residual=abs(lc_ideal - region.w) / scale,
        precondition=region.w < eps < region.delta_collapse,
        collapse_excluded=lc_collapse > eps,
        ideal_feasible=lc_ideal < eps,
        tol=tol,
    )
