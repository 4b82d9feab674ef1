"""Mini-batch Adam training of the penalised VAE.

Protocol: a linear beta ramp, an optional first stage in which beta is held
at its starting value, a decoder variance set as a multiple of the top
eigenvalue of the data covariance, and four constraint variants.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clustering import FeasibleRegion
from .constraints import VARIANTS, ConstraintConfig, loss_and_gradients
from .geometry import ShellDataset
from .metrics import EvalResult, collapse_verdict, evaluate
from .numeric_core import covariance_matrix, top_eigenvalue
from .vae import VaeModel, build_vae, save_checkpoint

log = logging.getLogger(__name__)

RECORD_FIELDS = (
    "epoch", "recon_nll", "kl", "l_c", "boundary_penalty", "norm_penalty", "total", "beta", "stage",
)


class TrainingError(RuntimeError):
    pass


@dataclass
class Seeds:
    init: int = 0
    shuffle: int = 1
    noise: int = 2
    shell: int = 3
    kmeans: int = 4

    @classmethod
    def from_base(cls, base: int) -> "Seeds":
        return cls(*(base * 10 + k for k in range(5)))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta_start: float = 0.1
    beta_end: float = 1.0
    beta_ramp_epochs: int = 100
    two_stage: bool = True
    stage_one_fraction: float = 0.6
    stage_one_penalties: bool = True
    violation_factor: float = 5.0
    sigma_sq_override: float = 1.0
    constraint_variant: str = "full"
    lambda_boundary: float = 200.0
    lambda_norm: float = 200.0
    latent_dim: int = 8
    encoder_hidden: tuple[int, ...] = (256, 128)
    decoder_hidden: tuple[int, ...] = (128, 256)
    holdout_fraction: float = 0.1
    checkpoint_every: int = 0
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        if isinstance(self.seeds, dict):
            self.seeds = Seeds(**self.seeds)
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        if self.constraint_variant not in VARIANTS:
            raise ValueError(f"constraint_variant must be one of {VARIANTS}")
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.two_stage and not 0.0 < self.stage_one_fraction < 1.0:
            raise ValueError("stage_one_fraction must lie in (0, 1) for two-stage training")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch_size >= 1 required")
        if self.violation_factor < 0:
            raise ValueError("violation_factor must be >= 0")

    @property
    def stage_one_epochs(self) -> int:
        return int(round(self.stage_one_fraction * self.epochs)) if self.two_stage else 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d


@dataclass
class TrainReport:
    records: list[dict]
    final: EvalResult
    collapse_verdict: bool
    region: dict
    config: dict
    sigma_sq: float

    def summary(self) -> dict:
        return {
            "type": "summary",
            "final": self.final.as_dict(),
            "collapse_verdict": self.collapse_verdict,
            "region": self.region,
            "sigma_sq": self.sigma_sq,
            "config": self.config,
        }


def sigma_from_violation(data: np.ndarray, factor: float) -> float:
    if factor <= 0:
        raise ValueError("violation factor must be positive")
    return factor * top_eigenvalue(covariance_matrix(data))


def beta_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if config.beta_ramp_epochs <= 0:
        frac = 1.0
    else:
        frac = min(epoch / config.beta_ramp_epochs, 1.0)
    beta = config.beta_start + (config.beta_end - config.beta_start) * frac
    if epoch < config.stage_one_epochs:
        beta = min(beta, config.beta_start)
    return beta


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """In-place bias-corrected Adam update of every array in ``params``."""
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def split_indices(n: int, holdout_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(holdout_fraction * n))
    if n_hold < 2 or n - n_hold < 1:
        # too small to split: evaluate on everything
        return np.sort(perm), np.sort(perm)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def region_snapshot(region: FeasibleRegion) -> dict:
    return {"tss": region.tss, "w": region.w, "delta_collapse": region.delta_collapse}


def train(
    dataset: ShellDataset,
    region: FeasibleRegion,
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    progress=None,
) -> tuple[VaeModel, TrainReport]:
    data = dataset.data
    n, d = data.shape
    assignments = region.clustering.assignments
    if assignments.shape != (n,):
        raise ValueError("region was not computed on this dataset")

    if config.violation_factor > 0:
        sigma_sq = sigma_from_violation(data, config.violation_factor)
    else:
        sigma_sq = config.sigma_sq_override
    seeds = config.seeds
    model = build_vae(
        d, config.latent_dim, sigma_sq, config.encoder_hidden, config.decoder_hidden, seeds.init
    )
    model.seeds = asdict(seeds)
    base = ConstraintConfig(
        region, config.lambda_boundary, config.lambda_norm, dataset.params.r_target
    ).for_variant(config.constraint_variant)
    no_penalty = ConstraintConfig(region, 0.0, 0.0, dataset.params.r_target)

    train_idx, hold_idx = split_indices(n, config.holdout_fraction, seeds.shuffle)
    shuffle_rng = np.random.default_rng([seeds.shuffle, 1])
    noise_rng = np.random.default_rng(seeds.noise)
    params = model.arrays()
    state = AdamState.zeros_like(params)
    records = []

    for epoch in range(config.epochs):
        beta = beta_at(epoch, config)
        stage = 1 if epoch < config.stage_one_epochs else 2
        cfg = base if (stage == 2 or config.stage_one_penalties) else no_penalty
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        sums = dict.fromkeys(("recon_nll", "kl", "l_c", "boundary_penalty", "norm_penalty", "total"), 0.0)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            eps = noise_rng.standard_normal((len(idx), model.latent_dim))
            try:
                parts, g_enc, g_dec = loss_and_gradients(
                    model, data[idx], assignments[idx], eps, cfg, beta
                )
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch} batch {n_batches}: {exc}") from exc
            if not math.isfinite(parts.total):
                raise TrainingError(f"epoch {epoch} batch {n_batches}: non-finite total loss")
            grads = g_enc.arrays() + g_dec.arrays()
            adam_step(params, grads, state, config.learning_rate)
            for key in sums:
                sums[key] += getattr(parts, key)
            n_batches += 1
        rec = {"epoch": epoch}
        rec.update({k: v / max(n_batches, 1) for k, v in sums.items()})
        rec["beta"] = beta
        rec["stage"] = stage
        records.append({k: rec[k] for k in RECORD_FIELDS})
        if progress is not None:
            progress(records[-1])
        if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_path, {"epoch": epoch + 1, "holdout_fraction": config.holdout_fraction})

    if checkpoint_path:
        save_checkpoint(
            model, checkpoint_path, {"epoch": config.epochs, "holdout_fraction": config.holdout_fraction}
        )

    final = evaluate(model, data[hold_idx], assignments[hold_idx], region, dataset.params)
    report = TrainReport(
        records=records,
        final=final,
        collapse_verdict=collapse_verdict(final),
        region=region_snapshot(region),
        config=config.as_dict(),
        sigma_sq=sigma_sq,
    )
    return model, report
