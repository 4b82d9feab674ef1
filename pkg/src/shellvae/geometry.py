"""Centering and the radial spherical-shell transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ShellParams:
    r_min: float = 0.85
    r_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")

    @property
    def r_target(self) -> float:
        return 0.5 * (self.r_min + self.r_max)


@dataclass
class ShellDataset:
    data: np.ndarray
    params: ShellParams
    original_mean: np.ndarray
    shell_draws: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        """Actual mean of the transformed rows (not assumed zero)."""
        return self.data.mean(axis=0)


class ZeroNormRowError(ValueError):
    def __init__(self, row: int, norm: float):
        super().__init__(
            f"row {row} has norm {norm:.3e} after centering; cannot project onto the shell"
        )
        self.row = row


def row_norms(data: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", data, data))


def center(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("center expects a non-empty 2-D array")
    mean = data.mean(axis=0)
    return data - mean, mean


def shell_draws(n: int, seed: int) -> np.ndarray:
    """The u_i in [0, 1): first n doubles of a PCG64 stream seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed)).random(n)


def shell_transform(
    centered: np.ndarray,
    params: ShellParams = ShellParams(),
    seed: int = 0,
    draws: np.ndarray | None = None,
    original_mean: np.ndarray | None = None,
) -> ShellDataset:
    """Rescale each row to radius r_min + (r_max - r_min) * u_i, keeping its direction.

    ``draws`` overrides the seeded u_i (used by tests to force boundary radii).
    """
    centered = np.asarray(centered, dtype=np.float64)
    norms = row_norms(centered)
    bad = np.flatnonzero(norms <= ZERO_NORM_TOLERANCE)
    if bad.size:
        raise ZeroNormRowError(int(bad[0]), float(norms[bad[0]]))
    u = shell_draws(len(centered), seed) if draws is None else np.asarray(draws, float)
    if u.shape != (len(centered),):
        raise ValueError(f"need one draw per row, got {u.shape}")
    radius = params.r_min + (params.r_max - params.r_min) * u
    out = centered * (radius / norms)[:, None]
    if original_mean is None:
        original_mean = np.zeros(centered.shape[1])
    return ShellDataset(out, params, np.asarray(original_mean, float), u)


def to_shell(data: np.ndarray, params: ShellParams = ShellParams(), seed: int = 0) -> ShellDataset:
    """Center then shell-transform raw data."""
    xc, mean = center(data)
    return shell_transform(xc, params, seed, original_mean=mean)
