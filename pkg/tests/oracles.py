"""Independent reference computations used only by the tests.

Nothing here calls into ``shellvae``; each routine recomputes a quantity the
slow, obvious way.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def naive_covariance(data) -> np.ndarray:
    rows = [list(map(float, r)) for r in data]
    n, d = len(rows), len(rows[0])
    mean = [sum(r[j] for r in rows) / n for j in range(d)]
    cov = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            cov[i, j] = sum((r[i] - mean[i]) * (r[j] - mean[j]) for r in rows) / n
    return cov


def straight_line_mlp(layers, batch) -> np.ndarray:
    """Per-sample, per-unit loop evaluation of a feedforward network.

    ``layers`` is a list of (weight, bias, activation) tuples.
    """
    out = []
    for x in batch:
        h = [float(v) for v in x]
        for w, b, act in layers:
            nxt = []
            for i in range(w.shape[0]):
                s = float(b[i])
                for j in range(w.shape[1]):
                    s += float(w[i, j]) * h[j]
                nxt.append(max(s, 0.0) if act == "relu" else s)
            h = nxt
        out.append(h)
    return np.array(out)


def best_partition_wss(points: np.ndarray, k: int):
    """Exhaustive minimum within-cluster sum of squares over all labelings."""
    best = (math.inf, None)
    n = len(points)
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        lab = np.array(labels)
        wss = 0.0
        for c in range(k):
            pts = points[lab == c]
            wss += float(((pts - pts.mean(axis=0)) ** 2).sum())
        if wss < best[0] - 1e-15:
            best = (wss, lab)
    return best


def kl_quadrature_1d(mu: float, logvar: float) -> float:
    """KL(N(mu, e^logvar) || N(0, 1)) by adaptive quadrature of q log(q/p)."""
    from scipy import integrate

    sd = math.exp(0.5 * logvar)

    def integrand(z):
        logq = -0.5 * ((z - mu) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)
        logp = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
        return math.exp(logq) * (logq - logp)

    val, _ = integrate.quad(integrand, mu - 40 * sd, mu + 40 * sd, limit=400, epsabs=1e-13)
    return val


def floored_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    """max |a - b| / max(|a|, |b|, floor) over entries."""
    a = np.ravel(a)
    b = np.ravel(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
