"""Gaussian VAE with MLP encoder/decoder and fixed decoder variance."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric_core import IDENTITY, Layer, MlpParams, ShapeError, init_mlp, mlp_forward

LOGVAR_CLAMP = 10.0
CHECKPOINT_VERSION = 1


@dataclass
class VaeModel:
    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    sigma_sq: float
    seeds: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder.n_out != 2 * self.latent_dim:
            raise ShapeError(
                f"encoder emits {self.encoder.n_out} values, need 2*latent_dim={2 * self.latent_dim}"
            )
        if self.decoder.n_in != self.latent_dim:
            raise ShapeError(f"decoder takes {self.decoder.n_in} inputs, latent_dim={self.latent_dim}")
        if self.decoder.n_out != self.encoder.n_in:
            raise ShapeError("decoder output width differs from encoder input width")
        if not self.sigma_sq > 0:
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")

    @property
    def data_dim(self) -> int:
        return self.encoder.n_in

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.arrays() + self.decoder.arrays()


@dataclass
class LatentBatch:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    eps: np.ndarray


def build_vae(
    data_dim: int,
    latent_dim: int = 8,
    sigma_sq: float = 1.0,
    encoder_hidden: tuple[int, ...] = (256, 128),
    decoder_hidden: tuple[int, ...] = (128, 256),
    seed: int = 0,
    zero_encoder_head: bool = True,
) -> VaeModel:
    """Glorot-initialised VAE. By default the encoder's output layer starts at
    zero so the initial posterior equals the prior (mu = 0, logvar = 0)."""
    rng = np.random.default_rng(seed)
    enc = init_mlp([data_dim, *encoder_hidden, 2 * latent_dim], rng, IDENTITY)
    if zero_encoder_head:
        enc.layers[-1].weight[:] = 0.0
    dec = init_mlp([latent_dim, *decoder_hidden, data_dim], rng, IDENTITY)
    return VaeModel(enc, dec, latent_dim, float(sigma_sq), {"init": seed})


def split_heads(head: np.ndarray, latent_dim: int) -> tuple[np.ndarray, np.ndarray]:
    mu = head[:, :latent_dim]
    logvar = np.clip(head[:, latent_dim:], -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu, logvar


def encode(model: VaeModel, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    head, _ = mlp_forward(model.encoder, batch)
    return split_heads(head, model.latent_dim)


def reparameterize(mu, logvar, rng=None, eps=None) -> LatentBatch:
    """z = mu + exp(logvar / 2) * eps. Pass either a generator or explicit noise."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        eps = rng.standard_normal(mu.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), mu.shape)
    return LatentBatch(mu, logvar, mu + np.exp(0.5 * logvar) * eps, eps)


def decode(model: VaeModel, z: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(model.decoder, z)
    return out


def reconstruct_mean(model: VaeModel, batch: np.ndarray) -> np.ndarray:
    """Decode the posterior mean (eps = 0)."""
    mu, _ = encode(model, batch)
    return decode(model, mu)


def kl_gaussian(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Batch-mean KL(N(mu, diag exp(logvar)) || N(0, I))."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    # expm1 keeps exp(v) - 1 - v from rounding below zero near v = 0
    gap = np.maximum(np.expm1(logvar) - logvar, 0.0)
    per = 0.5 * np.sum(gap + mu * mu, axis=1)
    return float(per.mean())


def recon_nll(x: np.ndarray, x_hat: np.ndarray, sigma_sq: float) -> float:
    """Gaussian negative log-likelihood with fixed variance, averaged over rows."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    d = x.shape[1]
    resid = x - x_hat
    sq = np.einsum("ij,ij->i", resid, resid)
    return float(np.mean(sq / (2.0 * sigma_sq)) + 0.5 * d * np.log(2.0 * np.pi * sigma_sq))


# -- checkpoints -------------------------------------------------------------

def _pack(prefix: str, mlp: MlpParams, arrays: dict, acts: list):
    for k, layer in enumerate(mlp.layers):
        arrays[f"{prefix}_w{k}"] = layer.weight
        arrays[f"{prefix}_b{k}"] = layer.bias
        acts.append(layer.activation)


def _unpack(prefix: str, store, acts: list[str]) -> MlpParams:
    layers = [
        Layer(np.array(store[f"{prefix}_w{k}"]), np.array(store[f"{prefix}_b{k}"]), act)
        for k, act in enumerate(acts)
    ]
    return MlpParams(layers)


def save_checkpoint(model: VaeModel, path, extra: dict | None = None) -> Path:
    """Write an ``.npz`` checkpoint atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    enc_acts: list[str] = []
    dec_acts: list[str] = []
    _pack("enc", model.encoder, arrays, enc_acts)
    _pack("dec", model.decoder, arrays, dec_acts)
    meta = {
        "version": CHECKPOINT_VERSION,
        "latent_dim": model.latent_dim,
        "sigma_sq": model.sigma_sq.hex(),
        "encoder_activations": enc_acts,
        "decoder_activations": dec_acts,
        "seeds": model.seeds,
        "extra": extra or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[VaeModel, dict]:
    with np.load(Path(path), allow_pickle=False) as store:
        meta = json.loads(bytes(store["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        enc = _unpack("enc", store, meta["encoder_activations"])
        dec = _unpack("dec", store, meta["decoder_activations"])
    model = VaeModel(
        enc, dec, int(meta["latent_dim"]), float.fromhex(meta["sigma_sq"]),
        {k: int(v) for k, v in meta["seeds"].items()},
    )
    return model, meta.get("extra", {})
