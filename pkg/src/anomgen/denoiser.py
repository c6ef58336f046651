"""Conditional noise-prediction network with gated low-rank adapters.

A 4-layer dense net on flattened 16x16 latents.  Class-token and
sinusoidal time embeddings are added to the first hidden activation.
Adapters contribute B @ diag(mask) @ A on top of each frozen weight
matrix, with the mask width shrinking as the timestep grows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .autodiff import Tensor
from .rng import seeded_gaussian

NULL_TOKEN = 0

CKPT_MAGIC = b"APOC"
CKPT_VERSION = 1
ROLE_REFERENCE = 0
ROLE_ADAPTERS = 1

_KIND_CODES = {"linear": 0, "cosine": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class TemporalGate:
    """Active-rank schedule: wide at t=0 (detail), narrow at t=T (structure)."""

    k_min: int
    k_max: int
    T: int

    def __post_init__(self):
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError("need 1 <= k_min <= k_max")


def gate_dims(gate: TemporalGate, t: int) -> int:
    """k(t) = floor(k_min + (k_max - k_min) * (T - t) / T)."""
    if not (0 <= t <= gate.T):
        raise ValueError(f"timestep {t} outside [0, {gate.T}]")
    return int(np.floor(gate.k_min + (gate.k_max - gate.k_min) * (gate.T - t) / gate.T))


def gate_matrix(gate: TemporalGate, t: int) -> np.ndarray:
    """Diagonal of G_t: first k(t) entries one, remainder zero."""
    k = gate_dims(gate, t)
    mask = np.zeros(gate.k_max, dtype=np.float64)
    mask[:k] = 1.0
    return mask


class LoraStack:
    """Per-layer low-rank factors; B starts at zero so the initial update vanishes."""

    def __init__(self, layer_shapes, rank: int, seed: int, stream_base: int = 900):
        self.rank = int(rank)
        self.A: list[Tensor] = []
        self.B: list[Tensor] = []
        for i, (out_dim, in_dim) in enumerate(layer_shapes):
            a = seeded_gaussian((rank, in_dim), seed, stream_base + 2 * i) / np.sqrt(rank)
            self.A.append(Tensor(a, requires_grad=True))
            self.B.append(Tensor(np.zeros((out_dim, rank)), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        return self.A + self.B

    def layer_delta(self, i: int, mask: np.ndarray) -> Tensor:
        """Graph node for B_i @ diag(mask) @ A_i."""
        if mask.shape != (self.rank,):
            raise ValueError("mask length must equal adapter rank")
        return self.B[i] @ (Tensor(mask[:, None]) * self.A[i])


def effective_delta(adapter: LoraStack, gate: TemporalGate, t: int, layer: int = 0) -> np.ndarray:
    """Concrete weight update for one adapted layer at timestep t."""
    if gate.k_max != adapter.rank:
        raise ValueError("gate k_max must equal adapter rank")
    return adapter.layer_delta(layer, gate_matrix(gate, t)).data


def sinusoidal_embedding(t: int, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = t * freqs
    emb = np.concatenate([np.cos(ang), np.sin(ang)])
    if emb.size < dim:
        emb = np.concatenate([emb, np.zeros(dim - emb.size)])
    return emb


class Denoiser:
    """epsilon(z_t, c, t); token 0 is the reserved unconditional branch."""

    N_LAYERS = 4

    def __init__(self, latent_dim: int = 256, hidden: int = 256, n_tokens: int = 10,
                 seed: int = 0, time_max_period: float = 10000.0):
        self.latent_dim = int(latent_dim)
        self.hidden = int(hidden)
        self.n_tokens = int(n_tokens)
        self.time_max_period = float(time_max_period)

        dims = [(hidden, latent_dim), (hidden, hidden), (hidden, hidden), (latent_dim, hidden)]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (out_dim, in_dim) in enumerate(dims):
            w = seeded_gaussian((out_dim, in_dim), seed, 100 + i) / np.sqrt(in_dim)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(out_dim), requires_grad=True))
        cond = seeded_gaussian((n_tokens, hidden), seed, 200) * 0.1
        cond[NULL_TOKEN] = 0.0
        self.cond_table = Tensor(cond, requires_grad=True)

    # -- parameter plumbing ---------------------------------------------------

    @property
    def params(self) -> list[Tensor]:
        return self.weights + self.biases + [self.cond_table]

    def layer_shapes(self):
        return [w.data.shape for w in self.weights]

    def set_trainable(self, flag: bool) -> None:
        for p in self.params:
            p.requires_grad = flag

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def copy(self) -> "Denoiser":
        other = Denoiser(self.latent_dim, self.hidden, self.n_tokens,
                         time_max_period=self.time_max_period)
        for dst, src in zip(other.params, self.params):
            dst.data = src.data.copy()
        return other

    # -- forward --------------------------------------------------------------

    def forward(self, z_t, c: int | None, t: int,
                adapters: LoraStack | None = None,
                gate: TemporalGate | None = None) -> Tensor:
        """Noise prediction; with adapters each layer uses W + B diag(mask) A."""
        token = NULL_TOKEN if c is None else int(c)
        if not (0 <= token < self.n_tokens):
            raise ValueError(f"unknown token: {token}")
        if adapters is not None and gate is None:
            raise ValueError("adapters require a temporal gate")

        x = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=np.float64))
        if x.data.shape != (self.latent_dim,):
            raise ValueError("latent shape mismatch")

        mask = gate_matrix(gate, t) if adapters is not None else None
        emb_t = Tensor(sinusoidal_embedding(t, self.hidden, self.time_max_period))
        emb_c = self.cond_table.row(token)

        h = x
        for i in range(self.N_LAYERS):
            w: Tensor = self.weights[i]
            if adapters is not None:
                w = w + adapters.layer_delta(i, mask)
            h = w @ h + self.biases[i]
            if i == 0:
                h = h + emb_c + emb_t
            if i < self.N_LAYERS - 1:
                h = h.silu()
        return h


def predict_noise(model: Denoiser, adapters: LoraStack | None, z_t, c, t,
                  gate: TemporalGate | None = None) -> np.ndarray:
    """Plain-array forward pass for callers that do not need gradients."""
    return model.forward(z_t, c, t, adapters=adapters, gate=gate).data


# -- checkpoint container -----------------------------------------------------


def save_reference(path, model: Denoiser, sched_kind: str, T: int) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, ROLE_REFERENCE, sched_kind, T,
                      (model.latent_dim, model.hidden, model.n_tokens, 0, 0))
        for arr in model.state_arrays():
            tensorio.write_tensor(fh, arr)


def load_reference(path) -> tuple[Denoiser, str, int]:
    with open(path, "rb") as fh:
        role, kind, T, dims = _read_header(fh)
        if role != ROLE_REFERENCE:
            raise ValueError("checkpoint does not hold reference weights")
        latent_dim, hidden, n_tokens, _, _ = dims
        model = Denoiser(latent_dim, hidden, n_tokens)
        for p in model.params:
            arr = tensorio.read_tensor(fh)
            if arr.shape != p.data.shape:
                raise ValueError("checkpoint tensor shape mismatch")
            p.data = arr
    return model, kind, T


def save_adapters(path, adapters: LoraStack, gate: TemporalGate,
                  sched_kind: str, T: int, model: Denoiser) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, ROLE_ADAPTERS, sched_kind, T,
                      (model.latent_dim, model.hidden, gate.k_min, gate.k_max, len(adapters.A)))
        for p in adapters.params:
            tensorio.write_tensor(fh, p.data)


def load_adapters(path, model: Denoiser) -> tuple[LoraStack, TemporalGate, str, int]:
    with open(path, "rb") as fh:
        role, kind, T, dims = _read_header(fh)
        if role != ROLE_ADAPTERS:
            raise ValueError("checkpoint does not hold adapter weights")
        latent_dim, hidden, k_min, k_max, n_layers = dims
        if (latent_dim, hidden) != (model.latent_dim, model.hidden):
            raise ValueError("adapter checkpoint does not match model dims")
        gate = TemporalGate(k_min=k_min, k_max=k_max, T=T)
        adapters = LoraStack(model.layer_shapes(), rank=k_max, seed=0)
        if len(adapters.A) != n_layers:
            raise ValueError("adapter layer count mismatch")
        for p in adapters.params:
            arr = tensorio.read_tensor(fh)
            if arr.shape != p.data.shape:
                raise ValueError("checkpoint tensor shape mismatch")
            p.data = arr
    return adapters, gate, kind, T


def _write_header(fh, role: int, kind: str, T: int, dims) -> None:
    fh.write(CKPT_MAGIC)
    fh.write(struct.pack("<IBB", CKPT_VERSION, role, _KIND_CODES[kind]))
    fh.write(struct.pack("<I", int(T)))
    fh.write(struct.pack("<5I", *dims))


def _read_header(fh):
    if fh.read(4) != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    version, role, kind_code = struct.unpack("<IBB", fh.read(6))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (T,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack("<5I", fh.read(20))
    return role, _KIND_NAMES[kind_code], T, dims
