"""Training loops: reference pretraining and preference alignment.

Pretraining fits the denoiser to normal textures with the plain noise
prediction loss, dropping the condition to the null token with a small
probability so the unconditional branch used at sampling time exists.
Alignment freezes those weights and trains only the gated low-rank
adapters with the preference loss, one (sample, t, eps) triple per step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import preference, schedule as sched
from .autodiff import Tensor, backward, zero_grads
from .denoiser import Denoiser, LoraStack, TemporalGate, predict_noise
from .optim import Adam
from .rng import seeded_gaussian, seeded_randint, seeded_uniform

# counter-stream layout (bases; per-step offsets added)
_S_IDX, _S_T, _S_TOK, _S_DROP = 301, 302, 303, 304
_PRETRAIN_NOISE = 1_000_000
_ALIGN_NOISE = 2_000_000
_EVAL_NOISE = 3_000_000


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class TrainConfig:
    steps: int
    learning_rate: float
    beta: float = 1000.0
    batch_size: int = 1
    seed: int = 0
    condition_dropout: float = 0.1
    k_min: int = 4
    k_max: int = 32

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not (0.0 <= self.condition_dropout < 1.0):
            raise ValueError("condition_dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def add(self, **kw):
        self.records.append(kw)

    def save_csv(self, path):
        cols = ["step", "t", "delta", "beta_t", "loss", "pref_prob"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow(["" if r.get(c) is None else r[c] for c in cols])

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records], dtype=np.float64)


def pretrain_reference(normal_set, config: TrainConfig, s: sched.NoiseSchedule,
                       model: Denoiser | None = None) -> tuple[Denoiser, TrainLog]:
    """Fit the denoiser to (z0, candidate tokens) pairs with the MSE noise loss."""
    normal_set = list(normal_set)
    if not normal_set:
        raise ValueError("empty dataset")
    if model is None:
        model = Denoiser(latent_dim=len(normal_set[0][0]), seed=config.seed)
    model.set_trainable(True)
    opt = Adam(model.params, config.learning_rate)
    log = TrainLog()

    n_draws = config.steps * config.batch_size
    idx = seeded_randint(len(normal_set), (max(n_draws, 1),), config.seed, _S_IDX)
    ts = 1 + seeded_randint(s.T, (max(n_draws, 1),), config.seed, _S_T)
    tok_u = seeded_uniform((max(n_draws, 1),), config.seed, _S_TOK)
    drop = seeded_uniform((max(n_draws, 1),), config.seed, _S_DROP) < config.condition_dropout

    for step in range(config.steps):
        losses = []
        t_first = None
        for b in range(config.batch_size):
            d = step * config.batch_size + b
            z0, tokens = normal_set[idx[d]]
            token = 0 if drop[d] else tokens[min(int(tok_u[d] * len(tokens)), len(tokens) - 1)]
            t = int(ts[d])
            t_first = t if t_first is None else t_first
            eps = seeded_gaussian(np.shape(z0), config.seed, _PRETRAIN_NOISE + d)
            z_t = sched.forward_noise(s, np.asarray(z0, dtype=np.float64), t, eps)
            eps_hat = model.forward(z_t, token, t)
            losses.append(preference.sd_loss(eps_hat, eps))
        loss = losses[0] if len(losses) == 1 else _mean_scalars(losses)
        val = float(loss.data)
        if not np.isfinite(val):
            raise DivergenceError(f"diverged at pretrain step {step}")
        backward(loss)
        opt.step()
        zero_grads(model.params)
        log.add(step=step, t=t_first, delta=None, beta_t=None, loss=val, pref_prob=None)
    return model, log


def align(reference: Denoiser, anomaly_set, config: TrainConfig,
          s: sched.NoiseSchedule) -> tuple[LoraStack, TemporalGate, TrainLog]:
    """Preference alignment: adapters only, reference frozen.

    Each step follows the sampled-triple recipe exactly: draw
    (sample, t, eps), noise the latent, score both networks, convert the
    squared-error gap into the weighted preference loss, update.
    """
    anomaly_set = list(anomaly_set)
    if not anomaly_set:
        raise ValueError("empty anomaly set")
    reference.set_trainable(False)
    gate = TemporalGate(k_min=config.k_min, k_max=config.k_max, T=s.T)
    adapters = LoraStack(reference.layer_shapes(), rank=config.k_max, seed=config.seed)
    opt = Adam(adapters.params, config.learning_rate)
    log = TrainLog()

    n_draws = config.steps * config.batch_size
    idx = seeded_randint(len(anomaly_set), (max(n_draws, 1),), config.seed, _S_IDX)
    ts = 1 + seeded_randint(s.T, (max(n_draws, 1),), config.seed, _S_T)

    for step in range(config.steps):
        loss_terms = []
        rec = None
        for b in range(config.batch_size):
            d = step * config.batch_size + b
            z0, token = anomaly_set[idx[d]]
            t = int(ts[d])
            eps = seeded_gaussian(np.shape(z0), config.seed, _ALIGN_NOISE + d)
            z_t = sched.forward_noise(s, np.asarray(z0, dtype=np.float64), t, eps)
            eps_ref = predict_noise(reference, None, z_t, token, t)
            eps_th = reference.forward(z_t, token, t, adapters=adapters, gate=gate)
            diff = eps_th - Tensor(eps)
            delta = (diff * diff).sum() + (-float(np.sum((eps_ref - eps) ** 2)))
            beta_t = sched.beta_weight(s, config.beta, t)
            loss_terms.append(preference.apo_loss(delta, beta_t))
            if rec is None:
                dval = float(delta.data)
                rec = dict(t=t, delta=dval, beta_t=beta_t,
                           pref_prob=preference.bt_preference_prob(dval, beta_t))
        loss = loss_terms[0] if len(loss_terms) == 1 else _mean_scalars(loss_terms)
        val = float(loss.data)
        if not np.isfinite(val):
            raise DivergenceError(f"diverged at align step {step}")
        backward(loss)
        opt.step()
        zero_grads(adapters.params)
        log.add(step=step, loss=val, **rec)
    return adapters, gate, log


def evaluate_mean_delta(reference: Denoiser, adapters: LoraStack, gate: TemporalGate,
                        anomaly_set, s: sched.NoiseSchedule, seed: int,
                        n_draws_per_sample: int = 20) -> float:
    """Mean alignment deviation over the training set with frozen eval draws."""
    anomaly_set = list(anomaly_set)
    ts = 1 + seeded_randint(s.T, (len(anomaly_set), n_draws_per_sample), seed, _S_T + 50)
    deltas = []
    for i, (z0, token) in enumerate(anomaly_set):
        z0 = np.asarray(z0, dtype=np.float64)
        for k in range(n_draws_per_sample):
            t = int(ts[i, k])
            eps = seeded_gaussian(z0.shape, seed, _EVAL_NOISE + i * n_draws_per_sample + k)
            z_t = sched.forward_noise(s, z0, t, eps)
            eps_ref = predict_noise(reference, None, z_t, token, t)
            eps_th = predict_noise(reference, adapters, z_t, token, t, gate=gate)
            deltas.append(preference.alignment_deviation(eps_th, eps_ref, eps))
    return float(np.mean(deltas))


def beta_sweep(reference: Denoiser, anomaly_set, config: TrainConfig, betas,
               s: sched.NoiseSchedule) -> list[dict]:
    """Run align once per beta with a shared seed; returns summary rows."""
    betas = list(betas)
    if not betas or any(b <= 0 for b in betas):
        raise ValueError("betas must be non-empty and positive")
    rows = []
    for beta in betas:
        adapters, gate, log = align(reference, anomaly_set, replace(config, beta=beta), s)
        mean_delta = evaluate_mean_delta(reference, adapters, gate, anomaly_set, s, config.seed)
        tail = log.losses()[-min(100, len(log.records)):]
        rows.append({"beta": float(beta), "final_mean_delta": mean_delta,
                     "final_loss": float(tail.mean()) if tail.size else float("nan"),
                     "log": log})
    return rows


def _mean_scalars(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))
