"""Adam optimizer and the seeded minibatch training loop.

One training run owns its parameters, RNG, and log, and is fully
determined by (seed, config, dataset): initialization, shuffling, and the
reparameterization noise all derive from the config seed.  Non-finite
losses or gradients abort with the offending epoch/batch rather than
silently skipping, since they usually mean a misconfigured beta.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import vaemodel
from .diffcore import Graph
from .divergences import LossSpec, compute_loss
from .errors import NonFiniteError, NumericError, ShapeError
from .vaemodel import Arch, VaeParams

TRAIN_LOG_COLUMNS = ("epoch", "total", "recon", "kl", "wall_ms")


@dataclass
class AdamState:
    """First/second moment buffers plus step counter and hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 0.001) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()},
                   lr=lr)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {theta.shape} "
                             f"for {name!r}")
        if not np.isfinite(g).all():
            raise NonFiniteError("adam_step", f"gradient of {name!r}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new_params[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a reproducible training run needs."""

    arch: Arch
    loss_spec: LossSpec
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    lr: float = 0.001
    shuffle: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    total: float
    recon: float
    kl: float
    wall_ms: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRAIN_LOG_COLUMNS)
            for s in self.epochs:
                writer.writerow([s.epoch, repr(s.total), repr(s.recon),
                                 repr(s.kl), f"{s.wall_ms:.3f}"])


def train(config: TrainConfig, dataset, checkpoint_dir=None) -> tuple[VaeParams, TrainLog]:
    """Run the full seeded loop; returns final params and the per-epoch log.

    The last partial minibatch is used, not dropped.  If checkpoint_dir is
    given and checkpoint_every > 0, a snapshot is written every that many
    epochs as epoch_<nnnn>.ckpt.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    n, d = images.shape
    arch = config.arch
    if d != arch.input_dim:
        raise ShapeError(f"dataset dim {d} != arch input_dim {arch.input_dim}")
    params = vaemodel.init_params(arch, config.seed)
    state = AdamState.for_params(params.values, lr=config.lr)
    loop_rng = np.random.default_rng([config.seed, 1])
    log = TrainLog()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = loop_rng.permutation(n) if config.shuffle else np.arange(n)
        sums = np.zeros(3)
        for batch_no, lo in enumerate(range(0, n, config.batch_size)):
            rows = order[lo:lo + config.batch_size]
            eps = loop_rng.standard_normal((len(rows), arch.latent_dim))
            try:
                g = Graph()
                bound = vaemodel.bind(g, params)
                x = g.leaf(images[rows])
                post = vaemodel.encode(bound, x)
                z = vaemodel.reparameterize(post, g.leaf(eps))
                recon = vaemodel.decode(bound, z)
                loss = compute_loss(config.loss_spec, x, recon, post)
                g.backward(loss.total)
                new_values, state = adam_step(params.values, bound.grads(), state)
            except NumericError as e:
                raise NumericError(
                    f"epoch {epoch}, batch {batch_no}: {e}") from e
            params = VaeParams(arch, new_values)
            sums += len(rows) * np.array([loss.total.item(),
                                          loss.recon_term.item(),
                                          loss.kl_term.item()])
        wall_ms = (time.perf_counter() - start) * 1000.0
        total, recon_mean, kl_mean = (sums / n).tolist()
        log.epochs.append(EpochStats(epoch, total, recon_mean, kl_mean, wall_ms))
        if checkpoint_dir is not None and config.checkpoint_every > 0 \
                and epoch % config.checkpoint_every == 0:
            vaemodel.save_checkpoint(params, f"{checkpoint_dir}/epoch_{epoch:04d}.ckpt")
    return params, log
