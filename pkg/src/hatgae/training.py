"""The training loop: hierarchical masking, corruption, attention auto-encoding
and the masked cosine reconstruction loss, optimized with Adam."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .centrality import METHODS, PowerIterConfig, node_scores
from .corruption import apply_corruption, mask_flags, sample_node_mask
from .exceptions import AllClean, ConfigError, FiniteCheckError, TrainingDiverged, ZeroNorm
from .gat import decode, encode, init_model_params, register_params, remask
from .masking import build_mask_schedule, dimension_importance, features_at_level
from .utils import rng_stream

log = logging.getLogger(__name__)

VARIANTS = ("full", "am", "hm", "tc")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    """Run configuration.

    ``num`` is the epoch interval between masking operations; ``variant``
    selects the full model or one ablation: ``am`` (random dimension order),
    ``hm`` (a single masking round before training), ``tc`` (no trainable
    corruption).
    """

    pf: float = 0.1
    pn: float = 0.5
    num: int = 200
    epochs: int = 500
    lr: float = 0.001
    weight_decay: float = 0.0
    hidden: int = 64
    heads: int = 4
    seed: int = 0
    centrality: str = "indegree"
    variant: str = "full"
    stop_grad_target: bool = False
    lr_schedule: str = "constant"
    pagerank_alpha: float = 0.85

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.num < 1:
            raise ConfigError(f"num must be >= 1, got {self.num}")
        if not 0.0 < self.pf < 1.0:
            raise ConfigError(f"pf must lie in (0, 1), got {self.pf}")
        if not 0.0 <= self.pn <= 1.0:
            raise ConfigError(f"pn must lie in [0, 1], got {self.pn}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.heads < 1 or self.hidden < 1 or self.hidden % self.heads:
            raise ConfigError(f"hidden ({self.hidden}) must be a positive multiple of heads ({self.heads})")
        if self.centrality not in METHODS:
            raise ConfigError(f"centrality must be one of {METHODS}, got {self.centrality!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        return self

    @property
    def rounds(self):
        if self.variant == "hm":
            return 1
        return implied_rounds(self.epochs, self.num)


def implied_rounds(epochs, num):
    """Masking operations that fit in ``epochs`` when one happens every ``num`` epochs."""
    return (epochs - 1) // num


def level_for_epoch(epoch, num):
    return epoch // num + 1


# --------------------------------------------------------------------------
# loss


def cosine_distance(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ad.NORM_EPS or nb < ad.NORM_EPS:
        raise ZeroNorm("cosine undefined for a zero-norm vector")
    return float(a @ b / (na * nb))


def reconstruction_loss(x_tilde, z, mask):
    """Mean of ``(1 - cos(x_v, z_v))^2`` over noisy nodes, as a ``1 x 1`` tensor.

    A zero-norm row contributes exactly 1 and no gradient.
    """
    idx = np.flatnonzero(mask_flags(mask))
    if idx.size == 0:
        raise AllClean("reconstruction loss needs at least one noisy node")
    if not isinstance(z, ad.Tensor):
        z = (x_tilde.tape if isinstance(x_tilde, ad.Tensor) else ad.Tape()).const(z)
    if not isinstance(x_tilde, ad.Tensor):
        x_tilde = z.tape.const(x_tilde)
    d = ad.row_cosine(x_tilde, z)
    return ad.mean_rows(ad.square(1.0 - d), idx)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """In-place Adam update with decoupled weight decay.

    Decay ``p <- p - lr * wd * p`` is applied first, then the bias-corrected
    Adam delta. ``params`` maps names to arrays that are modified in place.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def learning_rate(cfg, epoch):
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


# --------------------------------------------------------------------------
# report


@dataclass
class EpochRecord:
    epoch: int
    level: int
    loss: float
    noisy_count: int
    ms: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    checkpoint_path: str | None = None
    n_parameters: int = 0
    trainable: tuple = ()

    @property
    def losses(self):
        return np.array([r.loss for r in self.records])

    @property
    def levels(self):
        return [r.level for r in self.records]

    def to_jsonl(self, timing=True):
        """One JSON object per epoch. ``timing=False`` drops wall time, leaving
        a byte-reproducible loss log."""
        lines = []
        for r in self.records:
            d = asdict(r)
            if not timing:
                d.pop("ms")
            lines.append(json.dumps(d) + "\n")
        return "".join(lines)


# --------------------------------------------------------------------------
# the loop


@dataclass
class TrainState:
    """Everything ``train`` precomputes before epoch 0."""

    schedule: object
    node_scores: object
    dim_scores: object


def prepare(g, cfg):
    """Node scores, dimension scores and the masking schedule for ``cfg``."""
    cfg.validate()
    scores = node_scores(g, cfg.centrality, PowerIterConfig(alpha=cfg.pagerank_alpha))
    sd = dimension_importance(g, scores)
    rounds = cfg.rounds
    schedule = None
    if rounds >= 1:
        order = None
        if cfg.variant == "am":
            order = rng_stream(cfg.seed, "mask_order").permutation(g.n_dims)
        schedule = build_mask_schedule(sd, cfg.pf, rounds, order=order)
    return TrainState(schedule, scores, sd)


def epoch_level(cfg, epoch):
    if cfg.variant == "hm":
        return 2
    return level_for_epoch(epoch, cfg.num)


def loss_on_tape(g, xn, mask, tensors, stop_grad_target=False):
    """Forward pass for one epoch; returns ``(loss, x_tilde, H, H_remasked, Z)``."""
    tape = next(iter(tensors.values())).tape
    if "noise" in tensors:
        x_tilde = apply_corruption(xn, mask, tensors["noise"])
    else:
        x_tilde = tape.const(getattr(xn, "matrix", xn))
    h = encode(g, x_tilde, tensors)
    h_tilde = remask(h, mask)
    z = decode(g, h_tilde, tensors)
    target = ad.detach(x_tilde) if stop_grad_target else x_tilde
    return reconstruction_loss(target, z, mask), x_tilde, h, h_tilde, z


def train(g, cfg, callback=None):
    """Train on ``g``; returns ``(ModelParams, TrainReport)``.

    ``callback(record)`` is invoked after every epoch.
    """
    cfg.validate()
    if cfg.pn == 0:
        raise AllClean("pn = 0 selects no noisy nodes, so the loss is undefined")
    state = prepare(g, cfg)
    params = init_model_params(g.n_dims, cfg.hidden, cfg.heads, rng_stream(cfg.seed, "init"),
                               with_noise=cfg.variant != "tc")
    params.meta.update({"variant": cfg.variant, "n_dims": g.n_dims})
    flat = params.flat()
    adam = AdamState()
    mask_rng = rng_stream(cfg.seed, "node_mask")
    level_cache = {}
    report = TrainReport(n_parameters=params.n_parameters(), trainable=tuple(flat))

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        level = epoch_level(cfg, epoch)
        if level not in level_cache:
            level_cache[level] = features_at_level(g, state.schedule, level)
        xn = level_cache[level]
        mask = sample_node_mask(g.n_nodes, cfg.pn, mask_rng)
        tape = ad.Tape()
        tensors = register_params(tape, flat)
        try:
            loss = loss_on_tape(g, xn, mask, tensors, cfg.stop_grad_target)[0]
        except FiniteCheckError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(epoch, f"loss {value}")
        grads = tape.backward(loss)
        adam_step(flat, grads, adam, learning_rate(cfg, epoch), cfg.weight_decay)
        rec = EpochRecord(epoch, level, value, mask.count, (time.perf_counter() - t0) * 1e3)
        report.records.append(rec)
        if callback is not None:
            callback(rec)
        if epoch % 50 == 0:
            log.debug("epoch %d level %d loss %.6f", epoch, level, value)
    return params, report
