"""Adam, the 1cycle schedule, and the per-field training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import HarmonicTables, SineBasisConfig
from .checkpoint import FieldModel
from .features import FeatureVariant, default_variant, edge_width, fit_normalizer, fit_sine_config, node_width
from .mesh import FieldId, MeshCase, recentre, subsample
from .net import ModelConfig, init_params, loss_and_grads
from .pipeline import PreparedCase

log = logging.getLogger(__name__)

# named random sub-streams derived from the run seed
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SAMPLE = 3
STREAM_GRAPH = 4


@dataclass
class TrainConfig:
    field: FieldId = FieldId.VelX
    variant: Optional[FeatureVariant] = None
    max_lr: float = 1e-3
    epochs: int = 600
    batch_size: int = 1
    subsample_n: int = 32000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    anneal: str = "cos"
    log_pressure: bool = False
    sph_factorial_norm: bool = False
    n_basis: int = 8
    kind: str = "surf2vol"
    hidden: int = 128
    mlp_depth: int = 2
    surf_layers: int = 4
    sv_layers: int = 4
    gnn_layers: int = 4
    k: int = 8

    def __post_init__(self):
        if self.epochs < 1 or self.subsample_n < 1 or self.max_lr <= 0:
            raise ValueError("epochs, subsample_n and max_lr must be positive")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if self.anneal not in ("cos", "linear"):
            raise ValueError("anneal must be 'cos' or 'linear'")
        if self.log_pressure and self.field is not FieldId.Pressure:
            raise ValueError("--log-pressure applies to the pressure field only")
        if self.variant is None:
            self.variant = default_variant(self.field)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            kind=self.kind,
            node_dim=node_width(self.variant, self.n_basis),
            edge_dim=edge_width(self.variant, self.n_basis),
            hidden=self.hidden,
            mlp_depth=self.mlp_depth,
            surf_layers=self.surf_layers,
            sv_layers=self.sv_layers,
            gnn_layers=self.gnn_layers,
            k=self.k,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["field"] = self.field.value
        d["variant"] = self.variant.value
        return d


# -- optimizer -------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t)


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Warm up from max_lr/div to max_lr, then anneal to max_lr/final_div."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    top = cfg.max_lr
    start = top / cfg.div_factor
    end = top / cfg.final_div_factor
    peak = int(round(cfg.warmup_frac * (total_steps - 1)))

    def interp(a, b, frac):
        if cfg.anneal == "cos":
            return b + (a - b) * (1.0 + math.cos(math.pi * frac)) / 2.0
        return a + (b - a) * frac

    if step == peak:
        return top
    if step < peak:
        return interp(start, top, step / peak)
    return interp(top, end, (step - peak) / (total_steps - 1 - peak))


# -- training loop ----------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class TrainResult:
    model: FieldModel
    history: list  # (epoch, mse, lr)


def fit_field_normalizer(cases: Sequence[MeshCase], cfg: TrainConfig):
    return fit_normalizer([c.field_values(cfg.field) for c in cases], cfg.field, cfg.log_pressure)


def epoch_sample(case: MeshCase, n: int, seed: int, epoch: int, case_index: int) -> np.ndarray:
    """Sorted point indices used for one case in one epoch (all surface points included)."""
    rng = np.random.default_rng([seed, STREAM_SAMPLE, epoch, case_index])
    return subsample(case, n, None, rng=rng)[1]


def sampled_loss(params: dict, mcfg: ModelConfig, pc: PreparedCase, targets: np.ndarray, keep: np.ndarray, graph_seed):
    """Loss and gradients supervised on the points ``keep`` only.

    ``targets`` are normalized values for the full mesh; entries outside
    ``keep`` are never read.
    """
    return loss_and_grads(params, mcfg, pc.inputs(keep, graph_seed=graph_seed), targets[keep])


def train_field(
    cases: Sequence[MeshCase],
    cfg: TrainConfig,
    sine: Optional[SineBasisConfig] = None,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Train one per-field model; every random choice derives from ``cfg.seed``.

    Each epoch visits the cases in a fresh random order, draws ``subsample_n``
    volume points per case (surface kept whole) and takes one Adam step per
    case on the MSE of normalized targets at the sampled points.
    """
    if not cases:
        raise ValueError("no training cases")
    cases = [recentre(c) for c in cases]
    mcfg = cfg.model_config()
    sine = sine or fit_sine_config(cases, cfg.n_basis)
    tables = HarmonicTables(cfg.n_basis, cfg.sph_factorial_norm)
    normalizer = fit_field_normalizer(cases, cfg)
    prepared = [PreparedCase(c, cfg.variant, mcfg, sine, tables) for c in cases]
    targets = [normalizer.normalize(p.targets(cfg.field)) for p in prepared]

    params = init_params(mcfg, [cfg.seed, STREAM_INIT])
    state = AdamState()
    total = cfg.epochs * len(prepared)
    history = []
    step = 0
    lr = cfg.max_lr / cfg.div_factor
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, STREAM_SHUFFLE, epoch]).permutation(len(prepared))
        losses = []
        for ci in order:
            pc = prepared[ci]
            keep = epoch_sample(pc.case, cfg.subsample_n, cfg.seed, epoch, int(ci))
            loss, grads = sampled_loss(params, mcfg, pc, targets[ci], keep, (cfg.seed, STREAM_GRAPH, epoch))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}", history)
            lr = onecycle_lr(step, total, cfg)
            try:
                params, state = adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), history) from exc
            losses.append(loss)
            step += 1
        mse = float(np.mean(losses))
        history.append((epoch, mse, lr))
        log.info("epoch %d mse %.6g lr %.3g", epoch, mse, lr)
        if on_epoch is not None:
            on_epoch(epoch, mse, lr)

    model = FieldModel(
        field=cfg.field,
        variant=cfg.variant,
        config=mcfg,
        params=params,
        normalizer=normalizer,
        sine=sine,
        sph_factorial_norm=cfg.sph_factorial_norm,
        graph_seed=(cfg.seed, STREAM_GRAPH, 0),
    )
    return TrainResult(model, history)


def write_history(path, history) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for epoch, mse, lr in history:
            fh.write(f"{epoch} {mse!r} {lr!r}\n")


def read_history(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                e, m, lr = line.split()
                out.append((int(e), float(m), float(lr)))
    return out
