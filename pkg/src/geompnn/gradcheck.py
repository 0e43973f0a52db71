"""Central finite-difference checks for the autodiff primitives and the composed models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .graph import KdTree2, cap_neighbors, edge_geometry, radius_neighbors
from .net import BASE_EDGE_DIM, MODEL_KINDS, ModelConfig, ModelInputs, forward, init_params, wrap

FD_EPS = 1e-6
TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error <= self.tol)

    def line(self) -> str:
        return f"{self.name:<24} {self.rel_error:.3e} {'PASS' if self.passed else 'FAIL'}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|); zero when both vanish."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def _scalarize(out: ad.Tensor, proj: np.ndarray) -> ad.Tensor:
    # random projection so every output entry contributes
    if out.value.ndim == 0:
        return ad.mul(out, proj.reshape(()))
    return ad.tsum(ad.mul(out, proj))


def check_function(fn: Callable, inputs: Sequence[np.ndarray], seed=0, eps: float = FD_EPS):
    """Compare tape gradients of ``sum(fn(*inputs) * W)`` with central differences.

    Returns the worst relative error over all inputs.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    rng = np.random.default_rng(seed)
    probe = fn(*[ad.Tensor(x) for x in inputs])
    proj = rng.normal(size=probe.value.shape)

    def value(xs):
        return float(_scalarize(fn(*[ad.Tensor(x) for x in xs]), proj).value)

    tape = ad.Tape()
    ts = [tape.watch(x) for x in inputs]
    tape.backward(_scalarize(fn(*ts), proj))
    worst = 0.0
    for i, x in enumerate(inputs):
        analytic = ts[i].grad if ts[i].grad is not None else np.zeros_like(x)
        numeric = np.zeros_like(x)
        for j in np.ndindex(x.shape):
            xs = [y.copy() for y in inputs]
            xs[i][j] += eps
            up = value(xs)
            xs[i][j] -= 2 * eps
            down = value(xs)
            numeric[j] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def primitive_cases(seed=0) -> dict:
    """One small randomized instance per primitive: name -> (fn, inputs)."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    idx = rng.integers(0, 5, size=9)
    seg = np.array([0, 0, 1, 3, 3, 3, 1, 0])  # segment 2 (and 4) empty
    return {
        "matmul": (ad.matmul, [r(4, 3), r(3, 5)]),
        "add": (ad.add, [r(4, 3), r(4, 3)]),
        "add_broadcast": (ad.add, [r(4, 3), r(1, 3)]),
        "sub": (ad.sub, [r(4, 3), r(1, 3)]),
        "mul": (ad.mul, [r(4, 3), r(4, 3)]),
        "concat": (lambda a, b, c: ad.concat([a, b, c]), [r(4, 2), r(4, 3), r(4, 1)]),
        "gather_rows": (lambda a: ad.gather_rows(a, idx), [r(5, 3)]),
        "segment_mean": (lambda a: ad.segment_mean(a, seg, 5), [r(8, 3)]),
        "gelu": (ad.gelu, [r(6, 4) * 2.0]),
        "square": (ad.square, [r(4, 3)]),
        "mean": (ad.mean, [r(4, 3)]),
        "sum": (ad.tsum, [r(4, 3)]),
        "mse_loss": (ad.mse_loss, [r(6, 1), r(6, 1)]),
    }


def toy_model_inputs(cfg: ModelConfig, n_nodes: int = 30, n_surface: int = 10, seed=0) -> ModelInputs:
    """A hand-built case: a small closed surface polygon inside a cloud of random points."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, n_surface, endpoint=False)
    spts = np.stack([0.5 + 0.4 * np.cos(t), 0.05 * np.sin(t)], axis=1)
    vpts = rng.uniform([-0.5, -0.5], [1.5, 0.5], size=(n_nodes - n_surface, 2))
    pts = np.concatenate([spts, vpts])
    inp = ModelInputs(node_x=rng.normal(size=(n_nodes, cfg.node_dim)))
    if cfg.uses_surface:
        inp.surf_x = inp.node_x[:n_surface]
        src, dst = cap_neighbors(radius_neighbors(spts, 0.35), cfg.surf_max_neighbors, seed)
        inp.surf_src, inp.surf_dst, inp.surf_e = src, dst, edge_geometry(spts[src], spts[dst])
        tree = KdTree2(spts)
        inp.s2v_src = np.concatenate([tree.query_knn(p, cfg.k)[0] for p in pts])
        inp.s2v_e = rng.normal(size=(n_nodes * cfg.k, cfg.edge_dim))
        inp.k = cfg.k
    if cfg.uses_volume_graph:
        src, dst = cap_neighbors(radius_neighbors(pts, 0.4), cfg.vol_max_neighbors, seed)
        inp.vol_src, inp.vol_dst, inp.vol_e = src, dst, edge_geometry(pts[src], pts[dst])
    return inp


def toy_config(kind: str) -> ModelConfig:
    return ModelConfig(
        kind=kind, node_dim=5, edge_dim=4, hidden=4, mlp_depth=1,
        surf_layers=2, sv_layers=2, gnn_layers=2, k=3, surf_max_neighbors=3, vol_max_neighbors=3,
    )


def check_model(cfg: ModelConfig, inp: ModelInputs, seed=0, eps: float = FD_EPS) -> float:
    """Worst relative error of d(sum(pred * W))/d(params) over all parameter blocks."""
    params = init_params(cfg, seed)
    names = list(params)
    rng = np.random.default_rng([seed, 1])
    proj = rng.normal(size=(inp.n_nodes, 1))

    def value(P):
        return float(_scalarize(forward(wrap(P), cfg, inp), proj).value)

    tape = ad.Tape()
    T = wrap(params, tape)
    tape.backward(_scalarize(forward(T, cfg, inp), proj))
    analytic = np.concatenate([(T[n].grad if T[n].grad is not None else np.zeros_like(params[n])).ravel() for n in names])
    numeric = []
    for n in names:
        g = np.zeros_like(params[n])
        for j in np.ndindex(g.shape):
            P = dict(params)
            P[n] = params[n].copy()
            P[n][j] += eps
            up = value(P)
            P[n][j] -= 2 * eps
            g[j] = (up - value(P)) / (2 * eps)
        numeric.append(g.ravel())
    return relative_error(analytic, np.concatenate(numeric))


def run_gradchecks(seed: int = 0, tol: float = TOLERANCE) -> list[CheckResult]:
    """Every primitive, then every model kind on the 30-node toy case."""
    out = []
    for name, (fn, inputs) in primitive_cases(seed).items():
        out.append(CheckResult(f"prim:{name}", check_function(fn, inputs, seed), tol))
    for kind in MODEL_KINDS:
        cfg = toy_config(kind)
        out.append(CheckResult(f"model:{kind}", check_model(cfg, toy_model_inputs(cfg, seed=seed), seed), tol))
    return out


def summary(results: Sequence[CheckResult]) -> str:
    n_fail = sum(not r.passed for r in results)
    lines = [r.line() for r in results]
    lines.append(f"{len(results) - n_fail}/{len(results)} passed")
    return "\n".join(lines)
