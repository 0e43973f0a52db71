"""Network architectures: pointwise MLP, radius-graph GNN, Surf2Vol and Surf2Vol+GNN.

Parameters live in a flat ``{name: array}`` dict. Forward functions take a
dict of :class:`Tensor` (watched on a tape for training, plain for inference).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MODEL_KINDS = ("mlp", "gnn", "surf2vol", "surf2vol_gnn")
BASE_EDGE_DIM = 3


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "surf2vol"
    node_dim: int = 251
    edge_dim: int = 115
    hidden: int = 128
    mlp_depth: int = 2
    surf_layers: int = 4
    sv_layers: int = 4
    gnn_layers: int = 4
    k: int = 8
    surf_radius: float = 0.05
    surf_max_neighbors: int = 8
    vol_radius: float = 0.05
    vol_max_neighbors: int = 4

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hidden < 1 or self.mlp_depth < 0 or self.k < 1:
            raise ValueError("invalid model dimensions")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_surface(self) -> bool:
        return self.kind in ("surf2vol", "surf2vol_gnn")

    @property
    def uses_volume_graph(self) -> bool:
        return self.kind in ("gnn", "surf2vol_gnn")


@dataclass
class ModelInputs:
    """Everything a forward pass needs for one case (or a subset of its points).

    Surface quantities use local surface indices ``0..n_surface-1``; Surf2Vol
    edges are dst-major with exactly ``k`` edges per volume node.
    """

    node_x: np.ndarray
    surf_x: Optional[np.ndarray] = None
    surf_src: Optional[np.ndarray] = None
    surf_dst: Optional[np.ndarray] = None
    surf_e: Optional[np.ndarray] = None
    s2v_src: Optional[np.ndarray] = None
    s2v_e: Optional[np.ndarray] = None
    k: int = 0
    vol_src: Optional[np.ndarray] = None
    vol_dst: Optional[np.ndarray] = None
    vol_e: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_x)


# -- parameters ---------------------------------------------------------------------


def mlp_shapes(prefix: str, d_in: int, hidden: int, depth: int, d_out: int) -> list[tuple[str, tuple]]:
    dims = [d_in] + [hidden] * depth + [d_out]
    out = []
    for i in range(len(dims) - 1):
        out.append((f"{prefix}.W{i}", (dims[i], dims[i + 1])))
        out.append((f"{prefix}.b{i}", (1, dims[i + 1])))
    return out


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    h, D = cfg.hidden, cfg.mlp_depth
    shapes: list[tuple[str, tuple]] = []
    if cfg.kind == "mlp":
        return mlp_shapes("mlp", cfg.node_dim, h, D, 1)
    if cfg.kind == "gnn":
        shapes += mlp_shapes("gnn.node_embed", cfg.node_dim, h, D, h)
        shapes += mlp_shapes("gnn.edge_embed", BASE_EDGE_DIM, h, D, h)
        for i in range(cfg.gnn_layers):
            shapes += mlp_shapes(f"gnn.{i}.edge", 3 * h, h, D, h)
            shapes += mlp_shapes(f"gnn.{i}.node", 2 * h, h, D, h)
        return shapes + mlp_shapes("decoder", h, h, D, 1)
    shapes += mlp_shapes("surf.node_embed", cfg.node_dim, h, D, h)
    shapes += mlp_shapes("surf.edge_embed", BASE_EDGE_DIM, h, D, h)
    for i in range(cfg.surf_layers):
        shapes += mlp_shapes(f"surf.{i}.edge", 3 * h, h, D, h)
        shapes += mlp_shapes(f"surf.{i}.node", 2 * h, h, D, h)
    shapes += mlp_shapes("s2v.node_embed", cfg.node_dim, h, D, h)
    shapes += mlp_shapes("s2v.edge_embed", cfg.edge_dim, h, D, h)
    for i in range(cfg.sv_layers):
        shapes += mlp_shapes(f"s2v.{i}.edge", 3 * h, h, D, h)
        shapes += mlp_shapes(f"s2v.{i}.node", 2 * h, h, D, h)
    if cfg.kind == "surf2vol_gnn":
        shapes += mlp_shapes("vol.edge_embed", BASE_EDGE_DIM, h, D, h)
        for i in range(cfg.sv_layers):
            shapes += mlp_shapes(f"vol.{i}.edge", 3 * h, h, D, h)
            shapes += mlp_shapes(f"vol.{i}.node", 2 * h, h, D, h)
    return shapes + mlp_shapes("decoder", h, h, D, 1)


def init_params(cfg: ModelConfig, seed) -> dict[str, np.ndarray]:
    """Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for weights and biases."""
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = None
    for name, shape in param_shapes(cfg):
        if ".W" in name:
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def n_parameters(params: dict) -> int:
    return int(sum(p.size for p in params.values()))


# -- building blocks ----------------------------------------------------------------------


def mlp_forward(P: dict, prefix: str, x) -> Tensor:
    """Hidden layers with GELU, linear output layer."""
    x = ad.as_tensor(x)
    n_layers = sum(1 for k in P if k.startswith(prefix + ".W"))
    if n_layers == 0:
        raise KeyError(f"no MLP named {prefix!r}")
    for i in range(n_layers):
        W = P[f"{prefix}.W{i}"]
        if x.shape[-1] != W.shape[0]:
            raise ValueError(f"{prefix}: input width {x.shape[-1]} != {W.shape[0]}")
        x = ad.add(ad.matmul(x, W), P[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            x = ad.gelu(x)
    return x


def message_passing_layer(P: dict, prefix: str, z_src, z_dst, e, src, dst):
    """Residual edge update, mean aggregation, residual node update.

    ``src`` indexes rows of ``z_src`` and ``dst`` rows of ``z_dst``; nodes with
    no in-edges receive a zero message.
    """
    upd = mlp_forward(P, prefix + ".edge", ad.concat([ad.gather_rows(z_src, src), ad.gather_rows(z_dst, dst), e]))
    e = ad.add(e, upd)
    m = ad.segment_mean(e, dst, z_dst.shape[0])
    z = ad.add(z_dst, mlp_forward(P, prefix + ".node", ad.concat([z_dst, m])))
    return z, e


def surface_encode(P: dict, cfg: ModelConfig, inp: ModelInputs) -> Tensor:
    z = mlp_forward(P, "surf.node_embed", inp.surf_x)
    e = mlp_forward(P, "surf.edge_embed", inp.surf_e)
    for i in range(cfg.surf_layers):
        z, e = message_passing_layer(P, f"surf.{i}", z, z, e, inp.surf_src, inp.surf_dst)
    return z


def _check_s2v(inp: ModelInputs, k: int):
    n = inp.n_nodes
    if inp.s2v_src is None or len(inp.s2v_src) != n * k:
        raise ValueError(f"Surf2Vol graph must give every volume node exactly k={k} in-edges")
    if inp.s2v_e.shape[0] != n * k:
        raise ValueError("Surf2Vol edge features do not match the edge count")


def surf2vol_forward(P: dict, cfg: ModelConfig, inp: ModelInputs, z_surf=None, volume_layers: bool = True) -> Tensor:
    """Surf2Vol (optionally interleaved with volume message passing) -> (n, 1) predictions."""
    k = cfg.k
    _check_s2v(inp, k)
    if z_surf is None:
        z_surf = surface_encode(P, cfg, inp)
    n = inp.n_nodes
    dst = np.repeat(np.arange(n), k)
    z = mlp_forward(P, "s2v.node_embed", inp.node_x)
    e = mlp_forward(P, "s2v.edge_embed", inp.s2v_e)
    use_vol = volume_layers and cfg.kind == "surf2vol_gnn"
    if use_vol:
        ev = mlp_forward(P, "vol.edge_embed", inp.vol_e)
    for i in range(cfg.sv_layers):
        z, e = message_passing_layer(P, f"s2v.{i}", z_surf, z, e, inp.s2v_src, dst)
        if use_vol:
            z, ev = message_passing_layer(P, f"vol.{i}", z, z, ev, inp.vol_src, inp.vol_dst)
    return mlp_forward(P, "decoder", z)


def baseline_mlp(P: dict, cfg: ModelConfig, inp: ModelInputs) -> Tensor:
    return mlp_forward(P, "mlp", inp.node_x)


def baseline_gnn(P: dict, cfg: ModelConfig, inp: ModelInputs) -> Tensor:
    z = mlp_forward(P, "gnn.node_embed", inp.node_x)
    e = mlp_forward(P, "gnn.edge_embed", inp.vol_e)
    for i in range(cfg.gnn_layers):
        z, e = message_passing_layer(P, f"gnn.{i}", z, z, e, inp.vol_src, inp.vol_dst)
    return mlp_forward(P, "decoder", z)


def surf2vol_plus_gnn(P: dict, cfg: ModelConfig, inp: ModelInputs, volume_layers: bool = True) -> Tensor:
    return surf2vol_forward(P, cfg, inp, volume_layers=volume_layers)


def forward(P: dict, cfg: ModelConfig, inp: ModelInputs) -> Tensor:
    """Dispatch on ``cfg.kind``; returns an (n, 1) tensor."""
    if cfg.kind == "mlp":
        return baseline_mlp(P, cfg, inp)
    if cfg.kind == "gnn":
        return baseline_gnn(P, cfg, inp)
    return surf2vol_forward(P, cfg, inp)


def wrap(params: dict, tape: Optional[ad.Tape] = None) -> dict:
    if tape is None:
        return {k: Tensor(v) for k, v in params.items()}
    return {k: tape.watch(v, name=k) for k, v in params.items()}


def predict(params: dict, cfg: ModelConfig, inp: ModelInputs) -> np.ndarray:
    """Inference without a tape; returns a flat array of normalized predictions."""
    return forward(wrap(params), cfg, inp).value[:, 0]


def loss_and_grads(params: dict, cfg: ModelConfig, inp: ModelInputs, target: np.ndarray):
    """MSE against ``target`` (normalized units) and its gradient for every parameter."""
    tape = ad.Tape()
    P = wrap(params, tape)
    pred = forward(P, cfg, inp)
    loss = ad.mse_loss(pred, np.asarray(target, dtype=np.float64)[:, None])
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in P.items()}
    return float(loss.value), grads
