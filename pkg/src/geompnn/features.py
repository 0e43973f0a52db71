"""Per-variant node/edge feature assembly, target normalization, log-pressure."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geom
from .basis import HarmonicTables, SineBasisConfig, sine_embed, sine_embed_vec, sph_embed_angles
from .graph import KdTree2
from .mesh import FieldId, MeshCase, recentre


class FeatureVariant(enum.Enum):
    Base = "base"
    Trail = "trail"
    Polar = "polar"
    Sine = "sine"
    SpH = "sph"
    Inlet = "inlet"

    @classmethod
    def parse(cls, name: str) -> "FeatureVariant":
        for v in cls:
            if name.lower() in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown variant {name!r}")


# Block order follows the concatenation order of each variant.
NODE_BLOCKS = {
    FeatureVariant.Base: ("base",),
    FeatureVariant.Trail: ("base", "trail"),
    FeatureVariant.Polar: ("base", "trail", "ang"),
    FeatureVariant.Sine: ("base", "trail", "ang", "sine"),
    FeatureVariant.SpH: ("base", "trail", "sph", "sine"),
    FeatureVariant.Inlet: ("base", "trail", "sph", "sine", "canon"),
}
EDGE_BLOCKS = {
    FeatureVariant.Base: ("base",),
    FeatureVariant.Trail: ("base",),
    FeatureVariant.Polar: ("base", "ang"),
    FeatureVariant.Sine: ("base", "ang", "sine"),
    FeatureVariant.SpH: ("base", "sph", "sine"),
    FeatureVariant.Inlet: ("base", "sph", "sine", "canon"),
}


def _node_block_widths(n: int) -> dict:
    return {"base": 8, "trail": 3, "ang": 8, "sine": 14 * n, "sph": 16 * n, "canon": 6 + 24 * n}


def _edge_block_widths(n: int) -> dict:
    return {"base": 3, "ang": 4, "sine": 6 * n, "sph": 8 * n, "canon": 2 + 12 * n}


def node_layout(variant: FeatureVariant, n_basis: int = 8) -> list[tuple[str, int, int]]:
    """``(block, start, stop)`` column ranges of the node feature vector."""
    widths = _node_block_widths(n_basis)
    out, pos = [], 0
    for b in NODE_BLOCKS[variant]:
        out.append((b, pos, pos + widths[b]))
        pos += widths[b]
    return out


def edge_layout(variant: FeatureVariant, n_basis: int = 8) -> list[tuple[str, int, int]]:
    widths = _edge_block_widths(n_basis)
    out, pos = [], 0
    for b in EDGE_BLOCKS[variant]:
        out.append((b, pos, pos + widths[b]))
        pos += widths[b]
    return out


def node_width(variant: FeatureVariant, n_basis: int = 8) -> int:
    return node_layout(variant, n_basis)[-1][2]


def edge_width(variant: FeatureVariant, n_basis: int = 8) -> int:
    return edge_layout(variant, n_basis)[-1][2]


def default_variant(fid: FieldId) -> FeatureVariant:
    """Canonicalized inputs for pressure and turbulent viscosity, SpH for velocities."""
    return FeatureVariant.Inlet if fid in (FieldId.Pressure, FieldId.TurbVisc) else FeatureVariant.SpH


# -- basis scales ---------------------------------------------------------------


def fit_sine_config(cases: Sequence[MeshCase], n_basis: int = 8, max_points: int = 4000, seed: int = 0) -> SineBasisConfig:
    """Dataset-global scales: s = median nearest-neighbor spacing, L = bounding-box diagonal.

    The spacing median is taken over at most ``max_points`` query points per
    case (exact nearest neighbors against the full mesh).
    """
    spacings = []
    lo = np.full(2, np.inf)
    hi = np.full(2, -np.inf)
    for ci, case in enumerate(cases):
        lo = np.minimum(lo, case.points.min(axis=0))
        hi = np.maximum(hi, case.points.max(axis=0))
        tree = KdTree2(case.points)
        q = np.arange(case.n_points)
        if len(q) > max_points:
            q = np.sort(np.random.default_rng([seed, ci]).choice(q, max_points, replace=False))
        for i in q:
            _, d2 = tree.query_knn(case.points[i], 2)
            if len(d2) > 1:
                spacings.append(np.sqrt(d2[1]))
    sp = np.array(spacings)
    sp = sp[sp > 0]
    s = float(np.median(sp)) if len(sp) else 1.0
    L = float(np.hypot(*(hi - lo)))
    return SineBasisConfig(n_basis=n_basis, s=s, L=max(L, s))


# -- assembly -------------------------------------------------------------------


@dataclass
class FeatureContext:
    """Per-case precomputations shared by node and edge features."""

    case: MeshCase
    sine: SineBasisConfig
    tables: HarmonicTables
    trail: np.ndarray
    rotation: Optional[np.ndarray]

    @classmethod
    def build(cls, case: MeshCase, sine: SineBasisConfig, tables: Optional[HarmonicTables] = None) -> "FeatureContext":
        case = recentre(case)
        tables = tables or HarmonicTables(sine.n_basis)
        if tables.n_basis != sine.n_basis:
            raise ValueError("sine and harmonic bases must share n_basis")
        v = case.inlet_velocity
        rot = geom.canonical_rotation(v) if np.hypot(v[0], v[1]) > 0 else None
        return cls(case, sine, tables, geom.trailing_edge(case), rot)

    def _rotation(self) -> np.ndarray:
        if self.rotation is None:
            raise ValueError("cannot canonicalize null velocity")
        return self.rotation


def _norm(p: np.ndarray) -> np.ndarray:
    return np.hypot(p[:, 0], p[:, 1])


def node_features(ctx: FeatureContext, variant: FeatureVariant, idx=None) -> np.ndarray:
    """Node feature rows for points ``idx`` (all points when None; an int gives one vector)."""
    single = np.ndim(idx) == 0 and idx is not None
    case = ctx.case
    sel = np.arange(case.n_points) if idx is None else np.atleast_1d(np.asarray(idx, dtype=np.int64))
    x = case.points[sel]
    n = case.normals[sel]
    d = case.wall_distance[sel]
    v = np.broadcast_to(case.inlet_velocity, x.shape)
    xt = x - ctx.trail
    xn, xtn = _norm(x), _norm(xt)
    cfg, tab = ctx.sine, ctx.tables

    blocks = {}
    names = NODE_BLOCKS[variant]
    blocks["base"] = np.column_stack([x, n, v, d, xn])
    if "trail" in names:
        blocks["trail"] = np.column_stack([xt, xtn])
    if "ang" in names:
        blocks["ang"] = np.concatenate([geom.four_axis_angles(x), geom.four_axis_angles(xt)], axis=1)
    if "sine" in names:
        blocks["sine"] = np.concatenate(
            [sine_embed_vec(x, cfg), sine_embed_vec(xt, cfg), sine_embed(d, cfg), sine_embed(xn, cfg), sine_embed(xtn, cfg)],
            axis=1,
        )
    if "sph" in names:
        blocks["sph"] = np.concatenate(
            [sph_embed_angles(geom.four_axis_angles(x), tab), sph_embed_angles(geom.four_axis_angles(xt), tab)], axis=1
        )
    if "canon" in names:
        R = ctx._rotation()
        rx, rxt, rn = geom.rotate(R, x), geom.rotate(R, xt), geom.rotate(R, n)
        blocks["canon"] = np.concatenate(
            [
                rx,
                rxt,
                sine_embed_vec(rx, cfg),
                sine_embed_vec(rxt, cfg),
                rn,
                sph_embed_angles(geom.four_axis_angles(rx), tab),
                sph_embed_angles(geom.four_axis_angles(rxt), tab),
            ],
            axis=1,
        )
    out = np.concatenate([blocks[b] for b in names], axis=1)
    return out[0] if single else out


def edge_features(ctx: FeatureContext, src, dst, variant: FeatureVariant) -> np.ndarray:
    """Features of edges ``src -> dst`` (point indices into the context's case)."""
    single = np.ndim(src) == 0
    pts = ctx.case.points
    src = np.atleast_1d(np.asarray(src, dtype=np.int64))
    dst = np.atleast_1d(np.asarray(dst, dtype=np.int64))
    out = edge_features_from_displacement(ctx, pts[src] - pts[dst], variant)
    return out[0] if single else out


def edge_features_from_displacement(ctx: FeatureContext, disp: np.ndarray, variant: FeatureVariant) -> np.ndarray:
    cfg, tab = ctx.sine, ctx.tables
    dist = _norm(disp)
    names = EDGE_BLOCKS[variant]
    blocks = {"base": np.column_stack([disp, dist])}
    if "ang" in names:
        blocks["ang"] = geom.four_axis_angles(disp)
    if "sine" in names:
        blocks["sine"] = np.concatenate([sine_embed(dist, cfg), sine_embed_vec(disp, cfg)], axis=1)
    if "sph" in names:
        blocks["sph"] = sph_embed_angles(geom.four_axis_angles(disp), tab)
    if "canon" in names:
        rd = geom.rotate(ctx._rotation(), disp)
        blocks["canon"] = np.concatenate(
            [rd, sine_embed_vec(rd, cfg), sph_embed_angles(geom.four_axis_angles(rd), tab)], axis=1
        )
    return np.concatenate([blocks[b] for b in names], axis=1)


# -- targets ----------------------------------------------------------------------


def log_pressure(p):
    """Sign-preserving log transform sign(p) * log(|p| + 1)."""
    p = np.asarray(p, dtype=np.float64)
    return np.sign(p) * np.log1p(np.abs(p))


def inv_log_pressure(q):
    q = np.asarray(q, dtype=np.float64)
    return np.sign(q) * np.expm1(np.abs(q))


@dataclass(frozen=True)
class FieldNormalizer:
    """Standardizes one target field; pressure may go through the log transform first."""

    field: FieldId
    mean: float
    std: float
    log: bool = False

    def forward_transform(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return log_pressure(raw) if self.log else raw

    def normalize(self, raw):
        return (self.forward_transform(raw) - self.mean) / self.std

    def denormalize(self, z):
        t = np.asarray(z, dtype=np.float64) * self.std + self.mean
        return inv_log_pressure(t) if self.log else t

    def to_dict(self) -> dict:
        return {"field": self.field.value, "mean": self.mean, "std": self.std, "log": self.log}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldNormalizer":
        return cls(FieldId.parse(d["field"]), float(d["mean"]), float(d["std"]), bool(d["log"]))


def fit_normalizer(values, fid: FieldId, log_flag: bool = False) -> FieldNormalizer:
    """Population mean/std of the (optionally log-transformed) training values."""
    if log_flag and fid is not FieldId.Pressure:
        raise ValueError("log transform applies to pressure only")
    vals = np.concatenate([np.ravel(v) for v in values]) if isinstance(values, (list, tuple)) else np.ravel(values)
    t = log_pressure(vals) if log_flag else np.asarray(vals, dtype=np.float64)
    mean = float(np.mean(t))
    std = float(np.std(t))
    if not np.isfinite(std) or std == 0.0:
        raise ValueError("zero variance")
    return FieldNormalizer(fid, mean, std, log_flag)

