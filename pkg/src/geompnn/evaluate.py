"""Metrics: normalized MSE, the resolution-shift ratio and per-variant reports.

Evaluation runs in two stages. :func:`predict_case` runs a model on the full
mesh and on a random volume subsample and returns a :class:`CasePredictions`
record; :func:`report_from_predictions` turns records into an
:class:`EvalReport`. Records can be saved and reloaded, so a report can be
regenerated without rerunning any model.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import FieldModel
from .features import FeatureVariant, FieldNormalizer
from .mesh import FieldId, MeshCase, recentre
from .net import predict

RAW_PRESSURE = "p_raw"
_FIELD_ORDER = [f.value for f in FieldId] + [RAW_PRESSURE]
_VARIANT_ORDER = [v.value for v in FeatureVariant]


def mse(predictions, targets, normalizer: Optional[FieldNormalizer] = None) -> float:
    """Mean squared difference; both arguments are normalized first when a normalizer is given."""
    a = np.asarray(predictions, dtype=np.float64).ravel()
    b = np.asarray(targets, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} predictions vs {b.size} targets")
    if a.size == 0:
        raise ValueError("empty input")
    if normalizer is not None:
        a, b = normalizer.normalize(a), normalizer.normalize(b)
    d = a - b
    return float(np.mean(d * d))


def relative_difference(eps_full: float, eps_sub: float) -> float:
    """(eps_full - eps_sub) / eps_sub; NaN when eps_sub is zero (undefined)."""
    if eps_sub == 0.0:
        return math.nan
    return (eps_full - eps_sub) / eps_sub


@dataclass
class CasePredictions:
    """Normalized predictions and targets of one model on one case."""

    case_id: str
    variant: str
    field: str
    normalizer: FieldNormalizer
    targets: np.ndarray  # normalized, full mesh
    pred_full: np.ndarray  # normalized, full mesh
    keep: np.ndarray  # model input points of the subsampled run (picked + surface)
    pred_sub: np.ndarray  # normalized, model run on ``keep`` only
    picked: np.ndarray  # uniform sample of mesh points averaged into eps_sub
    time_ms: float = 0.0
    graph_ms: float = 0.0


def eval_sample(case: MeshCase, n_sub: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``(picked, keep)`` for one subsampled evaluation.

    ``picked`` is a uniform random subset of ``n_sub`` mesh points, surface
    points included with their natural share, so the subsample error is an
    unbiased estimate of the full-mesh error for a pointwise model. ``keep``
    adds the whole surface, which is never subsampled as a model input.
    """
    if n_sub < 1:
        raise ValueError("subsample size must be >= 1")
    n = case.n_points
    if n_sub >= n:
        picked = np.arange(n)
    else:
        picked = np.sort(np.random.default_rng(seed).choice(n, size=n_sub, replace=False))
    return picked, np.union1d(picked, case.surface_idx)


def predict_case(model: FieldModel, case: MeshCase, n_sub: int, seed, timing: bool = True) -> CasePredictions:
    """Run ``model`` on the full mesh and on a random subsample of ``n_sub`` volume points."""
    if case.targets is None:
        raise ValueError(f"case {case.case_id!r} has no targets")
    case = recentre(case)
    picked, keep = eval_sample(case, n_sub, seed)
    t0 = time.perf_counter()
    prepared = model.prepare(case)
    inp_full = prepared.inputs(None, graph_seed=model.graph_seed)
    inp_sub = prepared.inputs(keep, graph_seed=model.graph_seed)
    t1 = time.perf_counter()
    pred_full = predict(model.params, model.config, inp_full)
    pred_sub = predict(model.params, model.config, inp_sub)
    t2 = time.perf_counter()
    return CasePredictions(
        case_id=case.case_id,
        variant=model.variant.value,
        field=model.field.value,
        normalizer=model.normalizer,
        targets=model.normalizer.normalize(case.field_values(model.field)),
        pred_full=pred_full,
        keep=keep,
        pred_sub=pred_sub,
        picked=picked,
        time_ms=(t2 - t1) * 1e3 if timing else 0.0,
        graph_ms=(t1 - t0) * 1e3 if timing else 0.0,
    )


def resolution_shift(model: FieldModel, case: MeshCase, n_sub: int, seed) -> float:
    """(eps_full - eps_sub) / eps_sub for one case; exactly 0 when ``n_sub`` covers the mesh."""
    cp = predict_case(model, case, n_sub, seed, timing=False)
    r = _case_rows(cp)[0]
    return r.reldiff


@dataclass
class CaseResult:
    case_id: str
    variant: str
    field: str
    mse_full: float
    mse_sub: float
    reldiff: float
    time_ms: float
    graph_ms: float


@dataclass
class EvalRow:
    variant: str
    field: str
    mse_full: float
    mse_sub: float
    reldiff: float
    time_ms: float

    def line(self) -> str:
        return f"{self.variant} {self.field} {self.mse_full!r} {self.mse_sub!r} {self.reldiff!r} {self.time_ms!r}"


def _case_rows(cp: CasePredictions) -> list[CaseResult]:
    t_full, t_sub = cp.targets, cp.targets[cp.picked]
    p_sub = cp.pred_sub[np.searchsorted(cp.keep, cp.picked)]
    e_full = mse(cp.pred_full, t_full)
    e_sub = mse(p_sub, t_sub)
    rows = [CaseResult(cp.case_id, cp.variant, cp.field, e_full, e_sub, relative_difference(e_full, e_sub), cp.time_ms, cp.graph_ms)]
    if cp.field == FieldId.Pressure.value:
        den = cp.normalizer.denormalize
        r_full = mse(den(cp.pred_full), den(t_full))
        r_sub = mse(den(p_sub), den(t_sub))
        rows.append(CaseResult(cp.case_id, cp.variant, RAW_PRESSURE, r_full, r_sub, relative_difference(r_full, r_sub), cp.time_ms, cp.graph_ms))
    return rows


def _row_key(variant: str, field: str):
    return (_VARIANT_ORDER.index(variant), _FIELD_ORDER.index(field))


@dataclass
class EvalReport:
    """Aggregate rows (means over cases) plus the per-case results behind them."""

    rows: list
    cases: list

    def lines(self) -> list[str]:
        return [r.line() for r in self.rows]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ln in self.lines():
                fh.write(ln + "\n")

    @classmethod
    def parse(cls, text: str) -> "EvalReport":
        rows = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"line {n}: expected 6 columns, got {len(parts)}")
            v, f = parts[0], parts[1]
            if v not in _VARIANT_ORDER or f not in _FIELD_ORDER:
                raise ValueError(f"line {n}: unknown variant/field {v!r} {f!r}")
            rows.append(EvalRow(v, f, *(float(x) for x in parts[2:])))
        return cls(rows, [])

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def row(self, variant, field) -> EvalRow:
        v = variant.value if isinstance(variant, FeatureVariant) else str(variant)
        f = field.value if isinstance(field, FieldId) else str(field)
        for r in self.rows:
            if r.variant == v and r.field == f:
                return r
        raise KeyError((v, f))

    def table(self) -> str:
        head = f"{'variant':<8} {'field':<6} {'mse_full':>12} {'mse_sub':>12} {'reldiff':>10} {'time_ms':>10}"
        out = [head, "-" * len(head)]
        for r in self.rows:
            out.append(f"{r.variant:<8} {r.field:<6} {r.mse_full:>12.6g} {r.mse_sub:>12.6g} {r.reldiff:>10.4g} {r.time_ms:>10.2f}")
        return "\n".join(out)


def report_from_predictions(preds: Sequence[CasePredictions]) -> EvalReport:
    """Aggregate per-case metrics into rows sorted by variant, then field."""
    cases: list[CaseResult] = []
    for cp in preds:
        cases.extend(_case_rows(cp))
    groups: dict = {}
    for c in cases:
        groups.setdefault((c.variant, c.field), []).append(c)
    rows = []
    for key in sorted(groups, key=lambda k: _row_key(*k)):
        g = groups[key]
        e_full = float(np.mean([c.mse_full for c in g]))
        e_sub = float(np.mean([c.mse_sub for c in g]))
        rows.append(EvalRow(key[0], key[1], e_full, e_sub, relative_difference(e_full, e_sub), float(np.mean([c.time_ms for c in g]))))
    cases.sort(key=lambda c: (_row_key(c.variant, c.field), c.case_id))
    return EvalReport(rows, cases)


def check_compatible(models: Sequence[FieldModel]) -> None:
    """Reject duplicate (variant, field) pairs and same-field models with different normalizers."""
    seen = set()
    by_field: dict = {}
    for m in models:
        key = (m.variant, m.field)
        if key in seen:
            raise ValueError(f"two checkpoints for variant {m.variant.value} field {m.field.value}")
        seen.add(key)
        ref = by_field.setdefault((m.field, m.normalizer.log), m.normalizer)
        if ref != m.normalizer:
            raise ValueError(f"normalizer mismatch between checkpoints for field {m.field.value}")


def _predict_job(args):
    return predict_case(*args)


def collect_predictions(
    models: Sequence[FieldModel],
    cases: Sequence[MeshCase],
    n_sub: int,
    seed: int = 0,
    timing: bool = True,
    jobs: int = 1,
) -> list[CasePredictions]:
    """Predictions of every model on every case. Case ``i`` uses subsample seed ``(seed, i)``."""
    check_compatible(models)
    work = [(m, c, n_sub, (seed, i), timing) for m in models for i, c in enumerate(cases)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_predict_job, work))
    return [_predict_job(w) for w in work]


def compare_variants(
    models: Sequence[FieldModel],
    cases: Sequence[MeshCase],
    n_sub: int = 32000,
    seed: int = 0,
    timing: bool = True,
    jobs: int = 1,
) -> EvalReport:
    return report_from_predictions(collect_predictions(models, cases, n_sub, seed, timing, jobs))


# -- saved predictions ----------------------------------------------------------------------


def save_predictions(path, preds: Sequence[CasePredictions]) -> None:
    arrays = {}
    for i, cp in enumerate(preds):
        meta = {
            "case_id": cp.case_id,
            "variant": cp.variant,
            "field": cp.field,
            "normalizer": cp.normalizer.to_dict(),
            "time_ms": cp.time_ms,
            "graph_ms": cp.graph_ms,
        }
        arrays[f"{i}:meta"] = np.array(json.dumps(meta, sort_keys=True))
        arrays[f"{i}:targets"] = cp.targets
        arrays[f"{i}:pred_full"] = cp.pred_full
        arrays[f"{i}:keep"] = cp.keep
        arrays[f"{i}:pred_sub"] = cp.pred_sub
        arrays[f"{i}:picked"] = cp.picked
    with open(path, "wb") as fh:
        np.savez(fh, n=np.array(len(preds)), **arrays)


def load_predictions(path) -> list[CasePredictions]:
    out = []
    with np.load(path, allow_pickle=False) as z:
        for i in range(int(z["n"])):
            meta = json.loads(str(z[f"{i}:meta"]))
            out.append(
                CasePredictions(
                    case_id=meta["case_id"],
                    variant=meta["variant"],
                    field=meta["field"],
                    normalizer=FieldNormalizer.from_dict(meta["normalizer"]),
                    targets=z[f"{i}:targets"].copy(),
                    pred_full=z[f"{i}:pred_full"].copy(),
                    keep=z[f"{i}:keep"].copy(),
                    pred_sub=z[f"{i}:pred_sub"].copy(),
                    picked=z[f"{i}:picked"].copy(),
                    time_ms=float(meta["time_ms"]),
                    graph_ms=float(meta["graph_ms"]),
                )
            )
    return out
