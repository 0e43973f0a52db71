"""Simulation-case data model, case-file I/O, re-centering and subsampling."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

NORMAL_TOL = 1e-9
WALL_TOL = 1e-9


class FieldId(enum.Enum):
    VelX = "ux"
    VelY = "uy"
    Pressure = "p"
    TurbVisc = "nut"

    @property
    def column(self) -> int:
        return list(FieldId).index(self)

    @classmethod
    def parse(cls, name: str) -> "FieldId":
        for f in cls:
            if name.lower() in (f.value, f.name.lower()):
                return f
        raise ValueError(f"unknown field {name!r}")


class CaseFormatError(ValueError):
    """Malformed case file or a case violating the MeshCase invariants."""


@dataclass(frozen=True, eq=False)
class MeshCase:
    """One simulation instance.

    ``points`` is the full volume mesh, ``surface_idx`` selects the airfoil
    surface. ``targets`` columns are ordered as :class:`FieldId`.
    """

    points: np.ndarray
    surface_idx: np.ndarray
    normals: np.ndarray
    inlet_velocity: np.ndarray
    wall_distance: np.ndarray
    targets: Optional[np.ndarray] = None
    case_id: str = "case"
    _surface_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        sidx = np.asarray(self.surface_idx, dtype=np.int64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "surface_idx", sidx)
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64))
        object.__setattr__(self, "inlet_velocity", np.asarray(self.inlet_velocity, dtype=np.float64))
        object.__setattr__(self, "wall_distance", np.asarray(self.wall_distance, dtype=np.float64))
        if self.targets is not None:
            object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.float64))
        mask = np.zeros(len(pts), dtype=bool)
        mask[sidx[(sidx >= 0) & (sidx < len(pts))]] = True
        object.__setattr__(self, "_surface_mask", mask)
        for arr in (self.points, self.normals, self.inlet_velocity, self.wall_distance, self.targets):
            if arr is not None:
                arr.setflags(write=False)
        sidx.setflags(write=False)
        mask.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def surface_mask(self) -> np.ndarray:
        return self._surface_mask

    @property
    def surface_points(self) -> np.ndarray:
        return self.points[self.surface_idx]

    def validate(self) -> "MeshCase":
        """Raise :class:`CaseFormatError` if any invariant is violated."""
        n = self.n_points
        if self.points.shape != (n, 2) or not np.all(np.isfinite(self.points)):
            raise CaseFormatError("points must be a finite (n, 2) array")
        if len(self.surface_idx) == 0:
            raise CaseFormatError("surface_idx is empty")
        if np.any(self.surface_idx < 0) or np.any(self.surface_idx >= n):
            raise CaseFormatError("surface index out of range")
        if len(np.unique(self.surface_idx)) != len(self.surface_idx):
            raise CaseFormatError("surface indices are not unique")
        if self.normals.shape != (n, 2) or self.wall_distance.shape != (n,):
            raise CaseFormatError("normals / wall_distance have the wrong shape")
        if self.inlet_velocity.shape != (2,) or not np.all(np.isfinite(self.inlet_velocity)):
            raise CaseFormatError("inlet velocity must be a finite 2-vector")
        norms = np.hypot(self.normals[:, 0], self.normals[:, 1])
        bad = np.flatnonzero(self.surface_mask & (np.abs(norms - 1.0) > NORMAL_TOL))
        if len(bad):
            raise CaseFormatError(f"point {bad[0]}: normal not unit length")
        bad = np.flatnonzero(~self.surface_mask & np.any(self.normals != 0.0, axis=1))
        if len(bad):
            raise CaseFormatError(f"point {bad[0]}: off-surface normal must be zero")
        if np.any(~np.isfinite(self.wall_distance)) or np.any(self.wall_distance < 0):
            raise CaseFormatError("wall distance must be finite and nonnegative")
        bad = np.flatnonzero(self.surface_mask & (np.abs(self.wall_distance) > WALL_TOL))
        if len(bad):
            raise CaseFormatError(f"point {bad[0]}: surface wall distance not zero")
        if self.targets is not None and self.targets.shape != (n, 4):
            raise CaseFormatError("targets must be an (n, 4) array")
        return self

    def field_values(self, fid: FieldId) -> np.ndarray:
        if self.targets is None:
            raise ValueError(f"case {self.case_id} has no targets")
        return self.targets[:, fid.column]

    def replace(self, **changes) -> "MeshCase":
        kw = dict(
            points=self.points,
            surface_idx=self.surface_idx,
            normals=self.normals,
            inlet_velocity=self.inlet_velocity,
            wall_distance=self.wall_distance,
            targets=self.targets,
            case_id=self.case_id,
        )
        kw.update(changes)
        return MeshCase(**kw)


def leading_edge_index(case: MeshCase) -> int:
    """Index (into ``case.points``) of the leftmost surface point; lowest index wins ties."""
    sidx = case.surface_idx
    xs = case.points[sidx, 0]
    cands = sidx[xs == xs.min()]
    return int(cands.min())


def recentre(case: MeshCase) -> MeshCase:
    """Translate the case so the leading edge sits exactly at the origin."""
    lead = case.points[leading_edge_index(case)].copy()
    if lead[0] == 0.0 and lead[1] == 0.0:
        return case
    return case.replace(points=case.points - lead)


def subsample(case: MeshCase, n: int, seed, rng: Optional[np.random.Generator] = None):
    """Random subset of ``n`` off-surface points plus every surface point.

    Returns ``(sub_case, index_map)`` where ``index_map[j]`` is the original
    index of point ``j`` in ``sub_case``. The map is sorted ascending, so the
    relative order of retained points is preserved.
    """
    if n < 1:
        raise ValueError("subsample size must be >= 1")
    volume = np.flatnonzero(~case.surface_mask)
    if n >= len(volume):
        return case, np.arange(case.n_points)
    if rng is None:
        rng = np.random.default_rng(seed)
    picked = rng.choice(volume, size=n, replace=False)
    keep = np.sort(np.concatenate([case.surface_idx, picked]))
    return take(case, keep), keep


def take(case: MeshCase, keep: np.ndarray) -> MeshCase:
    """Restrict a case to ``keep`` (sorted original indices, surface included)."""
    remap = np.full(case.n_points, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new_surf = remap[case.surface_idx]
    if np.any(new_surf < 0):
        raise ValueError("restriction must retain every surface point")
    return case.replace(
        points=case.points[keep],
        surface_idx=new_surf,
        normals=case.normals[keep],
        wall_distance=case.wall_distance[keep],
        targets=None if case.targets is None else case.targets[keep],
    )


# -- case files ---------------------------------------------------------------

_BASE_COLS = 6
_FULL_COLS = 10


def _fmt(v: float) -> str:
    return repr(float(v))


def save_case(case: MeshCase, path) -> None:
    path = Path(path)
    lines = [f"# case_id={case.case_id}", f"# vinf={_fmt(case.inlet_velocity[0])} {_fmt(case.inlet_velocity[1])}"]
    mask = case.surface_mask
    for i in range(case.n_points):
        cols = [
            _fmt(case.points[i, 0]),
            _fmt(case.points[i, 1]),
            _fmt(case.normals[i, 0]),
            _fmt(case.normals[i, 1]),
            "1" if mask[i] else "0",
            _fmt(case.wall_distance[i]),
        ]
        if case.targets is not None:
            cols.extend(_fmt(v) for v in case.targets[i])
        lines.append(" ".join(cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_case(path) -> MeshCase:
    """Parse a columnar case file; raises :class:`CaseFormatError` with row numbers."""
    path = Path(path)
    case_id = path.stem
    vinf = None
    rows = []
    ncols = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, _, value = body.partition("=")
            key = key.strip()
            if key == "case_id":
                case_id = value.strip()
            elif key == "vinf":
                parts = value.split()
                if len(parts) != 2:
                    raise CaseFormatError(f"line {lineno}: vinf needs two values")
                try:
                    vinf = [float(p) for p in parts]
                except ValueError:
                    raise CaseFormatError(f"line {lineno}: malformed vinf") from None
            continue
        parts = line.split()
        if len(parts) not in (_BASE_COLS, _FULL_COLS):
            raise CaseFormatError(f"line {lineno}: expected {_BASE_COLS} or {_FULL_COLS} columns, got {len(parts)}")
        if ncols is None:
            ncols = len(parts)
        elif len(parts) != ncols:
            raise CaseFormatError(f"line {lineno}: column count {len(parts)} differs from {ncols}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise CaseFormatError(f"line {lineno}: malformed number") from None
        if parts[4] not in ("0", "1"):
            raise CaseFormatError(f"line {lineno}: is_surf must be 0 or 1")
        if not all(np.isfinite(vals)):
            raise CaseFormatError(f"line {lineno}: non-finite value")
        if parts[4] == "1":
            norm = np.hypot(vals[2], vals[3])
            if abs(norm - 1.0) > NORMAL_TOL:
                raise CaseFormatError(f"line {lineno}: normal not unit length")
        rows.append((lineno, vals))
    if vinf is None:
        raise CaseFormatError("missing '# vinf=' header")
    if not rows:
        raise CaseFormatError("no point rows")
    data = np.array([r[1] for r in rows], dtype=np.float64)
    surf = np.flatnonzero(data[:, 4] == 1.0)
    case = MeshCase(
        points=data[:, 0:2],
        surface_idx=surf,
        normals=data[:, 2:4],
        inlet_velocity=np.array(vinf),
        wall_distance=data[:, 5],
        targets=data[:, 6:10] if ncols == _FULL_COLS else None,
        case_id=case_id,
    )
    try:
        case.validate()
    except CaseFormatError as exc:
        # map point index back to file line for the message
        msg = str(exc)
        if msg.startswith("point "):
            idx = int(msg.split(":")[0].split()[1])
            msg = f"line {rows[idx][0]}:{msg.split(':', 1)[1]}"
        raise CaseFormatError(msg) from None
    return case


def read_manifest(path) -> list[Path]:
    path = Path(path)
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            out.append(p if p.is_absolute() else path.parent / p)
    if not out:
        raise CaseFormatError(f"manifest {path} is empty")
    return out


def write_manifest(path, case_paths) -> None:
    Path(path).write_text("".join(f"{p}\n" for p in case_paths), encoding="utf-8")


def load_manifest(path) -> list[MeshCase]:
    return [load_case(p) for p in read_manifest(path)]
