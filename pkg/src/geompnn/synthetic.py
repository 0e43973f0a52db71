"""Synthetic cases: potential flow past a Joukowski airfoil.

The airfoil is the image of the circle through zeta=1 centred at
``mu = -thickness + i*camber`` under z = zeta + 1/zeta. Circulation is set by
the Kutta condition at the cusp. Coordinates are scaled to unit chord with
the leading edge at the origin; velocities are unchanged by that scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import geom
from .mesh import MeshCase

WAKE_WIDTH = 0.1
NEAR_FIELD_CHORDS = 5.0
FAR_FIELD_CHORDS = 50.0
FAR_FIELD_FRACTION = 0.1
MIN_SURFACE_POINTS = 32


class DegenerateShapeError(ValueError):
    pass


@dataclass(frozen=True)
class JoukowskiParams:
    thickness: float = 0.1
    camber: float = 0.0

    @property
    def mu(self) -> complex:
        return complex(-self.thickness, self.camber)

    @property
    def radius(self) -> float:
        return abs(1.0 - self.mu)


def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def polygon_self_intersects(poly: np.ndarray) -> bool:
    """True if any two non-adjacent edges of the closed polygon properly cross."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    n = len(poly)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    return bool(np.any(_segments_cross(a[i], b[i], a[j], b[j])))


class JoukowskiFlow:
    """Analytic potential flow; evaluation works in unit-chord, leading-edge-origin coordinates."""

    def __init__(self, params: JoukowskiParams, v_inf, n_surface: int = 256):
        if params.thickness <= 0:
            raise DegenerateShapeError("thickness must be positive (circle must enclose zeta=-1)")
        if n_surface < MIN_SURFACE_POINTS:
            raise ValueError(f"n_surface must be >= {MIN_SURFACE_POINTS}")
        self.params = params
        self.mu = params.mu
        self.R = params.radius
        v = np.asarray(v_inf, dtype=np.float64)
        self.v_inf = v
        self.U = float(np.hypot(v[0], v[1]))
        if self.U == 0.0:
            raise ValueError("inlet velocity must be nonzero")
        self.alpha = float(np.arctan2(v[1], v[0]))
        one_mu = 1.0 - self.mu
        bracket = np.exp(-1j * self.alpha) - self.R**2 * np.exp(1j * self.alpha) / one_mu**2
        self.gamma = float(np.real(2j * np.pi * self.U * one_mu * bracket))

        phi0 = np.angle(one_mu)
        phi = phi0 + 2.0 * np.pi * np.arange(n_surface) / n_surface
        zeta = self.mu + self.R * np.exp(1j * phi)
        zeta[0] = 1.0
        z = zeta + 1.0 / zeta
        lead = int(np.argmin(z.real))
        self.z_lead = z[lead]
        self.chord = float(z[0].real - self.z_lead.real)
        self.surface = self._to_phys(z)
        if polygon_self_intersects(self.surface):
            raise DegenerateShapeError("airfoil contour self-intersects")

    # -- coordinate maps
    def _to_phys(self, z: np.ndarray) -> np.ndarray:
        w = (z - self.z_lead) / self.chord
        return np.column_stack([w.real, w.imag])

    def _to_z(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts[..., 0] + 1j * pts[..., 1]) * self.chord + self.z_lead

    def _zeta(self, z: np.ndarray) -> np.ndarray:
        root = np.sqrt(z * z - 4.0 + 0j)
        a = 0.5 * (z + root)
        b = 0.5 * (z - root)
        return np.where(np.abs(a - self.mu) >= np.abs(b - self.mu), a, b)

    def zeta_to_phys(self, zeta: np.ndarray) -> np.ndarray:
        return self._to_phys(zeta + 1.0 / zeta)

    def _velocity_zeta(self, zeta: np.ndarray) -> np.ndarray:
        U, a, R, mu, G = self.U, self.alpha, self.R, self.mu, self.gamma
        s = zeta - mu
        dW = U * (np.exp(-1j * a) - R**2 * np.exp(1j * a) / s**2) + 1j * G / (2 * np.pi * s)
        dz = 1.0 - 1.0 / zeta**2
        # at the cusp dz -> 0: use the ratio of second derivatives
        d2W = U * 2 * R**2 * np.exp(1j * a) / s**3 - 1j * G / (2 * np.pi * s**2)
        d2z = 2.0 / zeta**3
        near = np.abs(dz) < 1e-7
        safe_dz = np.where(near, 1.0, dz)
        conj_u = np.where(near, d2W / d2z, dW / safe_dz)
        return np.column_stack([conj_u.real, -conj_u.imag])

    def velocity(self, pts) -> np.ndarray:
        return self._velocity_zeta(self._zeta(self._to_z(np.atleast_2d(pts))))

    def pressure_from_velocity(self, vel: np.ndarray) -> np.ndarray:
        """Gauge pressure from Bernoulli with unit density."""
        return 0.5 * (self.U**2 - (vel[:, 0] ** 2 + vel[:, 1] ** 2))

    def pressure(self, pts) -> np.ndarray:
        return self.pressure_from_velocity(self.velocity(pts))

    def turbulent_viscosity(self, pts) -> np.ndarray:
        """Wake-shaped proxy aligned with the inlet direction."""
        rc = geom.rotate(geom.canonical_rotation(self.v_inf), np.atleast_2d(pts))
        xc, yc = rc[:, 0], rc[:, 1]
        xp = np.maximum(0.0, xc)
        return np.exp(-((yc / WAKE_WIDTH) ** 2)) * xp / (1.0 + xp)


def surface_normals(contour: np.ndarray) -> np.ndarray:
    """Outward unit normals of a counter-clockwise closed contour (central differences)."""
    t = np.roll(contour, -1, axis=0) - np.roll(contour, 1, axis=0)
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return n / np.hypot(n[:, 0], n[:, 1])[:, None]


def generate_synthetic(
    params: JoukowskiParams,
    v_inf,
    n_volume: int,
    n_surface: int = 256,
    seed: int = 0,
    case_id: str = "synthetic",
) -> MeshCase:
    """Build a MeshCase with analytic targets around a Joukowski airfoil.

    Points are the ``n_surface`` contour samples followed by ``n_volume``
    off-surface points drawn from a scrambled Halton sequence in the circle
    plane: 90% in a boundary-refined band out to 5 chords, the rest out to 50.
    """
    flow = JoukowskiFlow(params, v_inf, n_surface)
    R, c_z = flow.R, flow.chord
    n_far = int(round(FAR_FIELD_FRACTION * n_volume))
    n_near = n_volume - n_far

    sampler = qmc.Halton(d=2, scramble=True, seed=np.random.default_rng(seed))
    u = sampler.random(n_volume)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    gap0 = 2e-3 * c_z
    near_max = NEAR_FIELD_CHORDS * c_z
    far_max = FAR_FIELD_CHORDS * c_z
    gap = np.empty(n_volume)
    gap[:n_near] = gap0 * (near_max / gap0) ** u[:n_near, 0]
    gap[n_near:] = near_max * (far_max / near_max) ** u[n_near:, 0]
    ang = 2.0 * np.pi * u[:, 1]
    zeta_v = flow.mu + (R + gap) * np.exp(1j * ang)
    vol = flow.zeta_to_phys(zeta_v)

    surf = flow.surface
    normals_s = surface_normals(surf)
    pts = np.vstack([surf, vol])
    n_total = len(pts)

    normals = np.zeros((n_total, 2))
    normals[:n_surface] = normals_s
    wall = np.zeros(n_total)
    wall[n_surface:] = geom.wall_distance_polyline(vol, surf, closed=True)

    vel = np.empty((n_total, 2))
    phi0 = np.angle(1.0 - flow.mu)
    zeta_s = flow.mu + R * np.exp(1j * (phi0 + 2.0 * np.pi * np.arange(n_surface) / n_surface))
    zeta_s[0] = 1.0
    vel[:n_surface] = flow._velocity_zeta(zeta_s)
    vel[n_surface:] = flow._velocity_zeta(zeta_v)
    p = flow.pressure_from_velocity(vel)
    nut = flow.turbulent_viscosity(pts)
    targets = np.column_stack([vel, p, nut])

    case = MeshCase(
        points=pts,
        surface_idx=np.arange(n_surface),
        normals=normals,
        inlet_velocity=np.asarray(v_inf, dtype=np.float64),
        wall_distance=wall,
        targets=targets,
        case_id=case_id,
    )
    return case.validate()
