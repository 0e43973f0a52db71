"""Sinusoidal coordinate embeddings and m=0 harmonic angle embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SineBasisConfig:
    n_basis: int = 8
    s: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if self.n_basis < 1 or self.s <= 0 or self.L <= 0:
            raise ValueError(f"invalid sine basis config {self}")

    @property
    def d(self) -> float:
        return 4.0 * self.L / (self.s * math.pi)

    @property
    def frequencies(self) -> np.ndarray:
        i = np.arange(self.n_basis)
        return 1.0 / (self.s * self.d ** (i / self.n_basis))


def sine_embed(x, cfg: SineBasisConfig) -> np.ndarray:
    """[sin_0, cos_0, sin_1, cos_1, ...] for a scalar or an array of scalars."""
    x = np.asarray(x, dtype=np.float64)
    # i=0 uses x/s exactly (d**0 == 1)
    arg = (x / cfg.s)[..., None] / cfg.d ** (np.arange(cfg.n_basis) / cfg.n_basis)
    out = np.empty(x.shape + (2 * cfg.n_basis,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def sine_embed_vec(pts, cfg: SineBasisConfig) -> np.ndarray:
    """Per-component embedding of 2-vectors, x-half then y-half."""
    pts = np.asarray(pts, dtype=np.float64)
    return np.concatenate([sine_embed(pts[..., 0], cfg), sine_embed(pts[..., 1], cfg)], axis=-1)


def legendre_coefficients(n: int) -> list[np.ndarray]:
    """Monomial coefficients of P_0..P_n (index k holds the u**k coefficient)."""
    coeffs = [np.array([1.0]), np.array([0.0, 1.0])]
    for ell in range(1, n):
        nxt = np.zeros(ell + 2)
        nxt[1:] += (2 * ell + 1) * coeffs[ell]
        nxt[: ell] -= ell * coeffs[ell - 1]
        coeffs.append(nxt / (ell + 1))
    return coeffs[: n + 1]


def legendre(u, n: int) -> np.ndarray:
    """P_0(u)..P_n(u) stacked on the last axis, by the three-term recurrence."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty(u.shape + (n + 1,))
    out[..., 0] = 1.0
    if n >= 1:
        out[..., 1] = u
    for ell in range(1, n):
        out[..., ell + 1] = ((2 * ell + 1) * u * out[..., ell] - ell * out[..., ell - 1]) / (ell + 1)
    return out


@dataclass(frozen=True)
class HarmonicTables:
    """Normalization constants for orders 1..n_basis, plus the monomial table.

    ``factorial_norm`` switches to the literal sqrt((2l+1)!/4pi) scaling.
    """

    n_basis: int = 8
    factorial_norm: bool = False
    norms: np.ndarray = field(init=False, repr=False)
    coefficients: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_basis < 1:
            raise ValueError("n_basis must be >= 1")
        ells = range(1, self.n_basis + 1)
        if self.factorial_norm:
            norms = [math.sqrt(math.factorial(2 * l + 1) / (4 * math.pi)) for l in ells]
        else:
            norms = [math.sqrt((2 * l + 1) / (4 * math.pi)) for l in ells]
        object.__setattr__(self, "norms", np.array(norms))
        object.__setattr__(self, "coefficients", legendre_coefficients(self.n_basis))

    def poly_eval(self, ell: int, u) -> np.ndarray:
        """P_ell(u) from the stored monomial coefficients (cross-check only)."""
        return np.polynomial.polynomial.polyval(u, self.coefficients[ell])


def sph_embed(theta, tables: HarmonicTables) -> np.ndarray:
    """[Y_1, Yodd_1, ..., Y_n, Yodd_n] of an angle (or array of angles)."""
    theta = np.asarray(theta, dtype=np.float64)
    n = tables.n_basis
    even = legendre(np.cos(theta), n)[..., 1:] * tables.norms
    odd = legendre(np.sin(theta), n)[..., 1:] * tables.norms
    out = np.empty(theta.shape + (2 * n,))
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def sph_embed_angles(angles, tables: HarmonicTables) -> np.ndarray:
    """Embed each of the trailing-axis angles and concatenate (4 angles -> 8n)."""
    angles = np.asarray(angles, dtype=np.float64)
    emb = sph_embed(angles, tables)
    return emb.reshape(angles.shape[:-1] + (-1,))
