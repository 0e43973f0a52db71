from __future__ import annotations

import numpy as np
import pytest

from geompnn.basis import HarmonicTables
from geompnn.features import fit_sine_config
from geompnn.mesh import MeshCase, recentre
from geompnn.synthetic import JoukowskiParams, generate_synthetic


def make_case(n_volume=600, n_surface=64, thickness=0.1, camber=0.03, speed=30.0, aoa_deg=4.0, seed=0, case_id="t"):
    a = np.deg2rad(aoa_deg)
    return generate_synthetic(
        JoukowskiParams(thickness, camber),
        [speed * np.cos(a), speed * np.sin(a)],
        n_volume,
        n_surface,
        seed=seed,
        case_id=case_id,
    )


def tiny_case(targets=True) -> MeshCase:
    """Square 'airfoil' of four surface points plus a few volume points."""
    surf = np.array([[0.0, 0.0], [0.5, 0.1], [1.0, 0.0], [0.5, -0.1]])
    vol = np.array([[-0.5, 0.3], [0.4, 0.6], [1.5, -0.2], [2.0, 0.0]])
    pts = np.vstack([surf, vol])
    normals = np.zeros_like(pts)
    normals[:4] = [[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0]]
    wall = np.zeros(len(pts))
    wall[4:] = [0.5, 0.5, 0.5, 1.0]
    tg = np.arange(len(pts) * 4, dtype=float).reshape(-1, 4) if targets else None
    return MeshCase(pts, np.arange(4), normals, np.array([1.0, 0.0]), wall, tg, "tiny").validate()


@pytest.fixture(scope="session")
def small_case():
    return make_case()


@pytest.fixture(scope="session")
def small_cases():
    return [make_case(seed=i, thickness=0.08 + 0.02 * i, aoa_deg=-2.0 + 4 * i, case_id=f"c{i}") for i in range(3)]


@pytest.fixture(scope="session")
def sine_cfg(small_cases):
    return fit_sine_config([recentre(c) for c in small_cases], 8)


@pytest.fixture(scope="session")
def tables():
    return HarmonicTables(8)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The default eight-case synthetic corpus (8000 points per case) written by the CLI."""
    from geompnn.cli import main

    out = tmp_path_factory.mktemp("corpus")
    assert main(["generate", "--out", str(out), "--seed", "0"]) == 0
    return out
