"""One pass/fail test per acceptance criterion, with the pinned tolerances and time budgets."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from geompnn import autodiff as ad
from geompnn.basis import HarmonicTables, SineBasisConfig, sine_embed, sph_embed
from geompnn.checkpoint import FieldModel
from geompnn.cli import main
from geompnn.evaluate import compare_variants, predict_case
from geompnn.features import (
    FeatureContext,
    FeatureVariant,
    edge_features,
    edge_width,
    fit_normalizer,
    fit_sine_config,
    inv_log_pressure,
    log_pressure,
    node_features,
    node_width,
)
from geompnn.geom import canonical_rotation
from geompnn.gradcheck import run_gradchecks
from geompnn.graph import KdTree2, brute_knn, brute_radius
from geompnn.mesh import FieldId, load_manifest, recentre
from geompnn.net import ModelConfig, init_params
from geompnn.train import TrainConfig, train_field

from conftest import tiny_case

V = FeatureVariant


class Clock:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.budget, f"took {self.elapsed:.1f} s, budget {self.budget} s"


def test_01_dimension_ledger():
    with Clock(1.0):
        node = {V.Base: 8, V.Trail: 11, V.Polar: 19, V.Sine: 131, V.SpH: 251, V.Inlet: 449}
        edge = {V.Base: 3, V.Trail: 3, V.Polar: 7, V.Sine: 55, V.SpH: 115, V.Inlet: 213}
        ctx = FeatureContext.build(tiny_case(), SineBasisConfig(8, 0.1, 3.0))
        for v in V:
            assert node_width(v) == node[v]
            assert edge_width(v) == edge[v]
            assert node_features(ctx, v).shape == (8, node[v])
            assert edge_features(ctx, [4, 5], [0, 1], v).shape == (2, edge[v])


def test_02_canonicalization():
    with Clock(1.0):
        rng = np.random.default_rng(0)
        vs = rng.normal(size=(1000, 2)) * rng.uniform(1e-3, 1e3, size=(1000, 1))
        for v in vs:
            R = canonical_rotation(v)
            np.testing.assert_allclose(R @ v, [np.hypot(*v), 0.0], rtol=0, atol=1e-12 * max(1.0, np.hypot(*v)))
            np.testing.assert_allclose(R.T @ R, np.eye(2), rtol=0, atol=1e-12)


def test_03_log_pressure_round_trip():
    with Clock(1.0):
        p = np.random.default_rng(1).uniform(-1e6, 1e6, 100_000)
        err = np.abs(inv_log_pressure(log_pressure(p)) - p) / np.maximum(1.0, np.abs(p))
        assert err.max() < 1e-9


def test_04_graph_oracles():
    with Clock(10.0):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pts = rng.uniform(size=(1000, 2))
            tree = KdTree2(pts)
            for q in pts[rng.choice(1000, 50, replace=False)]:
                np.testing.assert_array_equal(tree.query_radius(q, 0.05), brute_radius(pts, q, 0.05))
                np.testing.assert_array_equal(tree.query_knn(q, 8)[0], brute_knn(pts, q, 8))


def test_05_resolution_invariance(corpus):
    with Clock(30.0):
        cases = load_manifest(corpus / "all.txt")
        assert min(c.n_points for c in cases) >= 8000
        sine = fit_sine_config([recentre(c) for c in cases], 8)
        cfg = ModelConfig(kind="surf2vol", node_dim=251, edge_dim=115, hidden=32, surf_layers=2, sv_layers=2)
        norm = fit_normalizer([c.field_values(FieldId.VelX) for c in cases], FieldId.VelX)
        model = FieldModel(FieldId.VelX, V.SpH, cfg, init_params(cfg, 0), norm, sine)
        n_sub = cases[0].n_points // 4
        for i, case in enumerate(cases[:2]):
            cp = predict_case(model, case, n_sub, (0, i), timing=False)
            np.testing.assert_allclose(cp.pred_sub, cp.pred_full[cp.keep], rtol=0, atol=1e-12)
        report = compare_variants([model], cases, n_sub=n_sub, seed=0, timing=False)
        assert abs(report.rows[0].reldiff) < 0.05


def test_06_gradient_checks():
    with Clock(60.0):
        results = run_gradchecks(0)
        names = {r.name for r in results}
        assert {f"prim:{n}" for n in ad.PRIMITIVES} <= names
        assert "model:surf2vol" in names
        bad = [r.line() for r in results if not r.rel_error <= 1e-5]
        assert not bad


def test_07_basis_correctness():
    with Clock(5.0):
        cfg = SineBasisConfig(8, 0.01, 2.0)
        np.testing.assert_array_equal(sine_embed(0.0, cfg), np.tile([0.0, 1.0], 8))
        tab = HarmonicTables(8)
        u = np.linspace(-1, 1, 2001)
        for ell in range(1, 8):
            res = (ell + 1) * tab.poly_eval(ell + 1, u) - (2 * ell + 1) * u * tab.poly_eval(ell, u) + ell * tab.poly_eval(ell - 1, u)
            assert np.abs(res).max() < 1e-9
        th = np.linspace(-math.pi, math.pi, 1000)
        a, b = sph_embed(th, tab), sph_embed(-th, tab)
        np.testing.assert_allclose(a[:, 0::2], b[:, 0::2], rtol=0, atol=1e-12)
        for ell in range(1, 9, 2):
            col = 2 * (ell - 1) + 1
            np.testing.assert_allclose(a[:, col], -b[:, col], rtol=0, atol=1e-12)


@pytest.mark.slow
def test_08_training_convergence_probe(corpus):
    cases = load_manifest(corpus / "all.txt")
    assert len(cases) == 8 and min(c.n_points for c in cases) >= 8000
    cfg = TrainConfig(field=FieldId.VelX, variant=V.SpH, epochs=200, hidden=32, surf_layers=2, sv_layers=2, subsample_n=1000, seed=0)
    with Clock(900.0):
        res = train_field(cases, cfg)

        class Stop(Exception):
            pass

        seen = []

        def stop_after_three(epoch, mse, lr):
            seen.append((epoch, mse, lr))
            if epoch == 3:
                raise Stop

        with pytest.raises(Stop):
            train_field(cases, cfg, on_epoch=stop_after_three)
    assert seen == res.history[:3]
    assert res.history[-1][1] <= 0.2 * res.history[0][1]


def test_09_variance_reduction(corpus):
    with Clock(5.0):
        cases = load_manifest(corpus / "all.txt")
        checked = 0
        for c in cases:
            p = c.field_values(FieldId.Pressure)
            if np.abs(p).max() > math.e:
                checked += 1
                assert np.var(log_pressure(p)) < np.var(p)
        assert checked > 0
        p = np.concatenate([c.field_values(FieldId.Pressure) for c in cases])
        assert np.var(log_pressure(p)) < np.var(p)


def _pipeline(root):
    data, models, ev = root / "data", root / "models", root / "eval"
    assert main(["generate", "--out", str(data), "--seed", "5", "--count", "4", "--n-volume", "2000", "--n-surface", "128"]) == 0
    train = ["train", "--manifest", str(data / "train.txt"), "--out", str(models), "--field", "ux", "--epochs", "5"]
    assert main(train + ["--hidden", "32", "--surf-layers", "2", "--sv-layers", "2", "--seed", "5"]) == 0
    ckpt = str(models / "model_ux_sph.npz")
    assert main(["eval", "--manifest", str(data / "test.txt"), "--checkpoints", ckpt, "--out", str(ev), "--subsample-n", "500", "--no-timing"]) == 0
    return (models / "history_ux_sph.txt").read_bytes(), (ev / "report.txt").read_bytes(), (models / "model_ux_sph.npz").read_bytes()


def test_10_pipeline_determinism(tmp_path):
    with Clock(300.0):
        a = _pipeline(tmp_path / "a")
        b = _pipeline(tmp_path / "b")
    assert a[0] == b[0] and len(a[0].splitlines()) == 5
    assert a[1] == b[1]
    assert a[2] == b[2]
