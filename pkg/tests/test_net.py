from __future__ import annotations

import numpy as np
import pytest

from geompnn import autodiff as ad
from geompnn.checkpoint import CheckpointError, FieldModel, load_checkpoint, save_checkpoint
from geompnn.features import FeatureVariant, fit_normalizer
from geompnn.gradcheck import (
    check_function,
    check_model,
    primitive_cases,
    run_gradchecks,
    summary,
    toy_config,
    toy_model_inputs,
)
from geompnn.mesh import FieldId, recentre, subsample
from geompnn.net import (
    ModelConfig,
    baseline_gnn,
    baseline_mlp,
    forward,
    init_params,
    mlp_forward,
    n_parameters,
    param_shapes,
    predict,
    surf2vol_forward,
    surf2vol_plus_gnn,
    surface_encode,
    wrap,
)
from geompnn.pipeline import PreparedCase


def small_cfg(kind="surf2vol", **kw):
    base = dict(kind=kind, node_dim=251, edge_dim=115, hidden=8, mlp_depth=1, surf_layers=2, sv_layers=2, gnn_layers=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def prepared(small_case, sine_cfg, tables):
    return PreparedCase(small_case, FeatureVariant.SpH, small_cfg("surf2vol_gnn"), sine_cfg, tables)


class TestTape:
    def test_reused_tensor_accumulates(self):
        tape = ad.Tape()
        x = tape.watch(np.array([[2.0, -1.0]]))
        y = ad.tsum(ad.mul(x, x))
        tape.backward(y)
        np.testing.assert_array_equal(x.grad, [[4.0, -2.0]])

    def test_constants_get_no_grad(self):
        tape = ad.Tape()
        x = tape.watch(np.ones((2, 2)))
        c = ad.Tensor(np.full((2, 2), 3.0))
        tape.backward(ad.tsum(ad.mul(x, c)))
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, 3.0)

    def test_records_consumed(self):
        tape = ad.Tape()
        x = tape.watch(np.ones((1, 1)))
        y = ad.tsum(ad.gelu(x))
        assert len(tape) == 2
        tape.backward(y)
        assert len(tape) == 0

    def test_foreign_output(self):
        with pytest.raises(ValueError):
            ad.Tape().backward(ad.Tensor(1.0, tape=ad.Tape()))

    def test_bad_backward_shape(self, monkeypatch):
        bad = ad.Primitive("square", ad.PRIMITIVES["square"].forward, lambda g, s, a: (np.zeros((1,)),))
        monkeypatch.setitem(ad.PRIMITIVES, "square", bad)
        tape = ad.Tape()
        x = tape.watch(np.ones((2, 2)))
        with pytest.raises(ValueError, match="gradient shape"):
            tape.backward(ad.tsum(ad.square(x)))

    def test_segment_mean_empty_segment(self):
        out = ad.segment_mean(np.array([[1.0], [3.0]]), np.array([0, 0]), 3)
        np.testing.assert_array_equal(out.value, [[2.0], [0.0], [0.0]])


class TestGradcheck:
    @pytest.mark.parametrize("name", list(primitive_cases(0)))
    def test_primitive(self, name):
        fn, inputs = primitive_cases(0)[name]
        assert check_function(fn, inputs) <= 1e-5

    @pytest.mark.parametrize("kind", ["mlp", "gnn", "surf2vol", "surf2vol_gnn"])
    def test_model(self, kind):
        cfg = toy_config(kind)
        inp = toy_model_inputs(cfg)
        assert inp.n_nodes == 30
        assert check_model(cfg, inp) <= 1e-5

    def test_wrong_rule_detected(self, monkeypatch):
        wrong = ad.Primitive("gelu", ad.PRIMITIVES["gelu"].forward, lambda g, cdf, a: (g * cdf,))
        monkeypatch.setitem(ad.PRIMITIVES, "gelu", wrong)
        fn, inputs = primitive_cases(0)["gelu"]
        assert check_function(fn, inputs) > 1e-3
        cfg = toy_config("surf2vol")
        assert check_model(cfg, toy_model_inputs(cfg)) > 1e-5

    def test_summary_deterministic(self):
        a = summary(run_gradchecks(1))
        b = summary(run_gradchecks(1))
        assert a == b
        assert a.endswith("17/17 passed")


class TestMlp:
    def test_zero_depth_affine(self):
        cfg = ModelConfig(kind="mlp", node_dim=3, hidden=5, mlp_depth=0)
        P = init_params(cfg, 0)
        x = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_allclose(mlp_forward(wrap(P), "mlp", x).value, x @ P["mlp.W0"] + P["mlp.b0"], rtol=1e-15)

    def test_row_independence(self):
        cfg = ModelConfig(kind="mlp", node_dim=6, hidden=7, mlp_depth=2)
        P = wrap(init_params(cfg, 1))
        x = np.random.default_rng(1).normal(size=(9, 6))
        whole = mlp_forward(P, "mlp", x).value
        rows = np.vstack([mlp_forward(P, "mlp", x[i : i + 1]).value for i in range(9)])
        np.testing.assert_allclose(whole, rows, rtol=1e-14, atol=1e-15)

    def test_shape_error(self):
        cfg = ModelConfig(kind="mlp", node_dim=6, hidden=7)
        with pytest.raises(ValueError, match="input width"):
            mlp_forward(wrap(init_params(cfg, 0)), "mlp", np.zeros((2, 5)))

    def test_param_count(self):
        cfg = ModelConfig(kind="mlp", node_dim=4, hidden=3, mlp_depth=1)
        assert n_parameters(init_params(cfg, 0)) == 4 * 3 + 3 + 3 * 1 + 1
        assert [n for n, _ in param_shapes(cfg)] == ["mlp.W0", "mlp.b0", "mlp.W1", "mlp.b1"]

    def test_init_bounds_and_seed(self):
        cfg = small_cfg()
        a, b = init_params(cfg, 3), init_params(cfg, 3)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        W = a["s2v.node_embed.W0"]
        assert np.abs(W).max() <= 1 / np.sqrt(251)


class TestSurfaceEncoder:
    def _inputs(self, cfg, rng):
        from geompnn.net import ModelInputs

        ns = 12
        src = rng.integers(0, ns, 40)
        dst = rng.integers(0, ns, 40)
        return ModelInputs(
            node_x=np.zeros((1, cfg.node_dim)),
            surf_x=rng.normal(size=(ns, cfg.node_dim)),
            surf_src=src,
            surf_dst=dst,
            surf_e=rng.normal(size=(40, 3)),
        )

    def test_zero_layers_is_embedding(self):
        cfg = small_cfg(node_dim=5, surf_layers=0)
        P = wrap(init_params(cfg, 0))
        inp = self._inputs(cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(surface_encode(P, cfg, inp).value, mlp_forward(P, "surf.node_embed", inp.surf_x).value)

    def test_permutation_equivariance(self):
        cfg = small_cfg(node_dim=5)
        P = wrap(init_params(cfg, 0))
        rng = np.random.default_rng(1)
        inp = self._inputs(cfg, rng)
        perm = rng.permutation(12)
        inv = np.argsort(perm)
        import copy

        q = copy.copy(inp)
        q.surf_x = inp.surf_x[perm]
        q.surf_src, q.surf_dst = inv[inp.surf_src], inv[inp.surf_dst]
        np.testing.assert_allclose(surface_encode(P, cfg, q).value, surface_encode(P, cfg, inp).value[perm], rtol=1e-12, atol=1e-13)

    def test_single_node_no_edges(self):
        from geompnn.net import ModelInputs

        cfg = small_cfg(node_dim=5, surf_layers=3)
        P = wrap(init_params(cfg, 0))
        x = np.random.default_rng(2).normal(size=(1, 5))
        inp = ModelInputs(node_x=x, surf_x=x, surf_src=np.zeros(0, int), surf_dst=np.zeros(0, int), surf_e=np.zeros((0, 3)))
        z = mlp_forward(P, "surf.node_embed", x)
        for i in range(3):
            z = ad.add(z, mlp_forward(P, f"surf.{i}.node", ad.concat([z, np.zeros((1, 8))])))
        np.testing.assert_allclose(surface_encode(P, cfg, inp).value, z.value, rtol=1e-14)


class TestSurf2Vol:
    def test_resolution_invariance(self, prepared):
        cfg = small_cfg()
        params = init_params(cfg, 0)
        pc = PreparedCase(prepared.case, FeatureVariant.SpH, cfg, prepared.ctx.sine, prepared.ctx.tables)
        full = predict(params, cfg, pc.inputs(None, graph_seed=0))
        for seed in range(3):
            _, keep = subsample(pc.case, 100 + 50 * seed, seed)
            sub = predict(params, cfg, pc.inputs(keep, graph_seed=0))
            np.testing.assert_allclose(sub, full[keep], rtol=0, atol=1e-12)

    def test_volume_permutation_equivariance(self, prepared):
        cfg = small_cfg()
        params = wrap(init_params(cfg, 0))
        inp = prepared.inputs(None, 0)
        inp.vol_src = inp.vol_dst = inp.vol_e = None
        n, k = inp.n_nodes, cfg.k
        perm = np.random.default_rng(0).permutation(n)
        import copy

        q = copy.copy(inp)
        q.node_x = inp.node_x[perm]
        q.s2v_src = inp.s2v_src.reshape(n, k)[perm].ravel()
        q.s2v_e = inp.s2v_e.reshape(n, k, -1)[perm].reshape(n * k, -1)
        a = surf2vol_forward(params, cfg, q).value
        b = surf2vol_forward(params, cfg, inp).value
        np.testing.assert_allclose(a, b[perm], rtol=1e-12, atol=1e-13)

    def test_k1_message_is_edge(self):
        e = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(ad.segment_mean(e, np.arange(5), 5).value, e)

    def test_zero_messages_pass_embedding(self, prepared):
        cfg = small_cfg()
        P = init_params(cfg, 0)
        last = cfg.mlp_depth
        for name in list(P):
            if name.startswith(("s2v.edge_embed", "s2v.0.", "s2v.1.")) and name.endswith((f"W{last}", f"b{last}")):
                P[name] = np.zeros_like(P[name])
        inp = prepared.inputs(None, 0)
        T = wrap(P)
        z = mlp_forward(T, "s2v.node_embed", inp.node_x)
        np.testing.assert_array_equal(surf2vol_forward(T, cfg, inp).value, mlp_forward(T, "decoder", z).value)

    def test_degree_check(self, prepared):
        cfg = small_cfg()
        inp = prepared.inputs(None, 0)
        inp.s2v_src = inp.s2v_src[:-1]
        with pytest.raises(ValueError, match="exactly k"):
            surf2vol_forward(wrap(init_params(cfg, 0)), cfg, inp)

    def test_plus_gnn_ablation(self, prepared):
        cfg_g = prepared.cfg
        P = init_params(cfg_g, 0)
        inp = prepared.inputs(None, 0)
        ablated = surf2vol_plus_gnn(wrap(P), cfg_g, inp, volume_layers=False).value
        plain_cfg = small_cfg()
        plain = {k: v for k, v in P.items() if not k.startswith("vol.")}
        np.testing.assert_array_equal(ablated, surf2vol_forward(wrap(plain), plain_cfg, inp).value)
        assert not np.array_equal(ablated, surf2vol_plus_gnn(wrap(P), cfg_g, inp).value)

    def test_deterministic(self, prepared):
        cfg = prepared.cfg
        P = init_params(cfg, 0)
        a = predict(P, cfg, prepared.inputs(None, 0))
        b = predict(P, cfg, prepared.inputs(None, 0))
        np.testing.assert_array_equal(a, b)


class TestBaselines:
    def test_mlp_duplicated_points(self):
        cfg = ModelConfig(kind="mlp", node_dim=5, hidden=6)
        P = wrap(init_params(cfg, 0))
        x = np.random.default_rng(0).normal(size=(3, 5))
        out = baseline_mlp(P, cfg, type("I", (), {"node_x": np.vstack([x, x])})()).value
        np.testing.assert_array_equal(out[:3], out[3:])

    def test_perturbation_probe(self):
        cfg_g = toy_config("gnn")
        cfg_m = toy_config("mlp")
        inp = toy_model_inputs(cfg_g)
        node, nb = inp.vol_dst[0], inp.vol_src[0]
        Pg, Pm = wrap(init_params(cfg_g, 0)), wrap(init_params(cfg_m, 0))
        g0, m0 = baseline_gnn(Pg, cfg_g, inp).value, baseline_mlp(Pm, cfg_m, inp).value
        inp.node_x = inp.node_x.copy()
        inp.node_x[nb] += 1.0
        g1, m1 = baseline_gnn(Pg, cfg_g, inp).value, baseline_mlp(Pm, cfg_m, inp).value
        assert g1[node, 0] != g0[node, 0]
        np.testing.assert_array_equal(np.delete(m1, nb, axis=0), np.delete(m0, nb, axis=0))

    def test_forward_dispatch(self):
        for kind in ("mlp", "gnn", "surf2vol", "surf2vol_gnn"):
            cfg = toy_config(kind)
            assert forward(wrap(init_params(cfg, 0)), cfg, toy_model_inputs(cfg)).shape == (30, 1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ModelConfig(kind="transformer")


class TestCheckpoint:
    def _model(self, small_case, sine_cfg):
        cfg = small_cfg()
        norm = fit_normalizer(small_case.field_values(FieldId.VelX), FieldId.VelX)
        return FieldModel(FieldId.VelX, FeatureVariant.SpH, cfg, init_params(cfg, 5), norm, sine_cfg)

    def test_round_trip(self, tmp_path, small_case, sine_cfg):
        m = self._model(small_case, sine_cfg)
        save_checkpoint(m, tmp_path / "m.npz")
        back = load_checkpoint(tmp_path / "m.npz")
        assert back.param_hash() == m.param_hash()
        assert back.meta() == m.meta()
        np.testing.assert_array_equal(back.predict(small_case), m.predict(small_case))

    def test_errors(self, tmp_path, small_case, sine_cfg):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "missing.npz")
        np.savez(tmp_path / "junk.npz", a=np.zeros(2))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "junk.npz")
        m = self._model(small_case, sine_cfg)
        m.params["decoder.W0"] = np.zeros((3, 3))
        save_checkpoint(m, tmp_path / "bad.npz")
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(tmp_path / "bad.npz")

    def test_predict_physical_units(self, small_case, sine_cfg):
        m = self._model(small_case, sine_cfg)
        pc = m.prepare(recentre(small_case))
        np.testing.assert_allclose(m.predict(pc), m.normalizer.denormalize(m.predict_normalized(pc)))
