import numpy as np
import pytest

from dsvton.denoiser import (
    AdamState,
    DenoiserParams,
    NetworkConfig,
    TrainBatch,
    adamw_step,
    gradient_check,
    gradient_check_report,
    init_params,
    loss_and_grad,
    predict_noise,
    reference_encode,
)
from dsvton.errors import NumericalError, ValidationError

TINY = NetworkConfig(base_channels=4, depth=2, attn_level=1, time_embed_dim=8)


def make_batch(cfg, B=2, H=8, seed=1):
    rng = np.random.default_rng(seed)
    return TrainBatch(
        x_in=rng.standard_normal((B, H, H, cfg.out_channels)),
        person=rng.standard_normal((B, H, H, cfg.person_channels)),
        t=rng.integers(1, 50, size=B),
        garment=rng.standard_normal((B, H, H, cfg.person_channels)),
        target=rng.standard_normal((B, H, H, cfg.out_channels)),
    )


class TestNetworkConfig:
    def test_channel_ladder(self):
        assert NetworkConfig(base_channels=16, depth=3, attn_level=2).channels == [16, 32, 64]

    @pytest.mark.parametrize(
        "kw",
        [
            dict(base_channels=0),
            dict(depth=0),
            dict(attn_level=3, depth=3),
            dict(time_embed_dim=7),
            dict(in_channels=3, out_channels=3),
        ],
    )
    def test_rejects_degenerate(self, kw):
        with pytest.raises(ValidationError):
            NetworkConfig(**kw)


class TestInitParams:
    def test_deterministic(self):
        a = init_params(TINY, 123)
        b = init_params(TINY, 123)
        assert np.array_equal(a.vec, b.vec)

    def test_seeds_differ_almost_everywhere(self):
        # default-size network: zero-initialized biases are <1% of the vector
        cfg = NetworkConfig()
        a = init_params(cfg, 1)
        b = init_params(cfg, 2)
        frac = np.mean(a.vec != b.vec)
        assert frac > 0.99

    def test_layout_covers_vector_exactly(self):
        p = init_params(TINY, 0)
        covered = np.zeros(p.size, dtype=int)
        for name, off, shape in p.layout:
            covered[off:off + int(np.prod(shape))] += 1
        assert np.all(covered == 1)

    def test_param_count_matches_layout_sum(self):
        cfg = NetworkConfig(base_channels=16, depth=2, attn_level=1, time_embed_dim=16)
        p = init_params(cfg, 0)
        expected = sum(int(np.prod(s)) for _, _, s in p.layout)
        assert p.size == expected

    def test_all_finite(self):
        assert np.all(np.isfinite(init_params(TINY, 9).vec))


class TestReferenceEncode:
    def test_cached_reuse_equals_recompute(self):
        p = init_params(TINY, 3)
        g = np.random.default_rng(0).standard_normal((1, 8, 8, 3))
        ref = reference_encode(g, p)
        x = np.random.default_rng(1).standard_normal((1, 8, 8, 3))
        person = np.random.default_rng(2).standard_normal((1, 8, 8, 3))
        outs = [predict_noise(x, person, 5, ref, p) for _ in range(20)]
        fresh = [predict_noise(x, person, 5, reference_encode(g, p), p) for _ in range(3)]
        for o in outs + fresh:
            assert np.array_equal(o, outs[0])

    def test_zero_garment_finite(self):
        p = init_params(TINY, 3)
        ref = reference_encode(np.zeros((8, 8, 3)), p)
        assert all(np.all(np.isfinite(v)) for v in ref.sites.values())

    def test_garments_discriminated(self):
        p = init_params(TINY, 3)
        rng = np.random.default_rng(5)
        r1 = reference_encode(rng.standard_normal((8, 8, 3)), p)
        r2 = reference_encode(rng.standard_normal((8, 8, 3)), p)
        site = f"level{TINY.attn_level}"
        assert not np.allclose(r1.sites[site], r2.sites[site])

    def test_one_entry_per_attention_site(self):
        p = init_params(TINY, 3)
        ref = reference_encode(np.zeros((8, 8, 3)), p)
        assert list(ref.sites) == [f"level{TINY.attn_level}"]

    def test_resolution_mismatch(self):
        p = init_params(TINY, 3)
        ref = reference_encode(np.zeros((16, 16, 3)), p)
        with pytest.raises(ValidationError):
            predict_noise(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), 1, ref, p)


class TestPredictNoise:
    def test_output_shape_contract(self):
        p = init_params(TINY, 4)
        for H in (8, 16):
            ref = reference_encode(np.zeros((H, H, 3)), p)
            out = predict_noise(np.zeros((H, H, 3)), np.zeros((H, H, 3)), 1, ref, p)
            assert out.shape == (H, H, 3)

    def test_deterministic(self):
        p = init_params(TINY, 4)
        rng = np.random.default_rng(0)
        x, person, g = (rng.standard_normal((8, 8, 3)) for _ in range(3))
        ref = reference_encode(g, p)
        assert np.array_equal(
            predict_noise(x, person, 3, ref, p), predict_noise(x, person, 3, ref, p)
        )

    def test_single_weight_perturbation_changes_output(self):
        p = init_params(TINY, 4)
        rng = np.random.default_rng(0)
        x, person, g = (rng.standard_normal((8, 8, 3)) for _ in range(3))
        ref = reference_encode(g, p)
        base = predict_noise(x, person, 3, ref, p)
        # one coordinate from every layer group must influence the output
        for group, ranges in p.group_slices().items():
            q = p.copy()
            q.vec[ranges[0][0]] += 0.05
            ref_q = reference_encode(g, q)
            moved = predict_noise(x, person, 3, ref_q, q)
            assert not np.array_equal(base, moved), group

    def test_shape_mismatch_rejected(self):
        p = init_params(TINY, 4)
        ref = reference_encode(np.zeros((8, 8, 3)), p)
        with pytest.raises(ValidationError):
            predict_noise(np.zeros((8, 8, 2)), np.zeros((8, 8, 3)), 1, ref, p)
        with pytest.raises(ValidationError):
            predict_noise(np.zeros((8, 8, 3)), np.zeros((8, 4, 3)), 1, ref, p)

    def test_nonfinite_surfaces_as_error(self):
        p = init_params(TINY, 4)
        p.vec[:] = np.where(np.abs(p.vec) > 0, p.vec * 1e200, p.vec)
        ref_ok = reference_encode(np.zeros((8, 8, 3)), init_params(TINY, 4))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError):
                predict_noise(np.full((8, 8, 3), 10.0), np.zeros((8, 8, 3)), 1, ref_ok, p)


class TestLossAndGrad:
    def test_perfect_fit_is_stationary(self):
        p = init_params(TINY, 5)
        b = make_batch(TINY)
        ref, _ = (reference_encode(b.garment, p), None)
        pred = predict_noise(b.x_in, b.person, b.t, ref, p)
        fit = TrainBatch(b.x_in, b.person, b.t, b.garment, pred)
        loss, grad = loss_and_grad(fit, p)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_batch_duplication_invariance(self):
        p = init_params(TINY, 5)
        b = make_batch(TINY, B=2)
        loss1, grad1 = loss_and_grad(b, p)
        dup = TrainBatch(
            np.concatenate([b.x_in, b.x_in]),
            np.concatenate([b.person, b.person]),
            np.concatenate([b.t, b.t]),
            np.concatenate([b.garment, b.garment]),
            np.concatenate([b.target, b.target]),
        )
        loss2, grad2 = loss_and_grad(dup, p)
        assert loss1 == pytest.approx(loss2, rel=1e-12)
        np.testing.assert_allclose(grad1, grad2, rtol=1e-9, atol=1e-14)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            TrainBatch(
                x_in=np.zeros((0, 8, 8, 3)),
                person=np.zeros((0, 8, 8, 3)),
                t=np.zeros((0,), dtype=int),
                garment=np.zeros((0, 8, 8, 3)),
                target=np.zeros((0, 8, 8, 3)),
            )


class TestGradientCheck:
    def test_healthy_network_under_1e4(self):
        p = init_params(TINY, 6)
        err = gradient_check(p, make_batch(TINY), n_coords=34, seed=3)
        assert err < 1e-4

    def test_fault_injection_detected(self):
        p = init_params(TINY, 6)
        report = gradient_check_report(
            p, make_batch(TINY), n_coords=34, seed=3, corrupt_group="enc0"
        )
        assert report["enc0"] > 1e-2

    def test_report_lists_every_group_once(self):
        p = init_params(TINY, 6)
        report = gradient_check_report(p, make_batch(TINY), n_coords=17, seed=0)
        assert sorted(report) == sorted(p.groups())


class TestAdamW:
    def test_zero_grad_no_decay_is_identity(self):
        p = init_params(TINY, 7)
        before = p.vec.copy()
        adamw_step(p, np.zeros(p.size), AdamState.zeros(p.size), lr=1e-3)
        np.testing.assert_array_equal(p.vec, before)

    def test_first_step_sign_update(self):
        p = init_params(TINY, 7)
        before = p.vec.copy()
        g = np.random.default_rng(0).standard_normal(p.size)
        adamw_step(p, g, AdamState.zeros(p.size), lr=1e-3)
        expected = before - 1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.vec, expected, rtol=1e-9)

    def test_decoupled_decay(self):
        p = init_params(TINY, 7)
        before = p.vec.copy()
        adamw_step(p, np.zeros(p.size), AdamState.zeros(p.size),
                   lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(p.vec, before * (1 - 0.1 * 0.5), rtol=1e-12)

    def test_rejects_nonfinite_grads(self):
        p = init_params(TINY, 7)
        g = np.zeros(p.size)
        g[0] = np.nan
        with pytest.raises(NumericalError):
            adamw_step(p, g, AdamState.zeros(p.size), lr=1e-3)

    def test_moments_persist(self):
        p = init_params(TINY, 7)
        st = AdamState.zeros(p.size)
        g = np.ones(p.size)
        adamw_step(p, g, st, lr=1e-3)
        assert st.step == 1
        assert st.m[0] == pytest.approx(0.1)
        assert st.v[0] == pytest.approx(0.001)
