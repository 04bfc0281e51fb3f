import numpy as np
import pytest

import pansharp as ps
from pansharp import metrics
from pansharp.errors import DegenerateInputError

from oracles import (ergas_oracle, gaussian_oracle, q4_oracle, q_oracle,
                     quat_conj, quat_mult, sam_oracle, scc_oracle)


def degrade_oracle(arr: np.ndarray, ratio: int) -> np.ndarray:
    return np.clip(gaussian_oracle(arr.astype(np.float64), ratio / 2.0), 0, 1)[::ratio, ::ratio]


class TestUiqi:
    def test_self_comparison(self, rng):
        x = rng.random((64, 64, 1))
        assert metrics.uiqi(x, x) == 1.0

    def test_anticorrelated_two_value_pattern(self):
        yy, xx = np.mgrid[0:32, 0:32]
        x = np.where((yy + xx) % 2 == 0, 0.2, 0.6)[:, :, None]
        y = -x + 2 * x.mean()
        got = metrics.uiqi(x, y, block=32)
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        want = 4 * cov * mx * my / ((vx + vy) * (mx ** 2 + my ** 2))
        assert abs(got - want) < 1e-12
        assert abs(got - (-1.0)) < 1e-12

    def test_matches_block_oracle(self, rng):
        for seed in range(20):
            r = np.random.default_rng(seed)
            a = r.random((64, 64))
            b = r.random((64, 64))
            assert abs(metrics.uiqi(a[:, :, None], b[:, :, None], 32)
                       - q_oracle(a, b, 32)) < 1e-8

    def test_symmetry(self, rng):
        a = rng.random((64, 64, 1))
        b = rng.random((64, 64, 1))
        assert abs(metrics.uiqi(a, b) - metrics.uiqi(b, a)) < 1e-12

    def test_degenerate_blocks_contribute_zero(self):
        a = np.zeros((32, 32, 1))
        b = np.zeros((32, 32, 1))
        assert metrics.uiqi(a, b) == 0.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            metrics.uiqi(rng.random((32, 32, 1)), rng.random((32, 33, 1)))


class TestQ2n:
    def test_self_comparison(self, rng):
        x = rng.random((32, 32, 4))
        assert metrics.q2n(x, x) == 1.0

    def test_single_band_reduces_to_uiqi(self, rng):
        a = rng.random((64, 64, 1))
        b = rng.random((64, 64, 1))
        assert abs(metrics.q2n(a, b) - metrics.uiqi(a, b)) < 1e-12

    def test_four_band_matches_quaternion_oracle(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            a = r.random((32, 32, 4))
            b = r.random((32, 32, 4))
            assert abs(metrics.q2n(a, b, 32) - q4_oracle(a, b, 32)) < 1e-6

    def test_cayley_dickson_matches_hamilton(self, rng):
        q = rng.standard_normal((10, 4))
        r = rng.standard_normal((10, 4))
        assert np.abs(metrics._cd_mult(q, r) - quat_mult(q, r)).max() < 1e-12
        assert np.abs(metrics._cd_conj(q) - quat_conj(q)).max() < 1e-12

    def test_norm_composition_through_octonions(self, rng):
        for c in (1, 2, 4, 8):
            z = rng.standard_normal((50, c))
            w = rng.standard_normal((50, c))
            lhs = np.linalg.norm(metrics._cd_mult(z, w), axis=1)
            rhs = np.linalg.norm(z, axis=1) * np.linalg.norm(w, axis=1)
            assert np.abs(lhs - rhs).max() < 1e-10

    def test_two_and_eight_band_self_identity(self, rng):
        for c in (2, 8):
            x = rng.random((32, 32, c))
            assert metrics.q2n(x, x) == 1.0

    def test_unsupported_band_count(self, rng):
        with pytest.raises(ValueError):
            metrics.q2n(rng.random((32, 32, 3)), rng.random((32, 32, 3)))


class TestSam:
    def test_self_is_zero(self, rng):
        x = rng.random((8, 8, 4))
        assert metrics.sam(x, x) == 0.0

    def test_orthogonal_vectors(self):
        a = np.tile(np.array([1.0, 0.0]), (8, 8, 1))
        b = np.tile(np.array([0.0, 1.0]), (8, 8, 1))
        assert abs(metrics.sam(a, b) - 90.0) < 1e-12

    def test_matches_per_pixel_oracle(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            a = r.random((8, 8, 4)) + 0.01
            b = r.random((8, 8, 4)) + 0.01
            assert abs(metrics.sam(a, b) - sam_oracle(a, b)) < 1e-8

    def test_zero_vector_pixels_contribute_zero(self):
        a = np.zeros((4, 4, 2))
        b = np.ones((4, 4, 2))
        assert metrics.sam(a, b) == 0.0

    def test_scale_invariance(self, rng):
        a = rng.random((8, 8, 4)) + 0.1
        b = rng.random((8, 8, 4)) + 0.1
        assert abs(metrics.sam(a, b) - metrics.sam(2.5 * a, b)) < 1e-7

    def test_symmetry(self, rng):
        a = rng.random((8, 8, 4))
        b = rng.random((8, 8, 4))
        assert abs(metrics.sam(a, b) - metrics.sam(b, a)) < 1e-10


class TestErgas:
    def test_equal_inputs(self, rng):
        x = rng.random((8, 8, 3))
        assert metrics.ergas(x, x, 4) == 0.0

    def test_constant_offset_closed_form(self):
        ref = np.full((8, 8, 1), 0.5)
        fused = ref + 0.1
        assert abs(metrics.ergas(fused, ref, 4) - 5.0) < 1e-10

    def test_matches_formula_oracle(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            f = r.random((16, 16, 4))
            ref = r.random((16, 16, 4)) + 0.05
            assert abs(metrics.ergas(f, ref, 4) - ergas_oracle(f, ref, 4)) < 1e-8

    def test_zero_mean_band_rejected(self):
        ref = np.zeros((4, 4, 2))
        with pytest.raises(DegenerateInputError):
            metrics.ergas(np.ones((4, 4, 2)), ref, 4)


class TestScc:
    def test_identical_bands(self, rng):
        pan = rng.random((16, 16, 1))
        fused = np.repeat(pan, 4, axis=2)
        assert metrics.scc(fused, pan) == 1.0

    def test_negated_bands(self, rng):
        pan = rng.random((16, 16, 1)).astype(np.float64)
        fused = np.repeat(-pan, 3, axis=2)
        assert metrics.scc(fused, pan) == -1.0

    def test_matches_filter_then_pearson_oracle(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            f = r.random((16, 16, 4))
            p = r.random((16, 16, 1))
            assert abs(metrics.scc(f, p) - scc_oracle(f, p)) < 1e-8

    def test_constant_input_rejected(self):
        with pytest.raises(DegenerateInputError):
            metrics.scc(np.full((8, 8, 2), 0.5), np.full((8, 8, 1), 0.5))


class TestDLambda:
    def test_tiled_fixture_is_zero(self, rng):
        ms = rng.random((32, 32, 4))
        fms = np.tile(ms, (4, 4, 1))
        assert metrics.d_lambda(fms, ms, block=32) == 0.0

    def test_bounded(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            val = metrics.d_lambda(r.random((64, 64, 4)), r.random((16, 16, 4)), block=16)
            assert 0.0 <= val <= 1.0

    def test_matches_pairwise_oracle(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            fms = r.random((64, 64, 4))
            ms = r.random((16, 16, 4))
            diffs = []
            for i in range(4):
                for j in range(4):
                    if i == j:
                        continue
                    qf = q_oracle(fms[:, :, i], fms[:, :, j], 16)
                    qm = q_oracle(ms[:, :, i], ms[:, :, j], 16)
                    diffs.append(abs(qf - qm))
            assert abs(metrics.d_lambda(fms, ms, block=16) - np.mean(diffs)) < 1e-10

    def test_needs_two_bands(self, rng):
        with pytest.raises(ValueError):
            metrics.d_lambda(rng.random((32, 32, 1)), rng.random((8, 8, 1)))


class TestDs:
    def test_matched_fixture_is_zero(self, rng):
        pan = rng.random((64, 64, 1))
        p_lr = metrics.lowres_pan(pan, 4)
        fms = np.repeat(pan, 4, axis=2)
        ms = np.repeat(p_lr, 4, axis=2)
        assert metrics.d_s(fms, ms, pan, 4, block=16) == 0.0

    def test_bounded(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            val = metrics.d_s(r.random((64, 64, 4)), r.random((16, 16, 4)),
                              r.random((64, 64, 1)), 4, block=16)
            assert 0.0 <= val <= 1.0

    def test_matches_per_band_oracle(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            fms = r.random((64, 64, 4))
            ms = r.random((16, 16, 4))
            pan = r.random((64, 64, 1))
            p_lr = degrade_oracle(pan, 4)
            diffs = [abs(q_oracle(fms[:, :, i], pan[:, :, 0], 16)
                         - q_oracle(ms[:, :, i], p_lr[:, :, 0], 16)) for i in range(4)]
            assert abs(metrics.d_s(fms, ms, pan, 4, block=16) - np.mean(diffs)) < 1e-10

    def test_shape_consistency_enforced(self, rng):
        with pytest.raises(ValueError):
            metrics.d_s(rng.random((64, 64, 4)), rng.random((15, 15, 4)),
                        rng.random((64, 64, 1)), 4)


class TestCompositeIndices:
    def test_ideal_fixture_reaches_one(self, rng):
        pan = rng.random((64, 64, 1))
        p_lr = metrics.lowres_pan(pan, 4)
        fms = np.repeat(pan, 4, axis=2)
        ms = np.repeat(p_lr, 4, axis=2)
        assert metrics.qnr(ms, pan, fms, 4, block=16) == 1.0

    def test_qnr_product_identity(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            ms = r.random((16, 16, 4))
            pan = r.random((64, 64, 1))
            fms = r.random((64, 64, 4))
            dl = metrics.d_lambda(fms, ms, block=16)
            ds = metrics.d_s(fms, ms, pan, 4, block=16)
            assert abs(metrics.qnr(ms, pan, fms, 4, block=16)
                       - (1 - dl) * (1 - ds)) < 1e-12

    def test_d_lambda_khan_matches_oracle(self, rng):
        fms = rng.random((64, 64, 4))
        ms = rng.random((16, 16, 4))
        got = metrics.d_lambda_khan(fms, ms, 4, block=16)
        want = 1.0 - q4_oracle(degrade_oracle(fms, 4), ms.astype(np.float64), 16)
        assert abs(got - want) < 1e-6

    def test_hqnr_composition(self, rng):
        ms = rng.random((16, 16, 4))
        pan = rng.random((64, 64, 1))
        fms = rng.random((64, 64, 4))
        dk = metrics.d_lambda_khan(fms, ms, 4, block=16)
        ds = metrics.d_s(fms, ms, pan, 4, block=16)
        assert abs(metrics.hqnr(ms, pan, fms, 4, block=16) - (1 - dk) * (1 - ds)) < 1e-12

    def test_hqnr_prefers_true_spectra_over_scrambled(self):
        from pansharp import data
        scene = data.make_synthetic_scene(seed=11, height=64, width=64, bands=4, ratio=4)
        true_fms = scene.hrms.data
        scrambled = true_fms[:, :, [2, 3, 0, 1]]
        good = metrics.hqnr(scene.ms, scene.pan, true_fms, 4, block=16)
        bad = metrics.hqnr(scene.ms, scene.pan, scrambled, 4, block=16)
        assert good > bad


class TestEvaluate:
    def _pair(self, rng, size=64, bands=4, ratio=4):
        pan = ps.MultibandImage(rng.random((size, size, 1)), ps.Kind.PAN)
        ms = ps.MultibandImage(rng.random((size // ratio, size // ratio, bands)), ps.Kind.MS)
        return ps.ImagePair(pan=pan, ms=ms, ratio=ratio)

    def test_single_tile_std_zero(self, rng):
        pair = self._pair(rng)
        fms = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.FUSED)
        report = metrics.evaluate([(pair, fms)], metrics.MODE_FULL, block=16)
        assert tuple(report.values.keys()) == metrics.FULL_METRICS
        assert all(std == 0.0 for _, std in report.values.values())

    def test_two_tile_mean_std_hand_arithmetic(self, rng):
        pair1 = self._pair(rng)
        pair2 = self._pair(rng)
        fms1 = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.FUSED)
        fms2 = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.FUSED)
        report = metrics.evaluate([(pair1, fms1), (pair2, fms2)],
                                  metrics.MODE_FULL, block=16)
        v1 = metrics.d_lambda(fms1, pair1.ms, block=16)
        v2 = metrics.d_lambda(fms2, pair2.ms, block=16)
        mean, std = report.values["D_lambda"]
        assert abs(mean - (v1 + v2) / 2) < 1e-12
        assert abs(std - abs(v1 - v2) / 2) < 1e-12

    def test_reduced_ideal_report(self, rng):
        pair = self._pair(rng)
        ref = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.MS)
        report = metrics.evaluate([(pair, ref, ref)], metrics.MODE_REDUCED, block=32)
        assert report.values["SAM"][0] == 0.0
        assert report.values["ERGAS"][0] == 0.0
        assert report.values["Q2n"][0] == 1.0
        assert report.values["SCC"][0] == 1.0

    def test_reduced_requires_reference(self, rng):
        pair = self._pair(rng)
        fms = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.FUSED)
        with pytest.raises(ValueError):
            metrics.evaluate([(pair, fms, None)], metrics.MODE_REDUCED)

    def test_text_and_json_serialization(self, rng):
        pair = self._pair(rng)
        fms = ps.MultibandImage(rng.random((64, 64, 4)), ps.Kind.FUSED)
        report = metrics.evaluate([(pair, fms)], metrics.MODE_FULL, block=16)
        lines = report.to_text().strip().splitlines()
        assert len(lines) == 4
        for line in lines:
            name, mean, std = line.split()
            assert name in metrics.FULL_METRICS
            float(mean), float(std)
        import json
        payload = json.loads(report.to_json())
        assert payload["mode"] == "FULL_RES"
        assert set(payload["metrics"]) == set(metrics.FULL_METRICS)
