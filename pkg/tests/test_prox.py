import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpir import degrade, oracles, prox
from diffpir.degrade import DegradationModel
from diffpir.errors import OutOfRange, ShapeMismatch


def objective(y, model, x, z0, rho):
    return float(np.sum((y - degrade.apply_forward(model, x)) ** 2)
                 + rho * np.sum((x - z0) ** 2))


class TestProxInpaint:
    def test_all_kept_small_rho_returns_measurement(self):
        rng = np.random.default_rng(0)
        y, z0 = rng.random((2, 6, 6)), rng.random((2, 6, 6))
        out = prox.prox_inpaint(y, np.ones((6, 6)), z0, rho=1e-12)
        assert np.abs(out - y).max() < 1e-9

    def test_all_dropped_returns_prior_exactly(self):
        rng = np.random.default_rng(1)
        y, z0 = rng.random((2, 6, 6)), rng.random((2, 6, 6))
        out = prox.prox_inpaint(y, np.zeros((6, 6)), z0, rho=3.0)
        assert np.array_equal(out, z0)

    def test_scalar_cases(self):
        y = np.full((1, 1, 1), 0.5)
        z0 = np.full((1, 1, 1), 0.3)
        assert prox.prox_inpaint(y, np.ones((1, 1)), z0, 1.0)[0, 0, 0] == pytest.approx(0.4)
        z0 = np.full((1, 1, 1), 0.7)
        assert prox.prox_inpaint(y, np.zeros((1, 1)), z0, 1.0)[0, 0, 0] == 0.7

    def test_matches_elementwise_evaluation_exactly(self):
        rng = np.random.default_rng(2)
        y, z0 = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        m = degrade.make_random_mask(8, 8, 0.5, rng)
        rho = 0.7
        out = prox.prox_inpaint(y, m, z0, rho)
        # scalar-loop oracle; a dropped pixel reduces to z0 with no arithmetic
        expected = np.empty_like(z0)
        for c, r, s in np.ndindex(z0.shape):
            if m[r, s]:
                expected[c, r, s] = (y[c, r, s] + rho * z0[c, r, s]) / (1.0 + rho)
            else:
                expected[c, r, s] = z0[c, r, s]
        assert np.array_equal(out, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            prox.prox_inpaint(np.zeros((1, 4, 4)) + 0.1, np.ones((5, 5)),
                              np.zeros((1, 4, 4)) + 0.1, 1.0)


class TestProxDeblurFft:
    def test_delta_kernel_closed_form(self):
        rng = np.random.default_rng(3)
        y, z0 = rng.random((2, 6, 6)), rng.random((2, 6, 6))
        out = prox.prox_deblur_fft(y, np.array([[1.0]]), z0, 0.5)
        assert np.abs(out - (y + 0.5 * z0) / 1.5).max() < 1e-12

    def test_constant_fixed_point(self):
        y = np.full((1, 8, 8), 0.6)
        z0 = np.full((1, 8, 8), 0.6)
        k = degrade.gaussian_kernel(3, 1.0)
        assert np.abs(prox.prox_deblur_fft(y, k, z0, 0.3) - 0.6).max() < 1e-12

    def test_matches_dense_circulant_oracle(self):
        rng = np.random.default_rng(4)
        y, z0 = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        k = rng.random((3, 3))
        k /= k.sum()
        fast = prox.prox_deblur_fft(y, k, z0, 0.5)
        kmat = oracles.circulant_matrix(k, 8, 8)
        dense = oracles.dense_prox_solve(y.reshape(3, -1), kmat, z0.reshape(3, -1), 0.5)
        rel = np.linalg.norm(fast - dense.reshape(3, 8, 8)) / np.linalg.norm(dense)
        assert rel < 1e-8

    def test_rejects_nonpositive_rho(self):
        y = np.zeros((1, 4, 4)) + 0.5
        with pytest.raises(OutOfRange):
            prox.prox_deblur_fft(y, np.array([[1.0]]), y, 0.0)


class TestProxSrClosed:
    def test_scale_one_degenerates_to_deblur(self):
        rng = np.random.default_rng(5)
        y, z0 = rng.random((2, 8, 8)), rng.random((2, 8, 8))
        k = degrade.gaussian_kernel(3, 0.8)
        a = prox.prox_sr_closed(y, k, 1, z0, 0.7)
        b = prox.prox_deblur_fft(y, k, z0, 0.7)
        assert np.abs(a - b).max() < 1e-10

    def test_matches_dense_normal_equations_oracle(self):
        rng = np.random.default_rng(6)
        z0 = rng.random((3, 8, 8))
        y = rng.random((3, 4, 4))
        k = degrade.gaussian_kernel(3, 1.0)
        fast = prox.prox_sr_closed(y, k, 2, z0, 1.0)
        smat = oracles.decimation_matrix(8, 8, 2) @ oracles.circulant_matrix(k, 8, 8)
        dense = oracles.dense_prox_solve(y.reshape(3, -1), smat, z0.reshape(3, -1), 1.0)
        rel = np.linalg.norm(fast - dense.reshape(3, 8, 8)) / np.linalg.norm(dense)
        assert rel < 1e-8

    def test_constant_fixed_point(self):
        y = np.full((1, 4, 4), 0.35)
        z0 = np.full((1, 8, 8), 0.35)
        k = degrade.gaussian_kernel(3, 1.0)
        out = prox.prox_sr_closed(y, k, 2, z0, 0.9)
        assert np.abs(out - 0.35).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            prox.prox_sr_closed(np.zeros((1, 4, 4)) + 0.1, np.array([[1.0]]), 2,
                                np.zeros((1, 7, 8)) + 0.1, 1.0)


class TestProxSrIbp:
    def test_consistent_measurement_is_fixed_point(self):
        rng = np.random.default_rng(7)
        z0 = rng.random((1, 8, 8))
        y = degrade.bicubic_resize(z0, 2, "down")
        for iters in (1, 5, 20):
            out = prox.prox_sr_ibp(y, 2, z0, rho=0.5, gamma=1.0, iters=iters)
            assert np.abs(out - z0).max() < 1e-12

    def test_zero_gamma_returns_prior(self):
        rng = np.random.default_rng(8)
        z0 = rng.random((1, 8, 8))
        y = rng.random((1, 4, 4))
        out = prox.prox_sr_ibp(y, 2, z0, rho=1.0, gamma=0.0, iters=7)
        assert np.array_equal(out, z0)

    def test_residual_nonincreasing(self):
        rng = np.random.default_rng(9)
        z0 = rng.random((1, 16, 16))
        y = rng.random((1, 8, 8))
        x = z0.copy()
        gamma_eff = 1.0 / (1.0 + 0.1)  # gamma=1, rho=0.1 -> gamma_eff < 1
        residuals = [np.linalg.norm(y - degrade.bicubic_resize(x, 2, "down"))]
        for _ in range(6):
            x = prox.prox_sr_ibp(y, 2, x, rho=0.1, gamma=1.0, iters=1)
            residuals.append(np.linalg.norm(y - degrade.bicubic_resize(x, 2, "down")))
        assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))
        assert gamma_eff <= 1.0


class TestProxOracleProperties:
    """Randomized oracle equivalence over shapes, kernels, and weights."""

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_deblur_matches_dense_solve_on_random_geometry(self, data):
        h = data.draw(st.integers(3, 9))
        w = data.draw(st.integers(3, 9))
        kh = data.draw(st.integers(1, h))
        kw = data.draw(st.integers(1, w))
        rho = data.draw(st.floats(1e-3, 50.0))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        y, z0 = rng.random((1, h, w)), rng.random((1, h, w))
        k = rng.random((kh, kw)) + 1e-3
        k /= k.sum()
        fast = prox.prox_deblur_fft(y, k, z0, rho)
        kmat = oracles.circulant_matrix(k, h, w)
        dense = oracles.dense_prox_solve(y.reshape(1, -1), kmat, z0.reshape(1, -1), rho)
        assert np.linalg.norm(fast - dense.reshape(1, h, w)) <= 1e-8 * np.linalg.norm(dense)

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_sr_closed_matches_dense_solve_on_random_geometry(self, data):
        sf = data.draw(st.sampled_from([2, 3]))
        hb = data.draw(st.integers(2, 4))
        wb = data.draw(st.integers(2, 4))
        h, w = hb * sf, wb * sf
        kh = data.draw(st.integers(1, min(h, 4)))
        kw = data.draw(st.integers(1, min(w, 4)))
        rho = data.draw(st.floats(1e-2, 20.0))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        z0 = rng.random((1, h, w))
        y = rng.random((1, hb, wb))
        k = rng.random((kh, kw)) + 1e-3
        k /= k.sum()
        fast = prox.prox_sr_closed(y, k, sf, z0, rho)
        smat = oracles.decimation_matrix(h, w, sf) @ oracles.circulant_matrix(k, h, w)
        dense = oracles.dense_prox_solve(y.reshape(1, -1), smat, z0.reshape(1, -1), rho)
        assert np.linalg.norm(fast - dense.reshape(1, h, w)) <= 1e-8 * np.linalg.norm(dense)


class TestProxGradientStep:
    def test_identity_scalar(self):
        y = np.ones((1, 1, 1))
        z0 = np.zeros((1, 1, 1))
        out = prox.prox_gradient_step(y, DegradationModel.identity(), z0, rho=1.0)
        assert out[0, 0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_consistent_prior_is_fixed_point(self):
        rng = np.random.default_rng(10)
        z0 = rng.random((2, 8, 8))
        k = degrade.gaussian_kernel(3, 1.0)
        model = DegradationModel.blur(k)
        y = degrade.apply_forward(model, z0)
        out = prox.prox_gradient_step(y, model, z0, rho=0.5)
        assert np.abs(out - z0).max() < 1e-12

    @pytest.mark.parametrize("kind", ["identity", "blur", "inpaint", "down-kernel", "down-bicubic"])
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        z0 = rng.random((1, 8, 8))
        if kind == "identity":
            model, y = DegradationModel.identity(), rng.random((1, 8, 8))
        elif kind == "blur":
            model, y = DegradationModel.blur(degrade.gaussian_kernel(3, 1.0)), rng.random((1, 8, 8))
        elif kind == "inpaint":
            model = DegradationModel.inpaint(degrade.make_random_mask(8, 8, 0.4, rng))
            y = rng.random((1, 8, 8))
        elif kind == "down-kernel":
            model = DegradationModel.downsample(2, kernel=degrade.gaussian_kernel(3, 1.0))
            y = rng.random((1, 4, 4))
        else:
            model, y = DegradationModel.downsample(2), rng.random((1, 4, 4))

        def f(z):
            return float(np.sum((y - degrade.apply_forward(model, z)) ** 2))

        analytic = -2.0 * degrade.apply_adjoint(model, y - degrade.apply_forward(model, z0))
        fd = oracles.central_diff_grad(f, z0, h=1e-6)
        rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
        assert rel < 1e-5
        # and the step itself is z0 + (1/rho) H^T (y - H z0)
        out = prox.prox_gradient_step(y, model, z0, rho=2.0)
        assert np.abs(out - (z0 - analytic / (2 * 2.0))).max() < 1e-12


class TestSolverProperties:
    def cases(self, rng):
        k = degrade.gaussian_kernel(3, 1.0)
        z0 = rng.random((1, 8, 8))
        return [
            (DegradationModel.inpaint(degrade.make_random_mask(8, 8, 0.4, rng)),
             rng.random((1, 8, 8)), z0),
            (DegradationModel.blur(k), rng.random((1, 8, 8)), z0),
            (DegradationModel.downsample(2, kernel=k), rng.random((1, 4, 4)), z0),
        ]

    def test_closed_forms_reach_lower_objective_than_gradient_step(self):
        # one gradient step of length 1/(2*rho) only descends the combined
        # objective once the prior weight dominates the data-term curvature
        # (rho > lambda_max(H^T H) = 1 for these normalized operators)
        rng = np.random.default_rng(12)
        for model, y, z0 in self.cases(rng):
            rho = 2.0
            closed = prox.data_prox(y, model, z0, rho)
            grad = prox.prox_gradient_step(y, model, z0, rho)
            at_z0 = objective(y, model, z0, z0, rho)
            assert objective(y, model, closed, z0, rho) < at_z0
            assert objective(y, model, grad, z0, rho) < at_z0
            assert objective(y, model, closed, z0, rho) <= objective(y, model, grad, z0, rho) + 1e-12

    def test_closed_form_is_unique_minimizer(self):
        rng = np.random.default_rng(13)
        for model, y, z0 in self.cases(rng):
            rho = 0.8
            star = prox.data_prox(y, model, z0, rho)
            base = objective(y, model, star, z0, rho)
            for _ in range(5):
                delta = rng.standard_normal(star.shape)
                delta *= 1e-3 / np.linalg.norm(delta)
                assert objective(y, model, star + delta, z0, rho) > base

    def test_large_rho_returns_prior(self):
        rng = np.random.default_rng(14)
        z0 = rng.random((1, 8, 8))
        k = degrade.gaussian_kernel(3, 1.0)
        rho = 1e9
        y_full = rng.random((1, 8, 8))
        y_lr = rng.random((1, 4, 4))
        outs = [
            prox.prox_inpaint(y_full, degrade.make_random_mask(8, 8, 0.4, rng), z0, rho),
            prox.prox_deblur_fft(y_full, k, z0, rho),
            prox.prox_sr_closed(y_lr, k, 2, z0, rho),
            prox.prox_sr_ibp(y_lr, 2, z0, rho),
            prox.prox_gradient_step(y_full, DegradationModel.blur(k), z0, rho),
        ]
        for out in outs:
            assert np.abs(out - z0).max() < 1e-5
