import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gp_limit_lab import features as ft
from gp_limit_lab.process import draw_network, feature_sum, sphere_sample


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_poly_map(rng, n, d, terms=6):
    out = {}
    for _ in range(terms):
        deg = int(rng.integers(0, d + 1))
        I = tuple(int(x) for x in rng.multinomial(deg, [1.0 / n] * n))
        out[I] = out.get(I, 0.0) + float(rng.standard_normal())
    return out


def brute_moment(I, samples=10**7, seed=0):
    rng = np.random.default_rng(seed)
    vals = np.ones(samples)
    for i, p in enumerate(I):
        vals *= rng.standard_normal(samples) ** p
    return vals.mean(), vals.std(ddof=1) / math.sqrt(samples)


class TestMultiIndices:
    def test_examples(self):
        assert ft.multi_indices(3, 0) == [(0, 0, 0)]
        assert len(ft.multi_indices(3, 2)) == 6
        assert ft.multi_indices(2, 3) == [(3, 0), (2, 1), (1, 2), (0, 3)]

    @given(st.integers(1, 6), st.integers(0, 6))
    @settings(max_examples=50, deadline=None)
    def test_count_and_uniqueness(self, n, m):
        idx = ft.multi_indices(n, m)
        assert len(idx) == math.comb(n + m - 1, m)
        assert len(set(idx)) == len(idx)
        assert all(sum(I) == m and len(I) == n for I in idx)

    def test_matches_itertools_enumeration(self):
        n, m = 4, 3
        brute = {tuple(np.bincount(c, minlength=n)) for c in itertools.combinations_with_replacement(range(n), m)}
        assert set(ft.multi_indices(n, m)) == brute

    def test_cap(self):
        with pytest.raises(ValueError):
            ft.multi_indices(50, 10, cap=1000)

    @pytest.mark.parametrize("n,d", [(2, 3), (3, 4), (5, 2), (8, 3)])
    def test_dim_bound(self, n, d):
        basis = ft.FeatureBasis(n, tuple(range(d + 1)))
        assert basis.dim <= 2 * n**d


class TestGaussianMoment:
    def test_examples(self):
        assert ft.gaussian_moment((2, 2)) == 1.0
        assert ft.gaussian_moment((4, 0, 2)) == 3.0
        assert ft.gaussian_moment((1, 2)) == 0.0

    def test_monte_carlo_oracle(self):
        mean, err = brute_moment((4, 0, 2))
        assert abs(mean - ft.gaussian_moment((4, 0, 2))) <= 3 * err

    @pytest.mark.parametrize("p", range(0, 12))
    def test_one_dimensional_against_scipy(self, p):
        from scipy import stats
        assert ft.gaussian_moment((p,)) == pytest.approx(stats.norm.moment(p), rel=1e-12)


class TestEmbedding:
    def test_basis_vector(self):
        fv = ft.embed_point([1.0, 0.0, 0.0], [0, 0, 1])
        nz = np.flatnonzero(fv.coords)
        assert nz.tolist() == [fv.basis.index_list.index((2, 0, 0))]
        assert fv.coords[nz[0]] == pytest.approx(1.0)

    def test_multinomial_scaling(self):
        fv = ft.embed_point([1.0, 1.0], [0, 0, 1])
        np.testing.assert_allclose(fv.coords, [1.0, math.sqrt(2.0), 1.0])
        assert fv.norm() ** 2 == pytest.approx(4.0)

    def test_zero_levels_dropped(self):
        basis = ft.FeatureBasis.for_polynomial(3, [1.0, 0.0, 2.0])
        assert basis.levels == (0, 2)

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=5), st.integers(2, 5))
    @settings(max_examples=40, deadline=None)
    def test_norm_on_sphere(self, coeffs, n):
        if not any(coeffs):
            return
        x = sphere_sample(n, 1, 11)[0]
        fv = ft.embed_point(x, coeffs)
        assert fv.norm() == pytest.approx(math.sqrt(sum(abs(c) for c in coeffs)), rel=1e-12)


class TestQForm:
    def test_cubic_identity(self):
        p = [1.0, 2.0, 0.0, -1.0]
        rng = np.random.default_rng(1)
        for _ in range(20):
            x, y = unit(rng.standard_normal(4)), unit(rng.standard_normal(4))
            q = ft.q_form(ft.embed_point(x, p), ft.embed_point(y, p), p)
            assert q == pytest.approx(np.polynomial.polynomial.polyval(x @ y, p), abs=1e-12)

    def test_positive_coefficients_give_norm(self):
        p = [0.5, 1.0, 2.0]
        u = ft.embed_point(unit([1.0, 2.0, 3.0]), p)
        assert ft.q_form(u, u, p) == pytest.approx(u.norm() ** 2)

    def test_orthogonal_inputs(self):
        p = [0.7, -1.0, 3.0]
        assert ft.q_form(ft.embed_point([1, 0, 0], p), ft.embed_point([0, 1, 0], p), p) == pytest.approx(0.7)

    def test_basis_mismatch(self):
        with pytest.raises(ValueError):
            ft.q_form(ft.embed_point([1, 0], [0, 1]), ft.embed_point([1, 0, 0], [0, 1]), [0, 1])

    @given(st.integers(1, 6), st.lists(st.floats(-2, 2), min_size=1, max_size=5), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_cauchy_schwarz(self, n, p, seed):
        if not any(p):
            return
        rng = np.random.default_rng(seed)
        basis = ft.FeatureBasis.for_polynomial(n, p)
        u = ft.FeatureVector(basis, rng.standard_normal(basis.dim))
        v = ft.FeatureVector(basis, rng.standard_normal(basis.dim))
        assert abs(ft.q_form(u, v, p)) <= u.norm() * v.norm() * (1 + 1e-12)

    def test_network_identity(self):
        # P_k p(x) = Q(P(x), X_k)
        p = np.array([0.3, -1.0, 0.5, 2.0])
        n = 4
        X = sphere_sample(n, 6, 2)
        basis = ft.FeatureBasis.for_polynomial(n, p)
        for rep in range(5):
            draw = draw_network(n, 32, 9, rep)
            Xk = feature_sum(draw, p, basis)
            direct = draw.signs @ np.polynomial.polynomial.polyval(draw.weights @ X.T, p) / math.sqrt(32)
            via_q = ft.embed_points(X, p, basis) @ (basis.signs(p) * Xk)
            np.testing.assert_allclose(via_q, direct, atol=1e-10)


class TestCovariance:
    def test_quadratic_scalar(self):
        np.testing.assert_allclose(ft.covariance_analytic([0, 0, 1], 1).matrix, [[2.0]])

    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_linear_identity(self, n):
        np.testing.assert_allclose(ft.covariance_analytic([0, 1], n).matrix, np.eye(n), atol=1e-15)

    def test_quadratic_off_diagonal(self):
        cov = ft.covariance_analytic([0, 0, 1], 2)
        idx = cov.basis.index_list
        assert cov.matrix[idx.index((2, 0)), idx.index((0, 2))] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("poly,n", [([0, 0, 1], 3), ([1, -1, 0.5], 2), ([0, 1, 0, 1], 2)])
    def test_against_empirical(self, poly, n):
        S = 100_000
        emp = ft.covariance_empirical(poly, n, S, seed=4)
        ana = ft.covariance_analytic(poly, n)
        # per-entry standard errors from the fourth moments of the centred features
        F = ft.embed_points(np.random.default_rng([4, 99]).standard_normal((S, n)), poly, ana.basis)
        C = F - F.mean(0)
        se = np.sqrt(np.einsum("si,sj->ij", C**2, C**2) / S - ana.matrix**2) / math.sqrt(S)
        assert np.all(np.abs(emp.matrix - ana.matrix) <= 5 * se + 1e-12)

    def test_empirical_deterministic(self):
        a = ft.covariance_empirical([0, 0, 1], 3, 5000, seed=3).matrix
        b = ft.covariance_empirical([0, 0, 1], 3, 5000, seed=3).matrix
        assert np.array_equal(a, b)

    def test_two_samples_finite_symmetric(self):
        m = ft.covariance_empirical([0, 1, 1], 2, 2, seed=0).matrix
        assert np.all(np.isfinite(m)) and np.allclose(m, m.T)

    @given(st.integers(1, 5), st.lists(st.floats(-2, 2), min_size=2, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_psd(self, n, p):
        if not any(p):
            return
        vals = np.linalg.eigvalsh(ft.covariance_analytic(p, n).matrix)
        assert vals.min() >= -1e-10 * max(1.0, vals.max())

    def test_dense_cap(self, monkeypatch):
        monkeypatch.setenv("GPLL_MAX_DIM", "10")
        with pytest.raises(ValueError):
            ft.covariance_analytic([0, 0, 1], 5)


class TestVariance:
    @pytest.mark.parametrize("coeffs,expected", [
        ({(1, 0): 1.0}, 1.0),
        ({(1, 1): 1.0}, 1.0),
        ({(2, 0): 1.0}, 2.0),
    ])
    def test_examples(self, coeffs, expected):
        assert ft.polynomial_variance_moments(coeffs) == pytest.approx(expected)
        assert ft.polynomial_variance_derivative_expansion(coeffs) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(10))
    def test_methods_agree(self, seed):
        rng = np.random.default_rng(seed)
        q = random_poly_map(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5)))
        v1 = ft.polynomial_variance_moments(q)
        v2 = ft.polynomial_variance_derivative_expansion(q)
        assert v2 == pytest.approx(v1, rel=1e-9, abs=1e-12)

    def test_monte_carlo(self):
        q = {(2, 1): 1.0, (0, 3): -0.5, (1, 0): 2.0}
        w = np.random.default_rng(8).standard_normal((2_000_000, 2))
        vals = w[:, 0] ** 2 * w[:, 1] - 0.5 * w[:, 1] ** 3 + 2 * w[:, 0]
        est = vals.var(ddof=1)
        se = math.sqrt((np.mean((vals - vals.mean()) ** 4) - est**2) / vals.size)
        assert abs(est - ft.polynomial_variance_moments(q)) <= 4 * se

    @pytest.mark.parametrize("n,d", [(2, 2), (3, 3), (2, 4), (5, 2)])
    def test_homogeneous_floor(self, n, d):
        assert ft.min_homogeneous_variance(n, d, 500, seed=1) >= 1.0 / math.factorial(d) - 1e-12


class TestSpectrum:
    def test_identity(self):
        vals, _ = ft.spectrum(np.eye(4))
        np.testing.assert_allclose(vals, 1.0)

    def test_descending_and_reconstruction(self):
        cov = ft.covariance_analytic([1, -1, 0.5, 0.2], 3)
        vals, vecs = ft.spectrum(cov)
        assert np.all(np.diff(vals) <= 1e-14)
        err = np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - cov.matrix)
        assert err <= 1e-8 * np.linalg.norm(cov.matrix, 2)

    def test_quadratic_scalar(self):
        vals, _ = ft.spectrum(ft.covariance_analytic([0, 0, 1], 1))
        np.testing.assert_allclose(vals, [2.0])

    def test_sign_canonical(self):
        _, vecs = ft.spectrum(ft.covariance_analytic([0, 1, 1], 2))
        for col in vecs.T:
            lead = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
            assert lead > 0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            ft.spectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestTruncateSpectrum:
    def test_zero_delta_keeps_all(self):
        cov = ft.covariance_analytic([0, 1, 1], 3)
        split = ft.truncate_spectrum(cov, 0.0)
        assert split.discarded_values.size == 0 and split.penalty == 0.0

    def test_large_delta_discards_all(self):
        cov = ft.covariance_analytic([0, 1, 1], 3)
        split = ft.truncate_spectrum(cov, 100.0)
        assert split.kept_values.size == 0
        assert split.penalty == pytest.approx(8 * 3**2 * 100.0)

    def test_projectors_complementary(self):
        cov = ft.covariance_analytic([0, 1, 0, 1], 3)
        vals, _ = ft.spectrum(cov)
        split = ft.truncate_spectrum(cov, float(np.median(vals)))
        np.testing.assert_allclose(split.kept_projector + split.discarded_projector, np.eye(cov.basis.dim), atol=1e-10)
        assert np.all(split.discarded_values <= split.threshold)

    def test_balanced_threshold_formula(self):
        n, k, d, a = 3, 1000, 2, 1.0
        lv = (math.lgamma(221) + 3.5 * math.log(3) - math.log(1000)) / 3
        assert ft.balanced_threshold(n, k, d, a, log=True) == pytest.approx(lv)

    def test_discarded_second_moment(self):
        # samples of X_k projected onto the small eigen-directions of its covariance
        p = [0.0, 1.0, 0.0, 0.2]
        n, k, reps = 3, 8, 4000
        basis = ft.FeatureBasis.for_polynomial(n, p)
        second = ft.covariance_analytic(p, n, centered=False)
        vals, _ = ft.spectrum(second)
        delta = float(np.quantile(vals, 0.3))
        split = ft.truncate_spectrum(second, delta, n=n, d=3)
        X = np.array([feature_sum(draw_network(n, k, 17, r), p, basis) for r in range(reps)])
        proj = np.sum((X @ split.discarded_vectors) ** 2, axis=1)
        se = proj.std(ddof=1) / math.sqrt(reps)
        assert proj.mean() <= 4 * basis.dim * delta + 3 * se


class TestBounds:
    def test_sigma_upper_bound_examples(self):
        assert ft.sigma_upper_bound_rhs(1, 7, 1.0) == pytest.approx(24.0)
        assert ft.sigma_upper_bound_rhs(2, 4, 1.0) == pytest.approx(80640.0)
        assert ft.sigma_upper_bound_rhs(3, 4, 0.0) == 0.0

    def test_sigma_upper_bound_overflow_guard(self):
        assert ft.sigma_upper_bound_rhs(200, 10, 1.0) == math.inf
        assert math.isfinite(ft.sigma_upper_bound_rhs(200, 10, 1.0, log=True))

    @pytest.mark.parametrize("seed", range(8))
    def test_opnorm_below_bound(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        p = rng.standard_normal(d + 1)
        op = np.linalg.eigvalsh(ft.covariance_analytic(p, n).matrix)[-1]
        assert op <= ft.sigma_upper_bound_rhs(d, n, float(np.max(np.abs(p))))

    def test_quadratic_opnorm(self):
        assert ft.quadratic_opnorm_audit(1) == pytest.approx(2.0)
        assert ft.quadratic_opnorm_audit(2) <= 3.0
        v4, v8 = ft.quadratic_opnorm_audit(4), ft.quadratic_opnorm_audit(8)
        assert abs(v8 - v4) <= 0.1 * v4


class TestSharpness:
    def test_linear_case(self):
        q = ft.sharpness_polynomial(5, 1)
        assert ft.polynomial_variance_moments(q) == pytest.approx(1.0)

    def test_closed_form_variance(self):
        # rotating (1,..,1)/sqrt(n) onto e_1 reduces the moments to chi-square ones:
        # Var = n^-ell * n (n+2) ... (n + 4ell - 4) for the all-tuples sum
        for n, ell in [(2, 2), (3, 2), (2, 3)]:
            q = ft.sharpness_polynomial(n, ell)
            expected = math.prod(n + 2 * j for j in range(2 * ell - 1)) / n**ell
            assert ft.polynomial_variance_moments(q) == pytest.approx(expected, rel=1e-12)

    def test_ratio_between_sizes(self):
        v2 = ft.polynomial_variance_moments(ft.sharpness_polynomial(2, 2))
        v4 = ft.polynomial_variance_moments(ft.sharpness_polynomial(4, 2))
        # (n+2)(n+4)/n takes the same value at n=2 and n=4: the ratio sits on
        # the lower edge of "within a factor 2 of (4/2)^(ell-1)"
        assert v4 / v2 == pytest.approx(1.0, rel=1e-12)
        assert 2 / 2 - 1e-12 <= v4 / v2 <= 2 * 2

    def test_term_cap(self):
        with pytest.raises(ValueError):
            ft.sharpness_polynomial(20, 6, max_terms=1000)
