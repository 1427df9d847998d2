import numpy as np
import pytest

import cml_lab as cl


@pytest.fixture(scope="module")
def doubling_L(doubling, doubling_eigen_k0):
    return cl.ulam_matrix("L", 0, 256, doubling, eigen=doubling_eigen_k0)


@pytest.fixture(scope="module")
def perturbed_L(perturbed, perturbed_eigen_k0):
    return cl.ulam_matrix("L", 0, 256, perturbed, eigen=perturbed_eigen_k0)


class TestSpectralGap:
    def test_leading_eigenvalue_is_one(self, perturbed_L):
        rep = cl.spectral_gap(perturbed_L)
        assert rep.lambda1 == pytest.approx(1.0, abs=1e-10)
        assert rep.gap == pytest.approx(1.0 - rep.lambda2_modulus)

    def test_doubling_chain_mixes_in_finitely_many_steps(self, doubling_L):
        # on 2^8 aligned cells the doubling chain reaches uniform exactly
        # after 8 steps, so the discrete matrix has no genuine second
        # eigenvalue: the rest of the spectrum collapses to (near) zero
        rep = cl.spectral_gap(doubling_L)
        assert rep.lambda2_modulus < 0.05
        x = cl.node_coordinate().on_array(doubling_L.grid.reps(), 0)
        v = x - x.mean()
        for _ in range(8):
            v = doubling_L.matrix @ v
        assert np.max(np.abs(v)) < 1e-12

    def test_second_eigenvalue_stable_under_refinement(self, perturbed, metric):
        pot = cl.srb_potential(perturbed, max_k=0, metric=metric)
        mods = []
        for n_bins in (256, 1024):
            p = cl.ulam_matrix("P", 0, n_bins, perturbed, potential=pot)
            e = cl.leading_eigenpair(p)
            l_op = cl.ulam_matrix("L", 0, n_bins, perturbed, eigen=e)
            mods.append(cl.spectral_gap(l_op).lambda2_modulus)
        assert abs(mods[0] - mods[1]) < 0.02

    def test_rejects_raw_kind(self, perturbed_eigen_k0):
        with pytest.raises(ValueError):
            cl.spectral_gap(perturbed_eigen_k0.operator)


class TestStationaryDistribution:
    def test_matches_eigen_measure(self, perturbed_L, perturbed_eigen_k0):
        nu = cl.stationary_distribution(perturbed_L)
        assert np.max(np.abs(nu - perturbed_eigen_k0.mu)) < 1e-10

    def test_is_fixed_by_adjoint(self, doubling_L):
        nu = cl.stationary_distribution(doubling_L)
        assert np.max(np.abs(doubling_L.matrix.T @ nu - nu)) < 1e-12


class TestCorrelations:
    def test_doubling_coordinate_decay_closed_form(self, doubling_L):
        # the continuum covariance 2^-n/12 picks up the exact finite-grid
        # correction: C_n = (2^-n - 2^n/N^2)/12 on N aligned cells
        c = cl.operator_correlation(
            cl.node_coordinate(), cl.node_coordinate(), doubling_L, 8
        )
        n = np.arange(9)
        big_n = doubling_L.n_cells
        expected = (2.0 ** -n - 2.0 ** n / big_n ** 2) / 12.0
        assert np.max(np.abs(c - expected)) < 1e-12

    def test_constant_observable_vanishes(self, perturbed_L):
        c = cl.operator_correlation(
            cl.constant_potential(3.0), cl.constant_potential(3.0), perturbed_L, 5
        )
        assert np.max(np.abs(c)) < 1e-12

    def test_lag_zero_is_covariance(self, perturbed_L):
        phi = cl.node_coordinate()
        nu = cl.stationary_distribution(perturbed_L)
        c = cl.operator_correlation(phi, phi, perturbed_L, 0, nu=nu)
        x = phi.on_array(perturbed_L.grid.reps(), 0)
        mean = float(nu @ x)
        assert c[0] == pytest.approx(float(nu @ (x - mean) ** 2), abs=1e-14)

    def test_fitted_decay_matches_gap(self, perturbed_L):
        # log-linear fit on operator correlations recovers |lambda_2|
        c = cl.operator_correlation(
            cl.node_coordinate(), cl.node_coordinate(), perturbed_L, 20
        )
        lags = np.arange(5, 21)
        slope = np.polyfit(lags, np.log(np.abs(c[5:])), 1)[0]
        lam2 = cl.spectral_gap(perturbed_L).lambda2_modulus
        assert np.exp(slope) == pytest.approx(lam2, abs=0.02)


class TestTwistedOperators:
    def test_zero_twist_is_the_base(self, perturbed_L):
        tw = cl.twisted_matrix(perturbed_L, cl.node_coordinate(), 0.0)
        diff = (tw.matrix - perturbed_L.matrix.astype(complex)).tocoo()
        assert diff.nnz == 0

    def test_entrywise_modulus_is_the_base(self, perturbed_L):
        tw = cl.twisted_matrix(perturbed_L, cl.node_coordinate(), 0.1)
        assert np.allclose(
            np.abs(tw.matrix.toarray()), perturbed_L.matrix.toarray(), atol=1e-14
        )

    def test_opposite_twists_are_conjugate(self, perturbed_L):
        phi = cl.node_coordinate()
        a = cl.twisted_matrix(perturbed_L, phi, 0.1).matrix
        b = cl.twisted_matrix(perturbed_L, phi, -0.1).matrix
        assert np.allclose(a.toarray(), np.conj(b.toarray()), atol=1e-15)

    def test_bound_holds_on_small_twists(self, perturbed_L, perturbed_eigen_k0, metric):
        rep = cl.check_twisted_bound(
            perturbed_L,
            cl.node_coordinate(),
            cl.node_coordinate(),
            t_grid=[0.0, 0.05, 0.1, 0.2],
            n_max=8,
            m=metric,
            c6=1.0,
            ce=1.0,
        )
        assert rep.all_ok
        t0 = rep.rows[0]
        assert t0.sup_norm_max == pytest.approx(1.0, abs=1e-12)

    def test_large_twist_rejected(self, perturbed_L, metric):
        with pytest.raises(ValueError):
            cl.check_twisted_bound(
                perturbed_L, cl.node_coordinate(), cl.node_coordinate(),
                t_grid=[0.5], n_max=2, m=metric, c6=1.0, ce=1.0,
            )


class TestVariance:
    def test_doubling_green_kubo_closed_form(self, doubling_L):
        # continuum value C_0 + 2 sum C_n = 1/12 + 2/12 = 1/4; the finite
        # grid subtracts the exact aliasing corrections summed over the
        # 8-step mixing horizon
        sigma2 = cl.variance_green_kubo(cl.node_coordinate(), doubling_L)
        big_n = doubling_L.n_cells
        ns = np.arange(1, 9)
        expected = (
            (1.0 - 1.0 / big_n ** 2)
            + 2.0 * np.sum(2.0 ** -ns - 2.0 ** ns / big_n ** 2)
        ) / 12.0
        assert sigma2 == pytest.approx(expected, abs=1e-12)
        assert sigma2 == pytest.approx(0.25, abs=0.01)

    def test_constant_observable_zero_variance(self, doubling_L):
        assert cl.variance_green_kubo(cl.constant_potential(2.0), doubling_L) == 0.0

    def test_curvature_cross_check(self, perturbed_L):
        phi = cl.node_coordinate()
        gk = cl.variance_green_kubo(phi, perturbed_L)
        curv = cl.variance_from_twisted_curvature(perturbed_L, phi)
        assert abs(curv - gk) / gk < 0.05

    def test_grid_doubling_invariance(self, perturbed, metric):
        phi = cl.node_coordinate()
        vals = []
        for n_bins in (256, 512):
            pot = cl.srb_potential(perturbed, max_k=0, metric=metric)
            p = cl.ulam_matrix("P", 0, n_bins, perturbed, potential=pot)
            e = cl.leading_eigenpair(p)
            l_op = cl.ulam_matrix("L", 0, n_bins, perturbed, eigen=e)
            vals.append(cl.variance_green_kubo(phi, l_op))
        assert abs(vals[0] - vals[1]) / vals[0] < 0.05


class TestCoupledSpectrum:
    def test_coupled_operator_has_a_gap(self, coupled_op_k1):
        rep = cl.spectral_gap(coupled_op_k1)
        assert rep.lambda1 == pytest.approx(1.0, abs=1e-8)
        assert rep.lambda2_modulus < 0.9
