import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from physid import ssi

A_TRUE = np.array([[0.9, 0.3, 0.0], [-0.3, 0.9, 0.0], [0.0, 0.0, 0.5]])
C_TRUE = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, -0.5]])
K_TRUE = np.array([[0.4, 0.1], [0.0, 0.3], [0.2, -0.1]])
RE_TRUE = np.array([[1.0, 0.2], [0.2, 0.5]])


def _covariance_realization(A=A_TRUE, C=C_TRUE, K=K_TRUE, Re=RE_TRUE):
    Sigma = sla.solve_discrete_lyapunov(A, K @ Re @ K.T)
    G = A @ Sigma @ C.T + K @ Re
    L0 = C @ Sigma @ C.T + Re
    return ssi.StochasticRealization(
        A, C, G, L0, np.zeros(C.shape[0]), np.array([]), A.shape[0],
        Q=K @ Re @ K.T, R=Re, S=K @ Re, Sigma=Sigma, diagnostics={"noise_floor_rel": 1e-12})


def _innovation_data(N, seed, x0=None):
    rng = np.random.default_rng(seed)
    e = np.linalg.cholesky(RE_TRUE) @ rng.standard_normal((2, N))
    x = np.zeros(3) if x0 is None else np.asarray(x0, float)
    y = np.empty((2, N))
    for k in range(N):
        y[:, k] = C_TRUE @ x + e[:, k]
        x = A_TRUE @ x + K_TRUE @ e[:, k]
    return y, e


def test_block_hankel_layout():
    y = np.arange(20.0).reshape(2, 10)
    h = ssi.block_hankel(y, 2, step=2)
    assert h.j == 10 - 3 * 2
    assert h.H.shape == (8, 4)
    # block row b starts at sample 2 b
    assert h.H[:, 0].tolist() == [0, 10, 2, 12, 4, 14, 6, 16]
    assert np.array_equal(h.Y_f, h.H[4:])
    assert np.array_equal(h.Y_p_plus, h.H[:6])
    with pytest.raises(ValueError):
        ssi.block_hankel(y, 3, step=2)


def test_projection_matches_normal_equations():
    y, _ = _innovation_data(600, 0)
    h = ssi.block_hankel(y, 3)
    proj = ssi.project(h, keep_q=True)
    Yp, Yf = h.Y_p, h.Y_f
    ref = Yf @ Yp.T @ np.linalg.solve(Yp @ Yp.T, Yp)
    assert np.allclose(proj.O_i, ref, atol=1e-9 * np.abs(ref).max())
    Ypp, Yfm = h.Y_p_plus, h.Y_f_minus
    ref_m = Yfm @ Ypp.T @ np.linalg.solve(Ypp @ Ypp.T, Ypp)
    assert np.allclose(proj.O_i_minus, ref_m, atol=1e-9 * np.abs(ref_m).max())
    with pytest.raises(ValueError):
        ssi.project(h).O_i


def test_rank_deficient_past_warns():
    t = np.arange(500)
    y = np.vstack([np.sin(0.3 * t), 2 * np.sin(0.3 * t)])
    with pytest.warns(ssi.RankDeficiencyWarning):
        proj = ssi.project(ssi.block_hankel(y, 3))
    assert proj.rank_deficient and proj.past_rank == 2


def test_gap_order_and_default_rows():
    assert ssi.gap_order([10, 9, 8, 1e-6, 1e-7]) == 3
    assert ssi.default_block_rows(7, 3) == 6
    with pytest.raises(ValueError):
        ssi.weighted_svd(np.eye(3), order_hint=5)


@pytest.mark.parametrize("form", ["covariance", "error"])
def test_riccati_recovers_innovation_gain(form):
    km = ssi.solve_riccati(_covariance_realization(), tol=1e-14, form=form)
    assert km.converged
    assert np.allclose(km.K_f, K_TRUE, atol=1e-8)
    assert np.allclose(km.innovation_cov, RE_TRUE, atol=1e-8)
    Sigma = sla.solve_discrete_lyapunov(A_TRUE, K_TRUE @ RE_TRUE @ K_TRUE.T)
    assert np.allclose(km.P, Sigma, atol=1e-8)


def test_riccati_residual_small():
    km = ssi.solve_riccati(_covariance_realization(), tol=1e-14)
    re = _covariance_realization()
    assert ssi.riccati_residual(km.P, re.A_d, re.C_d, re.G, re.Lambda0) <= 1e-10
    with pytest.raises(ValueError):
        ssi.solve_riccati(re, form="bogus")


def test_riccati_rejects_non_positive_real_sequence():
    re = _covariance_realization()
    bad = ssi.StochasticRealization(re.A_d, re.C_d, 50 * re.G, re.Lambda0, re.d_offset,
                                    re.singular_values, 3)
    with pytest.raises(ssi.RiccatiError):
        ssi.solve_riccati(bad)
    with pytest.raises(ssi.RiccatiError):
        ssi.solve_riccati(bad, form="error")


def test_kalman_states_with_true_gain_recover_innovations():
    x0 = np.array([0.5, -1.0, 2.0])
    y, e = _innovation_data(300, 1, x0)
    km = ssi.KalmanModel(A_TRUE, C_TRUE, K_TRUE, np.zeros((3, 3)), RE_TRUE)
    est = ssi.kalman_states(km, y, x0=x0)
    assert np.allclose(est.innovations, e, atol=1e-12)
    assert est.burn_in == ssi.recommended_burn_in(km, 300)


def test_identify_stochastic_model_eigenvalues():
    y, _ = _innovation_data(80000, 2)
    re = ssi.identify(y, 3, i=10)
    got = np.sort_complex(np.linalg.eigvals(re.A_d))
    want = np.sort_complex(np.linalg.eigvals(A_TRUE))
    assert np.abs(got - want).max() < 0.03
    km = ssi.solve_riccati(re)
    assert np.allclose(km.innovation_cov, RE_TRUE, atol=0.05)


def test_identify_free_response_exact_and_lag_step():
    # a damped two-tone free response is an exact order-4 realization
    k = np.arange(3000)
    lam = [0.99 * np.exp(0.05j), 0.97 * np.exp(0.3j)]
    y = np.vstack([np.real(2 * lam[0] ** k + lam[1] ** k), np.real(1j * lam[0] ** k - lam[1] ** k)])
    want = np.sort_complex(np.array([lam[0], lam[0].conjugate(), lam[1], lam[1].conjugate()]))
    re = ssi.identify(y, 4, i=5)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(re.A_d)), want, atol=1e-8)
    re3 = ssi.identify(y, 4, i=5, step=3, T_s=0.1)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(re3.A_d)), np.sort_complex(want ** 3), atol=1e-8)
    assert re3.T_s == pytest.approx(0.3)


def test_pe_order_white_constant_sine():
    rng = np.random.default_rng(0)
    N = 4000
    assert ssi.pe_order(rng.standard_normal(N), 8).rank == 8
    assert ssi.pe_order(np.ones(N), 8).rank == 1
    sine = np.sin(2 * np.pi * 0.01 * np.arange(N))
    assert ssi.pe_order(sine, 8).rank == 2
    ms = 1 + sum(np.sin(2 * np.pi * 0.03 * h * np.arange(N) + h) for h in (1, 2, 3))
    res = ssi.pe_order(ms, 10)
    assert res.rank == 7 and not res.satisfied and res.required == 10


def test_identify_warnings_are_collected():
    t = np.arange(2000)
    y = np.vstack([np.sin(0.3 * t), 2 * np.sin(0.3 * t)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        re = ssi.identify(y, 2, i=3)
    assert re.diagnostics["warnings"]
    assert np.allclose(np.sort(np.angle(np.linalg.eigvals(re.A_d))), [-0.3, 0.3], atol=1e-8)
