import numpy as np
import pytest
import scipy.linalg as sla

from physid import mechanics as mc
from physid import signals as sg

BENCH = mc.ChainSpec((1.0, 1.0, 1.0), (100.0,) * 4, rayleigh=(0.1, 0.001))


def test_benchmark_chain_matrices():
    sys = mc.build_chain(BENCH)
    K = np.array([[200.0, -100, 0], [-100, 200, -100], [0, -100, 200]])
    assert np.array_equal(sys.K, K)
    assert np.allclose(sys.D, 0.1 * np.eye(3) + 0.001 * K)
    assert sys.B_influence.tolist() == [[1.0], [0.0], [0.0]]


def test_benchmark_natural_frequencies_closed_form():
    # uniform fixed-fixed chain: w_k^2 = 2 k/m (1 - cos(k pi / (n + 1)))
    w = mc.build_chain(BENCH).natural_frequencies()
    expected = np.sqrt(200.0 * (1 - np.cos(np.arange(1, 4) * np.pi / 4)))
    assert np.allclose(w, expected, rtol=1e-12)
    assert np.allclose(w / (2 * np.pi), [1.2181, 2.2508, 2.9408], atol=1e-4)


def test_chain_without_last_anchor():
    spec = mc.ChainSpec((2.0, 1.0), (10.0, 5.0), dampings=(0.1, 0.2), include_last_anchor=False)
    sys = mc.build_chain(spec)
    assert np.array_equal(sys.K, [[15.0, -5.0], [-5.0, 5.0]])
    assert np.array_equal(sys.D, [[0.30000000000000004, -0.2], [-0.2, 0.2]])
    assert np.allclose(sys.K_norm, [[7.5, -2.5], [-5.0, 5.0]])


@pytest.mark.parametrize("spec", [
    mc.ChainSpec((1.0, -1.0), (1.0, 1.0, 1.0), rayleigh=(0, 0)),
    mc.ChainSpec((1.0, 1.0), (1.0, 1.0), rayleigh=(0, 0)),
    mc.ChainSpec((1.0,), (1.0, 1.0)),
    mc.ChainSpec((1.0,), (1.0, 1.0), dampings=(1.0, 1.0), rayleigh=(0, 0)),
    mc.ChainSpec((1.0, 1.0), (1.0, 0.0, 1.0), rayleigh=(0, 0), include_last_anchor=False),
])
def test_invalid_chains_rejected(spec):
    with pytest.raises(ValueError):
        mc.build_chain(spec)


def test_acceleration_output_is_equation_of_motion():
    sys = mc.build_chain(BENCH)
    sensors = mc.SensorConfig.acceleration(3)
    plant = mc.to_state_space(sys, sensors)
    rng = np.random.default_rng(0)
    x, u = rng.standard_normal(6), rng.standard_normal(1)
    q, v = x[:3], x[3:]
    acc = np.linalg.solve(sys.M, sys.B_influence @ u - sys.D @ v - sys.K @ q)
    assert np.allclose(plant.C @ x + plant.D @ u, acc)
    assert np.allclose((plant.A @ x + plant.B @ u)[3:], acc)


def test_zoh_matches_closed_form_integral():
    plant = mc.to_state_space(mc.build_chain(BENCH), mc.SensorConfig.acceleration(3))
    d = mc.discretize(plant, 0.01)
    assert np.allclose(d.A, sla.expm(plant.A * 0.01), atol=1e-14)
    B_ref = np.linalg.solve(plant.A, (d.A - np.eye(6)) @ plant.B)
    assert np.allclose(d.B, B_ref, atol=1e-13)
    with pytest.raises(ValueError):
        mc.discretize(plant, 0.0)


def test_undamped_free_response_conserves_energy():
    spec = mc.ChainSpec((1.0, 2.0, 0.5), (100.0, 50.0, 80.0, 30.0), rayleigh=(0.0, 0.0))
    sys = mc.build_chain(spec)
    sensors = mc.SensorConfig.acceleration(3)
    d = mc.discretize(mc.to_state_space(sys, sensors), 0.005)
    rec = mc.simulate(d, np.zeros((1, 2000)), sensors, x0=[0.1, -0.2, 0.05, 0, 0.3, 0])
    E = mc.mechanical_energy(sys, rec.x)
    assert np.ptp(E) / E[0] < 1e-10


def test_multisine_state_matches_sine_convention():
    model = sg.build_ct_periodic(0.5, None, harmonics=(1, 2, 3))
    x0 = mc.multisine_state(1.0, (1.0, 0.5, 0.2), (0.3, 1.1, 2.0), model)
    t = np.arange(100) * 0.013
    gen = np.array([(model.C_u @ sla.expm(model.A_u * tk) @ x0)[0] for tk in t])
    ref = mc.multisine((0.5, 1.0, 1.5), (1.0, 0.5, 0.2), (0.3, 1.1, 2.0), 1.0, 100, 0.013)
    assert np.allclose(gen, ref, atol=1e-12)
    with pytest.raises(ValueError):
        mc.multisine_state(0.0, (1.0,), (0.0,), model)


def test_exact_multisine_simulation_agrees_with_fine_hold():
    sys = mc.build_chain(BENCH)
    sensors = mc.SensorConfig.acceleration(3)
    model = sg.build_ct_periodic(0.5, None, harmonics=(1, 2, 3))
    x0 = mc.multisine_state(1.0, (1, 1, 1), (0.3, 1.1, 2.0), model)
    exact = mc.simulate_multisine(sys, sensors, model, x0, 400, 0.005)
    # sample-and-hold on a 50x finer grid approaches the exact samples
    fine_T = 0.005 / 50
    u_fine = mc.multisine((0.5, 1.0, 1.5), 1.0, (0.3, 1.1, 2.0), 1.0, 400 * 50, fine_T)
    held = mc.simulate_ct(sys, sensors, u_fine, fine_T)
    assert np.allclose(exact.u[0], u_fine[::50], atol=1e-12)
    err = np.abs(held.y_clean[:, ::50] - exact.y_clean).max() / np.abs(exact.y_clean).max()
    assert err < 1e-3
    assert np.allclose(exact.f_e, sys.B_influence @ exact.u)


def test_noise_level_and_seeding():
    rng = np.random.default_rng(5)
    y = np.vstack([np.sin(np.arange(200000) * 0.01), 3 * rng.standard_normal(200000)])
    noisy = mc.add_noise(y, 20.0, np.random.default_rng(1))
    snr = 10 * np.log10(np.var(y, axis=1) / np.var(noisy - y, axis=1))
    assert np.allclose(snr, 20.0, atol=0.05)
    again = mc.add_noise(y, 20.0, np.random.default_rng(1))
    assert np.array_equal(noisy, again)
    assert np.array_equal(mc.add_noise(y, None, rng), y)


def test_simulate_records_physical_force():
    sys = mc.build_chain(BENCH)
    sensors = mc.SensorConfig.acceleration(3)
    d = mc.discretize(mc.to_state_space(sys, sensors), 0.005)
    u = np.ones((1, 50))
    assert mc.simulate(d, u, sensors).f_e.shape == (0, 50)
    rec = mc.simulate(d, u, sensors, B_influence=sys.B_influence)
    assert np.array_equal(rec.f_e, sys.B_influence @ u)


def test_augment_structure():
    plant = mc.to_state_space(mc.build_chain(BENCH), mc.SensorConfig.acceleration(3))
    sig = sg.build_ct_periodic(0.5, 3)
    aug = mc.augment(plant, sig)
    assert aug.A_a.shape == (11, 11)
    assert np.array_equal(aug.A_a[6:, :6], np.zeros((5, 6)))
    assert np.allclose(aug.A_a[:6, 6:], plant.B @ sig.C_u)
    assert np.allclose(aug.C_a[:, 6:], plant.D @ sig.C_u)
    with pytest.raises(ValueError):
        mc.augment(plant, sg.build_dt_periodic(0.5, 3, 0.01))
