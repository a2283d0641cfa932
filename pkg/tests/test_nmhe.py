import numpy as np
import pytest

from asvsim.dynamics import (
    DEFAULT_GEOMETRY,
    DEFAULT_PARAMS,
    NoiseSpec,
    ZERO_NOISE,
    measure_array,
    step_rk4_array,
)
from asvsim.nmhe import (
    MeasurementBuffer,
    MheConfig,
    MheEstimator,
    default_config,
    estimate,
)

CFG = default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY)
XI = DEFAULT_PARAMS.as_array()


def simulate_window(q0, force_fn, n, noise=ZERO_NOISE, rng=None, dt=0.1):
    """Ground-truth rollout plus the matching measurement/control stream."""
    q = np.asarray(q0, dtype=float)
    truth, zs, us = [], [], []
    u_prev = np.zeros(4)
    for k in range(n):
        truth.append(q.copy())
        zs.append(measure_array(q, u_prev, noise, rng))
        us.append(u_prev.copy())
        u_prev = force_fn(k)
        q = step_rk4_array(q, u_prev, dt, XI, DEFAULT_GEOMETRY)
    return np.array(truth), np.array(zs), np.array(us)


def fill_buffer(zs, us, dt=0.1):
    buf = MeasurementBuffer(len(zs), dt)
    for k in range(len(zs)):
        buf.push(zs[k], us[k], k * dt)
    return buf


# ------------------------------------------------------------ configuration

def test_default_weights_are_inverse_variances():
    np.testing.assert_allclose(CFG.r_meas[:3], 2000.0)
    np.testing.assert_allclose(CFG.r_meas[3], 10000.0)
    np.testing.assert_allclose(CFG.r_meas[4:], 1.0)
    np.testing.assert_allclose(CFG.p_arrival, [1, 1, 1, 10, 10, 1])


def test_default_window_duration():
    assert CFG.window == 20
    assert CFG.window_seconds == pytest.approx(2.0)


def test_config_validation():
    with pytest.raises(ValueError):
        MheConfig(params=DEFAULT_PARAMS, geom=DEFAULT_GEOMETRY, window=1)
    with pytest.raises(ValueError):
        MheConfig(params=DEFAULT_PARAMS, geom=DEFAULT_GEOMETRY,
                  r_meas=np.zeros(8))


# ------------------------------------------------------------------ buffer

def test_buffer_push_grows_to_capacity():
    buf = MeasurementBuffer(3, 0.1)
    buf.push(np.zeros(8), np.zeros(4), 0.0)
    assert len(buf) == 1 and not buf.full


def test_buffer_evicts_oldest():
    buf = MeasurementBuffer(3, 0.1)
    for k in range(4):
        buf.push(np.full(8, float(k)), np.zeros(4), k * 0.1)
    assert len(buf) == 3
    t, Z, _ = buf.snapshot()
    assert t[0] == pytest.approx(0.1)
    assert Z[0, 0] == pytest.approx(1.0)


def test_buffer_rejects_out_of_order():
    buf = MeasurementBuffer(3, 0.1)
    buf.push(np.zeros(8), np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        buf.push(np.zeros(8), np.zeros(4), -0.1)
    with pytest.raises(ValueError):
        buf.push(np.zeros(8), np.zeros(4), 0.5)  # gap way off dt
    assert len(buf) == 1


# --------------------------------------------------------------- estimation

def test_noiseless_measurements_recover_truth_exactly():
    q0 = np.array([0.5, -0.3, 0.2, 0.3, 0.05, -0.1])
    force = lambda k: np.array([10.0, 8.0, 3.0, -2.0])
    truth, zs, us = simulate_window(q0, force, CFG.window)
    # zero-residual fit: consistent prior and exact measurements
    rep = estimate(fill_buffer(zs, us), truth[0], CFG)
    np.testing.assert_allclose(rep.window[-1], truth[-1], atol=1e-6)
    np.testing.assert_allclose(rep.q_hat.as_array(), truth[-1], atol=1e-6)
    # a slightly wrong prior is outvoted by the measurement stack
    rep_off = estimate(fill_buffer(zs, us), truth[0] + 0.05, CFG)
    np.testing.assert_allclose(rep_off.window[-1], truth[-1], atol=1e-3)


def test_smoothing_beats_raw_measurement_noise():
    rng = np.random.default_rng(5)
    noise = NoiseSpec(sigma_pos=0.02, sigma_psi=0.0, sigma_r=0.0, sigma_f=0.0)
    errs = []
    for _ in range(20):
        truth, zs, us = simulate_window(np.zeros(6), lambda k: np.zeros(4),
                                        CFG.window, noise, rng)
        rep = estimate(fill_buffer(zs, us), np.zeros(6), CFG)
        errs.append(rep.window[-1][:2] - truth[-1][:2])
    rms = np.sqrt(np.mean(np.square(errs)))
    assert rms < 0.02


def test_unmeasured_surge_velocity_recovered():
    # constant thrust from near-steady surge; velocities enter z only
    # through the dynamics, yet the estimate pins them down
    f = np.array([9.5, 9.5, 0.0, 0.0])  # 19 N ~ drag at 0.5 m/s
    q0 = np.array([0.0, 0.0, 0.0, 0.5, 0.0, 0.0])
    truth, zs, us = simulate_window(q0, lambda k: f, CFG.window)
    prior = truth[0].copy()
    prior[3] = 0.0  # prior knows nothing about the speed
    cfg = default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY)
    cfg.p_arrival = cfg.p_arrival.copy()
    cfg.p_arrival[3] = 1e-6  # and is not trusted about it either
    rep = estimate(fill_buffer(zs, us), prior, cfg)
    u_true = truth[-1][3]
    assert abs(rep.q_hat.u - u_true) / u_true < 0.05


def test_estimates_respect_state_bounds():
    rng = np.random.default_rng(0)
    noise = NoiseSpec(sigma_pos=0.05, sigma_psi=0.0, sigma_r=0.0, sigma_f=0.0)
    q0 = np.array([9.93, 0.0, 0.0, 0.0, 0.0, 0.0])
    truth, zs, us = simulate_window(q0, lambda k: np.zeros(4), CFG.window, noise, rng)
    assert zs[:, 0].max() > 10.0  # raw measurements do cross the bound
    cfg = default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY)
    cfg.q_max = np.array([10.0, np.inf, np.inf, 5.0, 5.0, 3.0])
    rep = estimate(fill_buffer(zs, us), q0, cfg)
    assert np.all(rep.window[:, 0] <= 10.0 + 1e-6)


def test_arrival_cost_limits():
    rng = np.random.default_rng(11)
    noise = NoiseSpec(sigma_pos=0.05, sigma_psi=0.02, sigma_r=0.01, sigma_f=0.5)
    truth, zs, us = simulate_window(np.zeros(6), lambda k: np.zeros(4),
                                    CFG.window, noise, rng)
    prior = np.array([0.5, -0.5, 0.1, 0.0, 0.0, 0.0])  # conflicts with data

    tight = default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY)
    tight.p_arrival = np.full(6, 1e8)
    rep_tight = estimate(fill_buffer(zs, us), prior, tight)
    np.testing.assert_allclose(rep_tight.window[0], prior, atol=1e-3)

    loose = default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY)
    loose.p_arrival = np.full(6, 1e-12)
    rep_loose = estimate(fill_buffer(zs, us), prior, loose)
    rep_free = estimate(fill_buffer(zs, us), np.zeros(6), loose)
    np.testing.assert_allclose(rep_loose.window[0], rep_free.window[0], atol=1e-4)


def test_estimator_bootstrap_and_streaming():
    rng = np.random.default_rng(13)
    noise = NoiseSpec(sigma_pos=0.02, sigma_psi=0.02, sigma_r=0.01, sigma_f=1.0)
    est = MheEstimator(default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY))
    q = np.array([1.0, 2.0, 0.3, 0.0, 0.0, 0.0])
    u_prev = np.zeros(4)
    errs = []
    for k in range(60):
        z = measure_array(q, u_prev, noise, rng)
        rep = est.update(z, u_prev, k * 0.1)
        assert not rep.degraded
        errs.append(np.linalg.norm(rep.q_hat.as_array()[:2] - q[:2]))
        u_prev = np.array([6.0 * np.sin(0.3 * k), 5.0, 2.0, -1.0])
        q = step_rk4_array(q, u_prev, 0.1, XI, DEFAULT_GEOMETRY)
    assert np.mean(errs[20:]) < 0.02


def test_estimator_degrades_to_dead_reckoning():
    est = MheEstimator(default_config(DEFAULT_PARAMS, DEFAULT_GEOMETRY))
    rep = est.update(np.full(8, np.nan), np.zeros(4), 0.0)
    assert rep.degraded
    assert np.all(np.isfinite(rep.q_hat.as_array()))


def test_estimate_rejects_empty_buffer():
    with pytest.raises(ValueError):
        estimate(MeasurementBuffer(5, 0.1), np.zeros(6), CFG)
