import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsgibbs import dynamics
from nlsgibbs.dynamics import IntegratorConfig, evolve, step_strang
from nlsgibbs.fourier_state import FourierState, ModelParams, random_state

import oracles

CUBIC = ModelParams((1.0,), 16.0, 6)
LINEAR = ModelParams((0.0,), 1.0, 6, check=False)


@pytest.mark.parametrize("c", [(1.0,), (1.0, 0.5)])
def test_plane_wave_phase(c):
    A = 1.0
    p = ModelParams(c, 1.0, 4)
    traj = evolve(FourierState.from_modes(4, {1: A}), IntegratorConfig(dt=1e-3, t_end=1.0), p,
                  keep_states=True)
    exact = A * np.exp(-1j * oracles.plane_wave_frequency(A, c))
    assert abs(traj.final[4 + 1] - exact) < 1e-8


def test_plane_wave_phase_error_law():
    # midpoint on u' = -i f(rho) u: the Cayley map lags by theta^3/12 per step and
    # |(u + u')/2|^2 = rho cos^2(theta/2) lowers f by rho f'(rho) theta^2/4
    c = (1.0, 0.5)
    A = 1.2 + 0.5j
    p = ModelParams(c, 1.0, 4)
    rho = abs(A) ** 2 / (2 * math.pi)
    f = oracles.plane_wave_frequency(A, c) - 1.0
    rho_df = c[0] * rho + 2 * c[1] * rho**2
    for dt in (1e-3, 5e-4):
        final = evolve(FourierState.from_modes(4, {1: A}), IntegratorConfig(dt=dt, t_end=1.0), p,
                       keep_states=True).final[4 + 1]
        lag = np.angle(final / (A * np.exp(-1j * (1 + f))))
        assert lag == pytest.approx(dt**2 * (f**3 / 12 + f * f * rho_df / 4), rel=0.01)


def test_linear_step_is_exact(rng):
    psi = random_state(6, rng)
    dt = 0.01
    k = np.arange(-6, 7)
    np.testing.assert_allclose(step_strang(psi, dt, LINEAR), np.exp(-1j * k * k * dt) * psi,
                               rtol=0, atol=1e-15)


def test_l2_drift_over_many_steps(rng):
    psi = random_state(6, rng, scale=0.5)
    traj = evolve(psi, IntegratorConfig(dt=1e-3, t_end=10.0, observe_every=100), CUBIC)
    assert len(traj.times) == 101
    assert dynamics.conservation_report(traj).l2_drift < 1e-12


def test_zero_horizon_single_snapshot(rng):
    psi = random_state(4, rng)
    traj = evolve(psi, IntegratorConfig(dt=1e-3, t_end=0.0), CUBIC, keep_states=True)
    assert traj.times.tolist() == [0.0]
    np.testing.assert_array_equal(traj.final, psi)


def test_reversibility(rng):
    psi = random_state(6, rng)
    fwd = evolve(psi, IntegratorConfig(dt=1e-3, t_end=0.5), CUBIC, keep_states=True).final
    back = evolve(fwd, IntegratorConfig(dt=-1e-3, t_end=0.5), CUBIC, keep_states=True).final
    assert np.max(np.abs(back - psi)) < 1e-9


def test_second_order(rng):
    psi = random_state(4, rng)
    p = ModelParams((1.0, 0.5), 1.0, 4)

    def final(dt):
        return evolve(psi, IntegratorConfig(dt=dt, t_end=0.5, observe_every=10**6), p,
                      keep_states=True).final

    ref = final(1e-4)
    dts = np.array([2e-3, 1e-3, 5e-4])
    err = [np.max(np.abs(final(dt) - ref)) for dt in dts]
    order = np.polyfit(np.log(dts), np.log(err), 1)[0]
    assert order >= 1.9


def test_matches_repeated_steps(rng):
    psi = random_state(4, rng)
    x = psi
    for _ in range(20):
        x = step_strang(x, 1e-3, CUBIC)
    traj = evolve(psi, IntegratorConfig(dt=1e-3, t_end=0.02), CUBIC, keep_states=True)
    np.testing.assert_allclose(traj.final, x, atol=1e-13)


def test_batch_matches_single(rng):
    batch = random_state(4, rng, size=(3,))
    cfg = IntegratorConfig(dt=1e-3, t_end=0.05)
    together = evolve(batch, cfg, CUBIC, keep_states=True).final
    for i in range(3):
        alone = evolve(batch[i], cfg, CUBIC, keep_states=True).final
        np.testing.assert_allclose(together[i], alone, atol=1e-14)


def test_conservation_linear_and_generic(rng):
    psi = random_state(6, rng)
    lin = dynamics.conservation_report(evolve(psi, IntegratorConfig(dt=1e-3, t_end=1.0), LINEAR))
    assert lin.H_drift < 1e-14
    rep = dynamics.conservation_report(evolve(psi, IntegratorConfig(dt=1e-3, t_end=1.0), CUBIC))
    assert rep.H_drift < 1e-6
    assert rep.l2_drift < 1e-12
    assert rep.momentum_drift < 1e-12


@settings(max_examples=10, deadline=None)
@given(k=st.integers(-4, 4), A=st.complex_numbers(max_magnitude=2.0))
def test_single_mode_action_is_steady(k, A):
    p = ModelParams((1.0,), 1.0, 4)
    traj = evolve(FourierState.from_modes(4, {k: A}), IntegratorConfig(dt=1e-2, t_end=0.2), p,
                  observables=dynamics.action_observables([k]))
    I = traj.observables[f"action_{k}"]
    assert np.max(np.abs(I - abs(A) ** 2)) <= 1e-13 * max(1.0, abs(A) ** 2)


def test_nan_policies(rng):
    batch = random_state(3, rng, size=(2,))
    batch[1, 0] = np.nan
    cfg = IntegratorConfig(dt=1e-3, t_end=0.003)
    with pytest.raises(FloatingPointError):
        evolve(batch, cfg, CUBIC)
    traj = evolve(batch, cfg, CUBIC, nan_policy="flag")
    assert traj.failed.tolist() == [False, True]
    assert np.all(np.isfinite(traj.observables["H"][:, 0]))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="rk4")
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=-1)
    with pytest.raises(ValueError):
        IntegratorConfig(observe_every=0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError, match="exceeds pi"):
        IntegratorConfig(dt=0.1).resolve_dt(16)
    assert IntegratorConfig().resolve_dt(16) == pytest.approx(0.1 / 256)


def test_trajectory_csv(tmp_path, rng):
    psi = random_state(3, rng)
    obs = dynamics.action_observables(range(-2, 3))
    traj = evolve(psi, IntegratorConfig(dt=1e-3, t_end=0.01, observe_every=5), CUBIC, obs)
    path = tmp_path / "traj.csv"
    dynamics.write_trajectory_csv(path, traj, 2, 3)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "H", "l2"] + [f"action_{k}" for k in range(-2, 3)]
    assert len(rows) == 4
    assert float(rows[-1][0]) == pytest.approx(0.01)
    assert float(rows[1][3]) == pytest.approx(abs(psi[1]) ** 2)


def test_phase_equivariance(rng):
    psi = random_state(4, rng)
    cfg = IntegratorConfig(dt=1e-3, t_end=0.05)
    a = evolve(psi, cfg, CUBIC, keep_states=True).final
    b = evolve(np.exp(0.7j) * psi, cfg, CUBIC, keep_states=True).final
    np.testing.assert_allclose(b, np.exp(0.7j) * a, atol=1e-13)
    assert math.isclose(np.abs(a[0]) ** 2, np.abs(b[0]) ** 2, rel_tol=1e-12)
