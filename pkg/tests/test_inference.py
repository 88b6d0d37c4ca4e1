import math

import numpy as np
import pytest

from ctsir.inference import (DetectionStatistics, InferenceError, QuadraticParametrization,
                             closed_form_from_statistics, consistency_experiment, contrast,
                             detection_statistics, estimates_from_totals, fisher_information,
                             fit_closed_form, fit_numeric, likelihood_from_statistics,
                             log_likelihood, phi, rmse_slope)
from ctsir.limit import LimitSolution, solve_limit_exponential_reduction
from ctsir.model import (Constant, Exponential, Indicator, InfectionRate, ModelSpec,
                         TracingRate)
from ctsir.simulator import (TOTAL_COLUMNS, EventLog, SimulationConfig, ensemble, simulate)


def model_spec(model="A", lam3=0.2, n=1000, psi=Exponential(0.7)):
    return ModelSpec(1.0, 0.5, 0.3, 0.375, InfectionRate("mass_action", 1.5),
                     TracingRate(model, lam3), psi, n=n)


def simulated_log(model="A", n=1000, seed=1, psi=Exponential(0.7), horizon=5.0):
    spec = model_spec(model, n=n, psi=psi)
    return simulate(SimulationConfig(spec, S0=2 * n, I0=n // 10, horizon=horizon, seed=seed))


def handmade_log(t, event, I0, horizon, psi=Constant(1.0), n=1):
    event = np.asarray(event, dtype=np.int8)
    I = I0 + np.cumsum(event == 2) - np.cumsum(event >= 3)
    R = np.cumsum((event == 3) | (event == 4))
    return EventLog(n=n, S0=0, I0=I0, horizon=horizon, t=np.asarray(t, dtype=float),
                    event=event, S=np.zeros(len(t), dtype=np.int64), I=I, R_count=R,
                    r_psi_pre=np.full(len(t), np.nan), psi=psi)


def test_phi():
    assert phi(2.0) == pytest.approx(0.193147, abs=1e-6)
    assert phi(1.0) == 0.0
    x = np.linspace(0.05, 20, 1000)
    assert np.all(phi(x[np.abs(x - 1) > 1e-9]) > 0)


def test_log_likelihood_example():
    log = handmade_log([2.0], [3], I0=1, horizon=2.0)
    assert log_likelihood(log, (0.5, 0.0), "C") == pytest.approx(math.log(0.5) - 1.0, abs=1e-12)
    assert log_likelihood(log, (0.5, 0.0), "C") == pytest.approx(-1.693147, abs=1e-6)


def test_log_likelihood_without_events():
    log = handmade_log([], [], I0=3, horizon=2.0)
    assert log_likelihood(log, (0.4, 0.7), "A") == pytest.approx(-0.4 * 6, abs=1e-12)


def test_zero_hazard_gives_minus_infinity():
    log = handmade_log([0.5], [4], I0=2, horizon=1.0)  # traced with an empty cohort
    with pytest.warns(RuntimeWarning, match="zero hazard"):
        assert log_likelihood(log, (0.4, 0.7), "A") == -math.inf


def test_closed_form_examples():
    res = closed_form_from_statistics(DetectionStatistics(1, "A", 3, 2, 6.0, 4.0, 0.0))
    assert res.lambda2 == 0.5
    assert res.lambda3 == 0.5
    assert res.fisher[1, 1] == pytest.approx(8.0)
    assert res.std[1] == pytest.approx(math.sqrt(1 / 8))
    assert res.fisher[0, 1] == res.fisher[1, 0] == 0.0


def test_closed_form_degenerate_and_inconsistent():
    res = closed_form_from_statistics(DetectionStatistics(10, "C", 4, 0, 6.0, 2.0, 0.0))
    assert res.degenerate == (False, True) and res.lambda3 == 0.0
    assert math.isnan(res.std[1])
    with pytest.raises(InferenceError):
        closed_form_from_statistics(DetectionStatistics(10, "C", 4, 3, 6.0, 0.0, 0.0))


@pytest.mark.parametrize("model", "ABC")
def test_newton_agrees_with_closed_form(model):
    log = simulated_log(model, n=200, seed=3)
    a = fit_closed_form(log, model)
    b = fit_numeric(log, model)
    assert a.K3 > 0 and a.K4 > 0
    assert np.allclose(b.theta, a.theta, rtol=1e-8, atol=0)
    assert np.allclose(b.std, a.std, rtol=1e-6)
    assert b.loglik == pytest.approx(a.loglik, rel=1e-12)
    again = fit_numeric(log, model, theta_init=a.theta)
    assert again.iterations <= 1


def test_quadratic_parametrization():
    log = simulated_log("C", n=200, seed=4)
    st = detection_statistics(log, "C")
    par = QuadraticParametrization(0.5, 2.0)
    res = fit_numeric(st, theta_init=[1.0], parametrization=par)
    assert res.theta[0] == pytest.approx(par.stationary_point(st), rel=1e-10)


@pytest.mark.parametrize("model", "ABC")
def test_closed_form_is_argmax(model):
    for seed in range(3):
        log = simulated_log(model, n=100, seed=seed)
        st = detection_statistics(log, model)
        fit = closed_form_from_statistics(st)
        best = likelihood_from_statistics(st, fit.theta)
        for k in range(2):
            for sgn in (-1, 1):
                th = fit.theta.copy()
                th[k] *= 1 + sgn * 1e-3
                assert likelihood_from_statistics(st, th) < best


def test_path_integrals_reused_from_simulation():
    log = simulated_log("B", n=100, seed=2)
    st = detection_statistics(log, "B")
    assert st.integrals == log.integrals
    # recomputing from the log alone agrees
    copy = EventLog(log.n, log.S0, log.I0, log.horizon, log.t, log.event, log.S, log.I,
                    log.R_count, np.full(len(log), np.nan), log.psi)
    st2 = detection_statistics(copy, "B")
    assert st2.D == pytest.approx(st.D, rel=1e-10)
    assert st2.log_const == pytest.approx(st.log_const, rel=1e-10)


@pytest.mark.parametrize("psi", [Exponential(0.7), Indicator(1.5)])
def test_scale_equivariance(psi):
    alpha = 2.5
    log = simulated_log("A", n=100, seed=6, psi=psi)
    fit = fit_closed_form(log, "A")
    scaled_psi = Exponential(psi.c / alpha) if isinstance(psi, Exponential) \
        else Indicator(psi.tau * alpha)
    slog = EventLog(log.n, log.S0, log.I0, log.horizon * alpha, log.t * alpha, log.event,
                    log.S, log.I, log.R_count, np.full(len(log), np.nan), scaled_psi)
    sfit = fit_closed_form(slog, "A")
    assert np.allclose(sfit.theta, fit.theta / alpha, rtol=1e-9)


def test_contrast_zero_and_positive():
    spec = model_spec("A", n=1)
    sol = solve_limit_exponential_reduction(spec, 2.0, 0.1, 5.0, 1e-2)
    ts = np.array([0.375, 0.2])
    assert abs(contrast(ts, ts, sol, "A")) <= 1e-12
    assert contrast((0.75, 0.2), ts, sol, "A") > 0
    assert contrast((0.375, 0.05), ts, sol, "A") > 0
    # the first term is int lambda2* i dt * Phi(theta2*/theta2)
    from scipy import integrate

    k = contrast((0.75, 0.2), ts, sol, "A")
    assert k == pytest.approx(0.375 * integrate.trapezoid(sol.i, sol.t) * phi(0.5), rel=1e-10)


def constant_limit(T=4.0, h=0.01):
    t = h * np.arange(int(round(T / h)) + 1)
    one = np.ones_like(t)
    spec = model_spec("A", lam3=0.5, n=1, psi=Exponential(1.0))
    return LimitSolution(spec, h, t, one, one, one, one, t.copy(), 1.0, 1.0)


def test_fisher_information_examples():
    F = fisher_information((0.25, 0.5), constant_limit(), "A")
    assert F[1, 1] == pytest.approx(8.0, rel=1e-12)
    assert F[0, 0] == pytest.approx(16.0, rel=1e-12)
    assert F[0, 1] == F[1, 0] == 0.0
    for model in "ABC":
        sol = solve_limit_exponential_reduction(model_spec(model, n=1), 2.0, 0.1, 5.0, 1e-2)
        F = fisher_information((0.375, 0.2), sol, model)
        assert F[0, 1] == 0.0 and np.all(np.linalg.eigvalsh(F) > 0)


def test_fisher_matches_monte_carlo_information():
    n, M = 1000, 200
    spec = model_spec("A", n=n)
    ens = ensemble(SimulationConfig(spec, 2 * n, n // 10, 5.0, seed=77), M, [5.0])
    col = {c: k for k, c in enumerate(TOTAL_COLUMNS)}
    K = ens.totals[:, [col["N3"], col["N4"]]]
    # observed information per unit n is K / (n theta^2) for the natural parametrization
    emp = K.mean(axis=0) / (n * np.array([0.375, 0.2]) ** 2)
    sol = solve_limit_exponential_reduction(spec, 2.0, 0.1, 5.0, 1e-3)
    F = fisher_information((0.375, 0.2), sol, "A")
    assert np.allclose(emp, np.diag(F), rtol=0.10)


def test_estimates_from_totals_match_fits():
    spec = model_spec("B", n=100)
    cfg = SimulationConfig(spec, 200, 10, 5.0, seed=9)
    ens = ensemble(cfg, 3, [5.0])
    th, sd, ok = estimates_from_totals(ens.totals, "B", 100)
    log = simulate(cfg)  # replica 0
    fit = fit_closed_form(log, "B")
    assert np.allclose(th[0], fit.theta, rtol=1e-12)
    assert np.allclose(sd[0], fit.std, rtol=1e-12)


def test_consistency_experiment_structure():
    rows = consistency_experiment(model_spec("A"), 2.0, 0.1, 5.0, [100, 400], 40, seed=0)
    assert [r.n for r in rows] == [100, 400]
    assert all(r.replicas + r.excluded == 40 for r in rows)
    assert rmse_slope(rows).shape == (2,)
    assert rows[1].mean_counts[0] > rows[0].mean_counts[0]


def test_fit_result_json_fields():
    log = simulated_log("C", n=100, seed=1)
    d = fit_closed_form(log, "C").to_dict()
    for key in ("lambda2", "lambda3", "std_lambda2", "std_lambda3", "fisher", "loglik", "K3",
                "K4", "integrals", "model"):
        assert key in d
    lo, hi = fit_closed_form(log, "C").confidence_interval().T
    assert np.all(lo < hi)
