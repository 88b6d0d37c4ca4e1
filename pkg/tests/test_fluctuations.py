import math

import numpy as np
import pytest

from ctsir.fluctuations import (bracket_rates, clt_experiment, covariance_ode, drift_matrix,
                                drift_matrix_fd, martingale_bracket, normality_z)
from ctsir.limit import solve_limit, solve_limit_exponential_reduction
from ctsir.model import (Constant, Exponential, GammaDensity, InfectionRate, ModelSpec,
                         TracingRate)


def spec(lambda0=1.0, mu0=1.0, mu1=0.3, lambda2=0.375, lambda1=0.0, lambda3=0.0, model="A",
         c=0.7, infection="mass_action"):
    return ModelSpec(lambda0, mu0, mu1, lambda2, InfectionRate(infection, lambda1),
                     TracingRate(model, lambda3), Exponential(c))


def test_bracket_susceptible_equilibrium():
    sol = solve_limit_exponential_reduction(spec(), 1.0, 0.0, 1.0, 1e-2)
    B = bracket_rates(sol)
    assert np.allclose(B[:, 0, 0], 2.0, atol=1e-12)


def test_bracket_structure():
    s = spec(lambda0=1.0, mu0=0.5, lambda1=1.5, lambda3=0.2, model="C")
    sol = solve_limit_exponential_reduction(s, 2.0, 0.1, 2.0, 1e-2)
    B = bracket_rates(sol)
    assert np.all(B[:, 0, 2] == 0) and np.all(B[:, 2, 0] == 0)
    assert np.allclose(B, np.transpose(B, (0, 2, 1)))
    Bf = bracket_rates(sol, Exponential(2.0))
    assert np.allclose(Bf[:, 2, 2], B[:, 2, 2])  # f(0) = 1 in both
    # f(0) = 0 silences the r-bracket
    Bg = bracket_rates(sol, GammaDensity(2.0, 1.0))
    assert np.all(Bg[:, 2, 2] == 0) and np.all(Bg[:, 1, 2] == 0)
    # explicit values at one grid point
    j = 50
    i, m, sv = sol.i[j], sol.m[j], sol.s[j]
    l1, l3 = 1.5 * sv * i, 0.2 * i * m
    assert B[j, 1, 1] == pytest.approx(l1 + (0.3 + 0.375) * i + l3, rel=1e-13)
    assert B[j, 0, 1] == pytest.approx(-l1, rel=1e-13)
    assert B[j, 1, 2] == pytest.approx(-(0.375 * i + l3), rel=1e-13)


def test_decoupled_susceptible_variance():
    sol = solve_limit_exponential_reduction(spec(), 1.0, 0.0, 3.0, 1e-3)
    cov = covariance_ode(sol)
    t = sol.t
    assert np.max(np.abs(cov.sigma[:, 0, 0] - (1 - np.exp(-2 * t)))) < 1e-6
    long = covariance_ode(solve_limit_exponential_reduction(spec(), 1.0, 0.0, 20.0, 1e-2))
    assert long.sigma[-1, 0, 0] == pytest.approx(1.0, abs=1e-6)


def test_immigration_death_stationary_variance():
    s = spec(lambda0=2.0, mu0=1.0, mu1=0.0, lambda2=0.0)
    cov = covariance_ode(solve_limit_exponential_reduction(s, 2.0, 0.0, 25.0, 1e-2))
    assert cov.sigma[-1, 0, 0] == pytest.approx(2.0, abs=1e-6)


def test_zero_noise_gives_zero_covariance():
    s = ModelSpec(0.0, 0.0, 0.0, 0.0, InfectionRate("mass_action", 0.0),
                  TracingRate("A", 0.0), Exponential(1.0))
    cov = covariance_ode(solve_limit_exponential_reduction(s, 0.0, 0.0, 2.0, 1e-2))
    assert np.all(cov.sigma == 0)


@pytest.mark.parametrize("model", "ABC")
def test_covariance_psd(model):
    s = spec(lambda0=1.0, mu0=0.5, lambda1=1.5, lambda3=0.2, model=model)
    cov = covariance_ode(solve_limit_exponential_reduction(s, 2.0, 0.1, 5.0, 1e-2))
    assert cov.min_eigenvalue() >= -1e-10
    assert np.allclose(cov.sigma, np.transpose(cov.sigma, (0, 2, 1)))


@pytest.mark.parametrize("infection", ["mass_action", "frequency", "infective"])
@pytest.mark.parametrize("model", "ABC")
def test_drift_matches_finite_differences(infection, model):
    s = spec(lambda0=1.0, mu0=0.5, lambda1=1.5, lambda3=0.4, model=model, infection=infection)
    rng = np.random.default_rng(0)
    for y in rng.uniform(0.05, 2.0, (5, 3)):
        assert np.allclose(drift_matrix(s, *y), drift_matrix_fd(s, *y), atol=1e-6)


def test_non_exponential_weight_rejected():
    s = ModelSpec(1.0, 1.0, 0.3, 0.3, InfectionRate("mass_action", 1.0),
                  TracingRate("C", 0.2), Constant(1.0))
    sol = solve_limit(s, 1.0, 0.1, 1.0, 1e-2)
    with pytest.raises(TypeError):
        covariance_ode(sol)


def test_martingale_bracket_integral():
    s = spec(lambda0=1.0, mu0=0.5, lambda1=1.5, lambda3=0.2, model="A")
    sol = solve_limit_exponential_reduction(s, 2.0, 0.1, 5.0, 1e-3)
    mb = martingale_bracket(sol)
    assert mb[0] == 0 and np.all(np.diff(mb) > 0)
    # independent quadrature of the same integrand
    l1 = 1.5 * sol.s * sol.i
    integrand = l1 + (0.3 + 0.375) * sol.i + 0.2 * sol.m
    from scipy import integrate

    assert mb[-1] == pytest.approx(integrate.simpson(integrand, x=sol.t), rel=1e-6)


def test_normality_z_on_gaussian_sample():
    x = np.random.default_rng(3).standard_normal(4000)
    z = normality_z(x)
    assert all(abs(v) < 4 for v in z.values())
    z = normality_z(np.random.default_rng(3).exponential(size=4000) - 1.0)
    assert z["skew_z"] > 10


def test_clt_small_scale_model_c():
    # moderate n and M: tolerances follow the sampling error of a variance
    s = spec(lambda0=1.0, mu0=0.5, lambda1=1.5, lambda3=0.2, model="C")
    M = 400
    rep = clt_experiment(s, 2.0, 0.1, 2.0, [1000], M, seed=5, h=1e-3, n_grid=5)
    row = rep.rows[0]
    tol = 4 * math.sqrt(2 / (M - 1))
    for emp, th in zip(row["empirical_variance"], row["theoretical_variance"]):
        assert abs(emp / th - 1) < tol
    for lab, z in row["projections"].items():
        assert abs(z["mean_z"]) < 4, lab
    assert abs(row["martingale_variance_i"] / row["martingale_bracket_i"] - 1) < tol
    assert all(abs(z) < 4 for z in row["martingale_mean_z"])
    assert row["discretization_ratio"] < 0.01
    header = rep.to_csv().splitlines()[0]
    assert header == "n,t,entry,empirical,theoretical"
    assert len(rep.to_csv().splitlines()) == 1 + 5 * 6


def test_fluctuation_sample_requires_integer_initial_sizes():
    from ctsir.fluctuations import fluctuation_sample

    s = spec(lambda1=1.0, lambda3=0.1, model="C")
    sol = solve_limit_exponential_reduction(s, 2.0, 0.105, 1.0, 1e-2)
    with pytest.raises(ValueError):
        fluctuation_sample(s, sol, 100, 2, [0.0, 1.0], seed=0)
