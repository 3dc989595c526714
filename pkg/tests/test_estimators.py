import warnings
from itertools import combinations

import numpy as np
import pytest

from grenkit.estimators import (
    NuisancePair,
    censored_density,
    default_nuisances,
    grenander_density,
    hazard_identity,
    isotonic_regression,
    marginalized_regression,
    monotone_density_adjusted,
    monotone_hazard,
    onestep_gamma_density,
)
from grenkit.gcm import gcm
from grenkit.survival import SurvivalSample, cox_fit, kaplan_meier

from .oracles import isotonic_bruteforce


def npmle_bruteforce(t):
    """Increasing-density NPMLE by enumerating blocks of the order-statistic cells.

    Cell ``j`` is ``(t_(j-1), t_(j)]`` and holds one observation.  A block of
    cells carries the constant density ``k / (n L)``; the feasible
    (non-decreasing) partition with the largest log-likelihood wins.
    """
    t = np.sort(np.asarray(t, float))
    n = t.size
    edges = np.r_[0.0, t]
    best, best_f = -np.inf, None
    for r in range(n):
        for cuts in combinations(range(1, n), r):
            bounds = [0, *cuts, n]
            f = np.empty(n)
            ll = 0.0
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                k = hi - lo
                dens = k / (n * (edges[hi] - edges[lo]))
                f[lo:hi] = dens
                ll += k * np.log(dens)
            if np.any(np.diff(f) < 0):
                continue
            if ll > best:
                best, best_f = ll, f
    return t, best_f


def _grid(est, k=1000):
    lo, hi = est.domain
    return np.linspace(lo + (hi - lo) / k, hi, k)


# --------------------------------------------------------------------- density


def test_grenander_examples():
    assert grenander_density([1.0, 1.0, 1.0])(0.5) == pytest.approx(1.0)
    est = grenander_density([0.5, 1.0])
    np.testing.assert_allclose(est([0.25, 0.75, 1.0]), 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_grenander_npmle_oracle(seed):
    t = np.random.default_rng(seed).uniform(0, 1, 7) ** 0.5
    knots, f = npmle_bruteforce(t)
    np.testing.assert_allclose(grenander_density(t)(knots), f, rtol=1e-10)


def test_censored_density_hand_example():
    est = censored_density(SurvivalSample([1.0, 2.0, 3.0], [1, 0, 1]))
    np.testing.assert_allclose(est([0.5, 1.0, 2.0]), 1 / 6, rtol=1e-12)
    np.testing.assert_allclose(est([2.5, 3.0]), 2 / 3, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_censored_density_all_events_is_grenander(seed):
    y = np.random.default_rng(seed).weibull(3, 300)
    a = censored_density(SurvivalSample(y, np.ones(300, int)))
    b = grenander_density(y)
    x = np.r_[np.sort(y), _grid(b)]
    np.testing.assert_array_equal(a(x), b(x))


def _null_covariate_sample(n, seed, constant=True):
    rng = np.random.default_rng(seed)
    t = rng.weibull(4, n) * 1.2
    c = rng.weibull(2, n) * 1.5
    w = np.ones(n) if constant else rng.uniform(-1, 1, n)
    return SurvivalSample(np.minimum(t, c), t <= c, w)


def test_onestep_null_covariate_close_to_km():
    s = _null_covariate_sample(2000, 0)
    ev, ce = cox_fit(s, "event"), cox_fit(s, "censoring")
    assert ev.beta[0] == 0.0 and ce.beta[0] == 0.0
    curve = onestep_gamma_density(s, ev, ce)
    F = kaplan_meier(s)
    med = np.median(s.y)
    gamma = curve.as_step_function()
    assert abs(gamma(med) - F(med)) < 5 / s.n
    # no event at or before 0: the plug-in terms all equal 1
    assert gamma(0.0) == 0.0
    assert gamma(s.y.min() / 2) == 0.0


def test_onestep_influence_terms_average():
    s = _null_covariate_sample(300, 1, constant=False)
    ev, ce = cox_fit(s, "event"), cox_fit(s, "censoring")
    curve = onestep_gamma_density(s, ev, ce, keep_terms=True)
    np.testing.assert_allclose(1 - curve.influence_terms.mean(axis=0), curve.gamma_values, atol=1e-12)


def test_onestep_positivity_floor():
    s = _null_covariate_sample(300, 2)
    ev, ce = cox_fit(s, "event"), cox_fit(s, "censoring")
    with pytest.raises(ValueError, match="positivity floor breached"):
        onestep_gamma_density(s, ev, ce, floor=0.5)


def test_adjusted_density_null_covariate_matches_censored():
    s = _null_covariate_sample(2000, 3)
    a = monotone_density_adjusted(s, upper=1.0)
    b = censored_density(s, upper=1.0)
    med = float(np.median(s.y))
    # both primitives agree to O(1/n); the GCM slopes then agree closely
    assert abs(a(med) - b(med)) < 0.05 * b(med)
    assert np.all(np.diff(a(_grid(a))) >= 0)


def test_adjusted_density_all_events_null_covariate():
    rng = np.random.default_rng(4)
    y = rng.weibull(4, 2000)
    s = SurvivalSample(y, np.ones(2000, int), np.ones(2000))
    a = monotone_density_adjusted(s)
    b = grenander_density(y)
    med = float(np.median(y))
    assert abs(a(med) - b(med)) < 0.05 * b(med)


# ---------------------------------------------------------------------- hazard


def test_hazard_two_point_diagram():
    est = monotone_hazard(SurvivalSample([1.0, 2.0], [1, 1]), "none")
    np.testing.assert_allclose(est.diagram.u, [0, 1, 1.5], atol=1e-15)
    np.testing.assert_allclose(est.diagram.g, [0, 0.5, 1], atol=1e-15)
    np.testing.assert_allclose(est.minorant.slopes, [0.5, 1.0])


@pytest.mark.parametrize("adjustment", ["none", "independent"])
def test_hazard_uncensored_diagram_formula(adjustment):
    t = np.sort(np.random.default_rng(9).weibull(2, 200))
    n = t.size
    est = monotone_hazard(SurvivalSample(t, np.ones(n, int)), adjustment)
    k = np.arange(1, n + 1)
    u = (n - k) / n * t + np.cumsum(t) / n
    np.testing.assert_allclose(est.diagram.u[1:], u, rtol=0, atol=1e-12)
    np.testing.assert_allclose(est.diagram.g[1:], k / n, rtol=0, atol=1e-12)


def test_hazard_exponential_constant():
    hits = hits_id = 0
    lam = 2.0
    med = np.log(2) / lam
    for seed in range(100):
        t = np.random.default_rng(seed).exponential(1 / lam, 5000)
        s = SurvivalSample(t, np.ones(t.size, int))
        hits += abs(monotone_hazard(s, "none")(med) - lam) < 0.1 * lam
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hits_id += abs(hazard_identity(s, "none")(med) - lam) < 0.1 * lam
    assert hits >= 80
    assert hits_id >= 80


def test_hazard_identity_truncates():
    s = SurvivalSample([1.0, 2.0], [1, 1])
    with pytest.warns(RuntimeWarning, match="truncated"):
        est = hazard_identity(s, "none")
    assert est.u_max == 1.0
    assert est(1.0) == pytest.approx(np.log(2))


def test_hazard_monotone_on_grid():
    rng = np.random.default_rng(8)
    t = rng.weibull(3, 500)
    c = rng.weibull(2, 500) * 1.5
    s = SurvivalSample(np.minimum(t, c), t <= c)
    est = monotone_hazard(s)
    assert np.all(np.diff(est(_grid(est))) >= 0)


# ------------------------------------------------------------------ regression


def test_isotonic_examples():
    np.testing.assert_allclose(isotonic_regression([1, 2, 3], [1, 2, 3])([1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(isotonic_regression([1, 2], [2, 1])([1, 2]), [1.5, 1.5])
    with pytest.raises(ValueError):
        isotonic_regression([], [])


def test_isotonic_partition_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        a = rng.integers(0, 5, n).astype(float) if rng.random() < 0.3 else rng.uniform(0, 1, n)
        y = rng.normal(0, 1, n)
        np.testing.assert_allclose(isotonic_regression(a, y)(a), isotonic_bruteforce(a, y), atol=1e-10)


def test_isotonic_projection_and_mass():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = 30
        a = rng.uniform(0, 1, n)
        y = a + rng.normal(0, 0.5, n)
        fit = isotonic_regression(a, y)(a)
        assert fit.sum() == pytest.approx(y.sum(), abs=1e-10)
        sse = np.sum((y - fit) ** 2)
        order = np.argsort(a)
        for _ in range(100):
            m = np.empty(n)
            m[order] = np.sort(rng.normal(0, 1, n))
            assert sse <= np.sum((y - m) ** 2) + 1e-12


def test_marginalized_trivial_nuisances_reduce():
    rng = np.random.default_rng(3)
    a, y, w = rng.uniform(size=50), rng.normal(size=50), rng.normal(size=(50, 2))
    nuis = NuisancePair(lambda aa, ww: np.zeros(np.size(aa)), lambda aa, ww: np.ones(np.size(aa)))
    np.testing.assert_array_equal(marginalized_regression(a, y, w, nuis)(a), isotonic_regression(a, y)(a))


def test_marginalized_invalid_ratio():
    a, y, w = np.arange(5.0), np.arange(5.0), np.zeros((5, 1))
    nuis = NuisancePair(lambda aa, ww: np.zeros(np.size(aa)), lambda aa, ww: np.zeros(np.size(aa)))
    with pytest.raises(ValueError, match="invalid density ratio"):
        marginalized_regression(a, y, w, nuis)


def test_default_nuisances_exact_linear():
    rng = np.random.default_rng(4)
    a, w = rng.normal(size=100), rng.normal(size=(100, 2))
    y = 1.0 + 2.0 * a - w @ [0.5, 1.5]
    nuis = default_nuisances(a, y, w)
    np.testing.assert_allclose(nuis.mu(a, w), y, atol=1e-8)
    with pytest.raises(ValueError, match="need n > d \\+ 2"):
        default_nuisances(a[:3], y[:3], w[:3])
    with pytest.raises(ValueError, match="singular design"):
        default_nuisances(a, y, np.column_stack([w[:, 0], w[:, 0]]))


def test_default_nuisances_density_ratio():
    rng = np.random.default_rng(5)
    n = 5000
    w = rng.normal(size=n)
    a = rng.normal(size=n)
    nuis = default_nuisances(a, a + w, w[:, None])
    lo, hi = np.quantile(a, [0.05, 0.95])
    sel = (a > lo) & (a < hi)
    assert np.max(np.abs(nuis.g(a[sel], w[sel, None]) - 1)) < 0.1
    # jointly Gaussian: A = 0.6 W + 0.8 Z, so A ~ N(0, 1) and A | W ~ N(0.6 W, 0.64).
    # The ratio reaches ~2.5 at the edge of the 90% region, so compare relatively.
    a = 0.6 * w + 0.8 * rng.normal(size=n)
    nuis = default_nuisances(a, a, w[:, None])
    truth = np.exp(-0.5 * ((a - 0.6 * w) ** 2 / 0.64 - a**2)) / 0.8
    inside = w**2 + (a - 0.6 * w) ** 2 / 0.64 < 4.605  # 90% probability ellipse
    got = nuis.g(a[inside], w[inside, None])
    assert np.max(np.abs(got / truth[inside] - 1)) < 0.1


def _confounded(n, rng):
    w = rng.normal(size=n)
    a = 0.5 + 0.3 * w + 0.2 * rng.normal(size=n)
    y = a**3 + 2 * a + w + 0.3 * rng.normal(size=n)
    return a, y, w[:, None]


def test_marginalized_confounded_consistency():
    # nu(x) = x^3 + 2x; E[Y | A = x] adds E[W | A = x] = 2.3 (x - 0.5), so plain isotonic is biased.
    # mu_n is misspecified (linear) but the Gaussian density ratio is correct.
    rng = np.random.default_rng(6)
    x = 0.7
    marg, plain = [], []
    for _ in range(40):
        a, y, w = _confounded(2000, rng)
        marg.append(marginalized_regression(a, y, w, default_nuisances(a, y, w))(x))
        plain.append(isotonic_regression(a, y)(x))
    nu = x**3 + 2 * x
    se_m = np.std(marg, ddof=1) / np.sqrt(len(marg))
    se_p = np.std(plain, ddof=1) / np.sqrt(len(plain))
    assert abs(np.mean(marg) - nu) < 3 * se_m
    assert abs(np.mean(plain) - nu) > 3 * se_p


def test_marginalized_independent_covariate():
    rng = np.random.default_rng(7)
    fits = []
    for _ in range(40):
        n = 2000
        a = rng.uniform(0, 1, n)
        w = rng.normal(size=n)
        y = a**2 + 0.5 * w + 0.3 * rng.normal(size=n)
        fits.append(marginalized_regression(a, y, w[:, None], default_nuisances(a, y, w[:, None]))(0.5))
    se = np.std(fits, ddof=1) / np.sqrt(len(fits))
    assert abs(np.mean(fits) - 0.25) < 3 * se + 0.005


def test_regression_monotone_on_grid():
    rng = np.random.default_rng(9)
    a = rng.uniform(0, 1, 200)
    y = np.sin(3 * a) + rng.normal(0, 0.3, 200)
    est = isotonic_regression(a, y)
    assert np.all(np.diff(est(np.linspace(0, 1, 1000))) >= 0)


def test_gcm_slopes_are_the_fit():
    # isotonic fit values are exactly the minorant slopes of the diagram
    a = np.array([0.1, 0.2, 0.3, 0.4])
    y = np.array([1.0, 3.0, 2.0, 4.0])
    est = isotonic_regression(a, y)
    m = gcm(np.column_stack([np.arange(5) / 4, np.r_[0, np.cumsum(y)] / 4]))
    np.testing.assert_allclose(est(a), m.slopes[np.searchsorted(m.u, np.arange(1, 5) / 4) - 1])
