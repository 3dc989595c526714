"""Generalized Grenander-type estimators of monotone density, hazard and regression functions.

Each estimator builds a triple ``(Gamma_n, Phi_n, u_n)`` on the jump grid
of its primitive and hands it to :func:`grenkit.gcm.grenander_type`.
Most accept ``upper``, the right end of the isotonization interval
``[0, upper]``; by default it is the largest observation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .gcm import MonotoneEstimate, StepFunction, grenander_type
from .survival import (
    CoxModel,
    RestrictedMean,
    SurvivalSample,
    cox_fit,
    ecdf,
    kaplan_meier,
)

__all__ = [
    "NuisancePair",
    "OneStepCurve",
    "POSITIVITY_FLOOR",
    "grenander_density",
    "censored_density",
    "onestep_gamma_density",
    "monotone_density_adjusted",
    "survival_primitive",
    "density_from_primitive",
    "hazard_from_primitive",
    "hazard_identity_from_primitive",
    "monotone_hazard",
    "hazard_identity",
    "isotonic_regression",
    "marginalized_regression",
    "default_nuisances",
]

POSITIVITY_FLOOR = 1e-6
ADJUSTMENTS = ("none", "independent", "conditional")


def _identity(x):
    return np.asarray(x, dtype=float) if np.ndim(x) else float(x)


def _upper(y, upper):
    return float(np.max(y)) if upper is None else float(upper)


def density_from_primitive(F: StepFunction, upper=None, name="density", info=None) -> MonotoneEstimate:
    """Isotonize a distribution-function estimate with the identity transform."""
    u_n = _upper(F.knots, upper)
    keep = F.knots <= u_n
    return grenander_type(
        F.knots[keep],
        F.values[keep],
        F.knots[keep],
        u_n,
        _identity,
        gamma_left=F.left_limit_value,
        domain=(0.0, u_n),
        info={"estimator": name, "transform": "identity", **(info or {})},
    )


def grenander_density(times, upper: Optional[float] = None) -> MonotoneEstimate:
    """Grenander estimator of a non-decreasing density on ``[0, upper]``.

    Left derivative of the GCM of the ECDF; this is the NPMLE over
    non-decreasing densities.
    """
    return density_from_primitive(ecdf(times), upper, "grenander_density")


def censored_density(s: SurvivalSample, upper: Optional[float] = None) -> MonotoneEstimate:
    """GCM-differentiated Kaplan-Meier estimator (independent censoring)."""
    return density_from_primitive(kaplan_meier(s), upper, "censored_density")


@dataclass(frozen=True)
class OneStepCurve:
    """One-step estimate of the distribution function on a jump grid.

    ``influence_terms`` holds the per-observation plug-in terms
    ``D_{n,x}(O_i)`` (rows: observations, columns: grid) when requested.
    """

    x_grid: np.ndarray
    gamma_values: np.ndarray
    influence_terms: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.gamma_values)):
            raise ValueError("one-step curve is not finite")
        if np.any(np.diff(self.x_grid) < 0):
            raise ValueError("grid must be sorted")

    def as_step_function(self) -> StepFunction:
        return StepFunction(self.x_grid, self.gamma_values, 0.0)


def onestep_gamma_density(
    s: SurvivalSample,
    event_model: CoxModel,
    censor_model: CoxModel,
    upper: Optional[float] = None,
    floor: float = POSITIVITY_FLOOR,
    keep_terms: bool = False,
    chunk: int = 512,
) -> OneStepCurve:
    """One-step estimator of ``F_0(x)`` under conditionally independent censoring.

    ``Gamma_n(x) = 1 - P_n D_{n,x}`` with

        D_{n,x}(y, d, w) = S_n(x|w) [1 - d I(y <= x) / (S_n(y|w) G_n(y-|w))
                                     + int_0^{y ^ x} Lambda_n(du|w) / (S_n(u|w) G_n(u-|w))]

    using the Cox/Breslow conditional survivals.  Using ``G_n(u-)`` makes
    the plug-in exact for discrete hazards; with a constant covariate the
    curve reduces to ``1 - exp(-Nelson-Aalen)``.

    The grid is the distinct observed times up to ``upper``.  ``Gamma_n``
    only moves at event times, so it is computed there and carried forward.
    """
    u_n = _upper(s.y, upper)
    grid = np.unique(s.y)
    grid = grid[grid <= u_n]
    base = event_model.baseline_cumhaz
    keep = base.knots <= u_n
    t_ev = base.knots[keep]
    lam = base.values[keep]
    dlam = np.diff(np.concatenate([[0.0], lam]))
    lam_c = censor_model.baseline_cumhaz.left_limit(t_ev)

    n = s.n
    r = event_model.risk_score(s.w)
    q = censor_model.risk_score(s.w)
    y = s.y
    dl = s.delta.astype(float)
    # delta-term denominators at each subject's own time
    s_own = np.exp(-r * base(y))
    g_own = np.exp(-q * censor_model.baseline_cumhaz.left_limit(y))
    needs_own = (dl > 0) & (y <= u_n)
    if np.any(s_own[needs_own] * g_own[needs_own] < floor):
        raise ValueError("positivity floor breached")
    b_own = np.where(needs_own, dl / np.where(needs_own, s_own * g_own, 1.0), 0.0)

    K = t_ev.size
    mean_D = np.zeros(K)
    terms = np.empty((n, K)) if keep_terms else None
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        ri, qi, yi = r[sl, None], q[sl, None], y[sl, None]
        log_s = -ri * lam[None, :]
        log_g = -qi * lam_c[None, :]
        at_risk = t_ev[None, :] <= yi
        if np.any((log_s + log_g)[at_risk] < np.log(floor)):
            raise ValueError("positivity floor breached")
        integrand = np.where(at_risk, ri * dlam[None, :] * np.exp(-(log_s + log_g)), 0.0)
        A = np.cumsum(integrand, axis=1)
        jumped = yi <= t_ev[None, :]
        D = np.exp(log_s) * (1.0 + A - b_own[sl, None] * jumped)
        mean_D += D.sum(axis=0)
        if keep_terms:
            terms[sl] = D
    mean_D /= n

    gamma_ev = 1.0 - mean_D
    idx = np.searchsorted(t_ev, grid, side="right") - 1
    gamma = np.where(idx >= 0, gamma_ev[np.clip(idx, 0, None)] if K else 0.0, 0.0)
    if keep_terms and K:
        terms = np.where(idx[None, :] >= 0, terms[:, np.clip(idx, 0, None)], 1.0)
    return OneStepCurve(grid, gamma, terms)


def _fit_nuisance_models(s: SurvivalSample):
    if s.d < 1:
        raise ValueError("conditional adjustment needs covariates")
    event = cox_fit(s, "event")
    if np.all(s.delta):
        # nothing censored: G_n = 1, encoded as a zero cumulative hazard
        flat = StepFunction([float(s.y.max())], [0.0], 0.0, monotone=True)
        return event, CoxModel(np.zeros(s.d), flat, 0, 0.0, "censoring")
    return event, cox_fit(s, "censoring")


def monotone_density_adjusted(
    s: SurvivalSample,
    upper: Optional[float] = None,
    models: Optional[tuple] = None,
) -> MonotoneEstimate:
    """Monotone density under conditionally independent censoring.

    Fits Cox models for the event and censoring hazards (unless ``models``
    is given), forms the one-step primitive and isotonizes it with the
    identity transform.
    """
    event_model, censor_model = models if models is not None else _fit_nuisance_models(s)
    curve = onestep_gamma_density(s, event_model, censor_model, upper=upper)
    u_n = _upper(s.y, upper)
    return grenander_type(
        curve.x_grid,
        curve.gamma_values,
        curve.x_grid,
        u_n,
        _identity,
        domain=(0.0, u_n),
        info={
            "estimator": "monotone_density_adjusted",
            "transform": "identity",
            "beta_event": event_model.beta.tolist(),
            "beta_censor": censor_model.beta.tolist(),
        },
    )


def survival_primitive(
    s: SurvivalSample,
    adjustment: str,
    upper: Optional[float] = None,
    models: Optional[tuple] = None,
) -> StepFunction:
    """Estimate of ``F_0 = 1 - S_0`` on the observed-time grid.

    ``adjustment``: ``'none'`` (ECDF, censoring ignored), ``'independent'``
    (Kaplan-Meier) or ``'conditional'`` (Cox-based one-step).  The one-step
    curve is not forced into ``[0, 1]`` or made monotone.
    """
    if adjustment == "none":
        F = ecdf(s.y)
    elif adjustment == "independent":
        F = kaplan_meier(s)
    elif adjustment == "conditional":
        event_model, censor_model = models if models is not None else _fit_nuisance_models(s)
        curve = onestep_gamma_density(s, event_model, censor_model, upper=upper)
        return curve.as_step_function()
    else:
        raise ValueError(f"unknown adjustment {adjustment!r}; expected one of {ADJUSTMENTS}")
    if upper is not None:
        keep = F.knots <= upper
        F = StepFunction(F.knots[keep], F.values[keep], 0.0, monotone=True)
    return F


def hazard_from_primitive(F: StepFunction, x_end: float, clip: bool = False) -> MonotoneEstimate:
    """Isotonize ``F`` over the restricted-mean transform ``int_0^u [1 - F]``."""
    phi = RestrictedMean(F, clip=clip)
    u_n = float(phi(x_end))

    def transform(x):
        return phi(np.maximum(x, 0.0))

    keep = F.knots <= x_end
    return grenander_type(
        F.knots[keep],
        F.values[keep],
        phi.at_knots()[keep],
        u_n,
        transform,
        domain=(0.0, float(x_end)),
        info={"estimator": "monotone_hazard", "transform": "restricted_mean"},
    )


def monotone_hazard(
    s: SurvivalSample,
    adjustment: str = "independent",
    upper: Optional[float] = None,
    models: Optional[tuple] = None,
) -> MonotoneEstimate:
    """Monotone hazard via the restricted-mean domain transform.

    ``Gamma_n = 1 - S_n`` and ``Phi_n(u) = int_0^u S_n(v) dv``; the fit at
    ``x`` is the left GCM slope at ``Phi_n(x)`` over ``[0, Phi_n(upper)]``.
    For the one-step primitive the integrand of ``Phi_n`` is clipped to
    ``[0, 1]`` so the transform stays non-decreasing.
    """
    F = survival_primitive(s, adjustment, upper, models)
    est = hazard_from_primitive(F, _upper(s.y, upper), clip=(adjustment == "conditional"))
    est.info["adjustment"] = adjustment
    return est


def hazard_identity_from_primitive(
    F: StepFunction, x_end: float, floor: float = POSITIVITY_FLOOR
) -> MonotoneEstimate:
    """Isotonize ``-log(1 - F)`` with the identity transform on ``[0, x_end]``.

    The interval is cut at the last grid time before ``1 - F`` first drops
    to ``floor``; a warning is issued when that happens.
    """
    keep = F.knots <= x_end
    knots, surv = F.knots[keep], 1.0 - F.values[keep]
    bad = np.flatnonzero(surv <= floor)
    truncated = bad.size > 0
    if truncated:
        stop = bad[0]
        if stop == 0:
            raise ValueError("survival estimate vanishes at the first observed time")
        x_end = float(knots[stop - 1])
        warnings.warn(
            f"-log S_n truncated at {x_end:.6g} where S_n falls below {floor:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        knots, surv = knots[:stop], surv[:stop]
    return grenander_type(
        knots,
        -np.log(surv),
        knots,
        float(x_end),
        _identity,
        domain=(0.0, float(x_end)),
        info={"estimator": "hazard_identity", "transform": "identity", "truncated": truncated},
    )


def hazard_identity(
    s: SurvivalSample,
    adjustment: str = "independent",
    upper: Optional[float] = None,
    floor: float = POSITIVITY_FLOOR,
    models: Optional[tuple] = None,
) -> MonotoneEstimate:
    """Monotone hazard by isotonizing the cumulative hazard ``-log S_n`` directly."""
    F = survival_primitive(s, adjustment, upper, models)
    est = hazard_identity_from_primitive(F, _upper(s.y, upper), floor)
    est.info["adjustment"] = adjustment
    return est


def _regression_estimate(a, contrib, name, info=None) -> MonotoneEstimate:
    a = np.asarray(a, dtype=float).ravel()
    order = np.argsort(a, kind="stable")
    a_s = a[order]
    csum = np.cumsum(np.asarray(contrib, dtype=float)[order]) / a.size
    knots, last = np.unique(a_s, return_index=False, return_counts=True)
    ends = np.cumsum(last) - 1
    phi = ecdf(a)
    return grenander_type(
        knots,
        csum[ends],
        phi.values,
        1.0,
        phi,
        domain=(float(knots[0]), float(knots[-1])),
        info={"estimator": name, "transform": "ecdf", **(info or {})},
    )


def isotonic_regression(a, y) -> MonotoneEstimate:
    """Least-squares isotonic regression of ``y`` on ``a`` via the cusum diagram.

    Tied exposures share one diagram point, i.e. their responses are pooled.
    """
    a = np.asarray(a, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("empty input")
    if a.shape != y.shape:
        raise ValueError("a and y must have the same length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return _regression_estimate(a, y, "isotonic_regression")


@dataclass(frozen=True)
class NuisancePair:
    """Outcome regression ``mu(a, w)`` and density ratio ``g(a, w) = f(a|w) / f(a)``.

    Both callables take ``a`` of shape ``(m,)`` and ``w`` of shape ``(m, d)``
    and return arrays of shape ``(m,)``.
    """

    mu: Callable
    g: Callable


def _as_2d(w, n):
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w.reshape(n, -1)
    return w


def marginalized_regression(a, y, w, nuis: NuisancePair, chunk: int = 256) -> MonotoneEstimate:
    """Isotonic estimate of the covariate-marginalized regression ``E[E(Y | A=x, W)]``.

    One-step primitive

        Gamma_n(x) = (1/n) sum_i I(A_i <= x) [(Y_i - mu_n(A_i, W_i)) / g_n(A_i, W_i)
                                               + (1/n) sum_j mu_n(A_i, W_j)]

    with the ECDF of ``A`` as domain transform and ``u_n = 1``.
    """
    a = np.asarray(a, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = a.size
    if n == 0:
        raise ValueError("empty input")
    w = _as_2d(w, n)
    g_i = np.asarray(nuis.g(a, w), dtype=float)
    if not np.all(np.isfinite(g_i)) or np.any(g_i < POSITIVITY_FLOOR):
        raise ValueError("invalid density ratio")
    mu_i = np.asarray(nuis.mu(a, w), dtype=float)
    mu_bar = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        aa = np.repeat(a[lo:hi], n)
        ww = np.tile(w, (hi - lo, 1))
        mu_bar[lo:hi] = np.asarray(nuis.mu(aa, ww), dtype=float).reshape(hi - lo, n).mean(axis=1)
    contrib = (y - mu_i) / g_i + mu_bar
    return _regression_estimate(a, contrib, "marginalized_regression")


def default_nuisances(a, y, w) -> NuisancePair:
    """Parametric nuisance fits.

    ``mu_n``: least squares of ``y`` on ``(1, a, w)``.  ``g_n``: Gaussian
    linear model for ``a | w`` divided by a Gaussian fit of the marginal of
    ``a``.
    """
    a = np.asarray(a, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = a.size
    w = _as_2d(w, n)
    d = w.shape[1]
    if n <= d + 2:
        raise ValueError("need n > d + 2 observations")
    X = np.column_stack([np.ones(n), a, w])
    coef_y, _, rank_y, _ = np.linalg.lstsq(X, y, rcond=None)
    Z = np.column_stack([np.ones(n), w])
    coef_a, _, rank_a, _ = np.linalg.lstsq(Z, a, rcond=None)
    if rank_y < X.shape[1] or rank_a < Z.shape[1]:
        raise ValueError("singular design")
    resid = a - Z @ coef_a
    sd_cond = np.sqrt(resid @ resid / (n - d - 1))
    mean_a, sd_a = a.mean(), a.std(ddof=1)
    if sd_cond <= 0 or sd_a <= 0:
        raise ValueError("singular design")

    def mu(aa, ww):
        ww = _as_2d(ww, np.size(aa))
        return coef_y[0] + coef_y[1] * np.asarray(aa, float) + ww @ coef_y[2:]

    def g(aa, ww):
        aa = np.asarray(aa, float)
        ww = _as_2d(ww, aa.size)
        zc = (aa - coef_a[0] - ww @ coef_a[1:]) / sd_cond
        zm = (aa - mean_a) / sd_a
        return (sd_a / sd_cond) * np.exp(-0.5 * (zc**2 - zm**2))

    return NuisancePair(mu, g)
