"""Chernoff-limit scale factors and the Chernoff distribution itself.

Every estimator here satisfies ``n^{1/3} [theta_n(x) - theta_0(x)] -> tau_0(x) Z``
with ``Z = argmin_u {W(u) + u^2}`` and

    tau_0(x) = [4 theta_0'(x) kappa_0(x) / Phi_0'(x)^2]^{1/3}.

The ``tau_*`` functions evaluate ``kappa_0`` and ``Phi_0'`` for each
example from analytic ingredients held in a :class:`TrueModel`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TrueModel",
    "ScaleReport",
    "ChernoffTable",
    "NaiveLimitCurve",
    "chernoff_oracle",
    "default_chernoff_table",
    "tau_density",
    "tau_hazard",
    "tau_regression",
    "naive_limit_curve",
    "covariate_average",
]

CHERNOFF_PROBS = (0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975, 0.99, 0.995)
DEFAULT_MC_W = 100_000


@dataclass(frozen=True)
class TrueModel:
    """Analytic ingredients of a data-generating mechanism.

    Functions of ``x`` take floats or arrays.  Conditional functions take
    ``(x, w)`` with ``w`` of shape ``(m, d)`` and must broadcast ``x``
    against the ``m`` rows (``x`` of shape ``(k, 1)`` gives ``(k, m)``).
    Covariate integrals use ``covariate_quadrature`` (nodes, weights) when
    present and Monte Carlo draws from ``covariate_sampler(rng, m)``
    otherwise.  Any field may be ``None`` if the calculators that need it
    are not used.
    """

    density: Optional[Callable] = None
    density_deriv: Optional[Callable] = None
    survival: Optional[Callable] = None
    hazard: Optional[Callable] = None
    hazard_deriv: Optional[Callable] = None
    censor_survival: Optional[Callable] = None
    cond_density: Optional[Callable] = None
    cond_survival: Optional[Callable] = None
    cond_censor_survival: Optional[Callable] = None
    regression: Optional[Callable] = None
    regression_deriv: Optional[Callable] = None
    variance: Optional[Callable] = None
    cond_variance: Optional[Callable] = None
    exposure_density: Optional[Callable] = None
    cond_exposure_density: Optional[Callable] = None
    dose_response: Optional[Callable] = None
    dose_response_deriv: Optional[Callable] = None
    covariate_sampler: Optional[Callable] = None
    covariate_quadrature: Optional[tuple] = None

    def require(self, *names):
        missing = [nm for nm in names if getattr(self, nm) is None]
        if missing:
            raise ValueError(f"model is missing ingredients: {', '.join(missing)}")


def covariate_average(model: TrueModel, fn: Callable, mc_w: int = DEFAULT_MC_W, seed: int = 0):
    """Average ``fn(w)`` over the covariate law (quadrature or seeded MC)."""
    if model.covariate_quadrature is not None:
        nodes, weights = model.covariate_quadrature
        vals = np.asarray(fn(np.asarray(nodes, float)), dtype=float)
        return vals @ np.asarray(weights, float) if vals.ndim > 1 else float(vals @ weights)
    if model.covariate_sampler is None:
        raise ValueError("model is missing ingredients: covariate_sampler")
    draws = np.asarray(model.covariate_sampler(np.random.default_rng(seed), int(mc_w)), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    vals = np.asarray(fn(draws), dtype=float)
    return vals.mean(axis=-1) if vals.ndim > 1 else float(vals.mean())


@dataclass(frozen=True)
class ChernoffTable:
    """Monte Carlo summary of ``Z = argmin_u {W(u) + u^2}``."""

    variance: float
    quantiles: dict
    mc_config: dict
    mean: float = 0.0
    mean_se: float = 0.0
    variance_se: float = 0.0
    inner_mass: float = 1.0
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "samples"}
        out["quantiles"] = {f"{float(p):g}": float(q) for p, q in self.quantiles.items()}
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ChernoffTable":
        data = json.loads(text)
        data["quantiles"] = {float(p): q for p, q in data["quantiles"].items()}
        return cls(**data)


def chernoff_oracle(
    L: float = 6.0,
    h: float = 0.005,
    reps: int = 100_000,
    seed: int = 0,
    batch: int = 2_000,
    keep_samples: bool = False,
) -> ChernoffTable:
    """Tabulate the Chernoff distribution by grid argmin of ``W(u) + u^2``.

    Two-sided standard Brownian motion is built on ``{-L, ..., L}`` (step
    ``h``) from two independent Gaussian random walks started at 0.  Batch
    ``b`` draws from a stream keyed by ``(seed, b)``.
    """
    if L < 5 or h > 0.01 or h <= 0 or reps < 10_000:
        raise ValueError("invalid grid: need L >= 5, 0 < h <= 0.01, reps >= 1e4")
    m = int(round(L / h))
    u = h * np.arange(1, m + 1)
    drift = u**2
    sd = np.sqrt(h)
    out = np.empty(reps)
    for b, lo in enumerate(range(0, reps, batch)):
        k = min(batch, reps - lo)
        rng = np.random.default_rng([seed, b])
        right = np.cumsum(rng.standard_normal((k, m)) * sd, axis=1) + drift
        left = np.cumsum(rng.standard_normal((k, m)) * sd, axis=1) + drift
        ir, il = right.argmin(axis=1), left.argmin(axis=1)
        vr, vl = right[np.arange(k), ir], left[np.arange(k), il]
        z = np.where(vr < vl, u[ir], -u[il])
        z = np.where(np.minimum(vr, vl) > 0.0, 0.0, z)
        out[lo : lo + k] = z
    var = float(out.var(ddof=1))
    centred = out - out.mean()
    var_se = float(np.sqrt(max(np.mean(centred**4) - var**2, 0.0) / reps))
    qs = np.quantile(out, CHERNOFF_PROBS)
    return ChernoffTable(
        variance=var,
        quantiles={p: float(q) for p, q in zip(CHERNOFF_PROBS, qs)},
        mc_config={"grid_halfwidth": float(L), "grid_step": float(h), "replications": int(reps), "seed": int(seed)},
        mean=float(out.mean()),
        mean_se=float(out.std(ddof=1) / np.sqrt(reps)),
        variance_se=var_se,
        inner_mass=float(np.mean(np.abs(out) <= L - 1)),
        samples=out if keep_samples else None,
    )


@lru_cache(maxsize=1)
def default_chernoff_table() -> ChernoffTable:
    """The default oracle run (``L=6, h=0.005, reps=1e5, seed=0``), cached per process."""
    return chernoff_oracle()


def _chernoff_variance(value):
    return default_chernoff_table().variance if value is None else float(value)


@dataclass(frozen=True)
class ScaleReport:
    """``tau_0(x)``, ``kappa_0(x)`` and the variance ``tau^2 Var(Z)`` of the limit."""

    tau: float
    kappa: float
    variance_of_limit: float
    chernoff_variance: float
    ingredients: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _report(slope_deriv, kappa, phi_deriv, cvar, ingredients):
    if slope_deriv < 0:
        raise ValueError("non-monotone truth at x")
    if kappa < 0 or phi_deriv <= 0:
        raise ValueError("invalid ingredients: kappa must be >= 0 and Phi_0' > 0")
    tau = float(np.cbrt(4.0 * slope_deriv * kappa / phi_deriv**2))
    return ScaleReport(tau, float(kappa), tau**2 * cvar, cvar, ingredients)


def _scalar(fn, *args):
    return float(np.asarray(fn(*args), dtype=float))


def tau_density(
    model: TrueModel,
    x: float,
    censoring: str = "none",
    mc_w: int = DEFAULT_MC_W,
    seed: int = 0,
    chernoff_variance: Optional[float] = None,
) -> ScaleReport:
    """Scale factor of the monotone density estimator.

    ``kappa`` is ``f(x)`` without censoring, ``f(x)/G(x)`` under independent
    censoring and ``E_W[f(x|W)/G(x|W)]`` under conditionally independent
    censoring; ``Phi_0' = 1``.
    """
    model.require("density_deriv")
    fp = _scalar(model.density_deriv, x)
    ing = {"density_deriv": fp}
    if censoring == "none":
        model.require("density")
        kappa = _scalar(model.density, x)
        ing["density"] = kappa
    elif censoring == "independent":
        model.require("density", "censor_survival")
        f, G = _scalar(model.density, x), _scalar(model.censor_survival, x)
        kappa = f / G
        ing.update(density=f, censor_survival=G)
    elif censoring == "conditional":
        model.require("cond_density", "cond_censor_survival")
        kappa = covariate_average(
            model, lambda w: model.cond_density(x, w) / model.cond_censor_survival(x, w), mc_w, seed
        )
        ing["cond_ratio_integral"] = kappa
    else:
        raise ValueError(f"unknown censoring {censoring!r}")
    return _report(fp, kappa, 1.0, _chernoff_variance(chernoff_variance), ing)


def tau_hazard(
    model: TrueModel,
    x: float,
    censoring: str = "none",
    mc_w: int = DEFAULT_MC_W,
    seed: int = 0,
    chernoff_variance: Optional[float] = None,
) -> ScaleReport:
    """Scale factor of the monotone hazard estimator (restricted-mean transform).

    Same ``kappa`` as the density case with ``Phi_0'(x) = S_0(x)``.
    """
    model.require("hazard_deriv", "survival")
    lp = _scalar(model.hazard_deriv, x)
    S = _scalar(model.survival, x)
    ing = {"hazard_deriv": lp, "survival": S}
    if censoring == "none":
        model.require("hazard")
        lam = _scalar(model.hazard, x)
        kappa = lam * S
        ing["hazard"] = lam
    elif censoring == "independent":
        model.require("hazard", "censor_survival")
        lam, G = _scalar(model.hazard, x), _scalar(model.censor_survival, x)
        kappa = lam * S / G
        ing.update(hazard=lam, censor_survival=G)
    elif censoring == "conditional":
        model.require("cond_density", "cond_censor_survival")
        kappa = covariate_average(
            model, lambda w: model.cond_density(x, w) / model.cond_censor_survival(x, w), mc_w, seed
        )
        ing["cond_ratio_integral"] = kappa
    else:
        raise ValueError(f"unknown censoring {censoring!r}")
    return _report(lp, kappa, S, _chernoff_variance(chernoff_variance), ing)


def tau_regression(
    model: TrueModel,
    x: float,
    marginalized: bool = False,
    mc_w: int = DEFAULT_MC_W,
    seed: int = 0,
    chernoff_variance: Optional[float] = None,
) -> ScaleReport:
    """Scale factor of isotonic regression (ECDF transform).

    Marginal: ``[4 mu'(x) sigma^2(x) / f(x)]^{1/3}``.  Marginalized:
    ``{4 nu'(x) E_W[sigma^2(x, W) / f(x | W)]}^{1/3}``.
    """
    cvar = _chernoff_variance(chernoff_variance)
    if not marginalized:
        model.require("regression_deriv", "variance", "exposure_density")
        mp = _scalar(model.regression_deriv, x)
        s2 = _scalar(model.variance, x)
        f = _scalar(model.exposure_density, x)
        return _report(mp, s2 * f, f, cvar, {"regression_deriv": mp, "variance": s2, "exposure_density": f})
    model.require("dose_response_deriv", "cond_variance", "cond_exposure_density")
    vp = _scalar(model.dose_response_deriv, x)
    integral = covariate_average(
        model, lambda w: model.cond_variance(x, w) / model.cond_exposure_density(x, w), mc_w, seed
    )
    ing = {"dose_response_deriv": vp, "variance_ratio_integral": integral}
    if model.exposure_density is not None:
        f = _scalar(model.exposure_density, x)
        ing["exposure_density"] = f
        return _report(vp, f**2 * integral, f, cvar, ing)
    # kappa / Phi'^2 is all that matters; report it with Phi' = 1
    return _report(vp, integral, 1.0, cvar, ing)


@dataclass(frozen=True)
class NaiveLimitCurve:
    """Limit of the unadjusted (Kaplan-Meier based) estimators."""

    grid: np.ndarray
    survival: np.ndarray
    density: np.ndarray
    hazard: np.ndarray


def naive_limit_curve(
    model: TrueModel,
    grid,
    mc_w: int = DEFAULT_MC_W,
    step: float = 1e-3,
    diff_step: float = 1e-3,
    seed: int = 0,
) -> NaiveLimitCurve:
    """Survival, density and hazard that the Kaplan-Meier route converges to.

    ``S(t) = exp(-int_0^t E_W[f(v|W) G(v|W)] / E_W[S(v|W) G(v|W)] dv)``
    by trapezoid quadrature with the given ``step``; density and hazard by
    central differences of ``S`` with ``diff_step``.
    """
    model.require("cond_density", "cond_survival", "cond_censor_survival")
    grid = np.asarray(grid, dtype=float)
    t_max = float(grid.max()) + 2 * diff_step
    v = np.arange(0.0, t_max + step, step)

    def ratio(vv):
        def num(w):
            return model.cond_density(vv[:, None], w) * model.cond_censor_survival(vv[:, None], w)

        def den(w):
            return model.cond_survival(vv[:, None], w) * model.cond_censor_survival(vv[:, None], w)

        return covariate_average(model, num, mc_w, seed), covariate_average(model, den, mc_w, seed)

    haz = np.empty(v.size)
    block = 64 if model.covariate_quadrature is None else 4096
    for lo in range(0, v.size, block):
        nm, dn = ratio(v[lo : lo + block])
        if np.any(dn <= 0):
            raise ValueError("quadrature instability: non-positive at-risk mass")
        haz[lo : lo + block] = nm / dn
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (haz[1:] + haz[:-1]) * step)])
    surv_fine = np.exp(-cum)
    if np.any(surv_fine < 0) or not np.all(np.isfinite(surv_fine)):
        raise ValueError("quadrature instability: invalid survival")

    def S(t):
        return np.interp(t, v, surv_fine)

    lo_pts = np.maximum(grid - diff_step, 0.0)
    dens = -(S(grid + diff_step) - S(lo_pts)) / (grid + diff_step - lo_pts)
    s_grid = S(grid)
    return NaiveLimitCurve(grid, s_grid, dens, dens / s_grid)
