"""Monte Carlo study with conditionally Weibull event and censoring times.

Given ``W ~ Unif(-1, 1)``, ``T`` is Weibull with shape 4 and scale
``exp(alpha0 + alpha1 W)`` and ``C`` is Weibull with shape 2 and scale
``exp(beta0 + beta1 W)``.  Four settings switch the dependence of ``T``
and ``C`` on ``W`` on and off.  Each replication fits the naive
(Kaplan-Meier) and one-step (Cox-adjusted) density and hazard estimators
and records them on a grid of ``x``.
"""

from __future__ import annotations

import io
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import TrueModel, default_chernoff_table, naive_limit_curve, tau_density, tau_hazard
from .data import format_float
from .estimators import (
    density_from_primitive,
    hazard_from_primitive,
    hazard_identity_from_primitive,
    onestep_gamma_density,
)
from .survival import SurvivalSample, cox_fit, kaplan_meier

__all__ = [
    "SimSetting",
    "SETTINGS",
    "get_setting",
    "RunManifest",
    "StudyResult",
    "StudyError",
    "generate",
    "true_marginals",
    "theoretical_variances",
    "run_study",
    "ESTIMATORS",
]

log = logging.getLogger(__name__)

SHAPE_T = 4.0
SHAPE_C = 2.0
GL_NODES = 64
DEFAULT_X_EVAL = tuple(round(0.1 * k, 10) for k in range(1, 10))

# label -> (target, procedure, transform)
ESTIMATORS = {
    "density_naive": ("density", "naive", "identity"),
    "density_onestep": ("density", "onestep", "identity"),
    "hazard_naive": ("hazard", "naive", "restricted_mean"),
    "hazard_onestep": ("hazard", "onestep", "restricted_mean"),
    "hazard_identity_naive": ("hazard", "naive", "identity"),
    "hazard_identity_onestep": ("hazard", "onestep", "identity"),
}
DEFAULT_ESTIMATORS = ("density_naive", "density_onestep", "hazard_naive", "hazard_onestep")


@dataclass(frozen=True)
class SimSetting:
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float
    label: str
    shape_t: float = SHAPE_T
    shape_c: float = SHAPE_C


SETTINGS = {
    "i": SimSetting(0.25, -0.375, 0.25, -0.75, "i"),
    "ii": SimSetting(0.25, -0.375, 1.0, 0.0, "ii"),
    "iii": SimSetting(0.25, 0.0, 0.25, -0.75, "iii"),
    "iv": SimSetting(0.25, 0.0, 1.0, 0.0, "iv"),
}


def get_setting(label: str) -> SimSetting:
    try:
        return SETTINGS[str(label).strip().lower()]
    except KeyError:
        raise ValueError(f"invalid setting label {label!r}; expected one of i, ii, iii, iv") from None


def generate(setting: SimSetting, n: int, rng: np.random.Generator) -> SurvivalSample:
    """Draw ``n`` observations ``(min(T, C), I(T <= C), W)`` by inverse-CDF sampling."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = rng.uniform(-1.0, 1.0, n)
    e_t = rng.exponential(size=n)
    e_c = rng.exponential(size=n)
    t = np.exp(setting.alpha0 + setting.alpha1 * w) * e_t ** (1.0 / setting.shape_t)
    c = np.exp(setting.beta0 + setting.beta1 * w) * e_c ** (1.0 / setting.shape_c)
    return SurvivalSample(np.minimum(t, c), t <= c, w[:, None])


def _weibull_parts(x, scale, k):
    x = np.asarray(x, dtype=float)
    z = (np.maximum(x, 0.0) / scale) ** k
    surv = np.exp(-z)
    dens = np.where(x > 0, k / scale * (np.maximum(x, 0.0) / scale) ** (k - 1) * surv, 0.0)
    return surv, dens


def true_marginals(setting: SimSetting) -> TrueModel:
    """Exact ingredients of the marginal law of ``T`` and the conditionals.

    Marginals integrate the conditional Weibull over ``W`` with 64-point
    Gauss-Legendre quadrature; derivatives are differentiated inside the
    integral analytically.
    """
    a0, a1, b0, b1 = setting.alpha0, setting.alpha1, setting.beta0, setting.beta1
    k, kc = setting.shape_t, setting.shape_c
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
    weights = weights / 2.0
    st = np.exp(a0 + a1 * nodes)
    sc = np.exp(b0 + b1 * nodes)

    def _w(w):
        w = np.asarray(w, dtype=float)
        return w[..., 0] if w.ndim > 1 and w.shape[-1] == 1 else w

    def cond_survival(x, w):
        return _weibull_parts(x, np.exp(a0 + a1 * _w(w)), k)[0]

    def cond_density(x, w):
        return _weibull_parts(x, np.exp(a0 + a1 * _w(w)), k)[1]

    def cond_censor_survival(x, w):
        return _weibull_parts(x, np.exp(b0 + b1 * _w(w)), kc)[0]

    def _mix(x):
        x = np.asarray(x, dtype=float)
        xx = np.maximum(x[..., None], 0.0)
        z = (xx / st) ** k
        surv = np.exp(-z)
        dens = k / st * (xx / st) ** (k - 1) * surv
        # d/dx f(x|w) = f(x|w) [(k - 1)/x - k x^{k-1} / s^k]
        with np.errstate(divide="ignore", invalid="ignore"):
            ddens = np.where(xx > 0, dens * ((k - 1) / xx - k * xx ** (k - 1) / st**k), 0.0)
        return surv @ weights, dens @ weights, ddens @ weights

    def survival(x):
        return _mix(x)[0]

    def density(x):
        return _mix(x)[1]

    def density_deriv(x):
        return _mix(x)[2]

    def hazard(x):
        s, f, _ = _mix(x)
        return f / s

    def hazard_deriv(x):
        s, f, fp = _mix(x)
        return (fp * s + f**2) / s**2

    def censor_survival(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-((np.maximum(x[..., None], 0.0) / sc) ** kc)) @ weights

    return TrueModel(
        density=density,
        density_deriv=density_deriv,
        survival=survival,
        hazard=hazard,
        hazard_deriv=hazard_deriv,
        censor_survival=censor_survival,
        cond_density=cond_density,
        cond_survival=cond_survival,
        cond_censor_survival=cond_censor_survival,
        covariate_sampler=lambda rng, m: rng.uniform(-1.0, 1.0, (m, 1)),
        covariate_quadrature=(nodes[:, None], weights),
    )


@dataclass(frozen=True)
class RunManifest:
    setting: SimSetting
    n: int
    reps: int
    seed: int = 0
    x_eval: tuple = DEFAULT_X_EVAL
    estimators: tuple = DEFAULT_ESTIMATORS
    upper: float = 1.0

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        x = tuple(float(v) for v in self.x_eval)
        if not x or any(not (0.0 < v < 1.0) for v in x):
            raise ValueError("x_eval must lie in (0, 1)")
        est = tuple(self.estimators)
        unknown = [e for e in est if e not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")
        object.__setattr__(self, "x_eval", tuple(sorted(set(x))))
        object.__setattr__(self, "estimators", est)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["setting"] = asdict(self.setting)
        out["x_eval"] = list(self.x_eval)
        out["estimators"] = list(self.estimators)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        data = dict(data)
        st = data.pop("setting")
        setting = get_setting(st) if isinstance(st, str) else SimSetting(**st)
        known = {"n", "reps", "seed", "x_eval", "estimators", "upper"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown manifest keys: {sorted(extra)}")
        return cls(setting=setting, **data)


class StudyError(RuntimeError):
    pass


def _one_rep(manifest: RunManifest, rep: int) -> tuple:
    """Fit every requested estimator on replication ``rep``; NaN marks a failure."""
    rng = np.random.default_rng([manifest.seed, rep])
    sample = generate(manifest.setting, manifest.n, rng)
    x = np.asarray(manifest.x_eval)
    upper = manifest.upper
    out = {}
    need_naive = any(ESTIMATORS[e][1] == "naive" for e in manifest.estimators)
    need_onestep = any(ESTIMATORS[e][1] == "onestep" for e in manifest.estimators)
    prim = {}
    errors = {}
    if need_naive:
        F = kaplan_meier(sample)
        keep = F.knots <= upper
        prim["naive"] = type(F)(F.knots[keep], F.values[keep], 0.0, monotone=True)
    if need_onestep:
        try:
            models = (cox_fit(sample, "event"), cox_fit(sample, "censoring"))
            prim["onestep"] = onestep_gamma_density(sample, *models, upper=upper).as_step_function()
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            errors["onestep"] = str(exc)
    for name in manifest.estimators:
        target, proc, transform = ESTIMATORS[name]
        if proc not in prim:
            out[name] = np.full(x.size, np.nan)
            continue
        F = prim[proc]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if target == "density":
                    est = density_from_primitive(F, upper)
                elif transform == "restricted_mean":
                    est = hazard_from_primitive(F, upper, clip=(proc == "onestep"))
                else:
                    est = hazard_identity_from_primitive(F, upper)
            out[name] = np.asarray(est(x), dtype=float)
        except (ValueError, ArithmeticError) as exc:
            errors[name] = str(exc)
            out[name] = np.full(x.size, np.nan)
    return rep, out, errors


def _run_chunk(args):
    manifest, reps = args
    return [_one_rep(manifest, r) for r in reps]


def theoretical_variances(setting: SimSetting, x_eval, estimators, chernoff_variance=None) -> dict:
    """Limit variance of ``n^{1/3}[theta_n(x) - theta_0(x)]`` per (estimator, x).

    One-step estimators use the conditional-censoring scale factors.  Naive
    estimators use the independent-censoring factors when Kaplan-Meier is
    consistent (``alpha1 == 0`` or ``beta1 == 0``); otherwise they are
    centred at the naive limit curve with
    ``kappa = S*(x)^2 lambda*(x) / E_W[S(x|W) G(x|W)]``, the Kaplan-Meier
    variance density for that limit.
    """
    cvar = default_chernoff_table().variance if chernoff_variance is None else chernoff_variance
    model = true_marginals(setting)
    consistent = setting.alpha1 == 0.0 or setting.beta1 == 0.0
    out = {}
    naive_curve = None
    if not consistent:
        h = 1e-3
        grid = np.sort(np.concatenate([np.asarray(x_eval) + d for d in (-h, 0.0, h)]))
        naive_curve = naive_limit_curve(model, grid)
    for name in estimators:
        target, proc, _ = ESTIMATORS[name]
        for x in x_eval:
            if proc == "onestep":
                tau_fn = tau_density if target == "density" else tau_hazard
                rep = tau_fn(model, x, "conditional", chernoff_variance=cvar)
                out[(name, x)] = rep.variance_of_limit
            elif consistent:
                tau_fn = tau_density if target == "density" else tau_hazard
                rep = tau_fn(model, x, "independent", chernoff_variance=cvar)
                out[(name, x)] = rep.variance_of_limit
            else:
                g = naive_curve.grid
                j = int(np.argmin(np.abs(g - x)))
                s_star, f_star, l_star = naive_curve.survival[j], naive_curve.density[j], naive_curve.hazard[j]
                at_risk = float(
                    model.covariate_quadrature[1]
                    @ (
                        model.cond_survival(x, model.covariate_quadrature[0])
                        * model.cond_censor_survival(x, model.covariate_quadrature[0])
                    )
                )
                kappa = s_star**2 * l_star / at_risk
                if target == "density":
                    slope = (naive_curve.density[j + 1] - naive_curve.density[j - 1]) / (g[j + 1] - g[j - 1])
                    tau = np.cbrt(4 * slope * kappa)
                else:
                    slope = (naive_curve.hazard[j + 1] - naive_curve.hazard[j - 1]) / (g[j + 1] - g[j - 1])
                    tau = np.cbrt(4 * slope * kappa / s_star**2)
                out[(name, x)] = float(tau**2 * cvar)
    return out


@dataclass
class StudyResult:
    """Per-replication draws and per-(x, estimator) summaries."""

    manifest: RunManifest
    values: dict  # estimator -> (reps, len(x_eval)) array
    truth: dict  # estimator -> true theta_0 at x_eval
    theory_var: dict
    failures: dict = field(default_factory=dict)

    @property
    def x_eval(self) -> np.ndarray:
        return np.asarray(self.manifest.x_eval)

    def _col(self, x):
        hits = np.flatnonzero(np.isclose(self.x_eval, x))
        if hits.size == 0:
            raise KeyError(f"x={x} not in x_eval")
        return int(hits[0])

    def estimates(self, estimator: str, x: float) -> np.ndarray:
        v = self.values[estimator][:, self._col(x)]
        return v[np.isfinite(v)]

    def standardized(self, estimator: str, x: float) -> np.ndarray:
        j = self._col(x)
        return self.manifest.n ** (1.0 / 3.0) * (self.estimates(estimator, x) - self.truth[estimator][j])

    def summary_rows(self) -> list:
        rows = []
        for j, x in enumerate(self.manifest.x_eval):
            for name in self.manifest.estimators:
                v = self.estimates(name, x)
                std = self.standardized(name, x)
                rows.append(
                    {
                        "x": x,
                        "estimator": name,
                        "emp_mean": float(v.mean()) if v.size else float("nan"),
                        "emp_var_std": float(std.var(ddof=1)) if v.size > 1 else float("nan"),
                        "theory_var": self.theory_var.get((name, x), float("nan")),
                        "bias": float(v.mean() - self.truth[name][j]) if v.size else float("nan"),
                    }
                )
        return rows

    def draws_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rep,x,estimator,value,standardized\n")
        scale = self.manifest.n ** (1.0 / 3.0)
        for rep in range(self.manifest.reps):
            for j, x in enumerate(self.manifest.x_eval):
                for name in self.manifest.estimators:
                    val = self.values[name][rep, j]
                    std = scale * (val - self.truth[name][j])
                    buf.write(f"{rep},{format_float(x)},{name},{format_float(val)},{format_float(std)}\n")
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        cols = ["x", "estimator", "emp_mean", "emp_var_std", "theory_var", "bias"]
        buf.write(",".join(cols) + "\n")
        for row in self.summary_rows():
            buf.write(",".join(row[c] if c == "estimator" else format_float(row[c]) for c in cols) + "\n")
        return buf.getvalue()

    def manifest_json(self) -> str:
        x = self.x_eval
        info = {
            "manifest": self.manifest.to_dict(),
            "failures": self.failures,
            # top decile of the isotonization interval, where boundary effects show
            "boundary_flagged_x": [float(v) for v in x[x >= 0.9 * self.manifest.upper]],
        }
        return json.dumps(info, indent=2, sort_keys=True) + "\n"

    def write(self, outdir, prefix: str = "study") -> dict:
        os.makedirs(outdir, exist_ok=True)
        paths = {
            "draws": os.path.join(outdir, f"{prefix}_draws.csv"),
            "summary": os.path.join(outdir, f"{prefix}_summary.csv"),
            "manifest": os.path.join(outdir, f"{prefix}_manifest.json"),
        }
        for key, text in (
            ("draws", self.draws_csv()),
            ("summary", self.summary_csv()),
            ("manifest", self.manifest_json()),
        ):
            with open(paths[key], "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return paths


def run_study(
    manifest: RunManifest,
    threads: int | None = None,
    chernoff_variance: float | None = None,
    max_failure_rate: float = 0.01,
) -> StudyResult:
    """Run all replications; output depends only on the manifest.

    Replication ``r`` draws from a stream keyed by ``(seed, r)`` and results
    are reassembled by index, so ``threads`` does not change the output.
    """
    reps = list(range(manifest.reps))
    threads = (os.cpu_count() or 1) if threads is None else max(1, int(threads))
    if threads > 1 and manifest.reps > 1:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for part in pool.map(_run_chunk, [(manifest, c) for c in chunks]) for r in part]
    else:
        results = _run_chunk((manifest, reps))
    results.sort(key=lambda r: r[0])

    k = len(manifest.x_eval)
    values = {name: np.full((manifest.reps, k), np.nan) for name in manifest.estimators}
    failures: dict = {}
    for rep, out, errors in results:
        for name, v in out.items():
            values[name][rep] = v
        for name, msg in errors.items():
            failures.setdefault(name, []).append({"rep": rep, "error": msg})
    for name in manifest.estimators:
        bad = int(np.sum(~np.all(np.isfinite(values[name]), axis=1)))
        if bad:
            log.warning("%s: %d of %d replications failed", name, bad, manifest.reps)
        if bad > max_failure_rate * manifest.reps:
            raise StudyError(f"{name}: {bad} of {manifest.reps} replications failed")

    model = true_marginals(manifest.setting)
    x = np.asarray(manifest.x_eval)
    truth = {}
    for name in manifest.estimators:
        target = ESTIMATORS[name][0]
        truth[name] = np.asarray(model.density(x) if target == "density" else model.hazard(x), dtype=float)
    theory = theoretical_variances(manifest.setting, manifest.x_eval, manifest.estimators, chernoff_variance)
    return StudyResult(manifest, values, truth, theory, failures)
