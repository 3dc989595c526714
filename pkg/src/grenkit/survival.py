"""Survival primitives: ECDF, Kaplan-Meier, restricted mean, Cox/Breslow."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gcm import StepFunction

__all__ = [
    "SurvivalSample",
    "CoxModel",
    "ConvergenceError",
    "ecdf",
    "kaplan_meier",
    "RestrictedMean",
    "restricted_mean_transform",
    "cox_fit",
    "cox_partial_loglik",
    "conditional_survival",
]


@dataclass(frozen=True)
class SurvivalSample:
    """Right-censored observations ``(Y, Delta, W)``.

    ``w`` is always stored as an ``(n, d)`` array, ``d`` possibly 0.
    """

    y: np.ndarray
    delta: np.ndarray
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        delta = np.array(self.delta).ravel()
        if y.size == 0:
            raise ValueError("empty sample")
        if delta.shape != y.shape:
            raise ValueError("delta length must match y")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("follow-up times must be positive and finite")
        if delta.dtype != bool:
            if not np.all(np.isin(delta, (0, 1))):
                raise ValueError("delta must be 0/1")
            delta = delta.astype(bool)
        if self.w is None:
            w = np.empty((y.size, 0))
        else:
            w = np.array(self.w, dtype=float)
            if w.ndim == 1:
                w = w.reshape(-1, 1)
            if w.shape[0] != y.size:
                raise ValueError("covariate rows must match y")
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite covariate")
        for name, arr in (("y", y), ("delta", delta), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def flipped(self) -> "SurvivalSample":
        """Same sample with censoring treated as the event."""
        return SurvivalSample(self.y, ~self.delta, self.w)


def ecdf(times) -> StepFunction:
    """Empirical distribution function; tied values stack their jumps."""
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite input")
    knots, counts = np.unique(t, return_counts=True)
    return StepFunction(knots, np.cumsum(counts) / t.size, 0.0, monotone=True)


def _risk_table(y, delta):
    """Distinct times with event counts, censor counts and numbers at risk."""
    times, inv = np.unique(y, return_inverse=True)
    d = np.bincount(inv, weights=delta.astype(float), minlength=times.size)
    c = np.bincount(inv, weights=(~delta).astype(float), minlength=times.size)
    tot = d + c
    at_risk = tot[::-1].cumsum()[::-1]
    return times, d, c, at_risk


def kaplan_meier(s: SurvivalSample) -> StepFunction:
    """Product-limit estimator in CDF form ``F_n = 1 - S_n``.

    Events precede censorings at tied times.  Between censoring times the
    product telescopes, so it is accumulated blockwise as a ratio of
    at-risk counts; without censoring this reproduces :func:`ecdf` to the
    last bit.
    """
    times, d, c, at_risk = _risk_table(s.y, s.delta)
    events_cum = np.cumsum(d)
    # block b starts right after the b-th time carrying a censoring
    block = np.concatenate([[0], np.cumsum(c > 0)[:-1]])
    starts = np.flatnonzero(np.diff(np.concatenate([[-1], block])))
    n_start = at_risk[starts]
    ev_before = np.concatenate([[0.0], events_cum])[starts]
    ends = np.concatenate([starts[1:] - 1, [times.size - 1]])
    ev_in_block = events_cum[ends] - ev_before
    surv_start = np.concatenate([[1.0], np.cumprod((n_start - ev_in_block) / n_start)[:-1]])
    b = block
    F = (1.0 - surv_start[b]) + surv_start[b] * ((events_cum - ev_before[b]) / n_start[b])
    F = np.clip(F, 0.0, 1.0)
    F = np.maximum.accumulate(F)
    return StepFunction(times, F, 0.0, monotone=True)


class RestrictedMean:
    """``u -> int_0^u [1 - F(v)] dv`` for a CDF-form step function ``F``.

    Continuous, piecewise linear and non-decreasing when ``F <= 1``.  With
    ``clip=True`` the integrand is clipped to ``[0, 1]``, which keeps the
    transform monotone for primitives that stray outside the unit interval.
    """

    def __init__(self, F: StepFunction, clip: bool = False):
        self.F = F
        surv = 1.0 - F.values
        left = 1.0 - F.left_limit_value
        if clip:
            surv = np.clip(surv, 0.0, 1.0)
            left = min(max(left, 0.0), 1.0)
        self._surv = surv
        self._left = left
        k = F.knots
        head = k[0] * left
        self._cum = np.concatenate([[head], head + np.cumsum(np.diff(k) * surv[:-1])])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("restricted mean needs u >= 0")
        k = self.F.knots
        idx = np.searchsorted(k, u, side="right") - 1
        j = np.clip(idx, 0, None)
        out = np.where(idx >= 0, self._cum[j] + (u - k[j]) * self._surv[j], u * self._left)
        return out if out.ndim else float(out)

    def at_knots(self) -> np.ndarray:
        return self._cum.copy()


def restricted_mean_transform(F: StepFunction, u):
    """Exact ``int_0^u [1 - F(v)] dv``."""
    return RestrictedMean(F)(u)


class ConvergenceError(RuntimeError):
    """Newton iterations did not reach a finite maximizer of the partial likelihood."""

    def __init__(self, message, beta=None, gradient_norm=None):
        super().__init__(message)
        self.beta = beta
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class CoxModel:
    beta: np.ndarray
    baseline_cumhaz: StepFunction
    iterations: int
    final_gradient_norm: float
    event_role: str = "event"

    @property
    def convergence(self) -> dict:
        return {"iterations": self.iterations, "final_gradient_norm": self.final_gradient_norm}

    def risk_score(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w.reshape(-1, self.beta.size) if self.beta.size else w.reshape(-1, 0)
        return np.exp(w @ self.beta)

    def survival(self, t, w):
        return conditional_survival(self, t, w)


def cox_partial_loglik(beta, s: SurvivalSample, event_role: str = "event") -> float:
    """Breslow partial log-likelihood."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    delta = s.delta if event_role == "event" else ~s.delta
    order = np.argsort(s.y, kind="stable")
    y, w, dl = s.y[order], s.w[order], delta[order]
    eta = w @ beta
    ll = 0.0
    for t in np.unique(y[dl]):
        at = y >= t
        ev = (y == t) & dl
        m = eta[at].max()
        ll += eta[ev].sum() - ev.sum() * (m + np.log(np.exp(eta[at] - m).sum()))
    return float(ll)


def cox_fit(
    s: SurvivalSample,
    event_role: str = "event",
    tol: float = 1e-8,
    max_iter: int = 50,
) -> CoxModel:
    """Cox proportional hazards fit with Breslow ties and baseline.

    Damped Newton-Raphson with step halving on the partial likelihood.
    ``event_role='censoring'`` fits the censoring hazard by complementing
    the event indicator.

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iter`` steps,
        or the likelihood has no finite maximizer (separation).
    ValueError
        On a singular information matrix ("degenerate design").
    """
    if event_role not in ("event", "censoring"):
        raise ValueError("event_role must be 'event' or 'censoring'")
    if s.d < 1:
        raise ValueError("cox_fit needs at least one covariate")
    delta = s.delta if event_role == "event" else ~s.delta
    if not delta.any():
        raise ValueError(f"no {event_role} times in sample")

    order = np.argsort(s.y, kind="stable")
    y, w, dl = s.y[order], s.w[order], delta[order]
    times, first_idx = np.unique(y, return_index=True)
    d_counts = np.bincount(np.searchsorted(times, y), weights=dl.astype(float), minlength=times.size)
    has_event = d_counts > 0
    w_event_sum = np.zeros((times.size, w.shape[1]))
    np.add.at(w_event_sum, np.searchsorted(times, y[dl]), w[dl])
    idx_e = first_idx[has_event]
    D = d_counts[has_event]
    s_ev = w_event_sum[has_event]

    def evaluate(beta, hessian=True):
        eta = w @ beta
        shift = eta.max()
        r = np.exp(eta - shift)
        rw = r[:, None] * w
        s0 = r[::-1].cumsum()[::-1][idx_e]
        s1 = rw[::-1].cumsum(axis=0)[::-1][idx_e]
        ll = float(np.sum(s_ev @ beta) - np.sum(D * (np.log(s0) + shift)))
        mean_w = s1 / s0[:, None]
        grad = (s_ev - D[:, None] * mean_w).sum(axis=0)
        if not hessian:
            return ll, grad, None
        s2 = (rw[:, :, None] * w[:, None, :])[::-1].cumsum(axis=0)[::-1][idx_e]
        cov = s2 / s0[:, None, None] - mean_w[:, :, None] * mean_w[:, None, :]
        info = np.einsum("k,kij->ij", D, cov)
        return ll, grad, info

    beta = np.zeros(w.shape[1])
    ll, grad, info = evaluate(beta)
    info0_min = float(np.linalg.eigvalsh(info).min())
    it = 0
    gnorm = float(np.linalg.norm(grad))
    while gnorm > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Cox fit did not converge in {max_iter} iterations (|grad|={gnorm:.3g})",
                beta=beta.copy(),
                gradient_norm=gnorm,
            )
        try:
            if np.linalg.cond(info) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise ValueError("degenerate design") from None
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_c, grad_c, info_c = evaluate(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll, grad, info = cand, ll_c, grad_c, info_c
        gnorm = float(np.linalg.norm(grad))
        it += 1

    # a vanishing gradient with vanishing curvature means the likelihood is
    # still rising towards infinity (separation), not a maximum
    if info0_min > 0 and float(np.linalg.eigvalsh(info).min()) < 1e-6 * info0_min:
        raise ConvergenceError(
            "partial likelihood has no finite maximizer (covariate separates the risk sets)",
            beta=beta.copy(),
            gradient_norm=gnorm,
        )

    eta = w @ beta
    shift = eta.max()
    s0 = np.exp(eta - shift)[::-1].cumsum()[::-1][idx_e] * np.exp(shift)
    cumhaz = np.cumsum(D / s0)
    baseline = StepFunction(times[has_event], cumhaz, 0.0, monotone=True)
    return CoxModel(beta, baseline, it, gnorm, event_role)


def conditional_survival(m: CoxModel, t, w, left: bool = False):
    """``exp(-exp(beta'w) Lambda_0(t))``; ``left=True`` uses ``Lambda_0(t-)``.

    ``t`` and ``w`` broadcast: ``w`` of shape ``(d,)`` or ``(k, d)``.
    """
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite input")
    lam = m.baseline_cumhaz.left_limit(t) if left else m.baseline_cumhaz(t)
    lam = np.where(t < 0, 0.0, lam)
    risk = np.exp(w @ m.beta) if w.ndim > 1 else float(np.exp(w @ m.beta))
    out = np.exp(-risk * lam)
    return out if np.ndim(out) else float(out)
