"""Greatest convex minorants of cusum diagrams and the Iso operator.

Every estimator in this package is the left derivative of the greatest
convex minorant (GCM) of a finite diagram of points ``(Phi_n(x_j),
Gamma_n(x_j))``, evaluated at ``Phi_n(x)``.  This module holds the exact
finite-diagram machinery; the estimators only decide which points go in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "StepFunction",
    "CusumDiagram",
    "ConvexMinorant",
    "MonotoneEstimate",
    "gcm",
    "left_derivative",
    "generalized_inverse",
    "build_diagram",
    "grenander_type",
    "iso",
    "switch_check",
]

# relative slack on cross products when merging (near-)collinear hull points
COLLINEAR_SLACK = 1e-12


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function.

    ``f(x) = values[j]`` for the largest ``j`` with ``knots[j] <= x`` and
    ``f(x) = left_limit_value`` for ``x < knots[0]``.

    Parameters
    ----------
    knots : array-like
        Strictly increasing jump locations.
    values : array-like
        Function value on ``[knots[j], knots[j + 1])``.
    left_limit_value : float
        Value to the left of the first knot.
    monotone : bool
        If set, ``values`` (together with ``left_limit_value``) must be
        non-decreasing.
    """

    knots: np.ndarray
    values: np.ndarray
    left_limit_value: float = 0.0
    monotone: bool = False

    def __post_init__(self):
        knots = _readonly(self.knots).ravel()
        values = _readonly(self.values).ravel()
        if knots.size == 0:
            raise ValueError("step function needs at least one knot")
        if knots.shape != values.shape:
            raise ValueError("knots and values must have the same length")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValueError("non-finite input")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        left = float(self.left_limit_value)
        if self.monotone:
            if np.any(np.diff(values) < 0) or values[0] < left:
                raise ValueError("values must be non-decreasing for a monotone step function")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "left_limit_value", left)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, x, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.left_limit_value)
        return out if out.ndim else float(out)

    def left_limit(self, x):
        """Evaluate ``f(x-)``."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, x, side="left") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.left_limit_value)
        return out if out.ndim else float(out)

    @property
    def max_value(self) -> float:
        return float(max(self.left_limit_value, self.values.max()))


@dataclass(frozen=True)
class CusumDiagram:
    """Finite point set ``{(u_j, g_j)}`` on ``J_n = [0, u_max]``.

    The first point sits at ``u = 0``.  ``u_max`` defaults to the largest
    ``u``; it may not be smaller.
    """

    u: np.ndarray
    g: np.ndarray
    u_max: Optional[float] = None

    def __post_init__(self):
        u = _readonly(self.u).ravel()
        g = _readonly(self.g).ravel()
        if u.size == 0:
            raise ValueError("empty diagram")
        if u.shape != g.shape:
            raise ValueError("u and g must have the same length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(g))):
            raise ValueError("non-finite input")
        if np.any(np.diff(u) < 0):
            raise ValueError("diagram abscissae must be non-decreasing")
        if u[0] != 0.0:
            raise ValueError("first diagram point must have u = 0")
        u_max = float(u[-1]) if self.u_max is None else float(self.u_max)
        if u[-1] > u_max:
            raise ValueError("diagram point beyond u_max")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "u_max", u_max)

    @classmethod
    def from_points(cls, points, u_max=None):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts[:, 0], pts[:, 1], u_max)

    def __len__(self):
        return self.u.size


@dataclass(frozen=True)
class ConvexMinorant:
    """Lower convex hull of a diagram.

    ``u`` and ``g`` are the hull vertices; ``slopes[k]`` is the slope on
    ``(u[k], u[k + 1]]`` and is strictly increasing in ``k``.
    """

    u: np.ndarray
    g: np.ndarray
    slopes: np.ndarray

    @property
    def hull_points(self) -> np.ndarray:
        return np.column_stack([self.u, self.g])

    @property
    def segment_slopes(self) -> np.ndarray:
        return self.slopes

    def __call__(self, t):
        """Value of the minorant at ``t`` (linear between vertices)."""
        return np.interp(t, self.u, self.g)

    def left_derivative(self, t):
        return left_derivative(self, t)


def _collapse_duplicates(u, g):
    order = np.argsort(u, kind="stable")
    u, g = u[order], g[order]
    uniq, start = np.unique(u, return_index=True)
    if uniq.size == u.size:
        return u, g
    return uniq, np.minimum.reduceat(g, start)


def gcm(diagram) -> ConvexMinorant:
    """Greatest convex minorant of a finite diagram.

    Duplicate abscissae keep their smallest ordinate.  (Near-)collinear
    vertices are merged so that the returned slopes strictly increase.

    Parameters
    ----------
    diagram : CusumDiagram or array-like of shape (m, 2)

    Returns
    -------
    ConvexMinorant
    """
    if not isinstance(diagram, CusumDiagram):
        pts = np.asarray(diagram, dtype=float)
        if pts.size == 0:
            raise ValueError("empty diagram")
        pts = pts.reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite input")
        u, g = pts[:, 0], pts[:, 1]
    else:
        u, g = diagram.u, diagram.g
    u, g = _collapse_duplicates(np.asarray(u, float), np.asarray(g, float))

    hu: list[float] = []
    hg: list[float] = []
    for ui, gi in zip(u.tolist(), g.tolist()):
        while len(hu) >= 2:
            du1, dg1 = hu[-1] - hu[-2], hg[-1] - hg[-2]
            du2, dg2 = ui - hu[-2], gi - hg[-2]
            cross = du1 * dg2 - dg1 * du2
            if cross > COLLINEAR_SLACK * (abs(du1 * dg2) + abs(dg1 * du2)):
                break
            hu.pop()
            hg.pop()
        hu.append(ui)
        hg.append(gi)

    hu_a = np.array(hu)
    hg_a = np.array(hg)
    slopes = np.diff(hg_a) / np.diff(hu_a) if hu_a.size > 1 else np.empty(0)
    return ConvexMinorant(_readonly(hu_a), _readonly(hg_a), _readonly(slopes))


def left_derivative(m: ConvexMinorant, u):
    """Left derivative of the minorant at ``u``.

    At an interior hull vertex this is the slope of the segment ending
    there.  Defined for ``u`` in ``(u_0, u_max]``.
    """
    t = np.asarray(u, dtype=float)
    if m.slopes.size == 0:
        raise ValueError("degenerate diagram: a single abscissa has no slope")
    if np.any(t <= m.u[0]):
        raise ValueError("left derivative undefined at or below left endpoint")
    if np.any(t > m.u[-1]):
        raise ValueError("outside diagram domain")
    idx = np.searchsorted(m.u, t, side="left") - 1
    out = m.slopes[idx]
    return out if out.ndim else float(out)


def generalized_inverse(f: StepFunction, y):
    """``inf{x : f(x) >= y}`` for a monotone step function.

    Returns ``-inf`` when ``y`` does not exceed ``f``'s left limit.
    """
    if not f.monotone:
        raise ValueError("generalized inverse needs a monotone step function")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr > f.max_value):
        raise ValueError("inverse out of range")
    idx = np.searchsorted(f.values, y_arr, side="left")
    out = np.where(y_arr <= f.left_limit_value, -np.inf, f.knots[np.minimum(idx, f.knots.size - 1)])
    return out if out.ndim else float(out)


def build_diagram(phi_values, gamma_values, u_max, gamma_left=0.0) -> CusumDiagram:
    """Diagram ``{(0, gamma_left)} + {(phi_j, gamma_j)}``, closed at ``u_max``.

    Points with ``phi_j > u_max`` are dropped.  If the last retained point
    lies left of ``u_max`` the diagram is closed with ``(u_max, last g)``,
    the value of the primitive step function on the remaining stretch.
    """
    phi = np.asarray(phi_values, dtype=float)
    gam = np.asarray(gamma_values, dtype=float)
    keep = phi <= u_max
    u = np.concatenate([[0.0], phi[keep]])
    g = np.concatenate([[float(gamma_left)], gam[keep]])
    if u[-1] < u_max:
        u = np.append(u, u_max)
        g = np.append(g, g[-1])
    return CusumDiagram(u, g, u_max)


@dataclass(frozen=True)
class MonotoneEstimate:
    """Fitted monotone function ``x -> left slope of the GCM at Phi_n(x)``.

    Attributes
    ----------
    diagram : CusumDiagram
    transform : callable
        The domain transform ``Phi_n``.
    minorant : ConvexMinorant
    domain : tuple of float
        Interval of ``x`` over which the fit was isotonized.
    info : dict
        Provenance (estimator name, adjustment, diagnostics).
    """

    diagram: CusumDiagram
    transform: Callable[[Any], Any]
    minorant: ConvexMinorant
    domain: tuple
    info: dict = field(default_factory=dict)

    @property
    def u_max(self) -> float:
        return self.diagram.u_max

    def evaluate(self, x, strict: bool = False):
        """Evaluate the estimate.

        With ``strict=False`` points mapped to ``Phi_n(x) <= 0`` take the
        first slope and points beyond ``u_max`` take the last one; see
        :meth:`at_boundary`.  With ``strict=True`` those raise.
        """
        t = np.asarray(self.transform(np.asarray(x, dtype=float)), dtype=float)
        if strict:
            if np.any(t <= 0):
                raise ValueError("evaluation at left boundary")
            return left_derivative(self.minorant, t)
        m = self.minorant
        idx = np.clip(np.searchsorted(m.u, t, side="left") - 1, 0, m.slopes.size - 1)
        out = m.slopes[idx]
        return out if out.ndim else float(out)

    __call__ = evaluate

    def at_boundary(self, x):
        """True where ``Phi_n(x)`` is at or outside the ends of ``J_n``."""
        t = np.asarray(self.transform(np.asarray(x, dtype=float)), dtype=float)
        return (t <= 0) | (t >= self.u_max)


def grenander_type(
    x_grid,
    gamma_values,
    phi_values,
    u_max,
    transform,
    gamma_left=0.0,
    domain=None,
    info=None,
) -> MonotoneEstimate:
    """Assemble a generalized Grenander-type estimate from ``(Gamma_n, Phi_n, u_n)``.

    ``gamma_values`` and ``phi_values`` are the primitive and transform
    evaluated at the jump grid ``x_grid``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    diagram = build_diagram(phi_values, gamma_values, u_max, gamma_left)
    minorant = gcm(diagram)
    if minorant.slopes.size == 0:
        raise ValueError("degenerate diagram: a single abscissa has no slope")
    if domain is None:
        domain = (float(x_grid.min()) if x_grid.size else 0.0, float(x_grid.max()) if x_grid.size else 0.0)
    return MonotoneEstimate(diagram, transform, minorant, tuple(domain), dict(info or {}))


def _check_pair(gamma: StepFunction, phi: StepFunction):
    if not phi.monotone:
        raise ValueError("transform must be a monotone step function")
    if gamma.knots.shape != phi.knots.shape or not np.array_equal(gamma.knots, phi.knots):
        raise ValueError("grid mismatch")


def iso(gamma: StepFunction, phi: StepFunction, u_max: float, x: float) -> float:
    """``Iso_J(Gamma o Phi^-, Phi)`` at ``x`` for step-function inputs.

    ``gamma`` and ``phi`` must jump on the same grid.  The diagram is
    ``(0, gamma(-inf))`` followed by ``(phi(x_j), gamma(x_j))``.
    """
    _check_pair(gamma, phi)
    t = phi(x)
    if t <= 0:
        raise ValueError("evaluation at left boundary")
    diagram = build_diagram(phi.values, gamma.values, u_max, gamma.left_limit_value)
    return left_derivative(gcm(diagram), t)


def switch_check(gamma: StepFunction, phi: StepFunction, u_max: float, x: float, c: float):
    """Both sides of the generalized switch relation.

    Returns ``(iso(...) > c, sup argmax_v {c Phi(v) - Gamma(v)} < Phi^-(Phi(x)))``
    with the argmax taken by exhaustive scan over the left endpoint, every
    jump point of ``phi`` that maps into ``[0, u_max]`` and, when the last
    of those falls short of ``u_max``, the closing point of the diagram
    (placed at ``v = +inf``).
    """
    lhs = iso(gamma, phi, u_max, x) > c

    keep = phi.values <= u_max
    cand_x = np.concatenate([[-np.inf], phi.knots[keep]])
    cand_phi = np.concatenate([[0.0], phi.values[keep]])
    cand_gamma = np.concatenate([[gamma.left_limit_value], gamma.values[keep]])
    if cand_phi[-1] < u_max:
        cand_x = np.append(cand_x, np.inf)
        cand_phi = np.append(cand_phi, u_max)
        cand_gamma = np.append(cand_gamma, cand_gamma[-1])
    crit = c * cand_phi - cand_gamma
    best = crit.max()
    sup_argmax = cand_x[np.flatnonzero(crit == best)].max()
    rhs = sup_argmax < generalized_inverse(phi, phi(x))
    return bool(lhs), bool(rhs)
