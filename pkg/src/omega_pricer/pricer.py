"""Value assembly and free-boundary optimisation for the perpetual put.

Three analytic routes cover the supported model/discount combinations:

* Black-Scholes models price through two solutions of the second-order
  equation sigma^2 s^2/2 h'' + mu s h' - omega(s) h = 0 (an inner branch
  used below the stopping interval and an outer branch above it).
* Exponential-jump models with nonnegative discounts stop on [0, u*] and
  price through the down-passage factor Z - c W of the level-shifted rate,
  plus a creeping term when sigma > 0.
* Exponential-jump models whose discount is negative near zero admit a
  two-sided stopping interval priced through the H-function below, the
  memoryless overshoot average above, and the same creeping term.

Calls are handled exclusively through the put-call transform.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .discount import DiscountFn, Rational, check_flat_below_one, shift_tilt
from .levy import LevyModel, laplace_exponent, psi_roots
from .scale import (
    LogGrid,
    _c_limit_by_extension,
    build_scale_table,
    creeping_profile,
    ode_solve_crash,
    ode_solve_crash_sigma,
    phi_ext,
    renewal_solve_h,
)
from .specfun import gauss_2f1, gauss_2f1_deriv

__all__ = [
    "PricingProblem",
    "Boundaries",
    "PricingResult",
    "DualPutSpec",
    "solve_h_ode",
    "value_bs",
    "value_crash_one_sided",
    "value_two_sided",
    "optimize_boundaries",
    "smooth_fit_residual",
    "hjb_residual",
    "convexity_margin",
    "putcall_transform",
    "rational_bs_branches",
]


@dataclass(frozen=True)
class PricingProblem:
    model: LevyModel
    omega: DiscountFn
    strike: float
    payoff: str = "put"

    def __post_init__(self):
        if self.strike <= 0.0:
            raise ValueError("strike must be > 0")
        if self.payoff not in ("put", "call"):
            raise ValueError("payoff must be 'put' or 'call'")

    def intrinsic(self, s):
        s = np.asarray(s, dtype=float)
        out = np.maximum(self.strike - s, 0.0) if self.payoff == "put" \
            else np.maximum(s - self.strike, 0.0)
        return out if s.ndim else float(out)


@dataclass(frozen=True)
class Boundaries:
    l: float
    u: float

    def __post_init__(self):
        if not (0.0 <= self.l <= self.u):
            raise ValueError("need 0 <= l <= u")


@dataclass
class PricingResult:
    boundaries: Boundaries
    s_grid: np.ndarray
    values: np.ndarray
    fit: dict
    diagnostics: dict
    value_fn: Optional[Callable] = field(default=None, repr=False)
    value_deriv_fn: Optional[Callable] = field(default=None, repr=False)

    @property
    def l_star(self) -> float:
        return self.boundaries.l

    @property
    def u_star(self) -> float:
        return self.boundaries.u


# ---------------------------------------------------------------------------
# Black-Scholes branch machinery
# ---------------------------------------------------------------------------

class HBranch:
    """One solution of the h-equation in log coordinates.

    Carries (log h, d log h/dx), integrated both ways from an anchor where
    value and slope are known; a dense table serves root scans and exact
    re-integration serves final curve evaluation.
    """

    def __init__(self, model: LevyModel, omega: DiscountFn,
                 x_anchor: float, log_h0: float, dlog0: float,
                 x_lo: float, x_hi: float, n_dense: int = 2049):
        self.model = model
        self.omega = omega
        self.x_anchor = x_anchor
        self.log_h0 = log_h0
        self.dlog0 = dlog0
        xs, lh, dl = self._integrate(np.linspace(x_lo, x_hi, n_dense))
        self.x_nodes, self.log_h, self.dlog = xs, lh, dl

    def _rhs(self, x, y):
        sig2 = self.model.sigma ** 2
        d = y[1]
        q = float(self.omega(math.exp(x)))
        return [d, (2.0 / sig2) * q - (2.0 * self.model.zeta / sig2) * d - d * d]

    def _integrate(self, x_targets: np.ndarray):
        """(x, log h, dlog) at the requested points, exact to solver tolerance."""
        x_targets = np.unique(np.asarray(x_targets, dtype=float))
        lh = np.empty_like(x_targets)
        dl = np.empty_like(x_targets)
        y0 = [self.log_h0, self.dlog0]
        tiny = 1e-13 * max(1.0, abs(self.x_anchor))
        at_anchor = np.abs(x_targets - self.x_anchor) <= tiny
        lh[at_anchor] = y0[0]
        dl[at_anchor] = y0[1]
        for sign in (+1, -1):
            if sign > 0:
                mask = x_targets > self.x_anchor + tiny
                pts = x_targets[mask]
            else:
                mask = x_targets < self.x_anchor - tiny
                pts = x_targets[mask][::-1]
            if pts.size == 0:
                continue
            sol = solve_ivp(self._rhs, (self.x_anchor, pts[-1]), y0, t_eval=pts,
                            method="DOP853", rtol=1e-11, atol=1e-12)
            if not sol.success:
                raise RuntimeError(f"h-equation integration failed: {sol.message}")
            idx = np.searchsorted(x_targets, sol.t)
            lh[idx] = sol.y[0]
            dl[idx] = sol.y[1]
        return x_targets, lh, dl

    def log_h_at(self, s):
        return np.interp(np.log(s), self.x_nodes, self.log_h)

    def log_h_exact(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        xt = np.log(s)
        xs_u, lh, _ = self._integrate(xt)
        return lh[np.searchsorted(xs_u, xt)]

    def ratio(self, s_num, s_den):
        """h(s_num)/h(s_den) without leaving log space."""
        return np.exp(self.log_h_at(s_num) - self.log_h_at(s_den))

    def dlog_ds(self, s):
        """h'(s)/h(s)."""
        return np.interp(np.log(s), self.x_nodes, self.dlog) / np.asarray(s, dtype=float)


@dataclass(frozen=True)
class RationalBranchParams:
    a: float
    b: float
    c: float
    d: float


def rational_bs_branches(model: LevyModel, omega: Rational):
    """The two hypergeometric solutions for the rational discount family.

    h_i(s) = s^{d_i} 2F1(a_i, b_i; c_i; -s); the inner branch (i = 2) is used
    below the stopping interval and the outer branch (i = 1) above it.
    """
    sig2 = model.sigma ** 2
    L = 0.5 - model.mu / sig2
    M2 = L * L - 2.0 * omega.D / sig2
    G2 = L * L - 2.0 * (omega.C + omega.D) / sig2
    if M2 < 0.0 or G2 < 0.0:
        raise ValueError("discount too negative for a finite value function")
    M, G = math.sqrt(M2), math.sqrt(G2)
    params = {}
    for i in (1, 2):
        sgn = 1.0 if i == 1 else -1.0
        params[i] = RationalBranchParams(a=sgn * (M - G), b=-sgn * (M + G),
                                         c=1.0 - sgn * 2.0 * G, d=-sgn * G + L)

    def h(i, s):
        p = params[i]
        return s ** p.d * gauss_2f1(p.a, p.b, p.c, -s)

    def h_deriv(i, s):
        p = params[i]
        f = gauss_2f1(p.a, p.b, p.c, -s)
        fp = -gauss_2f1_deriv(p.a, p.b, p.c, -s)
        return p.d * s ** (p.d - 1.0) * f + s ** p.d * fp

    return params, h, h_deriv


def solve_h_ode(model: LevyModel, omega: DiscountFn,
                s_range: tuple = (0.05, 40.0)) -> tuple:
    """Inner and outer solutions of the h-equation as HBranch objects.

    The inner branch continues the larger-exponent power solution from
    s -> 0 and the outer branch the decaying one from s -> infinity.  For
    the rational discount family both branches are anchored to their closed
    hypergeometric forms, which the integration then reproduces.
    """
    if model.sigma <= 0.0 or model.has_jumps:
        raise ValueError("h-equation route requires a Black-Scholes model")
    sig2 = model.sigma ** 2
    zeta = model.zeta
    s_lo, s_hi = s_range
    x_lo, x_hi = math.log(s_lo / 4.0), math.log(s_hi * 4.0)
    if isinstance(omega, Rational):
        _, h, h_deriv = rational_bs_branches(model, omega)
        a_in, a_out = 1.0, max(2.0, 0.5 * s_hi)
        inner = HBranch(model, omega, math.log(a_in), math.log(h(2, a_in)),
                        a_in * h_deriv(2, a_in) / h(2, a_in), x_lo, x_hi)
        outer = HBranch(model, omega, math.log(a_out), math.log(h(1, a_out)),
                        a_out * h_deriv(1, a_out) / h(1, a_out), x_lo, x_hi)
        return inner, outer
    w_lo = float(omega(s_lo / 4.0))
    disc_lo = zeta * zeta + 2.0 * sig2 * w_lo
    if disc_lo < 0.0:
        raise ValueError("discount too negative near zero for a finite value")
    th_in = (-zeta + math.sqrt(disc_lo)) / sig2
    w_hi = float(omega(s_hi * 4.0))
    disc_hi = zeta * zeta + 2.0 * sig2 * w_hi
    if disc_hi < 0.0:
        raise ValueError("discount too negative at infinity for a finite value")
    th_out = (-zeta - math.sqrt(disc_hi)) / sig2
    inner = HBranch(model, omega, x_lo, 0.0, th_in, x_lo, x_hi)
    outer = HBranch(model, omega, x_hi, 0.0, th_out, x_lo, x_hi)
    return inner, outer


def value_bs(problem: PricingProblem, b: Boundaries, s,
             branches: Optional[tuple] = None, exact: bool = False):
    """Piecewise Black-Scholes value for stopping interval [l, u]."""
    if problem.model.has_jumps or problem.model.sigma <= 0.0:
        raise ValueError("value_bs requires a pure Black-Scholes model")
    if branches is None:
        branches = solve_h_ode(problem.model, problem.omega,
                               s_range=_default_s_range(problem, b))
    inner, outer = branches
    K = problem.strike
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    out = K - s.astype(float)
    below = s < b.l
    above = s > b.u
    if np.any(below):
        if exact:
            lh = inner.log_h_exact(np.append(s[below], b.l))
            out[below] = np.exp(lh[:-1] - lh[-1]) * (K - b.l)
        else:
            out[below] = inner.ratio(s[below], b.l) * (K - b.l)
    if np.any(above):
        if exact:
            lh = outer.log_h_exact(np.append(s[above], b.u))
            out[above] = np.exp(lh[:-1] - lh[-1]) * (K - b.u)
        else:
            out[above] = outer.ratio(s[above], b.u) * (K - b.u)
    return float(out[0]) if scalar else out


def _default_s_range(problem: PricingProblem, b: Optional[Boundaries] = None) -> tuple:
    K = problem.strike
    lo = 0.02 * K if b is None or b.l == 0.0 else min(0.02 * K, 0.25 * b.l)
    return (lo, 2.2 * K)


# ---------------------------------------------------------------------------
# Exponential-jump one-sided value (l* = 0)
# ---------------------------------------------------------------------------

class _CrashValuation:
    """Per-u scale data for the one-sided jump value."""

    def __init__(self, problem: PricingProblem, x_max: float = 3.0, n: int = 1537):
        if not problem.model.has_jumps:
            raise ValueError("requires an exponential-jump model")
        self.problem = problem
        self.x_max = x_max
        self.n = n
        self._c_cache: dict = {}

    def c_of(self, u: float) -> float:
        key = round(u, 12)
        if key not in self._c_cache:
            xi = shift_tilt(self.problem.omega, u)
            dec = psi_roots(self.problem.model)
            self._c_cache[key] = _c_limit_by_extension(
                dec, xi, LogGrid(min(self.x_max, 3.0), 1201), rel_tol=1e-7)
        return self._c_cache[key]

    def passage_split(self, u: float, x: np.ndarray) -> tuple:
        """(total down-passage factor, creeping part) at log-distances x.

        Differentiable rates evaluate the ODE route exactly at the requested
        points; discontinuous kinds fall back to interpolated renewal tables.
        """
        model = self.problem.model
        xi = shift_tilt(self.problem.omega, u)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        c = self.c_of(u)
        if xi.differentiable:
            xs = np.unique(np.concatenate([[0.0], x]))
            grid_like = _PointGrid(xs)
            solver = ode_solve_crash if model.sigma == 0.0 else ode_solve_crash_sigma
            wv = solver(model, xi, grid_like, "W")
            zv = solver(model, xi, grid_like, "Z")
            total = np.interp(x, xs, zv - c * wv)
        else:
            key = ("tab", round(u, 12))
            if key not in self._c_cache:
                from .scale import renewal_solve_w, renewal_solve_z

                dec = psi_roots(model)
                grid = LogGrid(max(self.x_max, float(np.max(x)) + 0.1), self.n)
                wv = renewal_solve_w(dec, xi, grid)
                zv = renewal_solve_z(dec, xi, grid)
                self._c_cache[key] = (grid.nodes(), zv - c * wv)
            nodes, tot = self._c_cache[key]
            total = np.interp(x, nodes, tot)
        if model.sigma > 0.0:
            creep = creeping_profile(model, self.problem.omega, u, x)
        else:
            creep = np.zeros_like(x)
        return total, creep

    def value(self, u: float, s) -> np.ndarray:
        K = self.problem.strike
        phi = self.problem.model.phi
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = K - s.astype(float)
        above = s > u
        if np.any(above):
            x = np.log(s[above] / u)
            total, creep = self.passage_split(u, x)
            jumped = total - creep
            out[above] = (K - u * phi / (phi + 1.0)) * jumped + (K - u) * creep
        return out


class _PointGrid:
    """Duck-typed grid over explicit sorted nodes (for exact ODE evaluation)."""

    def __init__(self, xs: np.ndarray):
        self._xs = np.asarray(xs, dtype=float)
        self.x_max = float(self._xs[-1]) if self._xs[-1] > 0 else 1e-9
        self.n = len(self._xs)

    def nodes(self) -> np.ndarray:
        return self._xs


def value_crash_one_sided(problem: PricingProblem, u: float, s,
                          valuation: Optional[_CrashValuation] = None):
    """One-sided (l = 0) value for exponential-jump models with omega >= 0.

    For s > u the value splits into a jump-passage part weighted by the
    memoryless overshoot average E(K - u e^{-Y})^+ = K - u*phi/(phi+1) and,
    when sigma > 0, a creeping part that lands exactly at u.
    """
    if not problem.omega.is_nonnegative:
        raise ValueError("one-sided route requires omega >= 0")
    if valuation is None:
        x_need = max(3.0, math.log(max(float(np.max(np.atleast_1d(s))), 2.0) / u) + 0.5)
        valuation = _CrashValuation(problem, x_max=x_need)
    out = valuation.value(u, s)
    return float(out[0]) if np.ndim(s) == 0 else out


def _crash_fit_root_sigma0(problem: PricingProblem, valuation: _CrashValuation) -> float:
    """Continuous-fit boundary for sigma = 0: value(u+) = K - u."""
    K = problem.strike
    phi = problem.model.phi
    w0 = 1.0 / problem.model.mu  # W(0+) for the finite-variation model

    def resid(u):
        return ((K - u * phi / (phi + 1.0)) * (1.0 - valuation.c_of(u) * w0)
                - (K - u))

    us = np.linspace(0.02 * K, 0.995 * K, 48)
    vals = [resid(x) for x in us]
    for x0, x1, v0, v1 in zip(us[:-1], us[1:], vals[:-1], vals[1:]):
        if v0 * v1 < 0.0:
            return brentq(resid, x0, x1, xtol=1e-10)
    raise RuntimeError("no continuous-fit root in (0, K); stopping set degenerate")


def _crash_fit_root_sigma_pos(problem: PricingProblem, valuation: _CrashValuation) -> float:
    """Smooth-fit boundary for sigma > 0: d/ds value(u+) = -1."""
    K = problem.strike

    def deriv_gap(u):
        eps = 1e-4
        pts = u * np.exp(np.array([eps, 2.0 * eps]))
        v = valuation.value(u, pts)
        v0 = K - u
        d1 = (v[0] - v0) / (pts[0] - u)
        d2 = (v[1] - v0) / (pts[1] - u)
        return 2.0 * d1 - d2 + 1.0

    res = minimize_scalar(lambda u: -valuation.value(u, np.array([1.5 * K]))[0],
                          bounds=(0.05 * K, 0.98 * K), method="bounded",
                          options={"xatol": 1e-3 * K})
    u0 = float(res.x)
    lo, hi = max(0.02 * K, 0.7 * u0), min(0.995 * K, 1.3 * u0)
    g_lo, g_hi = deriv_gap(lo), deriv_gap(hi)
    if g_lo * g_hi < 0.0:
        return brentq(deriv_gap, lo, hi, xtol=1e-7 * K)
    return u0


# ---------------------------------------------------------------------------
# Two-sided jump value (negative discounts near zero)
# ---------------------------------------------------------------------------

class _TwoSidedValuation:
    """Scale data for interval stopping with l > 0 under exponential jumps."""

    def __init__(self, problem: PricingProblem, x_max: float = 3.5, n: int = 1201):
        model, omega = problem.model, problem.omega
        if not model.has_jumps:
            raise ValueError("two-sided route requires an exponential-jump model")
        self.problem = problem
        self.flat = check_flat_below_one(omega)
        if self.flat is None:
            raise ValueError("two-sided route requires omega constant on (0, 1]")
        self.x_max = x_max
        self.n = n
        self.phi_c = phi_ext(model, self.flat)
        grid = LogGrid(x_max, n)
        dec_c = psi_roots(model, self.flat)
        self.h_grid = grid
        self.h_tab = renewal_solve_h(dec_c, shift_tilt(omega, 1.0), self.flat,
                                     grid, self.phi_c)
        self._crash = _CrashValuation(problem, x_max=x_max, n=n)

    def h_at(self, s) -> np.ndarray:
        """H at log-price x = log s; exponential below the flat region."""
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log(np.atleast_1d(np.asarray(s, dtype=float)))
        out = np.empty_like(x)
        neg = x <= 0.0
        with np.errstate(under="ignore"):
            out[neg] = np.exp(self.phi_c * x[neg])
        out[~neg] = np.interp(x[~neg], self.h_grid.nodes(), self.h_tab)
        return out

    def overshoot_average(self, l: float, u: float) -> float:
        """E[G(Y)] for Y ~ Exp(phi): landing payoff or continuation below l."""
        K = self.problem.strike
        phi = self.problem.model.phi
        if l <= 0.0:
            return K - u * phi / (phi + 1.0)
        y_star = math.log(u / l)
        part_in = (K * (1.0 - math.exp(-phi * y_star))
                   - u * phi / (phi + 1.0) * (1.0 - math.exp(-(phi + 1.0) * y_star)))
        # continuation part: phi u^{-phi} int_{-inf}^{log l} H(w) e^{phi w} dw
        log_l = math.log(l)
        if log_l <= 0.0:
            integral = math.exp((self.phi_c + phi) * log_l) / (self.phi_c + phi)
        else:
            integral = 1.0 / (self.phi_c + phi)
            xs = self.h_grid.nodes()
            mask = xs <= log_l
            xs_in = xs[mask]
            if xs_in.size >= 2:
                vals = self.h_tab[mask] * np.exp(phi * xs_in)
                integral += np.trapezoid(vals, xs_in)
                x_last = xs_in[-1]
                if log_l > x_last + 1e-14:
                    h_ll = float(np.interp(log_l, xs, self.h_tab))
                    integral += 0.5 * (vals[-1] + h_ll * math.exp(phi * log_l)) \
                        * (log_l - x_last)
        h_l = float(self.h_at(l)[0])
        part_below = (K - l) / h_l * phi * u ** (-phi) * integral
        return part_in + part_below

    def value(self, b: Boundaries, s) -> np.ndarray:
        K = self.problem.strike
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = K - s.astype(float)
        below = s < b.l
        if np.any(below):
            out[below] = self.h_at(s[below]) / self.h_at(b.l)[0] * (K - b.l)
        above = s > b.u
        if np.any(above):
            x = np.log(s[above] / b.u)
            total, creep = self._crash.passage_split(b.u, x)
            gbar = self.overshoot_average(b.l, b.u)
            out[above] = gbar * (total - creep) + (K - b.u) * creep
        return out


def value_two_sided(problem: PricingProblem, b: Boundaries, s,
                    valuation: Optional[_TwoSidedValuation] = None,
                    route: str = "factorized"):
    """Interval-stopping value for exponential-jump models, l > 0 allowed.

    route='factorized' folds the exponential overshoot analytically against
    the landing payoff and the below-l continuation factor (memorylessness
    detaches the overshoot from the crossing level).  route='resolvent'
    instead integrates the occupation resolvent r(x, z) = W(x) c(z) - W(x, z)
    against the jump tail using the two-argument scale table; the routes
    agree and cross-check each other.
    """
    if valuation is None:
        valuation = _TwoSidedValuation(problem)
    out = np.array(valuation.value(b, s), dtype=float)
    if route == "factorized":
        return float(out[0]) if np.ndim(s) == 0 else out
    if route != "resolvent":
        raise ValueError("route must be 'factorized' or 'resolvent'")
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    above = s_arr > b.u
    if np.any(above):
        x = np.log(s_arr[above] / b.u)
        jump_part = _resolvent_jump_factor(problem, b.u, x, valuation)
        gbar = valuation.overshoot_average(b.l, b.u)
        _, creep = valuation._crash.passage_split(b.u, x)
        out[above] = gbar * jump_part + (problem.strike - b.u) * creep
    return float(out[0]) if np.ndim(s) == 0 else out


def _resolvent_jump_factor(problem: PricingProblem, u: float, x,
                           valuation: _TwoSidedValuation) -> np.ndarray:
    """lam * int_0^inf r(x, z) e^{-phi z} dz via the two-argument table."""
    model = problem.model
    xi = shift_tilt(problem.omega, u)
    grid = LogGrid(valuation.x_max, min(valuation.n, 481))
    tab = build_scale_table(model, xi, grid, want_w2=True)
    xs = grid.nodes()
    lam, phi = model.lam, model.phi
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    wq = np.exp(-phi * xs)
    for i, xv in enumerate(x):
        wx = float(tab.interp_w(xv))
        w2_at_x = np.array([np.interp(xv, xs, tab.w2[:, k]) if xv >= xs[k] else 0.0
                            for k in range(grid.n)])
        integrand = (wx * tab.c_w2w - w2_at_x) * wq
        out[i] = lam * np.trapezoid(integrand, xs)
    return out


def _two_sided_boundaries(problem: PricingProblem, valuation: _TwoSidedValuation,
                          n_u: int = 48, n_l: int = 48) -> Boundaries:
    """Grid search with refinement over 0 <= l <= u <= K.

    Above the interval the value depends on l only through the overshoot
    average, so the l-search nests cheaply inside the u-search.
    """
    K = problem.strike

    def best_l(u):
        ls = np.linspace(0.0, min(u, K), n_l)
        vals = [valuation.overshoot_average(l, u) for l in ls]
        j = int(np.argmax(vals))
        lo = ls[max(0, j - 1)]
        hi = ls[min(len(ls) - 1, j + 1)]
        if hi - lo < 1e-12:
            return float(ls[j])
        res = minimize_scalar(lambda l: -valuation.overshoot_average(l, u),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-7 * K})
        return float(res.x)

    s0 = 1.5 * K

    def neg_value(u):
        return -valuation.value(Boundaries(best_l(u), u), np.array([s0]))[0]

    us = np.linspace(0.05 * K, 0.99 * K, n_u)
    vals = [neg_value(u) for u in us]
    j = int(np.argmin(vals))
    lo, hi = us[max(0, j - 1)], us[min(n_u - 1, j + 1)]
    res = minimize_scalar(neg_value, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * K})
    u_star = float(res.x)
    l_star = best_l(u_star)

    # polish by the continuity residual when it brackets a root near u*
    def cont_resid(u):
        vv = valuation.value(Boundaries(best_l(u), u), np.array([u * (1 + 1e-9)]))
        return float(vv[0]) - (K - u)

    span = 0.03 * K
    try:
        r_lo, r_hi = cont_resid(max(u_star - span, 1e-6)), cont_resid(min(u_star + span, 0.999 * K))
        if np.isfinite(r_lo) and np.isfinite(r_hi) and r_lo * r_hi < 0.0:
            u_star = brentq(cont_resid, max(u_star - span, 1e-6),
                            min(u_star + span, 0.999 * K), xtol=1e-10)
            l_star = best_l(u_star)
    except Exception:
        pass
    return Boundaries(l_star, u_star)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def smooth_fit_residual(result: PricingResult, problem: PricingProblem) -> dict:
    """Continuity and one-sided derivative gaps at both boundaries.

    Continuity is evaluated in the limit onto the boundary; the derivative
    uses the analytic hook when the route provides one, otherwise a
    Richardson one-sided difference.
    """
    v = result.value_fn
    dv = result.value_deriv_fn
    K = problem.strike
    out = {}
    for name, bpt, side in (("l", result.l_star, -1.0), ("u", result.u_star, +1.0)):
        if bpt <= 0.0:
            out[f"continuity_{name}"] = 0.0
            out[f"derivative_gap_{name}"] = 0.0
            continue
        s_eps = bpt * (1.0 + side * 1e-12)
        out[f"continuity_{name}"] = abs(float(np.atleast_1d(v(s_eps))[0]) - (K - bpt))
        if dv is not None:
            deriv = float(np.atleast_1d(dv(s_eps))[0])
        else:
            h1 = 1e-4 * max(bpt, 1.0)
            v0 = K - bpt
            d1 = (float(np.atleast_1d(v(bpt + side * h1))[0]) - v0) / (side * h1)
            d2 = (float(np.atleast_1d(v(bpt + side * 2 * h1))[0]) - v0) / (side * 2 * h1)
            deriv = 2.0 * d1 - d2
        out[f"derivative_gap_{name}"] = abs(deriv - (-1.0))
    return out


def convexity_margin(result: PricingResult, stride: Optional[int] = None) -> float:
    """Minimum scaled second difference of the value curve.

    Under a concave non-decreasing discount and convex payoff the curve is
    convex, so the margin must not fall below -1e-8 * max|V|.
    """
    s = result.s_grid
    v = result.values
    if stride is None:
        stride = max(1, len(s) // 128)
    ss = s[::stride]
    vv = v[::stride]
    h = np.diff(ss)
    if not np.allclose(h, h[0], rtol=1e-8):
        raise ValueError("convexity margin expects a uniform s-grid")
    d2 = (vv[2:] - 2.0 * vv[1:-1] + vv[:-2]) / (h[0] * h[0])
    return float(np.min(d2))


def hjb_residual(result: PricingResult, problem: PricingProblem,
                 samples: Optional[np.ndarray] = None) -> dict:
    """Scaled sup-norm of (A - omega)V over continuation samples.

    In the stopping region reports the variational-inequality side
    max(A g - omega g, 0) instead.  Derivatives are central differences on
    the stored curve; the jump expectation integrates the curve against the
    exponential jump law with the exact K - s extension below the stopping
    boundary (one-sided stopping only).
    """
    model, omega, K = problem.model, problem.omega, problem.strike
    s = result.s_grid
    v = result.values
    l_star, u_star = result.l_star, result.u_star
    ds = s[1] - s[0]
    if samples is None:
        samples = s[4:-4:8]
    mu = model.mu
    sig2 = model.sigma ** 2
    lam, phi = model.lam, model.phi

    def v_at(x):
        return np.interp(x, s, v)

    def jump_term(si, vi):
        if lam == 0.0:
            return 0.0
        if l_star > 0.0:
            raise NotImplementedError("HJB diagnostics cover one-sided jump stopping")
        # E V(s e^{-Y}) = phi s^{-phi} int_0^s V(w) w^{phi-1} dw
        w_in = min(si, u_star)
        analytic = (w_in / si) ** phi * (K - w_in * phi / (phi + 1.0)) if w_in > 0 else 0.0
        numeric = 0.0
        if si > u_star:
            wgrid = np.linspace(u_star, si, 257)
            vals = v_at(wgrid) * wgrid ** (phi - 1.0)
            numeric = phi / si ** phi * np.trapezoid(vals, wgrid)
        return lam * (analytic + numeric - vi)

    worst_cont = 0.0
    worst_stop = 0.0
    for si in np.atleast_1d(samples):
        if si <= s[1] + ds or si >= s[-2] - ds:
            continue
        vi = float(v_at(si))
        if l_star <= si <= u_star:
            gen = -mu * si + (lam * si / (phi + 1.0) if lam > 0.0 else 0.0)
            resid = gen - float(omega(si)) * (K - si)
            worst_stop = max(worst_stop, resid)
            continue
        if abs(si - u_star) < 2 * ds or (l_star > 0 and abs(si - l_star) < 2 * ds):
            continue  # stencil would straddle the kink
        vp = float((v_at(si + ds) - v_at(si - ds)) / (2 * ds))
        vpp = float((v_at(si + ds) - 2 * vi + v_at(si - ds)) / (ds * ds))
        gen = 0.5 * sig2 * si * si * vpp + mu * si * vp
        gen += jump_term(si, vi)
        resid = abs(gen - float(omega(si)) * vi) / (1.0 + abs(vi))
        worst_cont = max(worst_cont, resid)
    return {"continuation_sup": worst_cont, "stopping_violation": worst_stop}


# ---------------------------------------------------------------------------
# Put-call transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualPutSpec:
    """Dual put problem produced by the symmetry transform.

    The dual log-price has drift -zeta, the same sigma, and upward
    exponential jumps (rate jump_rate, decay jump_decay); its discount is
    theta(s') = omega(s K / s') - psi(1).
    """

    drift: float            # linear drift of the dual log-price
    sigma: float
    jump_rate: float
    jump_decay: float
    jumps_up: bool
    spot: float             # dual spot = original strike K
    strike: float           # dual strike = original spot s
    l: float
    u: float
    discount: Callable
    psi1: float


def putcall_transform(problem: PricingProblem, s: float, b: Boundaries) -> DualPutSpec:
    """Map a call under (zeta, sigma, Pi) to a put under the dual model.

    The dual log-price is log(sK) - X observed under the unit-tilted measure:
    its Laplace exponent is psi(1-theta) - psi(1), i.e. linear drift
    -(zeta + sigma^2) (arithmetic drift -mu), the same sigma, and the jump
    measure e^{-x} Pi(-dx), which turns Exp(phi) downward jumps into
    Exp(phi+1) upward jumps with rate lam*phi/(phi+1).  Boundaries map to
    (sK/u, sK/l) and the discount to omega(sK/.) - psi(1).
    """
    if problem.payoff != "call":
        raise ValueError("transform applies to call problems")
    model = problem.model
    K = problem.strike
    psi1 = float(laplace_exponent(model, 1.0))
    omega = problem.omega

    def dual_discount(s_hat):
        return np.asarray(omega(s * K / np.asarray(s_hat, dtype=float))) - psi1

    return DualPutSpec(
        drift=-(model.zeta + model.sigma ** 2),
        sigma=model.sigma,
        jump_rate=model.lam * model.phi / (model.phi + 1.0) if model.has_jumps else 0.0,
        jump_decay=model.phi + 1.0,
        jumps_up=True,
        spot=K,
        strike=s,
        l=s * K / b.u if b.u > 0.0 else math.inf,
        u=s * K / b.l if b.l > 0.0 else math.inf,
        discount=dual_discount,
        psi1=psi1,
    )


# ---------------------------------------------------------------------------
# Boundary optimisation entry point
# ---------------------------------------------------------------------------

def optimize_boundaries(problem: PricingProblem, n_curve: int = 512) -> PricingResult:
    """Locate the optimal stopping interval and assemble the value curve."""
    t0 = time.time()
    if problem.payoff == "call":
        raise ValueError("price calls through the put-call transform "
                         "(putcall_transform / mc.symmetry_check)")
    model = problem.model
    omega = problem.omega
    K = problem.strike
    diagnostics = {}
    deriv_fn = None
    if model.has_jumps:
        if model.sigma == 0.0 and model.mu <= 0.0:
            raise ValueError("finite-variation model needs positive drift")
        if omega.is_nonnegative:
            x_need = math.log(2.2 * K / (0.01 * K))
            val = _CrashValuation(problem, x_max=x_need)
            if model.sigma == 0.0:
                u_star = _crash_fit_root_sigma0(problem, val)
                diagnostics["fit_condition"] = "continuous"
            else:
                u_star = _crash_fit_root_sigma_pos(problem, val)
                diagnostics["fit_condition"] = "smooth"
            bounds = Boundaries(0.0, u_star)
            value_fn = lambda s: val.value(u_star, s)
        else:
            ts = _TwoSidedValuation(problem,
                                    x_max=max(3.5, math.log(2.2 * K)) + 0.5)
            bounds = _two_sided_boundaries(problem, ts)
            value_fn = lambda s: ts.value(bounds, s)
            diagnostics["fit_condition"] = "grid-search"
    else:
        branches = solve_h_ode(model, omega, s_range=_default_s_range(problem))
        inner, outer = branches

        def fit_fn_u(u):
            return 1.0 + (K - u) * float(outer.dlog_ds(u))

        def fit_fn_l(l):
            return 1.0 + (K - l) * float(inner.dlog_ds(l))

        u_star = _root_scan(fit_fn_u, 0.02 * K, 0.999 * K)
        if u_star is None:
            raise RuntimeError("no smooth-fit boundary found; exercise degenerate")
        l_star = 0.0
        if not omega.is_nonnegative:
            l_star = _root_scan(fit_fn_l, 0.005 * K, u_star) or 0.0
        bounds = Boundaries(l_star, u_star)
        value_fn = lambda s: value_bs(problem, bounds, s, branches=branches,
                                      exact=True)

        def deriv_fn(s):
            s = np.atleast_1d(np.asarray(s, dtype=float))
            out = np.full_like(s, -1.0)
            below = s < bounds.l
            above = s > bounds.u
            if np.any(below):
                out[below] = (value_bs(problem, bounds, s[below], branches=branches)
                              * inner.dlog_ds(s[below]))
            if np.any(above):
                out[above] = (value_bs(problem, bounds, s[above], branches=branches)
                              * outer.dlog_ds(s[above]))
            return out

        diagnostics["h_route"] = "rational-2f1" if isinstance(omega, Rational) \
            else "generic"
        diagnostics["fit_condition"] = "smooth"
    s_grid = np.linspace(2.0 * K / n_curve, 2.0 * K, n_curve)
    values = np.asarray(value_fn(s_grid), dtype=float)
    if bounds.u >= 0.999 * K:
        diagnostics["degenerate_u"] = True
    result = PricingResult(boundaries=bounds, s_grid=s_grid, values=values,
                           fit={}, diagnostics=diagnostics, value_fn=value_fn,
                           value_deriv_fn=deriv_fn)
    result.fit = smooth_fit_residual(result, problem)
    result.diagnostics["convexity_margin"] = convexity_margin(result)
    result.diagnostics["runtime_s"] = time.time() - t0
    return result


def _root_scan(f, lo, hi, n=192):
    xs = np.linspace(lo, hi, n)
    vals = np.array([f(x) for x in xs])
    for x0, x1, v0, v1 in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if np.isfinite(v0) and np.isfinite(v1) and v0 * v1 < 0.0:
            return brentq(f, x0, x1, xtol=1e-12)
    return None
