"""State-dependent-rate scale functions on uniform log grids.

The W/Z/H-type scale functions solve Volterra renewal equations whose kernel
is the classical zero scale function, a short sum of exponentials for the
supported models.  The solver exploits that structure: each kernel exponential
is convolved exactly against a piecewise-linear interpolant of the running
solution (product integration), giving an explicit O(n) forward march per
table with no stiffness penalty from fast kernel components.

A second, independent route integrates the equivalent linear ODEs for
continuously differentiable rate functions; the two routes cross-validate
each other.  Tail ratios (Z/W limits) are extrapolated from extended runs
with Aitken acceleration, and the creeping factor is obtained from an
exponential-tilt ladder evaluated by renormalised ODE integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .discount import DiscountFn, LogDiscount, Tabulated, shift_tilt
from .levy import (
    LevyModel,
    RootDecomposition,
    esscher_tilt,
    phi_right_inverse,
    psi_roots,
)

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap

__all__ = [
    "LogGrid",
    "ScaleTable",
    "GridTooCoarseError",
    "RatioLimitError",
    "CreepingError",
    "classical_w",
    "classical_z",
    "renewal_solve_w",
    "renewal_solve_z",
    "renewal_solve_h",
    "renewal_solve_w2",
    "ratio_limit",
    "ode_solve_crash",
    "ode_solve_crash_sigma",
    "creeping_limit",
    "creeping_profile",
    "build_scale_table",
    "phi_ext",
]


class GridTooCoarseError(ValueError):
    """March would be singular or under-resolved at the current spacing."""

    def __init__(self, msg: str, suggested_n: int):
        super().__init__(f"{msg}; retry with n >= {suggested_n}")
        self.suggested_n = suggested_n


class RatioLimitError(RuntimeError):
    """Tail-ratio extrapolation failed to stabilise."""

    def __init__(self, msg: str, estimates):
        super().__init__(f"{msg}; last estimates {list(estimates)}")
        self.estimates = tuple(estimates)


class CreepingError(RuntimeError):
    """Tilt ladder failed to stabilise."""

    def __init__(self, msg: str, trace):
        super().__init__(f"{msg}; ladder trace {trace}")
        self.trace = tuple(trace)


@dataclass(frozen=True)
class LogGrid:
    """Uniform grid x_k = k*h on [0, x_max] (log of the price ratio)."""

    x_max: float
    n: int

    def __post_init__(self):
        if self.x_max <= 0.0 or self.n < 2:
            raise ValueError("need x_max > 0 and n >= 2")

    @property
    def h(self) -> float:
        return self.x_max / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n)


def classical_w(decomp: RootDecomposition, x):
    """Classical scale function W^{(q)}(x) = sum_i ups_i e^{gamma_i x}, x >= 0."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(decomp.gammas, dtype=float)
    u = np.asarray(decomp.upsilons, dtype=float)
    with np.errstate(under="ignore", over="ignore"):
        out = np.exp(np.multiply.outer(x, g)) @ u
    return out if x.ndim else float(out)


def classical_z(decomp: RootDecomposition, x):
    """Classical Z^{(q)}(x) = 1 + q * int_0^x W^{(q)}(y) dy for q = decomp.q."""
    x = np.asarray(x, dtype=float)
    q = decomp.q
    if q == 0.0:
        return np.ones_like(x) if x.ndim else 1.0
    g = np.asarray(decomp.gammas, dtype=float)
    u = np.asarray(decomp.upsilons, dtype=float)
    gsafe = np.where(np.abs(g) > 1e-14, g, 1.0)
    with np.errstate(under="ignore"):
        expm = np.exp(np.multiply.outer(x, g)) - 1.0
        terms = np.where(np.abs(g) > 1e-14, expm / gsafe,
                         np.multiply.outer(x, np.ones_like(g)))
    out = 1.0 + q * (terms @ u)
    return out if x.ndim else float(out)


def _exp_weights(gh: np.ndarray):
    """Product-integration weights (per unit h) for kernel e^{gamma(h-tau)}.

    int_0^h e^{gamma(h-tau)} f(tau) dtau = h*(alpha*f(0) + beta*f(h)) for
    linear f, with gh = gamma*h.
    """
    gh = np.asarray(gh, dtype=complex)
    alpha = np.empty_like(gh)
    beta = np.empty_like(gh)
    small = np.abs(gh) < 1e-3
    gs = gh[small]
    alpha[small] = 0.5 + gs / 3.0 + gs ** 2 / 8.0 + gs ** 3 / 30.0 + gs ** 4 / 144.0
    beta[small] = 0.5 + gs / 6.0 + gs ** 2 / 24.0 + gs ** 3 / 120.0 + gs ** 4 / 720.0
    gl = gh[~small]
    egl = np.exp(gl)
    alpha[~small] = (egl * (gl - 1.0) + 1.0) / (gl * gl)
    beta[~small] = (egl - 1.0) / gl - alpha[~small]
    return alpha, beta


@njit(cache=True)
def _march_kernel(egh, aw, bw, ups, inhom, q, vals, ls):  # pragma: no cover
    """Forward product-integration march; writes scaled values and log scales.

    Returns 0 on success, else the 1-based node index where the implicit
    diagonal weight made the march singular.
    """
    m = egh.shape[0]
    n = inhom.shape[0]
    J = np.zeros(m, dtype=np.complex128)
    sum_ub = 0.0
    for i in range(m):
        sum_ub += (ups[i] * bw[i]).real
    f_prev = q[0] * inhom[0]
    vals[0] = inhom[0]
    ls[0] = 0.0
    log_scale = 0.0
    for k in range(1, n):
        lead = 0.0
        for i in range(m):
            lead += (ups[i] * (egh[i] * J[i] + aw[i] * f_prev)).real
        den = 1.0 - sum_ub * q[k]
        if den <= 0.05:
            return k
        if -690.0 < log_scale < 690.0:
            u_k = (inhom[k] * math.exp(-log_scale) + lead) / den
        elif log_scale >= 690.0:
            u_k = lead / den
        else:
            # inhomogeneity dwarfs the state; resync the scale to it
            return -k
        f_k = q[k] * u_k
        for i in range(m):
            J[i] = egh[i] * J[i] + aw[i] * f_prev + bw[i] * f_k
        f_prev = f_k
        mag = abs(u_k)
        if mag > 1e250 or (mag != 0.0 and mag < 1e-250):
            fac = math.log(mag)
            sc = math.exp(-fac)
            for i in range(m):
                J[i] *= sc
            f_prev *= sc
            u_k *= sc
            log_scale += fac
        vals[k] = u_k
        ls[k] = log_scale
    return 0


def _march(gammas, upsilons, h: float, inhom: np.ndarray, q: np.ndarray):
    """Run the Volterra march; returns (scaled values, log scales)."""
    g = np.asarray(gammas, dtype=complex)
    ups = np.asarray(upsilons, dtype=complex)
    gh = g * h
    n = len(q)
    if not (np.all(np.isfinite(inhom)) and np.all(np.isfinite(q))):
        raise OverflowError("non-finite inhomogeneity or rate values in the march")
    if np.any(np.real(gh) > 690.0):
        raise GridTooCoarseError("kernel exponential overflows a single step", 2 * n)
    aw, bw = _exp_weights(gh)
    vals = np.empty(n)
    ls = np.empty(n)
    code = _march_kernel(np.exp(gh), aw * h, bw * h, ups,
                         np.ascontiguousarray(inhom, dtype=np.float64),
                         np.ascontiguousarray(q, dtype=np.float64), vals, ls)
    if code > 0:
        weight = abs(float(np.sum(ups * bw * h).real) * q[code])
        raise GridTooCoarseError(
            f"implicit diagonal weight {weight:.3f} at node {code} makes the march singular",
            int(math.ceil(n * max(2.0, 2.2 * weight))))
    if code < 0:
        raise OverflowError("march state decayed below the inhomogeneity scale")
    return vals, ls


def _march_plain(gammas, upsilons, h: float, inhom: np.ndarray, q: np.ndarray) -> np.ndarray:
    """March returning unscaled values; rejects ranges that overflow double."""
    vals, ls = _march(gammas, upsilons, h, inhom, q)
    if np.any(np.abs(ls) > 700.0):
        raise OverflowError("scale table leaves double range; reduce x_max")
    with np.errstate(over="ignore"):
        return vals * np.exp(ls)


def renewal_solve_w(decomp: RootDecomposition, xi: LogDiscount, grid: LogGrid) -> np.ndarray:
    """W-type table: u = W + int_0^x W(x-y) xi(y) u(y) dy on the grid."""
    xs = grid.nodes()
    return _march_plain(decomp.gammas, decomp.upsilons, grid.h,
                        classical_w(decomp, xs), np.asarray(xi(xs), dtype=float))


def renewal_solve_z(decomp: RootDecomposition, xi: LogDiscount, grid: LogGrid) -> np.ndarray:
    """Z-type table: u = 1 + int_0^x W(x-y) xi(y) u(y) dy on the grid."""
    xs = grid.nodes()
    return _march_plain(decomp.gammas, decomp.upsilons, grid.h,
                        np.ones(grid.n), np.asarray(xi(xs), dtype=float))


def renewal_solve_h(decomp_c: RootDecomposition, xi: LogDiscount, c: float,
                    grid: LogGrid, phi_c: float) -> np.ndarray:
    """H-type table: u = e^{Phi(c)x} + int_0^x W^{(c)}(x-z)(xi(z)-c) u(z) dz.

    decomp_c is the root decomposition of psi - c; the caller certifies that
    the rate equals c at and below the starting level.
    """
    xs = grid.nodes()
    return _march_plain(decomp_c.gammas, decomp_c.upsilons, grid.h,
                        np.exp(phi_c * xs), np.asarray(xi(xs), dtype=float) - c)


def renewal_solve_w2(decomp: RootDecomposition, xi: LogDiscount, grid: LogGrid) -> np.ndarray:
    """Two-argument table w2[j, k] = W-type function started at level x_k (j >= k).

    Column k solves the same Volterra equation on [x_k, x_max] with the rate
    read at absolute positions; entries above the diagonal are zero.
    """
    xs = grid.nodes()
    n = grid.n
    q = np.asarray(xi(xs), dtype=float)
    wg = classical_w(decomp, xs)
    out = np.zeros((n, n))
    for k0 in range(n):
        m = n - k0
        out[k0:, k0] = _march_plain(decomp.gammas, decomp.upsilons, grid.h,
                                    wg[:m], q[k0:])
    return out


# ---------------------------------------------------------------------------
# Tail-ratio extrapolation
# ---------------------------------------------------------------------------

def _aitken(seq: np.ndarray) -> np.ndarray:
    s = np.asarray(seq, dtype=float)
    d1 = np.diff(s)
    dd = np.diff(d1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(dd != 0.0, d1[1:] ** 2 / np.where(dd != 0.0, dd, 1.0), 0.0)
    return s[2:] - corr


def _limit_from_samples(samples):
    """(estimate, relative spread) from iterated-Aitken tail extrapolation."""
    s = np.asarray(samples, dtype=float)
    s = s[np.isfinite(s)]
    if s.size < 3:
        raise RatioLimitError("too few usable tail samples", s)
    levels = [s]
    for _ in range(2):
        if levels[-1].size >= 3:
            levels.append(_aitken(levels[-1]))
    best = levels[-1]
    tail = best[-3:] if best.size >= 3 else best
    est = float(tail[-1])
    scale = max(abs(est), 1e-30)
    spread = float(np.max(np.abs(np.diff(tail)))) / scale if tail.size > 1 else math.inf
    return est, spread


def ratio_limit(zvals: np.ndarray, wvals: np.ndarray, grid: LogGrid,
                rel_tol: float = 1e-6) -> float:
    """Extrapolated limit of z(x)/w(x) as x grows, from same-grid tables."""
    n = len(wvals)
    m = max(1, n // 16)
    idx = np.arange(n - 1, n // 2, -m)[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.asarray(zvals, float)[idx] / np.asarray(wvals, float)[idx]
    est, spread = _limit_from_samples(r)
    if spread > rel_tol:
        # geometric decay toward zero: the relative spread never settles even
        # though the limit is plainly 0
        finite = r[np.isfinite(r)]
        mags = np.abs(finite)
        if (finite.size >= 4 and np.all(np.diff(mags) < 0.0)
                and mags[-1] < 0.2 * mags[0] and abs(est) < 1e-3 * mags[-1]):
            return est
        raise RatioLimitError(
            f"tail ratio not converged (spread {spread:.2e} > {rel_tol:.0e}); extend the grid",
            r[-3:])
    return est


def _rate_values(xi: LogDiscount, xs: np.ndarray):
    """Rate samples, truncated to the evaluable/finite prefix."""
    if isinstance(xi.base, Tabulated):
        hull = math.log(float(xi.base._xs[-1])) - xi.shift
        keep = xs <= hull + 1e-12
        xs = xs[keep]
    with np.errstate(over="ignore"):
        q = np.asarray(xi(xs), dtype=float)
    if not np.all(np.isfinite(q)):
        first_bad = int(np.argmax(~np.isfinite(q)))
        xs, q = xs[:first_bad], q[:first_bad]
    return xs, q


def _c_limit_by_extension(decomp, xi: LogDiscount, grid: LogGrid,
                          rel_tol: float = 1e-6, max_extra: float = 24.0) -> float:
    """c = lim Z/W from a joint extended march with rescaling."""
    h = grid.h
    n_ext = grid.n + int(round(max_extra / h))
    xs = np.arange(n_ext) * h
    xs, q = _rate_values(xi, xs)
    n_ext = len(xs)
    if n_ext < grid.n:
        raise RatioLimitError("rate not evaluable across the base grid", [])

    def run(n_use):
        inh = classical_w(decomp, xs[:n_use])
        wv, wls = _march(decomp.gammas, decomp.upsilons, h, inh, q[:n_use])
        zv, zls = _march(decomp.gammas, decomp.upsilons, h, np.ones(n_use), q[:n_use])
        return wv, wls, zv, zls

    try:
        wv, wls, zv, zls = run(n_ext)
    except GridTooCoarseError as err:
        # fast-growing rate: march only as far as the spacing allows
        bw = _exp_weights(np.asarray(decomp.gammas, complex) * h)[1]
        sum_b = abs(float(np.sum(np.asarray(decomp.upsilons, complex) * bw * h).real))
        cap = 0.5 / max(sum_b, 1e-300)
        over = np.abs(q) > cap
        n_ok = int(np.argmax(over)) if np.any(over) else n_ext
        if n_ok <= grid.n:
            raise err
        n_ext = n_ok
        wv, wls, zv, zls = run(n_ext)
    spacing = max(1, int(round(0.5 / h)))
    idx = np.arange(n_ext - 1, max(grid.n // 2, 2), -spacing)[::-1]
    if idx.size < 5:
        idx = np.unique(np.linspace(max(2, n_ext // 2), n_ext - 1, 9).astype(int))
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        ratios = (zv[idx] / wv[idx]) * np.exp(zls[idx] - wls[idx])
    est, spread = _limit_from_samples(ratios)
    if spread > rel_tol:
        finite = ratios[np.isfinite(ratios)]
        mags = np.abs(finite)
        if (finite.size >= 4 and np.all(np.diff(mags) < 0.0)
                and mags[-1] < 0.2 * mags[0] and abs(est) < 1e-3 * mags[-1]):
            return est  # geometric decay toward a zero limit
        raise RatioLimitError("extended march did not stabilise the tail ratio",
                              ratios[-3:])
    return est


def phi_ext(model: LevyModel, c: float) -> float:
    """Largest real root of psi = c (right inverse for c >= 0, continued below)."""
    if c >= 0.0:
        return phi_right_inverse(model, c)
    dec = psi_roots(model, c)
    return max(dec.gammas)


# ---------------------------------------------------------------------------
# ODE routes
# ---------------------------------------------------------------------------

def _split_zero_root(model_or_dec):
    dec = model_or_dec if isinstance(model_or_dec, RootDecomposition) \
        else psi_roots(model_or_dec)
    gs = list(dec.gammas)
    us = list(dec.upsilons)
    i0 = min(range(len(gs)), key=lambda i: abs(gs[i]))
    if abs(gs[i0]) > 1e-10:
        raise ValueError("zero root missing from decomposition")
    rest = [(gs[i], us[i]) for i in range(len(gs)) if i != i0]
    return (gs[i0], us[i0]), rest


def _ode_coeffs_two_root(model: LevyModel, xi: LogDiscount):
    """Coefficients for u'' = a1 u' + a0 u when W has two exponential terms."""
    (_, u1), rest = _split_zero_root(model)
    if len(rest) != 1:
        raise ValueError("two-root route needs sigma = 0 or lam = 0")
    (g2, u2), = rest
    usum = u1 + u2

    def coeffs(x):
        q = float(xi(x))
        qp = float(xi.deriv(x))
        return usum * q + g2, usum * qp - g2 * u1 * q

    w_init = (usum, usum * usum * float(xi(0.0)) + u2 * g2)
    z_init = (1.0, usum * float(xi(0.0)))
    return coeffs, w_init, z_init


def _ode_coeffs_three_root(model: LevyModel, xi: LogDiscount):
    """Coefficients for u''' = a2 u'' + a1 u' + a0 u (sigma > 0 with jumps)."""
    (_, u1), rest = _split_zero_root(model)
    if len(rest) != 2:
        raise ValueError("three-root route needs sigma > 0 and jumps")
    (ga, ua), (gb, ub) = rest  # labelling of the nonzero roots is immaterial

    def coeffs(x):
        q = float(xi(x))
        qp = float(xi.deriv(x))
        a2 = ga + gb
        a1 = ua * (ga - gb) * q - ga * gb - gb * u1 * q
        a0 = ua * (ga - gb) * qp + ga * gb * u1 * q - gb * u1 * qp
        return a2, a1, a0

    w_init = (0.0, ua * ga + ub * gb, ua * ga * ga + ub * gb * gb)
    z_init = (1.0, 0.0, (ua * (ga - gb) - gb * u1) * float(xi(0.0)))
    return coeffs, w_init, z_init


def _require_differentiable(xi: LogDiscount):
    if not xi.differentiable:
        raise ValueError("xi must be continuously differentiable; use the renewal solver")


def ode_solve_crash(model: LevyModel, xi: LogDiscount, grid: LogGrid,
                    which: str = "W") -> np.ndarray:
    """Second-order ODE route for models whose kernel has two exponential terms.

    Covers sigma = 0 jump models (the primary use) and pure Brownian models.
    """
    _require_differentiable(xi)
    coeffs, w_init, z_init = _ode_coeffs_two_root(model, xi)
    if which == "W":
        y0 = list(w_init)
    elif which == "Z":
        y0 = list(z_init)
    else:
        raise ValueError("which must be 'W' or 'Z'")

    def rhs(x, y):
        a1, a0 = coeffs(x)
        return [y[1], a1 * y[1] + a0 * y[0]]

    sol = solve_ivp(rhs, (0.0, grid.x_max), y0, t_eval=grid.nodes(),
                    method="DOP853", rtol=1e-11, atol=1e-12)
    if not sol.success:
        raise RuntimeError(f"ODE integration failed: {sol.message}")
    return sol.y[0]


def ode_solve_crash_sigma(model: LevyModel, xi: LogDiscount, grid: LogGrid,
                          which: str = "W") -> np.ndarray:
    """Third-order ODE route for sigma > 0 jump models with differentiable xi."""
    if model.sigma <= 0.0 or not model.has_jumps:
        raise ValueError("requires sigma > 0 and jumps")
    _require_differentiable(xi)
    coeffs, w_init, z_init = _ode_coeffs_three_root(model, xi)
    if which == "W":
        y0 = list(w_init)
    elif which == "Z":
        y0 = list(z_init)
    else:
        raise ValueError("which must be 'W' or 'Z'")

    def rhs(x, y):
        a2, a1, a0 = coeffs(x)
        return [y[1], y[2], a2 * y[2] + a1 * y[1] + a0 * y[0]]

    sol = solve_ivp(rhs, (0.0, grid.x_max), y0, t_eval=grid.nodes(),
                    method="DOP853", rtol=1e-11, atol=1e-12)
    if not sol.success:
        raise RuntimeError(f"ODE integration failed: {sol.message}")
    return sol.y[0]


def _ode_wz_shifted(model: LevyModel, xi: LogDiscount, kappa: float,
                    x_points: np.ndarray, rtol: float = 1e-10):
    """Joint integration of the e^{kappa x}-rescaled (W, Z) pair.

    Substituting u = e^{-kappa x} u~ into the scale ODEs shifts every mode by
    +kappa analytically, so tilted systems whose solutions decay like
    e^{-alpha x} can be integrated with alpha-independent conditioning.
    Residual growth is handled by common-state renormalisation; returns
    (wv, zv, ls) at x_points with true-rescaled values wv*exp(ls) etc.
    """
    if model.sigma > 0.0 and model.has_jumps:
        coeffs3, w_init, z_init = _ode_coeffs_three_root(model, xi)
        order = 3
        k2, k3 = kappa * kappa, kappa ** 3

        def rhs(x, y):
            a2, a1, a0 = coeffs3(x)
            b2 = a2 + 3.0 * kappa
            b1 = a1 - 2.0 * kappa * a2 - 3.0 * k2
            b0 = a0 - kappa * a1 + k2 * a2 + k3
            return [y[1], y[2], b2 * y[2] + b1 * y[1] + b0 * y[0],
                    y[4], y[5], b2 * y[5] + b1 * y[4] + b0 * y[3]]

        def lift(init):
            u0, u1, u2 = init
            return [u0, u1 + kappa * u0, u2 + 2.0 * kappa * u1 + k2 * u0]
    else:
        coeffs2, w_init, z_init = _ode_coeffs_two_root(model, xi)
        order = 2
        k2 = kappa * kappa

        def rhs(x, y):
            a1, a0 = coeffs2(x)
            b1 = a1 + 2.0 * kappa
            b0 = a0 - kappa * a1 - k2
            return [y[1], b1 * y[1] + b0 * y[0],
                    y[3], b1 * y[3] + b0 * y[2]]

        def lift(init):
            u0, u1 = init
            return [u0, u1 + kappa * u0]

    state = {"y": np.array(lift(w_init) + lift(z_init), dtype=float),
             "ls": 0.0, "x": 0.0, "alive": True}

    def advance(x_next: float) -> bool:
        if not state["alive"] or x_next <= state["x"]:
            return state["alive"]
        with np.errstate(all="ignore"):
            sol = solve_ivp(rhs, (state["x"], x_next), state["y"],
                            method="DOP853", rtol=rtol, atol=1e-160)
        if not sol.success:
            state["alive"] = False
            return False
        state["y"] = sol.y[:, -1]
        state["x"] = x_next
        mag = float(np.max(np.abs(state["y"])))
        if mag > 1e120 or (mag != 0.0 and mag < 1e-120):
            fac = math.log(mag)
            state["y"] = state["y"] * math.exp(-fac)
            state["ls"] += fac
        return True

    wv = np.empty(len(x_points))
    zv = np.empty(len(x_points))
    lsv = np.empty(len(x_points))
    for i, x in enumerate(x_points):
        if not advance(x):
            raise RuntimeError("ODE integration failed inside the evaluation range")
        wv[i] = state["y"][0]
        zv[i] = state["y"][order]
        lsv[i] = state["ls"]
    return wv, zv, lsv, state, advance, order


# ---------------------------------------------------------------------------
# Scale tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleTable:
    """Discretised scale functions for one rate function xi on one grid."""

    grid: LogGrid
    w: np.ndarray
    z: np.ndarray
    c_zw: float
    hh: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    c_w2w: Optional[np.ndarray] = None
    flat_level: Optional[float] = None

    def interp_w(self, x):
        return np.interp(x, self.grid.nodes(), self.w)

    def interp_z(self, x):
        return np.interp(x, self.grid.nodes(), self.z)

    def passage_below(self, x):
        """Z(x) - c*W(x): the discounted down-passage factor."""
        return self.interp_z(x) - self.c_zw * self.interp_w(x)


def build_scale_table(model: LevyModel, xi: LogDiscount, grid: LogGrid, *,
                      want_h: bool = False, flat_level: Optional[float] = None,
                      want_w2: bool = False, c_rel_tol: float = 1e-6,
                      prefer_ode: bool = True) -> ScaleTable:
    """W/Z tables plus the tail-ratio constant; optional H and two-argument W."""
    dec = psi_roots(model)
    use_ode = prefer_ode and xi.differentiable and model.has_jumps
    if use_ode:
        solver = ode_solve_crash if model.sigma == 0.0 else ode_solve_crash_sigma
        w = solver(model, xi, grid, "W")
        z = solver(model, xi, grid, "Z")
    else:
        w = renewal_solve_w(dec, xi, grid)
        z = renewal_solve_z(dec, xi, grid)
    c = _c_limit_by_extension(dec, xi, grid, rel_tol=c_rel_tol)
    hh = None
    if want_h:
        if flat_level is None:
            raise ValueError("H table requires the flat-below-one certificate level")
        dec_c = psi_roots(model, flat_level)
        hh = renewal_solve_h(dec_c, xi, flat_level, grid, phi_ext(model, flat_level))
    w2 = None
    c_w2w = None
    if want_w2:
        w2 = renewal_solve_w2(dec, xi, grid)
        c_w2w = _w2_column_limits(dec, xi, grid)
    return ScaleTable(grid=grid, w=w, z=z, c_zw=c, hh=hh, w2=w2, c_w2w=c_w2w,
                      flat_level=flat_level)


def _w2_column_limits(dec, xi: LogDiscount, grid: LogGrid,
                      max_extra: float = 14.0) -> np.ndarray:
    """c(z_k) = lim_y W(y, z_k)/W(y) per column, from extended marches."""
    h = grid.h
    n = grid.n
    n_ext = n + int(round(max_extra / h))
    xa = np.arange(n_ext) * h
    xa, q_abs = _rate_values(xi, xa)
    n_ext = len(xa)
    inh_abs = classical_w(dec, xa)
    dv, dls = _march(dec.gammas, dec.upsilons, h, inh_abs, q_abs)
    spacing = max(1, int(round(0.5 / h)))
    out = np.empty(n)
    for k0 in range(n):
        m = n_ext - k0
        nv, nls = _march(dec.gammas, dec.upsilons, h, inh_abs[:m], q_abs[k0:])
        idx = np.arange(m - 1, max((n - k0) // 2, 2), -spacing)[::-1]
        if idx.size < 5:
            idx = np.unique(np.linspace(max(2, m // 2), m - 1, 9).astype(int))
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            ratios = (nv[idx] / dv[idx + k0]) * np.exp(nls[idx] - dls[idx + k0])
        est, spread = _limit_from_samples(ratios)
        if spread > 1e-5:
            raise RatioLimitError(f"two-argument column {k0} ratio not converged",
                                  ratios[-3:])
        out[k0] = est
    return out


# ---------------------------------------------------------------------------
# Creeping factor via the exponential-tilt ladder
# ---------------------------------------------------------------------------

def _tilted_log_bracket(model: LevyModel, fn: DiscountFn, u: float,
                        alpha: float, xs_eval: np.ndarray) -> np.ndarray:
    """log of e^{alpha x}(Z_a - c_a W_a)(x) under the alpha-tilted measure.

    Evaluated by renormalised homogeneous ODE integration in tilted
    coordinates: the system has no inhomogeneity, so the tables carry full
    relative precision however fast they decay, and the alpha*x offset is
    applied in log space.
    """
    m_a = esscher_tilt(model, alpha)
    xi_a = shift_tilt(fn, u, model, alpha)
    x_top = float(np.max(xs_eval))
    pts = np.unique(np.sort(xs_eval))
    wv, zv, lsv, state, advance, order = _ode_wz_shifted(m_a, xi_a, alpha, pts)
    # tail ratio: march outward in half-unit chunks, stop once extrapolated;
    # fast-growing rates stiffen the system, so a failed chunk just ends the tail
    samples = []
    spread = math.inf
    c_a = math.nan
    for j in range(1, 29):
        if not advance(x_top + 0.5 * j):
            break
        y = state["y"]
        if y[0] != 0.0:
            samples.append(y[order] / y[0])
        if len(samples) >= 6:
            try:
                c_a, spread = _limit_from_samples(samples)
            except RatioLimitError:
                continue
            if spread < 1e-9:
                break
    if not samples or not math.isfinite(c_a):
        raise RatioLimitError(f"no usable tilted tail ratios at alpha={alpha}", samples[-3:])
    if spread > 1e-4:
        raise RatioLimitError(f"tilted tail ratio not converged at alpha={alpha}",
                              samples[-3:])
    # in kappa=alpha shifted coordinates the bracket already carries e^{alpha x}
    with np.errstate(invalid="ignore"):
        br = zv - c_a * wv
    log_val = np.where(br > 0.0, np.log(np.where(br > 0.0, br, 1.0)) + lsv, -np.inf)
    return np.interp(xs_eval, pts, log_val)


def creeping_profile(model: LevyModel, fn: DiscountFn, u: float, xs,
                     rel_tol: float = 1e-5, alpha0: Optional[float] = None,
                     max_doublings: int = 8) -> np.ndarray:
    """Creeping factors lim_a e^{a x}(Z_a - c_a W_a)(x) at each x in xs.

    For exponential jumps the raw ladder converges like 1/(phi + alpha) (the
    overshoot is memoryless), so consecutive rungs are extrapolated against
    that exact law; the stopping rule compares successive extrapolants.
    Without jumps the raw rungs are already alpha-independent.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(xs < 0.0):
        raise ValueError("creeping factor requires x >= 0")
    if model.sigma == 0.0:
        return np.zeros_like(xs)
    if not fn.differentiable:
        raise ValueError("creeping ladder requires a differentiable discount kind")
    out = np.ones_like(xs)
    pos = xs > 1e-12
    if not np.any(pos):
        return out
    xp = xs[pos]
    # 8/x keeps the naive product form decayed; in log space any base works
    # and the memoryless extrapolation is exact in alpha, so cap the base to
    # keep the tilted-system rates (and hence cost) bounded
    alpha = alpha0 if alpha0 is not None else min(8.0 / float(np.max(xp)), 64.0)
    trace = []
    prev_raw = None
    prev_extrap = None
    result = None
    for _ in range(max_doublings + 1):
        raw = np.exp(_tilted_log_bracket(model, fn, u, alpha, xp))
        if prev_raw is not None:
            if model.has_jumps:
                wa = model.phi / (model.phi + alpha / 2.0)
                wb = model.phi / (model.phi + alpha)
                extrap = (prev_raw * wb - raw * wa) / (wb - wa)
            else:
                extrap = raw.copy()
            trace.append((alpha, float(np.max(raw)), float(np.max(np.abs(extrap)))))
            if prev_extrap is not None:
                scale = np.maximum(np.abs(extrap), 1e-12)
                if float(np.max(np.abs(extrap - prev_extrap) / scale)) < rel_tol:
                    result = extrap
                    break
            prev_extrap = extrap
        else:
            trace.append((alpha, float(np.max(raw)), math.nan))
        prev_raw = raw
        alpha *= 2.0
    if result is None:
        raise CreepingError("tilt ladder did not stabilise", trace)
    out[pos] = np.clip(result, 0.0, None)
    return out


def creeping_limit(model: LevyModel, fn: DiscountFn, u: float, x: float,
                   rel_tol: float = 1e-5, max_doublings: int = 8) -> float:
    """Creeping factor at a single log-distance x = log(s/u) > 0."""
    if x <= 0.0:
        raise ValueError("requires s > u, i.e. x = log(s/u) > 0")
    return float(creeping_profile(model, fn, u, [x], rel_tol=rel_tol,
                                  max_doublings=max_doublings)[0])
