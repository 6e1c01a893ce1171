"""Discount functions omega(s) and their log-coordinate transforms.

The pricing formulas work with the log-coordinate view eta(x) = omega(e^x)
and its shifted/tilted variants eta_u^alpha(x) = omega(u e^x) - psi(alpha).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .levy import LevyModel, laplace_exponent

__all__ = [
    "DiscountFn",
    "Constant",
    "Step",
    "Linear",
    "Rational",
    "LogArea",
    "Tabulated",
    "LogDiscount",
    "shift_tilt",
    "check_flat_below_one",
]


class DiscountFn:
    """Base class: a discount rate omega(s) on s > 0, bounded from below."""

    kind = "abstract"

    def __call__(self, s):
        raise NotImplementedError

    def deriv(self, s):
        """d omega/ds, or raise if the kind is not differentiable."""
        raise NotImplementedError(f"{self.kind} discount has no derivative")

    @property
    def lower_bound(self) -> float:
        raise NotImplementedError

    @property
    def is_nonnegative(self) -> bool:
        """True when omega >= 0 everywhere (lets the pricer fix l* = 0)."""
        return self.lower_bound >= 0.0

    @property
    def differentiable(self) -> bool:
        return True

    def params(self) -> dict:
        """Flat parameter dict for config echo."""
        return {}


@dataclass(frozen=True)
class Constant(DiscountFn):
    r: float
    kind = "constant"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.full_like(s, self.r) if s.ndim else self.r

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        return np.zeros_like(s) if s.ndim else 0.0

    @property
    def lower_bound(self) -> float:
        return self.r

    def params(self):
        return {"r": self.r}


@dataclass(frozen=True)
class Step(DiscountFn):
    """omega(s) = r + rho * 1{s <= y} (direction 'below') or 1{s > y} ('above')."""

    r: float
    rho: float
    y: float
    direction: str = "below"
    kind = "step"

    def __post_init__(self):
        if self.direction not in ("below", "above"):
            raise ValueError("direction must be 'below' or 'above'")
        if self.y <= 0.0:
            raise ValueError("y must be > 0")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        ind = (s <= self.y) if self.direction == "below" else (s > self.y)
        out = self.r + self.rho * ind
        return out if s.ndim else float(out)

    @property
    def differentiable(self) -> bool:
        return False

    @property
    def lower_bound(self) -> float:
        return min(self.r, self.r + self.rho)

    def params(self):
        return {"r": self.r, "rho": self.rho, "y": self.y, "direction": self.direction}


@dataclass(frozen=True)
class Linear(DiscountFn):
    """omega(s) = C*s."""

    C: float
    kind = "linear"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = self.C * s
        return out if s.ndim else float(out)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        return np.full_like(s, self.C) if s.ndim else self.C

    @property
    def lower_bound(self) -> float:
        return 0.0 if self.C >= 0.0 else -np.inf

    def params(self):
        return {"C": self.C}


@dataclass(frozen=True)
class Rational(DiscountFn):
    """omega(s) = -C/(s+1) - D, the negative-rate example family."""

    C: float
    D: float
    kind = "rational"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = -self.C / (s + 1.0) - self.D
        return out if s.ndim else float(out)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        out = self.C / (s + 1.0) ** 2
        return out if s.ndim else float(out)

    @property
    def lower_bound(self) -> float:
        return -self.C - self.D

    def params(self):
        return {"C": self.C, "D": self.D}


@dataclass(frozen=True)
class LogArea(DiscountFn):
    """omega(s) = (log s - log K)^+, the area-option rate."""

    K: float
    kind = "log_area"

    def __post_init__(self):
        if self.K <= 0.0:
            raise ValueError("K must be > 0")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.maximum(np.log(s) - np.log(self.K), 0.0)
        return out if s.ndim else float(out)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        out = np.where(s > self.K, 1.0 / s, 0.0)
        return out if s.ndim else float(out)

    @property
    def lower_bound(self) -> float:
        return 0.0

    def params(self):
        return {"K": self.K}


@dataclass(frozen=True)
class Tabulated(DiscountFn):
    """Monotone piecewise-linear interpolation of (s_k, omega_k) knots.

    Evaluation outside the knot hull is rejected; concavity of the knots
    implies concavity of the interpolant.
    """

    knots_s: tuple
    knots_w: tuple
    kind = "tabulated"
    _xs: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _ws: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        xs = np.asarray(self.knots_s, dtype=float)
        ws = np.asarray(self.knots_w, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != ws.size:
            raise ValueError("need matching 1-d knot arrays with >= 2 points")
        if np.any(np.diff(xs) <= 0.0) or xs[0] <= 0.0:
            raise ValueError("knot abscissae must be positive and increasing")
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_ws", ws)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self._xs[0]) or np.any(s > self._xs[-1]):
            raise ValueError("evaluation outside the tabulated hull")
        out = np.interp(s, self._xs, self._ws)
        return out if s.ndim else float(out)

    @property
    def differentiable(self) -> bool:
        return False

    @property
    def lower_bound(self) -> float:
        return float(np.min(self._ws))

    def params(self):
        return {"knots_s": list(self._xs), "knots_w": list(self._ws)}


@dataclass(frozen=True)
class LogDiscount:
    """The map x -> omega(u e^x) - tilt, i.e. eta_u^alpha in log coordinates."""

    base: DiscountFn
    shift: float = 0.0  # log u
    tilt: float = 0.0   # psi(alpha)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = np.exp(x + self.shift)
        out = self.base(s) - self.tilt
        return out if x.ndim else float(out)

    def deriv(self, x):
        """d/dx omega(u e^x) = omega'(s) * s at s = u e^x."""
        x = np.asarray(x, dtype=float)
        s = np.exp(x + self.shift)
        out = self.base.deriv(s) * s
        return out if x.ndim else float(out)

    @property
    def differentiable(self) -> bool:
        return self.base.differentiable

    @property
    def lower_bound(self) -> float:
        return self.base.lower_bound - self.tilt

    def retilt(self, extra: float) -> "LogDiscount":
        return LogDiscount(self.base, self.shift, self.tilt + extra)


def shift_tilt(fn: DiscountFn, u: float, model: Optional[LevyModel] = None,
               alpha: float = 0.0) -> LogDiscount:
    """LogDiscount evaluating x -> omega(u e^x) - psi(alpha)."""
    if u <= 0.0:
        raise ValueError("u must be > 0")
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    tilt = 0.0
    if alpha > 0.0:
        if model is None:
            raise ValueError("model required when alpha > 0")
        tilt = float(laplace_exponent(model, alpha))
    return LogDiscount(fn, shift=float(np.log(u)), tilt=tilt)


def check_flat_below_one(fn: DiscountFn, n_samples: int = 257) -> Optional[float]:
    """Constant value of omega on (0, 1], or None if omega varies there.

    Kind introspection first, then a sampled-grid confirmation.  The
    certificate gates the upward-passage (H) branches of the pricer.
    """
    if fn.kind == "constant":
        return fn.r
    if fn.kind == "step":
        if fn.y >= 1.0:
            return fn.r + fn.rho if fn.direction == "below" else fn.r
        return None
    if fn.kind == "linear":
        return None
    if fn.kind == "rational":
        return None
    if fn.kind == "log_area":
        return 0.0 if fn.K >= 1.0 else None
    if fn.kind == "tabulated":
        xs = fn._xs
        if xs[0] > 1.0 or xs[-1] < 1.0:
            return None
        below = xs[xs <= 1.0]
        vals = fn(below) if below.size else np.array([])
        v1 = fn(1.0)
        if below.size and np.max(np.abs(vals - v1)) > 1e-12 * max(1.0, abs(v1)):
            return None
        # hull does not reach 0+, so flatness below the first knot is unverifiable
        return float(v1) if xs[0] <= 1e-6 else None
    # generic fallback: sample a log grid on (0, 1]
    xs = np.exp(np.linspace(np.log(1e-8), 0.0, n_samples))
    vals = np.asarray(fn(xs), dtype=float)
    if np.max(np.abs(vals - vals[-1])) <= 1e-12 * max(1.0, abs(vals[-1])):
        return float(vals[-1])
    return None
