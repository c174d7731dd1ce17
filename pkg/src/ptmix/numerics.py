"""Special functions, stable reductions, a bracketed 1-D maximizer and the
seedable random stream contract."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError

EULER_GAMMA = 0.57721566490153286061

# Bernoulli coefficients B_2k / (2k) of the asymptotic digamma series, k = 1..7
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_DIGAMMA_LIFT = 6.0

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


def _check_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires finite positive arguments, got {x!r}")
    return arr


def log_gamma(x):
    """ln Gamma(x) for positive x (scalar or array)."""
    arr = _check_positive(x, "log_gamma")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def digamma(x):
    """Digamma function for positive x (scalar or array).

    Arguments below 6 are lifted with psi(x) = psi(x + 1) - 1/x, then the
    asymptotic series ln x - 1/(2x) - sum B_2k / (2k x^2k) is applied.
    """
    arr = _check_positive(x, "digamma")
    z = np.array(arr, dtype=float, copy=True)
    acc = np.zeros_like(z)
    while True:
        low = z < _DIGAMMA_LIFT
        if not low.any():
            break
        acc[low] -= 1.0 / z[low]
        z[low] += 1.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coef in reversed(_DIGAMMA_SERIES):
        series = (series + coef) * inv2
    out = acc + np.log(z) - 0.5 / z - series
    return float(out) if out.ndim == 0 else out


def log_sum_exp(values, axis=None):
    """ln(sum(exp(values))) along ``axis`` using a max shift.

    All -inf inputs give -inf. An empty reduction raises DomainError.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise DomainError("log_sum_exp of an empty sequence")
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return float(out) if out.ndim == 0 else out


def maximize_1d(objective, lower, upper, tol=1e-8, max_iter=200):
    """Maximize a scalar function on [lower, upper].

    Brent's golden-section search with parabolic steps. The two bracket
    ends are also evaluated, so a monotone objective returns the end point.

    Returns
    -------
    (argmax, value)
    """
    if not (lower < upper):
        raise DomainError(f"empty bracket [{lower}, {upper}]")
    if not tol > 0:
        raise DomainError("tol must be positive")

    def f(x):
        val = float(objective(x))
        if not math.isfinite(val):
            raise NumericalError(f"objective is {val} at x={x!r}", where=x)
        return -val

    a, b = float(lower), float(upper)
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = f(x)
    d = e = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        tol1 = tol / 3.0 + 1e-12 * abs(x)
        tol2 = 2.0 * tol1
        if abs(x - mid) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (a - x) < p < q * (b - x):
                e, d = d, p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if mid >= x else -tol1
                golden = False
        if golden:
            e = (a - x) if x >= mid else (b - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        fu = f(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu

    best_x, best_f = x, fx
    for end in (float(lower), float(upper)):
        fe = f(end)
        if fe < best_f:
            best_x, best_f = end, fe
    return best_x, -best_f


@dataclass(frozen=True)
class RngHandle:
    """A (seed, stream) pair that fully determines a random draw sequence.

    Streams are Philox generators keyed through ``numpy.random.SeedSequence``
    with the stream path as spawn key, so distinct paths never share draws and
    a child stream does not depend on how many draws its parent made.
    """

    seed: int = 0
    stream: tuple = ()

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    @property
    def stream_id(self):
        return self.stream[-1] if self.stream else 0

    def child(self, *ids):
        return RngHandle(self.seed, self.stream + tuple(ids))

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))
