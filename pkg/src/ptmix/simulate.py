"""Synthetic mixtures of t components with informative and noise variables."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ValidationError
from .model import DOF_MAX, MixtureParams, standardize
from .numerics import RngHandle

DOF_REGIMES = {"low": 3.0, "high": 50.0}
SEPARATION_MODES = ("marginal", "total")
CALIBRATION_DRAWS = 100_000
SEPARATION_BRACKET = (0.01, 20.0)

log = logging.getLogger(__name__)


def default_overlaps(g):
    """Pairwise overlap targets: 30% for g=2, the A/B/C pattern for g=3."""
    ov = np.full((g, g), 0.30)
    if g == 3:
        ov[0, 1] = ov[1, 0] = 0.25
        ov[0, 2] = ov[2, 0] = 0.30
        ov[1, 2] = ov[2, 1] = 0.05
    np.fill_diagonal(ov, 0.0)
    return ov


@dataclass(frozen=True)
class SimDesign:
    n: int = 200
    m: int = 20
    q: int = 200
    g: int = 2
    dof_regime: str = "high"
    target_overlaps: np.ndarray = None
    weights: np.ndarray = None
    seed: RngHandle = field(default_factory=RngHandle)
    separation: str = "marginal"

    def __post_init__(self):
        if self.g < 1 or self.n < self.g:
            raise ValidationError(f"need 1 <= g <= n, got g={self.g}, n={self.n}")
        if self.m < 0 or self.q < 0 or self.m + self.q < 1:
            raise ValidationError("need m, q >= 0 and m + q >= 1")
        if self.dof_regime not in DOF_REGIMES:
            raise ValidationError(f"dof_regime must be one of {sorted(DOF_REGIMES)}")
        ov = default_overlaps(self.g) if self.target_overlaps is None else np.asarray(self.target_overlaps, float)
        if ov.shape != (self.g, self.g) or not np.allclose(ov, ov.T):
            raise ValidationError("target_overlaps must be a symmetric g x g matrix")
        off = ov[~np.eye(self.g, dtype=bool)]
        if np.any((off <= 0) | (off >= 0.5)):
            raise ValidationError("pairwise overlaps must lie in (0, 0.5)")
        w = np.full(self.g, 1.0 / self.g) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (self.g,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValidationError("weights must be a probability vector of length g")
        object.__setattr__(self, "target_overlaps", ov)
        object.__setattr__(self, "weights", w / w.sum())
        if self.separation not in SEPARATION_MODES:
            raise ValidationError(f"separation must be one of {SEPARATION_MODES}")
        if not isinstance(self.seed, RngHandle):
            object.__setattr__(self, "seed", RngHandle(int(self.seed)))

    @property
    def nu(self):
        return DOF_REGIMES[self.dof_regime]

    @property
    def p(self):
        return self.m + self.q


@dataclass
class SimDataset:
    data: object
    true_labels: np.ndarray
    informative_indices: np.ndarray
    generating_params: MixtureParams
    raw: np.ndarray
    design: SimDesign = None


def _t_draws(gen, nu, size):
    if nu >= DOF_MAX:
        return gen.standard_normal(size)
    return gen.standard_t(nu, size)


def overlap_rate(shift, draws):
    """Overlap of unit-scale t components at 0 and ``shift``.

    The sum of the two per-component misclassification rates of the
    midpoint decision rule, i.e. the area shared by the two densities. By
    symmetry each side errs with probability P(T > shift/2); ``draws`` are
    samples from the centered component.
    """
    return 2.0 * float(np.mean(draws > 0.5 * shift))


def calibrate_separation(nu, target_overlap, rng=None, draws=CALIBRATION_DRAWS, tol=1e-4):
    """Location shift giving the requested two-component overlap.

    Monte Carlo with common random numbers (so the estimate is monotone in the
    shift) and bisection on ``SEPARATION_BRACKET``.
    """
    if not 0 < target_overlap < 0.5:
        raise ValidationError("target_overlap must lie in (0, 0.5)")
    rng = rng or RngHandle()
    gen = rng.generator()
    # both sides of the pair, pooled: errors from side 0 are T0 > s/2, from side 1 are -T1 > s/2
    t = np.concatenate([_t_draws(gen, nu, draws), -_t_draws(gen, nu, draws)])
    t.sort()
    lo, hi = SEPARATION_BRACKET

    def err(s):
        return 2.0 * (1.0 - np.searchsorted(t, 0.5 * s, side="right") / t.size)

    if not (err(lo) >= target_overlap >= err(hi)):
        raise CalibrationError(
            f"overlap {target_overlap} not bracketed by shifts {SEPARATION_BRACKET} at nu={nu}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if err(mid) > target_overlap:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _mds(dist):
    """Classical multidimensional scaling: points whose distances reproduce ``dist``."""
    g = dist.shape[0]
    J = np.eye(g) - 1.0 / g
    B = -0.5 * J @ (dist ** 2) @ J
    vals, vecs = np.linalg.eigh(B)
    if vals.min() < -1e-9 * max(1.0, vals.max()):
        # targets break the triangle inequality; keep the nearest realizable layout
        log.warning("overlap targets not jointly realizable; dropping negative eigenvalue %.3g",
                    vals.min())
    order = np.argsort(-vals)[: max(g - 1, 1)]
    return vecs[:, order] * np.sqrt(np.maximum(vals[order], 0.0))


def _rotation_maximizing_spread(X, gen, tries=200):
    """Orthogonal rotation of X maximizing the smallest per-axis pairwise gap."""
    k = X.shape[1]
    pairs = list(itertools.combinations(range(X.shape[0]), 2))

    def score(R):
        Z = X @ R
        return min(np.min(np.abs(Z[i] - Z[j])) for i, j in pairs)

    best_R, best = np.eye(k), score(np.eye(k)) if pairs else 0.0
    if k == 1:
        return best_R
    for _ in range(tries):
        Q, r = np.linalg.qr(gen.standard_normal((k, k)))
        Q = Q * np.sign(np.diag(r))
        s = score(Q)
        if s > best:
            best_R, best = Q, s
    return best_R


def component_locations(design, rng=None):
    """g x m location matrix on the informative block.

    Each pair's separation is calibrated on one coordinate; the g points are
    laid out in g-1 dimensions by classical scaling and spread round-robin
    across the m coordinates. With ``separation="marginal"`` the per-coordinate
    root-mean-square shift of every pair equals its calibrated value (for
    g = 2 every coordinate carries the full shift). With ``"total"`` the
    Euclidean distance over the whole block does, and because a shared
    precision factor makes any unit-direction projection a univariate t, the
    multivariate overlap then matches the target.
    """
    g, m = design.g, design.m
    if g == 1 or m == 0:
        return np.zeros((g, m))
    rng = rng or design.seed.child(3)
    sep = np.zeros((g, g))
    for i, k in itertools.combinations(range(g), 2):
        sep[i, k] = sep[k, i] = calibrate_separation(
            design.nu, design.target_overlaps[i, k], rng.child(i, k)
        )
    X = _mds(sep)
    X = X @ _rotation_maximizing_spread(X, rng.child(99).generator())
    k = X.shape[1]
    axis = np.arange(m) % k
    counts = np.bincount(axis, minlength=k).astype(float)
    used = counts > 0
    coef = np.zeros(k)
    coef[used] = (np.sqrt(m / counts[used]) if design.separation == "marginal"
                  else 1.0 / np.sqrt(counts[used]))
    mu = X[:, axis] * coef[axis]
    return mu - mu.mean(axis=0)


def generate(design):
    """Draw a standardized data set from ``design``; deterministic given its seed."""
    g, m, q, n = design.g, design.m, design.q, design.n
    nu = design.nu
    labels = design.seed.child(0).generator().choice(g, size=n, p=design.weights)
    mu = component_locations(design)
    # one precision factor per sample, shared by all of its coordinates
    u_gen = design.seed.child(1).generator()
    u = np.ones(n) if nu >= DOF_MAX else u_gen.gamma(0.5 * nu, 2.0 / nu, size=n)
    scale = 1.0 / np.sqrt(u)[:, None]
    raw = np.empty((n, m + q))
    if m:
        raw[:, :m] = mu[labels] + design.seed.child(2).generator().standard_normal((n, m)) * scale
    if q:
        raw[:, m:] = design.seed.child(4).generator().standard_normal((n, q)) * scale
    names = [f"V{d + 1}" for d in range(m + q)]
    data = standardize(raw, names, [f"S{j + 1}" for j in range(n)])
    locations = np.zeros((g, m + q))
    locations[:, :m] = mu
    params = MixtureParams(design.weights, locations, np.ones((g, m + q)), np.full(g, nu))
    return SimDataset(
        data=data,
        true_labels=labels,
        informative_indices=np.arange(m),
        generating_params=params,
        raw=raw,
        design=design,
    )
