"""Domain types for the penalized t-mixture and data preprocessing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError

SCALE_FLOOR = 1e-6
DOF_MIN = 0.5
DOF_MAX = 200.0
MASK_TOL = 1e-8


@dataclass(frozen=True)
class DataMatrix:
    """Standardized n x p observations with column labels.

    ``constant`` flags columns that had zero variance before standardizing;
    they are kept as all-zero columns so indices match the input file.
    """

    values: np.ndarray
    column_names: tuple
    constant: np.ndarray = None
    row_names: tuple = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValidationError("data must be a 2-D matrix")
        n, p = vals.shape
        if n < 2 or p < 1:
            raise ValidationError(f"need n >= 2 and p >= 1, got {n} x {p}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"non-finite cells: {_bad_cells(vals)}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        names = tuple(str(c) for c in self.column_names)
        if len(names) != p:
            raise ValidationError(f"{len(names)} column names for {p} columns")
        object.__setattr__(self, "column_names", names)
        const = np.zeros(p, bool) if self.constant is None else np.asarray(self.constant, bool)
        object.__setattr__(self, "constant", const)
        if self.row_names is not None:
            object.__setattr__(self, "row_names", tuple(str(r) for r in self.row_names))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def rows(self, idx):
        """Subset of rows; values are taken as-is, not re-standardized."""
        idx = np.asarray(idx)
        rn = None if self.row_names is None else tuple(self.row_names[i] for i in idx)
        return DataMatrix(self.values[idx], self.column_names, self.constant, rn)

    def columns(self, idx):
        idx = np.asarray(idx, dtype=int)
        return DataMatrix(
            self.values[:, idx],
            tuple(self.column_names[i] for i in idx),
            self.constant[idx],
            self.row_names,
        )


def _bad_cells(vals, limit=10):
    rows, cols = np.nonzero(~np.isfinite(vals))
    cells = [(int(r), int(c)) for r, c in zip(rows[:limit], cols[:limit])]
    more = "" if len(rows) <= limit else f" ... ({len(rows)} total)"
    return f"{cells}{more}"


def standardize(raw, names=None, row_names=None):
    """Center each column and scale to unit sample standard deviation (n-1).

    Constant columns become zeros and are flagged in ``DataMatrix.constant``.

    >>> standardize([[1.0], [2.0], [3.0]]).values.ravel().tolist()
    [-1.0, 0.0, 1.0]
    """
    x = np.array(raw, dtype=float)
    if x.ndim != 2:
        raise ValidationError("data must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"non-finite cells: {_bad_cells(x)}")
    if x.shape[0] < 2:
        raise ValidationError("standardize needs at least two rows")
    if names is None:
        names = [f"V{d + 1}" for d in range(x.shape[1])]
    centered = x - x.mean(axis=0)
    sd = centered.std(axis=0, ddof=1)
    scale = np.max(np.abs(x), axis=0)
    constant = sd <= 1e-12 * np.maximum(scale, 1.0)
    out = np.zeros_like(x)
    ok = ~constant
    out[:, ok] = centered[:, ok] / sd[ok]
    # second pass removes the O(eps) residue of the first
    out[:, ok] -= out[:, ok].mean(axis=0)
    out[:, ok] /= out[:, ok].std(axis=0, ddof=1)
    return DataMatrix(out, names, constant, row_names)


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_mu: float = 0.0
    lambda_sigma: float = 0.0

    def __post_init__(self):
        for name in ("lambda_mu", "lambda_sigma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def total(self):
        return self.lambda_mu + self.lambda_sigma


@dataclass(frozen=True)
class MixtureParams:
    """Mixing weights, g x p locations and diagonal scales, per-component dof.

    ``gaussian`` marks the normal limit (infinite dof); ``dof`` then reads
    ``DOF_MAX`` and is not used by the density.
    """

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray
    dof: np.ndarray
    gaussian: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.array(self.locations, dtype=float))
        s2 = np.atleast_2d(np.array(self.scales, dtype=float))
        nu = np.array(self.dof, dtype=float).ravel()
        g = w.size
        if mu.shape[0] != g or s2.shape != mu.shape or nu.size != g:
            raise ValidationError(
                f"inconsistent shapes: weights {w.shape}, locations {mu.shape}, "
                f"scales {s2.shape}, dof {nu.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1, g):
            raise ValidationError(f"weights must be a probability vector, got {w}")
        if np.any(s2 < SCALE_FLOOR * (1 - 1e-12)) or not np.all(np.isfinite(s2)):
            raise ValidationError("scales must be finite and >= SCALE_FLOOR")
        if not np.all(np.isfinite(mu)):
            raise ValidationError("locations must be finite")
        if np.any(nu < DOF_MIN) or np.any(nu > DOF_MAX):
            raise ValidationError(f"dof must lie in [{DOF_MIN}, {DOF_MAX}], got {nu}")
        for name, arr in (("weights", w), ("locations", mu), ("scales", s2), ("dof", nu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gaussian", bool(self.gaussian))

    @property
    def g(self):
        return self.weights.size

    @property
    def p(self):
        return self.locations.shape[1]

    def permuted(self, order):
        order = np.asarray(order, dtype=int)
        return replace(
            self,
            weights=self.weights[order],
            locations=self.locations[order],
            scales=self.scales[order],
            dof=self.dof[order],
        )

    def sorted_by_weight(self):
        """Components reordered by descending weight (stable), plus the order."""
        order = np.argsort(-self.weights, kind="stable")
        return self.permuted(order), order


@dataclass(frozen=True)
class LatentExpectations:
    tau: np.ndarray
    u: np.ndarray
    log_u: np.ndarray
    log_density: np.ndarray = None  # n-vector ln f(y_j | params), for the log-likelihood


def informative_mask(params, tol=MASK_TOL):
    """True for variables where some component escapes mean 0 or variance 1."""
    mean_escape = np.abs(params.locations) > 0
    scale_escape = np.abs(params.scales - 1.0) > tol
    return np.any(mean_escape | scale_escape, axis=0)


def hard_assignments(tau):
    """Row-wise argmax; ties go to the lowest component index."""
    return np.argmax(np.asarray(tau), axis=1)


@dataclass
class FitResult:
    params: MixtureParams
    tau: np.ndarray
    assignments: np.ndarray
    penalized_loglik: float
    loglik_trace: list
    informative_mask: np.ndarray
    n_iterations: int
    converged: bool
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    n: int = 0
    restart_diagnostics: list = field(default_factory=list)

    @property
    def m_selected(self):
        return int(np.count_nonzero(self.informative_mask))

    @property
    def selected(self):
        return np.flatnonzero(self.informative_mask)
