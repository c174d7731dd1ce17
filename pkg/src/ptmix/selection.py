"""Modified BIC, penalty grid search, bootstrap selection probabilities and
the two-step choice of the number of components."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import EmConfig, fit, penalty_value
from .errors import NumericalError, SelectionError, ValidationError
from .model import PenaltyConfig

log = logging.getLogger(__name__)

GRID_FACTORS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
DEFAULT_B = 100
DEFAULT_THRESHOLD = 0.7
BIC_FORMULAS = ("free", "literal")
BIC_LIKELIHOODS = ("unpenalized", "penalized")

# stream namespaces under the caller's RngHandle
_GRID_STREAM = 1
_BOOT_STREAM = 2
_PARENT_STREAM = 3
_G_STREAM = 4


@dataclass
class BicRecord:
    g: int
    penalty: PenaltyConfig
    m_selected: int
    effective_params: float
    bic: float
    penalized_loglik: float
    converged: bool = True
    failed: bool = False
    fit: object = field(default=None, repr=False)


@dataclass
class SelectionReport:
    selection_probabilities: np.ndarray
    threshold: float
    ranked_variables: np.ndarray
    chosen_lambda: PenaltyConfig
    chosen_g: int
    bic_table: list
    stable_set: np.ndarray
    fit: object = field(default=None, repr=False)
    column_names: tuple = ()
    n_replicates: int = 0
    n_failed: int = 0
    bootstrap: bool = False
    fallback: bool = False
    per_g_probabilities: dict = field(default_factory=dict)
    per_g_lambda: dict = field(default_factory=dict)


def default_grid(n, factors=GRID_FACTORS, scale=None):
    """Cartesian grid of (lambda_mu, lambda_sigma), each factor times sqrt(n)."""
    s = math.sqrt(n) if scale is None else scale
    return [PenaltyConfig(a * s, b * s) for a in factors for b in factors]


def effective_parameters(g, m, p, formula="free"):
    """(g - 1) + 2 g m + g; the ``literal`` variant additionally subtracts q = p - m."""
    if formula not in BIC_FORMULAS:
        raise ValidationError(f"formula must be one of {BIC_FORMULAS}")
    r = (g - 1) + 2 * g * m + g
    return r - (p - m) if formula == "literal" else r


def modified_bic(fit_result, g, p, formula="free", n=None, likelihood="unpenalized"):
    """-2 * log-likelihood + r * ln(n); +inf for non-converged fits.

    The default ``likelihood="unpenalized"`` scores the plain log-likelihood
    of the penalized estimates, i.e. the penalty is added back. With
    ``"penalized"`` the penalty stays in, so nonzero parameters are charged
    both by the penalty and by ``r`` and the criterion leans toward small ``g``.
    """
    if likelihood not in BIC_LIKELIHOODS:
        raise ValidationError(f"likelihood must be one of {BIC_LIKELIHOODS}")
    n = fit_result.n if n is None else n
    m = fit_result.m_selected
    r = effective_parameters(g, m, p, formula)
    converged = bool(fit_result.converged)
    ll = fit_result.penalized_loglik
    if likelihood == "unpenalized":
        ll = ll + penalty_value(fit_result.params, fit_result.penalty)
    bic = -2.0 * ll + r * math.log(n) if converged else math.inf
    return BicRecord(
        g=g, penalty=fit_result.penalty, m_selected=m, effective_params=float(r),
        bic=bic, penalized_loglik=fit_result.penalized_loglik, converged=converged,
        fit=fit_result,
    )


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _dedupe(grid):
    seen, out = set(), []
    for pc in grid:
        key = (pc.lambda_mu, pc.lambda_sigma)
        if key not in seen:
            seen.add(key)
            out.append(pc)
    return out


def _failed_record(g, penalty, exc):
    log.debug("fit failed at g=%d %s: %s", g, penalty, exc)
    return BicRecord(g, penalty, 0, math.nan, math.inf, -math.inf, False, True)


def select_lambda(data, g, grid, config=None, threads=1, formula="free", likelihood="unpenalized"):
    """Fit every grid point and return the BIC-minimizing penalty and the table.

    Ties go to the larger lambda_mu + lambda_sigma (sparser model), then to
    grid order.
    """
    config = config or EmConfig()
    grid = _dedupe(list(grid))
    if not grid:
        raise ValidationError("empty penalty grid")
    base = config.rng.child(_GRID_STREAM)
    # lightest penalty first; its solution warm-starts every other grid point
    anchor = min(range(len(grid)), key=lambda k: (grid[k].total, k))

    def one(k, warm=None):
        pc = grid[k]
        try:
            res = fit(data, g, pc, config.with_rng(base.child(k)), init_params=warm)
        except NumericalError as exc:
            return _failed_record(g, pc, exc)
        return modified_bic(res, g, data.p, formula, likelihood=likelihood)

    first = one(anchor)
    warm = None if first.fit is None else first.fit.params
    rest = [k for k in range(len(grid)) if k != anchor]
    done = dict(zip(rest, _map(lambda k: one(k, warm), rest, threads)))
    done[anchor] = first
    table = [done[k] for k in range(len(grid))]
    usable = [k for k, rec in enumerate(table) if math.isfinite(rec.bic)]
    if not usable:
        raise SelectionError(
            f"no grid point produced a converged fit for g={g}",
            [{"lambda_mu": r.penalty.lambda_mu, "lambda_sigma": r.penalty.lambda_sigma,
              "failed": r.failed, "converged": r.converged} for r in table],
        )
    best = min(usable, key=lambda k: (table[k].bic, -table[k].penalty.total, k))
    return table[best].penalty, table


def _subsample_indices(n, rng):
    return rng.generator().integers(0, n, size=n // 2)


def bootstrap_selection(data, g, lambda_star, B=DEFAULT_B, threshold=DEFAULT_THRESHOLD,
                        config=None, threads=1, parent_fit=None):
    """Selection probability of every variable over B half-size resamples.

    Each replicate draws floor(n/2) rows with replacement (values are not
    re-standardized), refits with ``lambda_star`` and records which variables
    are informative. Replicate b uses its own stream, so results do not depend
    on execution order or ``threads``.
    """
    config = config or EmConfig()
    if B < 1:
        raise ValidationError("B must be >= 1")
    if not 0 < threshold <= 1:
        raise ValidationError("threshold must lie in (0, 1]")
    if parent_fit is None:
        parent_fit = fit(data, g, lambda_star, config.with_rng(config.rng.child(_PARENT_STREAM)))
    base = config.rng.child(_BOOT_STREAM)
    n = data.n

    def one(b):
        stream = base.child(b)
        rows = _subsample_indices(n, stream.child(0))
        try:
            res = fit(data.rows(rows), g, lambda_star, config.with_rng(stream.child(1)),
                      init_params=parent_fit.params)
        except NumericalError as exc:
            log.debug("replicate %d failed: %s", b, exc)
            return None
        return res.informative_mask

    masks = _map(one, list(range(B)), threads)
    ok = [mk for mk in masks if mk is not None]
    n_failed = B - len(ok)
    if n_failed > B / 2:
        raise SelectionError(f"{n_failed} of {B} bootstrap replicates failed")
    probs = np.mean(np.vstack(ok), axis=0) if ok else np.zeros(data.p)
    return SelectionReport(
        selection_probabilities=probs,
        threshold=threshold,
        ranked_variables=rank_variables(probs),
        chosen_lambda=lambda_star,
        chosen_g=g,
        bic_table=[],
        stable_set=np.flatnonzero(probs >= threshold),
        fit=parent_fit,
        column_names=data.column_names,
        n_replicates=B,
        n_failed=n_failed,
        bootstrap=True,
    )


def rank_variables(probs):
    """Indices by descending probability; ties keep ascending index order."""
    return np.argsort(-np.asarray(probs), kind="stable")


def _grid_for(grids, g, n):
    if grids is None:
        return default_grid(n)
    if isinstance(grids, dict):
        return grids.get(g) or default_grid(n)
    return list(grids)


def _best_over_g(records):
    # argmin BIC; ties to the smallest g
    return min(records, key=lambda r: (r.bic, r.g))


def _no_bootstrap(data, g_candidates, grids, config, threads, formula, likelihood):
    table, best_per_g = [], []
    for g in g_candidates:
        cfg = config.with_rng(config.rng.child(_G_STREAM, g))
        lam, recs = select_lambda(data, g, _grid_for(grids, g, data.n), cfg, threads, formula, likelihood)
        table.extend(recs)
        best_per_g.append(next(r for r in recs if r.penalty == lam and math.isfinite(r.bic)))
    return table, best_per_g


def select_g(data, g_candidates, grids=None, B=DEFAULT_B, threshold=DEFAULT_THRESHOLD,
             config=None, use_bootstrap=True, threads=1, formula="free",
             likelihood="unpenalized"):
    """Choose the number of components by modified BIC.

    Without the bootstrap every candidate is scored on all variables. With it,
    the union of each candidate's stable variables is kept and all candidates
    are refitted (penalty re-selected) on that subset before comparing BIC.
    """
    config = config or EmConfig()
    g_candidates = sorted({int(g) for g in g_candidates})
    if not g_candidates or g_candidates[0] < 1:
        raise ValidationError("g_candidates must be non-empty integers >= 1")

    if use_bootstrap:
        per_g_probs, per_g_lambda, union = {}, {}, set()
        n_failed = 0
        for g in g_candidates:
            cfg = config.with_rng(config.rng.child(_G_STREAM, g))
            lam, recs = select_lambda(data, g, _grid_for(grids, g, data.n), cfg, threads, formula, likelihood)
            parent = next(r.fit for r in recs if r.penalty == lam and math.isfinite(r.bic))
            rep = bootstrap_selection(data, g, lam, B, threshold, cfg, threads, parent_fit=parent)
            per_g_probs[g] = rep.selection_probabilities
            per_g_lambda[g] = lam
            n_failed += rep.n_failed
            union.update(int(d) for d in rep.stable_set)
        stable = np.array(sorted(union), dtype=int)
        if stable.size:
            restricted = data.columns(stable)
            cfg2 = config.with_rng(config.rng.child(_G_STREAM + 1))
            table, best_per_g = _no_bootstrap(restricted, g_candidates, grids, cfg2, threads, formula, likelihood)
            best = _best_over_g(best_per_g)
            probs = per_g_probs[best.g]
            return SelectionReport(
                selection_probabilities=probs,
                threshold=threshold,
                ranked_variables=rank_variables(probs),
                chosen_lambda=best.penalty,
                chosen_g=best.g,
                bic_table=table,
                stable_set=stable,
                fit=best.fit,
                column_names=data.column_names,
                n_replicates=B * len(g_candidates),
                n_failed=n_failed,
                bootstrap=True,
                per_g_probabilities=per_g_probs,
                per_g_lambda=per_g_lambda,
            )
        log.warning("bootstrap stable set is empty; falling back to BIC on all variables")
        fallback = True
    else:
        fallback = False

    table, best_per_g = _no_bootstrap(data, g_candidates, grids, config, threads, formula, likelihood)
    best = _best_over_g(best_per_g)
    probs = best.fit.informative_mask.astype(float)
    return SelectionReport(
        selection_probabilities=probs,
        threshold=threshold,
        ranked_variables=rank_variables(probs),
        chosen_lambda=best.penalty,
        chosen_g=best.g,
        bic_table=table,
        stable_set=np.flatnonzero(best.fit.informative_mask),
        fit=best.fit,
        column_names=data.column_names,
        bootstrap=False,
        fallback=fallback,
        per_g_lambda={r.g: r.penalty for r in best_per_g},
    )
