"""Penalized EM for finite mixtures of diagonal multivariate t distributions.

The objective is the observed-data log-likelihood minus
``lambda_mu * sum|mu| + lambda_sigma * sum|log sigma2|``. Each M-step is a
sequence of exact block maximizations of the expected complete-data
objective (weights, dof, locations given the previous scales, scales given
the new locations), so the penalized log-likelihood never decreases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .density import component_log_densities
from .errors import DegenerateComponentError, FitFailure, NumericalError, ValidationError
from .model import (
    DOF_MAX,
    DOF_MIN,
    SCALE_FLOOR,
    FitResult,
    LatentExpectations,
    MixtureParams,
    PenaltyConfig,
    hard_assignments,
    informative_mask,
)
from .numerics import RngHandle, digamma, log_gamma, log_sum_exp, maximize_1d

log = logging.getLogger(__name__)

INIT_METHODS = ("kmeans_pp", "random_partition")
INITIAL_DOF = 10.0
DOF_TOL = 1e-6
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    rel_tol: float = 1e-6
    n_restarts: int = 5
    init_method: str = "kmeans_pp"
    gaussian_mode: bool = False
    rng: RngHandle = field(default_factory=RngHandle)

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be > 0")
        if int(self.n_restarts) < 1:
            raise ValidationError("n_restarts must be >= 1")
        if self.init_method not in INIT_METHODS:
            raise ValidationError(f"init_method must be one of {INIT_METHODS}")

    def with_rng(self, rng):
        return EmConfig(
            self.max_iterations, self.rel_tol, self.n_restarts,
            self.init_method, self.gaussian_mode, rng,
        )


@dataclass(frozen=True)
class MStepIntermediates:
    b: np.ndarray  # g: sum_j tau / 2
    c: np.ndarray  # g x p: sum_j tau u (y - mu)^2 / 2


def _values(data):
    return data.values if hasattr(data, "values") else np.asarray(data, dtype=float)


# --------------------------------------------------------------------------- E-step


def e_step(data, params):
    """Responsibilities, precision factors and log-precision expectations."""
    Y = _values(data)
    logf, delta = component_log_densities(Y, params)
    with np.errstate(divide="ignore"):
        joint = logf + np.log(params.weights)
    log_dens = log_sum_exp(joint, axis=1)
    bad = ~np.isfinite(log_dens)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"sample {j} has zero density under every component", where=j)
    tau = np.exp(joint - log_dens[:, None])
    tau /= tau.sum(axis=1, keepdims=True)
    if params.gaussian:
        u = np.ones_like(delta)
        log_u = np.zeros_like(delta)
    else:
        nu = params.dof
        half = 0.5 * (nu + params.p)
        u = (nu + params.p) / (nu + delta)
        log_u = np.log(u) + (digamma(half) - np.log(half))
    return LatentExpectations(tau=tau, u=u, log_u=log_u, log_density=log_dens)


def penalty_value(params, penalty):
    return penalty.lambda_mu * float(np.abs(params.locations).sum()) + penalty.lambda_sigma * float(
        np.abs(np.log(params.scales)).sum()
    )


def penalized_log_likelihood(data, params, penalty):
    """Observed-data log-likelihood minus the L1 penalty on means and log-scales."""
    Y = _values(data)
    logf, _ = component_log_densities(Y, params)
    with np.errstate(divide="ignore"):
        joint = logf + np.log(params.weights)
    log_dens = log_sum_exp(joint, axis=1)
    if not np.all(np.isfinite(log_dens)):
        j = int(np.flatnonzero(~np.isfinite(log_dens))[0])
        raise NumericalError(f"sample {j} has zero density under every component", where=j)
    return float(log_dens.sum()) - penalty_value(params, penalty)


# --------------------------------------------------------------------------- M-step


def m_step_weights(tau):
    tau = np.asarray(tau, dtype=float)
    w = tau.sum(axis=0) / tau.shape[0]
    return w / w.sum()


def m_step_locations(data, tau, u, sigma2_prev, lambda_mu):
    """Soft-thresholded weighted means.

    mu = sign(m) * max(|m| - lambda_mu * sigma2 / sum(tau u), 0) where m is the
    tau*u weighted mean; coordinates where the threshold binds are exactly 0.
    """
    Y = _values(data)
    w = np.asarray(tau) * np.asarray(u)
    sw = w.sum(axis=0)
    if np.any(~(sw > 0)):
        i = int(np.flatnonzero(~(sw > 0))[0])
        raise DegenerateComponentError(f"component {i} has vanished weight", where=i)
    mu_tilde = (w.T @ Y) / sw[:, None]
    return soft_threshold(mu_tilde, lambda_mu * np.asarray(sigma2_prev) / sw[:, None])


def soft_threshold(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def m_step_intermediates(data, tau, u, mu, Y2=None):
    Y = _values(data)
    tau = np.asarray(tau)
    w = tau * np.asarray(u)
    sw = w.sum(axis=0)
    if Y2 is None:
        Y2 = Y * Y
    wy = w.T @ Y
    mu = np.asarray(mu)
    c = 0.5 * ((w.T @ Y2) - 2.0 * mu * wy + mu * mu * sw[:, None])
    np.maximum(c, 0.0, out=c)
    return MStepIntermediates(b=0.5 * tau.sum(axis=0), c=c)


def scale_update(b, c, lambda_sigma):
    """Closed-form maximizer of -b log s - c/s - lambda_sigma |log s| over s > 0."""
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(~(b > 0)):
        i = int(np.flatnonzero(~(b > 0))[0])
        raise DegenerateComponentError(f"component {i} has b <= 0", where=i)
    bb = b[:, None] if c.ndim == 2 else b
    diff = c - bb
    shrunk = np.abs(diff) <= lambda_sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = (c / bb) / (1.0 + lambda_sigma * np.sign(diff) / bb)
    s2 = np.where(shrunk, 1.0, s2)
    return np.maximum(s2, SCALE_FLOOR)


def m_step_scales(data, tau, u, mu_new, lambda_sigma, Y2=None):
    """Scale update thresholded toward 1, floored at SCALE_FLOOR."""
    inter = m_step_intermediates(data, tau, u, mu_new, Y2)
    return scale_update(inter.b, inter.c, lambda_sigma)


def dof_objective(nu, mean_gap):
    """Per-unit-weight dof objective: -lnG(nu/2) + (nu/2) ln(nu/2) + (nu/2) * mean_gap.

    ``mean_gap`` is the tau-weighted mean of (E[log u] - E[u]).
    """
    h = 0.5 * nu
    return -log_gamma(h) + h * math.log(h) + h * mean_gap


def m_step_dof(tau, u, log_u, nu_prev, gaussian_mode=False):
    """Per-component 1-D maximization of the expected complete-data dof term."""
    nu_prev = np.asarray(nu_prev, dtype=float)
    if gaussian_mode:
        return np.full(nu_prev.shape, DOF_MAX)
    tau = np.asarray(tau)
    tw = tau.sum(axis=0)
    gap = (tau * (np.asarray(log_u) - np.asarray(u))).sum(axis=0) / tw
    out = np.empty_like(nu_prev)
    for i in range(nu_prev.size):
        a = float(gap[i])
        x, fx = maximize_1d(lambda v: dof_objective(v, a), DOF_MIN, DOF_MAX, tol=DOF_TOL)
        prev = float(np.clip(nu_prev[i], DOF_MIN, DOF_MAX))
        # never step below the incumbent; keeps the ascent exact
        out[i] = x if fx >= dof_objective(prev, a) else prev
    return out


def q_dof(tau, u, log_u, nu):
    """Full expected complete-data gamma term per component, constants included."""
    tau = np.asarray(tau)
    nu = np.asarray(nu, dtype=float)
    h = 0.5 * nu
    per = (-log_gamma(h) + h * np.log(h))[None, :] + h[None, :] * (log_u - u) - log_u
    return (tau * per).sum(axis=0)


def m_step(data, lat, params, penalty, gaussian_mode=False, Y2=None):
    weights = m_step_weights(lat.tau)
    dof = m_step_dof(lat.tau, lat.u, lat.log_u, params.dof, gaussian_mode or params.gaussian)
    mu = m_step_locations(data, lat.tau, lat.u, params.scales, penalty.lambda_mu)
    s2 = m_step_scales(data, lat.tau, lat.u, mu, penalty.lambda_sigma, Y2)
    return MixtureParams(weights, mu, s2, dof, gaussian=params.gaussian)


# --------------------------------------------------------------------------- initialization


def kmeans_pp_labels(Y, g, gen, max_iter=100):
    """k-means++ seeding followed by Lloyd iterations; returns hard labels."""
    n = Y.shape[0]
    sq = np.einsum("ij,ij->i", Y, Y)
    centers = np.empty((g, Y.shape[1]))
    centers[0] = Y[gen.integers(n)]
    d2 = np.maximum(sq - 2 * Y @ centers[0] + centers[0] @ centers[0], 0.0)
    for k in range(1, g):
        total = d2.sum()
        idx = gen.integers(n) if total <= 0 else gen.choice(n, p=d2 / total)
        centers[k] = Y[idx]
        d2 = np.minimum(d2, np.maximum(sq - 2 * Y @ centers[k] + centers[k] @ centers[k], 0.0))
    labels = None
    for _ in range(max_iter):
        dist = sq[:, None] - 2 * Y @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(g):
            members = labels == k
            if members.any():
                centers[k] = Y[members].mean(axis=0)
    return labels


def random_partition_labels(Y, g, gen):
    return gen.integers(g, size=Y.shape[0])


def params_from_labels(Y, labels, g, gaussian_mode=False):
    """One unpenalized M-step from a hard partition (u = 1)."""
    tau = np.zeros((Y.shape[0], g))
    tau[np.arange(Y.shape[0]), labels] = 1.0
    counts = tau.sum(axis=0)
    mu = (tau.T @ Y) / counts[:, None]
    var = (tau.T @ (Y * Y)) / counts[:, None] - mu * mu
    s2 = np.maximum(var, SCALE_FLOOR)
    nu = np.full(g, DOF_MAX if gaussian_mode else INITIAL_DOF)
    return MixtureParams(counts / counts.sum(), mu, s2, nu, gaussian=gaussian_mode)


def precision_rescaled(Y, max_iter=50):
    """Rows multiplied by sqrt(u) from an unpenalized one-component t fit.

    Under the t hierarchy y = mu + e / sqrt(u), so rescaling puts every
    sample's noise on a common scale before k-means; without it k-means
    separates samples by their norm instead of their location.
    """
    start = params_from_labels(Y, np.zeros(Y.shape[0], dtype=int), 1)
    out = run_em(Y, start, PenaltyConfig(), EmConfig(max_iterations=max_iter, rel_tol=1e-8, n_restarts=1))
    return Y * np.sqrt(out.lat.u[:, 0])[:, None]


def initialize(data, g, config, rng, min_size=2, attempts=20, seeding_values=None):
    """Starting parameters from a hard partition with every cluster of size >= min_size.

    ``seeding_values`` (same rows as ``data``) is what k-means clusters;
    parameters are always estimated on ``data`` itself.
    """
    Y = _values(data)
    n = Y.shape[0]
    gen = rng.generator()
    min_size = min(min_size, n // g)
    if seeding_values is None and config.init_method == "kmeans_pp" and not config.gaussian_mode and g > 1:
        seeding_values = precision_rescaled(Y)
    for _ in range(attempts):
        if config.init_method == "kmeans_pp":
            labels = kmeans_pp_labels(Y if seeding_values is None else seeding_values, g, gen)
        else:
            labels = random_partition_labels(Y, g, gen)
        if np.bincount(labels, minlength=g).min() >= max(min_size, 1):
            return params_from_labels(Y, labels, g, config.gaussian_mode)
    raise DegenerateComponentError(f"could not draw a partition with {g} non-empty clusters")


# --------------------------------------------------------------------------- main loop


@dataclass
class RunOutcome:
    params: MixtureParams
    lat: LatentExpectations
    penalized_loglik: float
    trace: list
    n_iterations: int
    converged: bool


def run_em(data, init, penalty, config):
    """EM iterations from fixed starting parameters."""
    Y = _values(data)
    Y2 = Y * Y
    n = Y.shape[0]
    params = init
    if config.gaussian_mode and not params.gaussian:
        params = MixtureParams(params.weights, params.locations, params.scales,
                               np.full(params.g, DOF_MAX), gaussian=True)
    lat = e_step(Y, params)
    ll = float(lat.log_density.sum()) - penalty_value(params, penalty)
    trace = [ll]
    converged = False
    it = 0
    floor = 10.0 * _EPS * n
    for it in range(1, config.max_iterations + 1):
        mass = lat.tau.sum(axis=0)
        if np.any(mass < floor):
            i = int(np.argmin(mass))
            raise DegenerateComponentError(
                f"component {i} collapsed (total responsibility {mass[i]:.3g}) at iteration {it}",
                where=i,
            )
        params = m_step(Y, lat, params, penalty, config.gaussian_mode, Y2)
        lat = e_step(Y, params)
        new = float(lat.log_density.sum()) - penalty_value(params, penalty)
        trace.append(new)
        change = abs(new - ll) / (1.0 + abs(new))
        ll = new
        if change < config.rel_tol:
            converged = True
            break
    return RunOutcome(params, lat, ll, trace, it, converged)


def fit(data, g, penalty=None, config=None, init_params=None):
    """Fit a g-component penalized t mixture, keeping the best of several restarts.

    Parameters
    ----------
    data : DataMatrix or array
    g : int
    penalty : PenaltyConfig
    config : EmConfig
    init_params : MixtureParams, optional
        Used as the first restart's starting point (warm start); the remaining
        ``n_restarts - 1`` restarts are fresh initializations.

    Returns
    -------
    FitResult
        Components are sorted by descending weight.
    """
    penalty = penalty or PenaltyConfig()
    config = config or EmConfig()
    Y = _values(data)
    n = Y.shape[0]
    if not (1 <= int(g) <= n):
        raise ValidationError(f"need 1 <= g <= n, got g={g}, n={n}")
    g = int(g)
    best = None
    diagnostics = []
    seeding = None
    if config.init_method == "kmeans_pp" and not config.gaussian_mode and g > 1:
        try:
            seeding = precision_rescaled(Y)
        except NumericalError as exc:
            log.debug("precision rescaling failed, seeding on raw values: %s", exc)
            seeding = Y
    for r in range(config.n_restarts):
        try:
            if r == 0 and init_params is not None:
                if init_params.g != g or init_params.p != Y.shape[1]:
                    raise ValidationError("init_params shape does not match data")
                start = init_params
            else:
                start = initialize(Y, g, config, config.rng.child(r), seeding_values=seeding)
            out = run_em(Y, start, penalty, config)
        except NumericalError as exc:
            diagnostics.append({"restart": r, "status": "degenerate", "error": str(exc)})
            log.debug("restart %d failed: %s", r, exc)
            continue
        diagnostics.append({
            "restart": r, "status": "ok", "penalized_loglik": out.penalized_loglik,
            "iterations": out.n_iterations, "converged": out.converged,
        })
        if best is None or out.penalized_loglik > best.penalized_loglik:
            best = out
    if best is None:
        raise FitFailure(f"all {config.n_restarts} restarts degenerate", diagnostics)

    params, order = best.params.sorted_by_weight()
    tau = best.lat.tau[:, order]
    return FitResult(
        params=params,
        tau=tau,
        assignments=hard_assignments(tau),
        penalized_loglik=best.penalized_loglik,
        loglik_trace=list(best.trace),
        informative_mask=informative_mask(params),
        n_iterations=best.n_iterations,
        converged=best.converged,
        penalty=penalty,
        n=n,
        restart_diagnostics=diagnostics,
    )
