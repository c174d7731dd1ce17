"""Diagonal-scale multivariate Student-t density and sampler."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, ValidationError
from .numerics import log_gamma

LOG_PI = math.log(math.pi)
LOG_2PI = math.log(2.0 * math.pi)


def _positive_scales(sigma2):
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(~(s2 > 0)):
        raise DomainError("scale entries must be strictly positive")
    return s2


def mahalanobis_sq(y, mu, sigma2):
    """Squared distance sum_d (y_d - mu_d)^2 / sigma2_d.

    ``y`` may be a p-vector or an n x p matrix (one distance per row).
    """
    s2 = _positive_scales(sigma2)
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape[-1] != mu.shape[-1] or mu.shape[-1] != s2.shape[-1]:
        raise ValidationError("y, mu and sigma2 must have equal length")
    out = np.sum((y - mu) ** 2 / s2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def t_log_pdf(y, mu, sigma2, nu):
    """Log-density of the multivariate t with diagonal scale matrix."""
    if not (np.isfinite(nu) and nu > 0):
        raise DomainError(f"nu must be positive, got {nu}")
    s2 = _positive_scales(sigma2)
    delta = mahalanobis_sq(y, mu, s2)
    p = s2.shape[-1]
    return _t_log_pdf_from_delta(delta, p, float(nu), float(np.sum(np.log(s2))))


def _t_log_pdf_from_delta(delta, p, nu, log_det):
    half = 0.5 * (nu + p)
    const = log_gamma(half) - log_gamma(0.5 * nu) - 0.5 * p * (LOG_PI + math.log(nu)) - 0.5 * log_det
    return const - half * np.log1p(np.asarray(delta) / nu)


def gaussian_log_pdf(y, mu, sigma2):
    s2 = _positive_scales(sigma2)
    delta = mahalanobis_sq(y, mu, s2)
    p = s2.shape[-1]
    return -0.5 * (p * LOG_2PI + np.sum(np.log(s2)) + delta)


def pairwise_mahalanobis(Y, locations, scales):
    """n x g matrix of squared distances from every row to every component.

    Expanded as Y^2 @ (1/s2)^T - 2 Y @ (mu/s2)^T + sum(mu^2/s2) so the work
    is two matrix products; tiny negative residue is clipped to zero.
    """
    inv = 1.0 / scales
    delta = (Y * Y) @ inv.T - 2.0 * (Y @ (locations * inv).T)
    delta += np.sum(locations * locations * inv, axis=1)
    np.maximum(delta, 0.0, out=delta)
    return delta


def component_log_densities(Y, params):
    """n x g log-densities and the matching squared distances."""
    delta = pairwise_mahalanobis(Y, params.locations, params.scales)
    log_det = np.sum(np.log(params.scales), axis=1)
    p = params.p
    if params.gaussian:
        logf = -0.5 * (p * LOG_2PI + log_det + delta)
    else:
        nu = params.dof
        half = 0.5 * (nu + p)
        const = (
            log_gamma(half)
            - log_gamma(0.5 * nu)
            - 0.5 * p * (LOG_PI + np.log(nu))
            - 0.5 * log_det
        )
        logf = const - half * np.log1p(delta / nu)
    return logf, delta


def sample_t(mu, sigma2, nu, rng, size=None):
    """Draw from the t via u ~ Gamma(nu/2, rate nu/2), y | u ~ N(mu, sigma2/u).

    ``rng`` is a numpy Generator (see ``RngHandle.generator``). With ``size``
    the result has shape (size, p).
    """
    mu = np.asarray(mu, dtype=float)
    s2 = _positive_scales(sigma2)
    if not (np.isfinite(nu) and nu > 0):
        raise DomainError(f"nu must be positive, got {nu}")
    shape = mu.shape if size is None else (size,) + mu.shape
    u = rng.gamma(0.5 * nu, 2.0 / nu, size=None if size is None else (size, 1))
    z = rng.standard_normal(shape)
    return mu + z * np.sqrt(s2 / u)
