"""Fisher-information sensitivity bounds and heterodyne uncertainty.

Only the mean-vector term I1 = (dmu_out/dtheta)^T V_out^{-1} (dmu_out/dtheta)
of the Gaussian quantum Fisher information is computed. The covariance term is
non-negative, so I1^{-1/2} is an I1-based lower bound: it sits at or above
the full Cramer-Rao bound I^{-1/2} and remains a valid, if looser, floor on
any estimator's error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    IllConditionedCovarianceError,
    PreconditionError,
    SingularResponseError,
)
from .model import (
    SensorModel,
    amplitude_derivative,
    output_factor,
    response,
    response_dense,
)

COV_COND_LIMIT = 1e14
COV_COND_WARN = 1e12


class CovarianceConditionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SensitivityReport:
    theta: float
    I1: float
    delta_theta_cr: float
    delta_theta_het: float
    upper_bound_I: float | None = None


def _solve_factored(B: np.ndarray, d: np.ndarray) -> float:
    """d^T (B B^T)^{-1} d via the minimum-norm solution of B z = d.

    Equivalent to inverting V = B B^T but conditioned like B, the square root
    of cond(V).
    """
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] == 0.0:
        raise IllConditionedCovarianceError("output covariance is singular")
    cond = (s[0] / s[-1]) ** 2
    if cond >= COV_COND_LIMIT:
        raise IllConditionedCovarianceError(f"cond(V_out) = {cond:.3e} exceeds {COV_COND_LIMIT:.0e}")
    if cond >= COV_COND_WARN:
        warnings.warn(f"cond(V_out) = {cond:.3e}", CovarianceConditionWarning, stacklevel=3)
    # singular values below sqrt(1e-14) relative would be dropped; the guard
    # above guarantees none are
    z = np.linalg.lstsq(B, d, rcond=np.sqrt(1.0 / COV_COND_LIMIT))[0]
    return float(z @ z)


def fisher_from_moments(dmu, V, rcond: float = 1e-12) -> float:
    """Quadratic form dmu^T V^{-1} dmu for an explicit covariance.

    Symmetric eigendecomposition with eigenvalues below ``rcond`` (relative to
    the largest) discarded.
    """
    dmu = np.asarray(dmu, dtype=float)
    V = np.asarray(V, dtype=float)
    w, U = np.linalg.eigh(0.5 * (V + V.T))
    if w[-1] <= 0:
        raise IllConditionedCovarianceError("covariance has no positive eigenvalues")
    keep = w > rcond * w[-1]
    c = U[:, keep].T @ dmu
    return float(np.sum(c**2 / w[keep]))


def _signal_and_factor(model, theta, mu_in, V_in, method):
    G = response(model, theta, method).G_theta
    d = amplitude_derivative(model, theta, mu_in, method)
    return d, output_factor(model, G, V_in)


def fisher_I1(model: SensorModel, theta: float, mu_in, V_in=None, method: str = "dense_solve") -> float:
    """Mean-vector Fisher information of the probe output at ``theta``."""
    d, B = _signal_and_factor(model, theta, mu_in, V_in, method)
    if not np.any(d):
        return 0.0
    return _solve_factored(B, d)


def cramer_rao(I1: float) -> float:
    """Lower bound I1^{-1/2} on the standard deviation of theta estimates."""
    if not I1 > 0 or not math.isfinite(I1):
        raise DomainError(f"Cramer-Rao bound needs a positive finite Fisher information, got {I1!r}")
    return I1**-0.5


def heterodyne_uncertainty(
    model: SensorModel, theta: float, mu_in, V_in=None, method: str = "dense_solve"
) -> float:
    """Uncertainty of theta from heterodyning all outputs.

    Simultaneous measurement of both quadratures adds one vacuum unit,
    V_out -> V_out + I. Returns ``math.inf`` when the signal does not depend
    on theta.
    """
    d, B = _signal_and_factor(model, theta, mu_in, V_in, method)
    if not np.any(d):
        return math.inf
    B_het = np.hstack([B, np.eye(model.dim)])
    return _solve_factored(B_het, d) ** -0.5


def trace_norm(A) -> float:
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def fisher_upper_bound(model: SensorModel, theta: float = 0.0) -> float:
    """Squared trace norm of G_theta, by default at theta = 0.

    Only defined below threshold; at the lasing threshold G_0 does not exist
    and :class:`SingularResponseError` is raised.
    """
    if model.params is not None and model.params.Delta <= 0 and theta == 0:
        raise SingularResponseError(0.0)
    G = response_dense(model, theta).G_theta
    return trace_norm(G) ** 2


def sensitivity(model: SensorModel, theta: float, mu_in, V_in=None, method: str = "dense_solve") -> SensitivityReport:
    I1 = fisher_I1(model, theta, mu_in, V_in, method)
    dcr = cramer_rao(I1) if I1 > 0 else math.inf
    dhet = heterodyne_uncertainty(model, theta, mu_in, V_in, method)
    ub = None
    if model.params is not None and model.params.Delta > 0:
        ub = fisher_upper_bound(model)
    return SensitivityReport(float(theta), I1, dcr, dhet, ub)


def local_exponent(thetas, values) -> np.ndarray:
    """Pointwise d log(value) / d log(theta) by second-order differences."""
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.size < 3:
        raise PreconditionError("need at least three points")
    return np.gradient(np.log(values), np.log(thetas))
