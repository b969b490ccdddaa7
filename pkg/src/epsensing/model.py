"""Dimensionless exceptional-point sensor and its linear response.

All rates are measured in units of the probe coupling kappa and the
perturbation enters as theta = epsilon / kappa. For the canonical two-mode
sensor the quadrature-basis effective Hamiltonian is

    M = [[  0,   G,  G1,   0],
         [  G,   0,   0, -G2],
         [-G1,   0,   0,   G],
         [  0,  G2,   G,   0]]

and the probe outputs follow mu_out = (I - G_theta) mu_in and
V_out = (I - G_theta) V_in (I - G_theta)^T + G_theta R V'_in R^T G_theta^T with
G_theta = -Omega (theta Pi - M)^{-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import DomainError, ParameterError, PreconditionError, SingularResponseError
from .gaussian import GaussianState, QuadratureLayout, make_gaussian_state, symplectic_form

COND_LIMIT = 1e14
NILPOTENT_RTOL = 1e-12

# dG/dtheta = DERIVATIVE_SIGN * G Pi Omega G. Fixed against central finite
# differences (tests/test_model.py); differentiating the inverse gives -1.
DERIVATIVE_SIGN = -1.0


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SensorParams:
    """Dimensionless parameters of the two-mode loss/gain sensor.

    ``Gamma1`` and ``Gamma2`` are the net loss of mode 1 and net gain of mode 2
    in units of 2*kappa, ``G`` the inter-cavity coupling over kappa, and
    ``Delta`` an extra loss added to both cavities (below-threshold detuning).
    """

    Gamma1: float = 1.0
    Gamma2: float = 1.0
    G: float = 1.0
    Delta: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}")
        if self.Gamma1 < 0.5:
            raise ParameterError(
                f"Gamma1={self.Gamma1} < 1/2 implies a negative intrinsic loss rate eta1"
            )
        if self.Gamma2 <= 0:
            raise ParameterError(f"Gamma2 must be positive, got {self.Gamma2}")
        if self.Delta < 0:
            raise ParameterError(f"Delta must be non-negative, got {self.Delta}")
        if 2.0 * (self.Gamma2 - self.Delta) + 1.0 <= 0:
            raise ParameterError("Delta too large: intrinsic gain rate of mode 2 would be negative")

    @property
    def effective_gamma1(self) -> float:
        return self.Gamma1 + self.Delta

    @property
    def effective_gamma2(self) -> float:
        return self.Gamma2 - self.Delta

    @property
    def eta1(self) -> float:
        """Intrinsic loss rate of mode 1 in units of kappa."""
        return 2.0 * self.effective_gamma1 - 1.0

    @property
    def eta2(self) -> float:
        """Intrinsic gain rate of mode 2 in units of kappa."""
        return 2.0 * self.effective_gamma2 + 1.0

    def rates(self) -> dict:
        """Physical rates (angular-frequency units) for reporting."""
        k = self.kappa
        return {
            "kappa": k,
            "gamma1": 2 * k * self.effective_gamma1,
            "gamma2": 2 * k * self.effective_gamma2,
            "g": k * self.G,
            "eta1": k * self.eta1,
            "eta2": k * self.eta2,
        }

    def with_delta(self, delta: float) -> "SensorParams":
        return replace(self, Delta=delta)


@dataclass(frozen=True)
class SensorModel:
    """Matrices of a linear bosonic sensor in the quadrature basis."""

    M: np.ndarray = field(repr=False)
    Pi: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    Vprime_in: np.ndarray = field(repr=False)
    layout: QuadratureLayout
    params: SensorParams | None = None

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def omega(self) -> np.ndarray:
        return symplectic_form(self.layout)

    @property
    def pi_is_identity(self) -> bool:
        return bool(np.array_equal(self.Pi, np.eye(self.dim)))

    def nilpotency_residual(self) -> float:
        """||M^2||_F / ||M||_F^2, zero for a second-order nilpotent M."""
        norm = np.linalg.norm(self.M)
        if norm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.M @ self.M) / norm**2)

    def is_nilpotent(self, rtol: float = NILPOTENT_RTOL) -> bool:
        return self.nilpotency_residual() <= rtol


class ResponseMethod(str, Enum):
    DENSE_SOLVE = "dense_solve"
    NILPOTENT_EXPANSION = "nilpotent_expansion"


@dataclass(frozen=True)
class ResponseMatrix:
    theta: float
    G_theta: np.ndarray = field(repr=False)
    method: ResponseMethod


def effective_hamiltonian(gamma1: float, gamma2: float, coupling: float) -> np.ndarray:
    g1, g2, g = gamma1, gamma2, coupling
    return np.array(
        [
            [0.0, g, g1, 0.0],
            [g, 0.0, 0.0, -g2],
            [-g1, 0.0, 0.0, g],
            [0.0, g2, g, 0.0],
        ]
    )


def _check_square(name, a, dim):
    a = np.asarray(a, dtype=float)
    if a.shape != (dim, dim):
        raise ParameterError(f"{name} must be {dim}x{dim}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} has non-finite entries")
    return a


def build_model(params: SensorParams, Pi=None) -> SensorModel:
    """Assemble the two-mode sensor with the detuning folded into the rates."""
    g1, g2 = params.effective_gamma1, params.effective_gamma2
    M = effective_hamiltonian(g1, g2, params.G)
    Pi = np.eye(4) if Pi is None else _check_square("Pi", Pi, 4)
    r1, r2 = np.sqrt(params.eta1), np.sqrt(params.eta2)
    # mode 2 couples to its reservoir through the creation operator
    R = np.diag([r1, -r2, r1, r2])
    return SensorModel(
        _frozen(M), _frozen(Pi), _frozen(R), _frozen(np.eye(4)), QuadratureLayout(2), params
    )


def single_mode_model(Gamma1: float = 0.5, Delta: float = 0.0, Pi=None) -> SensorModel:
    """One lossy cavity coupled to a probe; Gamma1 = 1/2 means no intrinsic loss."""
    if Delta < 0:
        raise ParameterError("Delta must be non-negative")
    gamma = Gamma1 + Delta
    if gamma < 0.5:
        raise ParameterError(f"Gamma1={Gamma1} < 1/2 implies a negative intrinsic loss rate")
    M = np.array([[0.0, gamma], [-gamma, 0.0]])
    Pi = np.eye(2) if Pi is None else _check_square("Pi", Pi, 2)
    r = np.sqrt(2.0 * gamma - 1.0)
    return SensorModel(
        _frozen(M), _frozen(Pi), _frozen(r * np.eye(2)), _frozen(np.eye(2)), QuadratureLayout(1)
    )


def model_from_matrix(M, Pi=None, R=None, Vprime_in=None) -> SensorModel:
    """Wrap an arbitrary 2n x 2n effective Hamiltonian as a sensor.

    Reservoir couplings and ancilla covariance default to the identity.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise ParameterError(f"M must be square with even dimension, got shape {M.shape}")
    d = M.shape[0]
    M = _check_square("M", M, d)
    Pi = np.eye(d) if Pi is None else _check_square("Pi", Pi, d)
    R = np.eye(d) if R is None else _check_square("R", R, d)
    Vp = np.eye(d) if Vprime_in is None else _check_square("Vprime_in", Vprime_in, d)
    return SensorModel(_frozen(M), _frozen(Pi), _frozen(R), _frozen(Vp), QuadratureLayout(d // 2))


def response_dense(model: SensorModel, theta: float) -> ResponseMatrix:
    """G_theta = -Omega (theta Pi - M)^{-1} by a dense linear solve."""
    A = theta * model.Pi - model.M
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise SingularResponseError(theta, cond)
    omega = model.omega
    # Omega A^{-1} = (A^{-T} Omega^T)^T
    G = -np.linalg.solve(A.T, omega.T).T
    return ResponseMatrix(float(theta), _frozen(G), ResponseMethod.DENSE_SOLVE)


def response_expansion(model: SensorModel, theta: float) -> ResponseMatrix:
    """Finite Neumann series -Omega/theta - Omega M/theta^2, exact when M^2 = 0."""
    if not model.pi_is_identity:
        raise PreconditionError("nilpotent expansion requires Pi = I")
    if not model.is_nilpotent():
        raise PreconditionError(
            f"M is not nilpotent of order 2 (||M^2||/||M||^2 = {model.nilpotency_residual():.2e})"
        )
    if theta == 0:
        raise DomainError("nilpotent expansion diverges at theta = 0")
    omega = model.omega
    G = -omega / theta - (omega @ model.M) / theta**2
    return ResponseMatrix(float(theta), _frozen(G), ResponseMethod.NILPOTENT_EXPANSION)


def response(model: SensorModel, theta: float, method: str = "dense_solve") -> ResponseMatrix:
    method = ResponseMethod(method)
    if method is ResponseMethod.NILPOTENT_EXPANSION:
        return response_expansion(model, theta)
    return response_dense(model, theta)


def _psd_sqrt(V: np.ndarray) -> np.ndarray:
    if np.array_equal(V, np.eye(len(V))):
        return np.eye(len(V))
    w, U = np.linalg.eigh(0.5 * (V + V.T))
    if w[0] < -1e-12 * max(1.0, abs(w[-1])):
        raise ParameterError("covariance is not positive semidefinite")
    return U * np.sqrt(np.clip(w, 0.0, None))


def output_factor(model: SensorModel, G: np.ndarray, V_in=None) -> np.ndarray:
    """B with V_out = B B^T, stacking the probe and ancilla contributions.

    Working with the factor keeps Fisher-information solves accurate when
    V_out spans many orders of magnitude.
    """
    d = model.dim
    V_in = np.eye(d) if V_in is None else np.asarray(V_in, dtype=float)
    A = np.eye(d) - G
    return np.hstack([A @ _psd_sqrt(V_in), G @ model.R @ _psd_sqrt(model.Vprime_in)])


def output_state(
    model: SensorModel,
    theta: float,
    probe_in: GaussianState,
    method: str = "dense_solve",
) -> GaussianState:
    if probe_in.layout != model.layout:
        raise ParameterError(
            f"probe has {probe_in.n_modes} modes, sensor has {model.layout.n_modes}"
        )
    G = response(model, theta, method).G_theta
    A = np.eye(model.dim) - G
    mu = A @ probe_in.mu
    noise = G @ model.R
    V = A @ probe_in.V @ A.T + noise @ model.Vprime_in @ noise.T
    return make_gaussian_state(mu, 0.5 * (V + V.T), model.layout)


def response_derivative(model: SensorModel, theta: float, method: str = "dense_solve") -> np.ndarray:
    G = response(model, theta, method).G_theta
    return DERIVATIVE_SIGN * (G @ model.Pi @ model.omega @ G)


def amplitude_derivative(
    model: SensorModel, theta: float, mu_in, method: str = "dense_solve"
) -> np.ndarray:
    """d mu_out / d theta = -(dG/dtheta) mu_in in closed form."""
    mu_in = np.asarray(mu_in, dtype=float)
    if mu_in.shape != (model.dim,):
        raise ParameterError(f"mu_in must have length {model.dim}")
    return -(response_derivative(model, theta, method) @ mu_in)
