"""Time-domain check of the output covariance.

The quantum Langevin equations are integrated as a linear SDE in the frame
rotating at the probe frequency. Probe and reservoir inputs are independent
white noises with symmetrized spectral density I (vacuum). The output record
is A_out = A_in + sqrt(kappa) a, and its low-frequency cross-spectral matrix
estimates V_out.

In quadratures (time in units of 1/kappa, cavity field scaled by sqrt(kappa)):

    dx/dt = D x - (x_in + R x_anc),    D = Omega (M - theta Pi),
    y     = x_in + x.

The stationary zero-frequency response of this system is I - G_theta for the
probe and G_theta R for the reservoirs, which is what the frequency-domain
formula predicts; D has the sign convention that makes this hold.

Integration uses the zero-order-hold discretization: inputs are held constant
over each step and the linear flow is propagated exactly, so a noise-free run
reproduces the deterministic solution to machine precision and the
zero-frequency gain is exact for any step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import InstabilityError, InsufficientDataError, ParameterError, PreconditionError
from .model import SensorModel

DIVERGENCE_FACTOR = 1e6
MIN_CORRELATION_TIMES = 100
STABILITY_RTOL = 1e-6


@dataclass(frozen=True)
class SdeConfig:
    model: SensorModel
    dt: float | None = None
    duration: float = 1e4
    seed: int = 0
    burn_in: float = 0.1
    mu_in: tuple | None = None
    noise: bool = True
    x0: tuple | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ParameterError("duration must be positive")
        if not 0 <= self.burn_in < 1:
            raise ParameterError("burn_in must be a fraction in [0, 1)")
        if self.dt is not None and self.dt <= 0:
            raise ParameterError("dt must be positive")


@dataclass(frozen=True)
class LangevinTrajectory:
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    dt: float
    decay_rate: float
    theta: float


@dataclass(frozen=True)
class SpectralEstimate:
    V_est: np.ndarray
    stderr: np.ndarray
    n_segments: int
    bandwidth: float
    segment_duration: float
    segment_estimates: np.ndarray = field(repr=False, default=None)


def drift_matrix(model: SensorModel, theta: float) -> np.ndarray:
    omega = model.omega
    if not (np.allclose(omega @ model.M, model.M @ omega) and np.allclose(omega @ model.Pi, model.Pi @ omega)):
        raise PreconditionError(
            "time-domain model needs phase-covariant M and Pi (commuting with Omega)"
        )
    return omega @ (model.M - theta * model.Pi)


def drift_spectrum(model: SensorModel, theta: float):
    """(decay rate, largest eigenvalue modulus) of the drift matrix."""
    lam = np.linalg.eigvals(drift_matrix(model, theta))
    return float(-np.max(lam.real)), float(np.max(np.abs(lam)))


def check_stability(model: SensorModel, theta: float) -> tuple[float, float]:
    decay, lam_max = drift_spectrum(model, theta)
    if decay <= STABILITY_RTOL * max(lam_max, 1.0):
        raise InstabilityError(
            f"drift is not strictly stable at theta={theta} (slowest decay rate {decay:.3e}); "
            "the sensor is at or above the lasing threshold"
        )
    return decay, lam_max


def default_dt(model: SensorModel, theta: float) -> float:
    _, lam_max = check_stability(model, theta)
    return 0.01 / lam_max


def zoh_matrices(D: np.ndarray, h: float):
    """exp(D h), int_0^h exp(D s) ds and int_0^h (h - s) exp(D s) ds."""
    d = D.shape[0]
    big = np.zeros((3 * d, 3 * d))
    big[:d, :d] = D
    big[:d, d : 2 * d] = np.eye(d)
    big[d : 2 * d, 2 * d :] = np.eye(d)
    E = scipy.linalg.expm(big * h)
    return E[:d, :d], E[:d, d : 2 * d], E[:d, 2 * d :]


def propagate(Phi: np.ndarray, c: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """States x_0..x_n of x_{k+1} = Phi x_k + c_k.

    The recursion is triangularized by a complex Schur decomposition and each
    component runs as a first-order IIR filter.
    """
    T, Z = scipy.linalg.schur(Phi.astype(complex), output="complex")
    n, d = c.shape
    w = c @ Z.conj()
    z0 = Z.conj().T @ x0
    z = np.empty((n + 1, d), dtype=complex)
    for i in range(d - 1, -1, -1):
        drive = w[:, i] + z[:n, i + 1 :] @ T[i, i + 1 :]
        a = T[i, i]
        out, _ = scipy.signal.lfilter([1.0], [1.0, -a], drive, zi=[a * z0[i]])
        z[0, i] = z0[i]
        z[1:, i] = out
    return (z @ Z.T).real


def integrate_langevin(config: SdeConfig, theta: float, increments=None) -> LangevinTrajectory:
    """Simulate intracavity quadratures and the output record.

    ``increments`` optionally supplies the standard-normal draws, shape
    (n_steps, 2, dim) for (probe, reservoir); otherwise they are drawn from
    ``config.seed``. The burn-in fraction is discarded.
    """
    model = config.model
    decay, lam_max = check_stability(model, theta)
    dt = config.dt if config.dt is not None else 0.01 / lam_max
    if dt > 0.01 / lam_max * (1 + 1e-12):
        raise ParameterError(f"dt={dt} exceeds 0.01 / |lambda|_max = {0.01 / lam_max:.4g}")
    d = model.dim
    n = int(round(config.duration / dt))
    if n < 2:
        raise InsufficientDataError("duration shorter than two time steps")

    D = drift_matrix(model, theta)
    Phi, Psi, Xi = zoh_matrices(D, dt)
    mu = np.zeros(d) if config.mu_in is None else np.asarray(config.mu_in, dtype=float)
    x0 = np.zeros(d) if config.x0 is None else np.asarray(config.x0, dtype=float)

    if config.noise:
        if increments is None:
            rng = np.random.default_rng(config.seed)
            increments = rng.standard_normal((n, 2, d))
        else:
            increments = np.asarray(increments, dtype=float)
            if increments.shape != (n, 2, d):
                raise ParameterError(f"increments must have shape {(n, 2, d)}")
        anc = np.linalg.cholesky(model.Vprime_in)
        a = mu + increments[:, 0, :] / math.sqrt(dt)
        b = increments[:, 1, :] @ anc.T / math.sqrt(dt)
    else:
        a = np.broadcast_to(mu, (n, d)).copy()
        b = np.zeros((n, d))

    u = -(a + b @ model.R.T)
    x = propagate(Phi, u @ Psi.T, x0)
    # stationary amplitudes grow like 1/decay^2 next to an exceptional point
    scale = max(1.0, float(np.linalg.norm(x0)), float(np.linalg.norm(mu)), float(np.linalg.norm(model.R)))
    scale /= min(decay, 1.0) ** 2
    peak = float(np.max(np.linalg.norm(x, axis=1)))
    if not math.isfinite(peak) or peak > DIVERGENCE_FACTOR * scale:
        raise InstabilityError(f"trajectory diverged (peak norm {peak:.3e})")
    # step-averaged state so that sum(y) * dt is the exact integral of the output
    xbar = (x[:-1] @ Psi.T + u @ Xi.T) / dt
    y = a + xbar

    start = int(config.burn_in * n)
    t = np.arange(n) * dt
    return LangevinTrajectory(t[start:], x[start:-1], y[start:], dt, decay, float(theta))


def _segment_estimates(series: np.ndarray, dt: float, seg_len: int, max_bin: int) -> np.ndarray:
    n_seg = series.shape[0] // seg_len
    w = scipy.signal.windows.hann(seg_len, sym=False)
    norm = dt / np.sum(w**2)
    out = []
    for k in range(n_seg):
        seg = series[k * seg_len : (k + 1) * seg_len] * w[:, None]
        X = np.fft.rfft(seg, axis=0)[: max_bin + 1]
        S = norm * np.einsum("fi,fj->fij", X, X.conj())
        # bins 0 and +-1..+-max_bin; S(-f) = conj S(f)
        weights = np.full(max_bin + 1, 2.0)
        weights[0] = 1.0
        est = np.tensordot(weights, S.real, axes=1) / weights.sum()
        out.append(0.5 * (est + est.T))
    return np.array(out)


def _segment_length(dt: float, carrier_bandwidth: float, bins_per_band: int) -> int:
    return int(round(2 * math.pi * bins_per_band / carrier_bandwidth / dt))


def _check_bandwidth(carrier_bandwidth: float, decay: float) -> None:
    if carrier_bandwidth <= 0:
        raise ParameterError("carrier_bandwidth must be positive")
    if carrier_bandwidth > decay / 10:
        raise PreconditionError(
            f"bandwidth {carrier_bandwidth} is not below a tenth of the slowest decay rate {decay:.3g}"
        )


def _trajectory_segments(tr: LangevinTrajectory, seg_len: int, bins_per_band: int, which: str, remove_mean: bool):
    data = getattr(tr, which)
    if data.shape[0] * tr.dt < MIN_CORRELATION_TIMES / tr.decay_rate:
        raise InsufficientDataError(
            f"series covers {data.shape[0] * tr.dt:.3g} time units, fewer than "
            f"{MIN_CORRELATION_TIMES} correlation times ({MIN_CORRELATION_TIMES / tr.decay_rate:.3g})"
        )
    if remove_mean:
        data = data - data.mean(axis=0)
    if data.shape[0] < seg_len:
        return np.zeros((0, data.shape[1], data.shape[1]))
    return _segment_estimates(data, tr.dt, seg_len, bins_per_band)


def _pool(ests, carrier_bandwidth: float, seg_len: int, dt: float) -> SpectralEstimate:
    ests = np.concatenate(ests) if ests else np.zeros((0,))
    if ests.shape[0] < 2:
        raise InsufficientDataError(
            f"{ests.shape[0]} spectral segment(s) of duration {seg_len * dt:.4g}; need at least 2"
        )
    V = ests.mean(axis=0)
    err = ests.std(axis=0, ddof=1) / math.sqrt(ests.shape[0])
    return SpectralEstimate(V, err, ests.shape[0], carrier_bandwidth, seg_len * dt, ests)


def spectral_covariance(
    series,
    carrier_bandwidth: float,
    bins_per_band: int = 4,
    which: str = "y",
    remove_mean: bool = False,
) -> SpectralEstimate:
    """Zero-frequency cross-spectral matrix of one or more trajectories.

    Non-overlapping Hann-windowed segments are Fourier transformed and the
    bins with |frequency| <= ``carrier_bandwidth`` (angular, units of kappa)
    averaged. Segment length is chosen so the band holds ``bins_per_band``
    positive-frequency bins. Normalized so that unit white noise gives I.
    """
    trajs = [series] if isinstance(series, LangevinTrajectory) else list(series)
    if not trajs:
        raise InsufficientDataError("no trajectories supplied")
    dt = trajs[0].dt
    _check_bandwidth(carrier_bandwidth, min(tr.decay_rate for tr in trajs))
    seg_len = _segment_length(dt, carrier_bandwidth, bins_per_band)
    ests = []
    for tr in trajs:
        if tr.dt != dt:
            raise ParameterError("all trajectories must share the same dt")
        ests.append(_trajectory_segments(tr, seg_len, bins_per_band, which, remove_mean))
    return _pool(ests, carrier_bandwidth, seg_len, dt)


def trajectory_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def simulate_output_covariance(
    config: SdeConfig,
    theta: float,
    n_trajectories: int = 1,
    carrier_bandwidth: float | None = None,
    bins_per_band: int = 4,
) -> SpectralEstimate:
    """Pool segments from independent trajectories with spawned seeds.

    Each trajectory is reduced to its segment estimates before the next one
    is simulated, so memory does not grow with ``n_trajectories``.
    """
    if n_trajectories < 1:
        raise ParameterError("n_trajectories must be at least 1")
    decay, lam_max = check_stability(config.model, theta)
    bw = decay / 10 if carrier_bandwidth is None else carrier_bandwidth
    _check_bandwidth(bw, decay)
    dt = config.dt if config.dt is not None else 0.01 / lam_max
    seg_len = _segment_length(dt, bw, bins_per_band)
    ests = []
    for s in trajectory_seeds(config.seed, n_trajectories):
        cfg = replace(config, dt=dt, seed=s)
        ests.append(_trajectory_segments(integrate_langevin(cfg, theta), seg_len, bins_per_band, "y", False))
    return _pool(ests, bw, seg_len, dt)


@dataclass(frozen=True)
class EntryComparison:
    i: int
    j: int
    analytic: float
    estimated: float
    stderr: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.estimated - self.analytic) <= self.tolerance


def compare_covariances(V_analytic, estimate: SpectralEstimate, rtol: float = 0.05, nsigma: float = 3.0):
    """Entrywise check |est - analytic| <= max(rtol |analytic|, nsigma stderr)."""
    V_analytic = np.asarray(V_analytic)
    out = []
    d = V_analytic.shape[0]
    for i in range(d):
        for j in range(d):
            a = float(V_analytic[i, j])
            e = float(estimate.V_est[i, j])
            s = float(estimate.stderr[i, j])
            out.append(EntryComparison(i, j, a, e, s, max(rtol * abs(a), nsigma * s)))
    return out
