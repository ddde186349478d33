"""
SIMO channel simulation: constellations, complex-to-real lifting, noise,
the LoS / Rayleigh / Clarke channel generators and prompt sampling
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional
import logging

import numpy as np
from scipy import linalg
from scipy.special import j0

from ice.app.schemas import ClarkeConstants, ScenarioConfig, ScenarioKind
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.utils import cholesky_lower, db_to_linear

logger = logging.getLogger(__name__)

MODULUS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Constellation:
    """Finite signal set with its prior"""
    points: np.ndarray
    priors: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).ravel()
        if points.size == 0:
            raise ConfigurationError("Constellation must contain at least one point")
        priors = (
            np.full(points.size, 1.0 / points.size)
            if self.priors is None
            else np.asarray(self.priors, dtype=float).ravel()
        )
        if priors.shape != points.shape:
            raise ConfigurationError("One prior per constellation point is required")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ConfigurationError("Constellation priors must lie on the probability simplex")

        points.setflags(write=False)
        priors.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "priors", priors)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def lifted(self) -> np.ndarray:
        """(S, 2) array of real lifts [Re x, Im x]"""
        return np.stack([self.points.real, self.points.imag], axis=1)

    @property
    def constant_modulus(self) -> bool:
        norms = np.abs(self.points)
        return bool(norms.max() - norms.min() < MODULUS_TOL)

    @property
    def log_priors(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.priors)


def qpsk(normalize: bool = False) -> Constellation:
    """QPSK {+-1 +- i}; radius sqrt(2), or the unit circle when normalized"""
    points = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])
    if normalize:
        points = points / np.sqrt(2.0)
    return Constellation(points, None, "qpsk")


def qam16(normalize: bool = True) -> Constellation:
    """16-QAM on the {+-1, +-3}^2 grid, scaled to unit average power when normalized"""
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    points = (levels[None, :] + 1j * levels[:, None]).ravel()
    if normalize:
        points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    return Constellation(points, None, "qam16")


def bpsk() -> Constellation:
    """Real antipodal set {+1, -1}"""
    return Constellation(np.array([1.0 + 0j, -1.0 + 0j]), None, "bpsk")


def make_constellation(name: str, normalize: bool = False) -> Constellation:
    """
    Build a named constellation ('qpsk', 'qam16' or 'bpsk')

    `normalize` maps QPSK onto the unit circle; 16-QAM always has unit average
    power and BPSK is already unit modulus.
    """
    if name == "qpsk":
        return qpsk(normalize)
    if name == "qam16":
        return qam16()
    if name == "bpsk":
        return bpsk()
    raise ConfigurationError(f"Unknown constellation: {name}")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """
    Complex noise CN(0, sigma_tilde) and its real form

    The real covariance is Sigma_z = 1/2 diag(sigma_tilde, sigma_tilde); for the
    isotropic default sigma_tilde = 2 sigma^2 I_d this is sigma^2 I_2d.
    """
    sigma_tilde: np.ndarray
    sigma_real: np.ndarray = field(init=False)
    sigma_real_inv: np.ndarray = field(init=False)
    chol_real: np.ndarray = field(init=False)
    isotropic: bool = field(init=False)

    def __post_init__(self):
        sigma_tilde = np.atleast_2d(np.asarray(self.sigma_tilde, dtype=float))
        d = sigma_tilde.shape[0]
        if sigma_tilde.shape != (d, d) or not np.allclose(sigma_tilde, sigma_tilde.T, rtol=0, atol=1e-14):
            raise NumericalError("Noise covariance must be a symmetric square matrix")

        sigma_real = 0.5 * linalg.block_diag(sigma_tilde, sigma_tilde)
        try:
            chol = linalg.cholesky(sigma_real, lower=True)
        except linalg.LinAlgError as e:
            raise NumericalError("Noise covariance is not positive definite") from e

        diag = np.diag(sigma_tilde)
        isotropic = bool(np.all(sigma_tilde == np.diag(diag)) and np.all(diag == diag[0]))
        if isotropic:
            sigma_real_inv = np.eye(2 * d) / (diag[0] / 2.0)
        else:
            sigma_real_inv = linalg.cho_solve((chol, True), np.eye(2 * d))
            sigma_real_inv = 0.5 * (sigma_real_inv + sigma_real_inv.T)

        object.__setattr__(self, "sigma_tilde", sigma_tilde)
        object.__setattr__(self, "sigma_real", sigma_real)
        object.__setattr__(self, "sigma_real_inv", sigma_real_inv)
        object.__setattr__(self, "chol_real", chol)
        object.__setattr__(self, "isotropic", isotropic)

    @classmethod
    def isotropic_noise(cls, sigma2: float, d: int) -> "NoiseSpec":
        """Per-real-component variance sigma2 on d antennas"""
        if sigma2 <= 0:
            raise NumericalError(f"Noise variance must be positive, got {sigma2}")
        return cls(2.0 * sigma2 * np.eye(d))

    @classmethod
    def from_snr_db(cls, snr_db: float, d: int) -> "NoiseSpec":
        """SNR (linear) = 1 / sigma^2"""
        return cls.isotropic_noise(1.0 / db_to_linear(snr_db), d)

    @property
    def d(self) -> int:
        return int(self.sigma_tilde.shape[0])

    @property
    def sigma2(self) -> float:
        """Per-real-component variance (mean over components when not isotropic)"""
        return float(np.trace(self.sigma_real) / (2 * self.d))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n real noise vectors z ~ N(0, Sigma_z), shape (n, 2d)"""
        standard = rng.standard_normal((n, 2 * self.d))
        return standard @ self.chol_real.T


def lift_complex_vector(h: np.ndarray) -> np.ndarray:
    """
    Real 2d x 2 matrix of a complex d-vector

    H = [[Re h, -Im h], [Im h, Re h]], so that H @ [Re x, Im x] is the real
    lift [Re(h x); Im(h x)].
    """
    h = np.asarray(h, dtype=complex).ravel()
    return np.block([
        [h.real[:, None], -h.imag[:, None]],
        [h.imag[:, None], h.real[:, None]],
    ])


def lift_channel_sequence(h_seq: np.ndarray) -> np.ndarray:
    """Lift (n, d) complex channels to (n, 2d, 2) real matrices"""
    h_seq = np.asarray(h_seq, dtype=complex)
    top = np.stack([h_seq.real, -h_seq.imag], axis=-1)
    bottom = np.stack([h_seq.imag, h_seq.real], axis=-1)
    return np.concatenate([top, bottom], axis=1)


def complex_to_real(h: np.ndarray) -> np.ndarray:
    """[Re h; Im h] stacking of a complex d-vector"""
    h = np.asarray(h, dtype=complex).ravel()
    return np.concatenate([h.real, h.imag])


def real_to_complex(h_real: np.ndarray) -> np.ndarray:
    """Inverse of complex_to_real: first half real parts, second half imaginary"""
    h_real = np.asarray(h_real, dtype=float).ravel()
    d = h_real.size // 2
    return h_real[:d] + 1j * h_real[d:]


def embed_symbol_matrix(x: np.ndarray, d: int) -> np.ndarray:
    """
    M^d(x) = [[x_I, -x_Q], [x_Q, x_I]] kron I_d

    Multiplying the real channel [Re h; Im h] by M^d(x) gives the lift of h * x.
    """
    x_i, x_q = float(x[0]), float(x[1])
    return np.kron(np.array([[x_i, -x_q], [x_q, x_i]]), np.eye(d))


def bessel_j0(x):
    """Bessel function of the first kind of order zero"""
    return j0(x)


def clarke_autocorrelation(theta: float, lags, constants: ClarkeConstants) -> np.ndarray:
    """R_theta(k) = J0(2 pi f_carrier T_s k theta / c)"""
    lags = np.abs(np.asarray(lags, dtype=float))
    scale = 2.0 * np.pi * constants.f_carrier * constants.T_s * theta / constants.c
    return np.asarray(bessel_j0(scale * lags), dtype=float)


def clarke_correlation_matrix(theta: float, n_len: int, constants: ClarkeConstants) -> np.ndarray:
    """Toeplitz matrix [R_theta(|i - j|)] of size n_len"""
    return linalg.toeplitz(clarke_autocorrelation(theta, np.arange(n_len), constants))


def los_channel(alpha, d: int) -> np.ndarray:
    """
    One-ray line-of-sight channel h^j = exp(-i pi (j-1) cos(alpha) / 2)

    Args:
        alpha: Angle of arrival (scalar or array of shape (m,))
        d: Antenna count

    Returns:
        Complex array of shape (d,) or (m, d)
    """
    alpha = np.asarray(alpha, dtype=float)
    j = np.arange(d)
    return np.exp(-1j * np.pi * np.multiply.outer(np.cos(alpha), j) / 2.0)


def los_second_moment(d: int) -> np.ndarray:
    """
    E[h h^T] of the real LoS channel for alpha ~ U((0, pi])

    Uses E[cos(a cos alpha)] = J0(a) and E[sin(a cos alpha)] = 0.
    """
    j = np.arange(d)
    diff = bessel_j0(np.pi * (j[:, None] - j[None, :]) / 2.0)
    total = bessel_j0(np.pi * (j[:, None] + j[None, :]) / 2.0)
    moment = np.zeros((2 * d, 2 * d))
    moment[:d, :d] = 0.5 * (diff + total)
    moment[d:, d:] = 0.5 * (diff - total)
    return moment


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Channel draw for one prompt; time-invariant draws store a single row"""
    theta: float
    h_complex: np.ndarray
    alpha: Optional[float] = None
    time_invariant: bool = True

    @property
    def d(self) -> int:
        return int(self.h_complex.shape[1])

    @property
    def n_len(self) -> Optional[int]:
        return None if self.time_invariant else int(self.h_complex.shape[0])

    def h_at(self, n: int) -> np.ndarray:
        """Complex channel at time index n"""
        return self.h_complex[0] if self.time_invariant else self.h_complex[n]

    def H_at(self, n: int) -> np.ndarray:
        """Real 2d x 2 channel matrix at time index n"""
        return lift_complex_vector(self.h_at(n))

    def H_real(self, n_len: int) -> np.ndarray:
        """Per-time real matrices for indices 0..n_len-1, shape (n_len, 2d, 2)"""
        if self.time_invariant:
            return np.repeat(lift_complex_vector(self.h_complex[0])[None], n_len, axis=0)
        return lift_channel_sequence(self.h_complex[:n_len])

    def truncate(self, n_len: int) -> "ChannelRealization":
        if self.time_invariant:
            return self
        return ChannelRealization(self.theta, self.h_complex[:n_len], self.alpha, False)


def draw_channel_scenario1(theta: float, d: int, rng: np.random.Generator) -> ChannelRealization:
    """
    Time-invariant channel: LoS with random angle of arrival (theta=0) or
    i.i.d. Rayleigh CN(0, I_d) (theta=1)
    """
    if theta == 0:
        alpha = float(np.pi * (1.0 - rng.random()))  # U((0, pi])
        return ChannelRealization(0.0, los_channel(alpha, d)[None, :], alpha, True)
    if theta == 1:
        h = (rng.standard_normal(d) + 1j * rng.standard_normal(d)) * np.sqrt(0.5)
        return ChannelRealization(1.0, h[None, :], None, True)
    raise ConfigurationError(f"Scenario 1 latent value must be 0 or 1, got {theta}")


@lru_cache(maxsize=256)
def _clarke_factor(theta: float, n_len: int, f_carrier: float, T_s: float, c: float) -> np.ndarray:
    """Cached lower Cholesky factor of the Clarke Toeplitz matrix"""
    constants = ClarkeConstants(f_carrier=f_carrier, T_s=T_s, c=c)
    L = cholesky_lower(clarke_correlation_matrix(theta, n_len, constants), f"theta={theta}, n_len={n_len}")
    L.setflags(write=False)
    return L


def draw_channel_scenario2(
    theta: float,
    d: int,
    n_len: int,
    constants: ClarkeConstants,
    rng: np.random.Generator,
    half_power: bool = False,
) -> ChannelRealization:
    """
    Clarke-model channel trajectory of length n_len

    Each of the 2d real components is an independent stationary Gaussian
    process with autocovariance R_theta(k); sampled via the Cholesky factor of
    the Toeplitz correlation matrix.
    """
    if theta <= 0:
        raise ConfigurationError(f"Scenario 2 latent value must be positive, got {theta}")
    if n_len < 1:
        raise ConfigurationError(f"Trajectory length must be at least 1, got {n_len}")

    L = _clarke_factor(float(theta), int(n_len), constants.f_carrier, constants.T_s, constants.c)
    components = L @ rng.standard_normal((n_len, 2 * d))
    if half_power:
        components = components / np.sqrt(2.0)
    h = components[:, :d] + 1j * components[:, d:]
    return ChannelRealization(float(theta), h, None, False)


def draw_channel(
    config: ScenarioConfig, theta: float, n_len: int, rng: np.random.Generator
) -> ChannelRealization:
    """Draw the channel of the configured scenario for a given latent value"""
    if config.kind == ScenarioKind.SCENARIO1:
        return draw_channel_scenario1(theta, config.d, rng)
    return draw_channel_scenario2(
        theta, config.d, n_len, config.clarke_constants, rng, config.half_power_scenario2
    )


def channel_correlation(config: ScenarioConfig, theta: float, n_len: int) -> np.ndarray:
    """
    Second-moment structure of the real channel given theta

    Scenario 1 returns E[h h^T] (2d x 2d) of the fixed channel; Scenario 2
    returns the n_len x n_len Toeplitz time correlation, used as R kron I_2d.
    """
    if config.kind == ScenarioKind.SCENARIO1:
        if theta == 0:
            return los_second_moment(config.d)
        if theta == 1:
            return 0.5 * np.eye(2 * config.d)
        raise ConfigurationError(f"Scenario 1 latent value must be 0 or 1, got {theta}")

    R = clarke_correlation_matrix(theta, n_len, config.clarke_constants)
    return 0.5 * R if config.half_power_scenario2 else R


def scenario_noise(config: ScenarioConfig) -> NoiseSpec:
    """Isotropic noise at the configured SNR"""
    return NoiseSpec.from_snr_db(config.snr_db, config.d)


def scenario_constellation(config: ScenarioConfig) -> Constellation:
    return make_constellation(config.constellation, config.normalize)


@dataclass(frozen=True, eq=False)
class Prompt:
    """
    k context pairs (y_n, s_n) followed by the query y_q

    All observations are kept in `y_all` (k+1, 2d) with the query last, so a
    prompt can be truncated to any shorter context by prefix.
    """
    y_all: np.ndarray
    s_all: np.ndarray
    realization: ChannelRealization
    constellation: Constellation

    @property
    def k(self) -> int:
        return int(self.y_all.shape[0] - 1)

    @property
    def d(self) -> int:
        return int(self.y_all.shape[1] // 2)

    @property
    def y_seq(self) -> np.ndarray:
        return self.y_all[:-1]

    @property
    def s_seq(self) -> np.ndarray:
        return self.s_all[:-1]

    @property
    def y_query(self) -> np.ndarray:
        return self.y_all[-1]

    @property
    def s_query_truth(self) -> int:
        return int(self.s_all[-1])

    @property
    def theta(self) -> float:
        return self.realization.theta

    @property
    def H_query(self) -> np.ndarray:
        """Real channel matrix at the query index"""
        return self.realization.H_at(self.k)

    def truncate(self, k: int) -> "Prompt":
        """Prefix prompt with k examples and the observation at index k as query"""
        if not 0 <= k <= self.k:
            raise ConfigurationError(f"Cannot truncate a prompt of length {self.k} to {k}")
        return Prompt(
            self.y_all[: k + 1],
            self.s_all[: k + 1],
            self.realization.truncate(k + 1),
            self.constellation,
        )


def sample_prompt(
    config: ScenarioConfig,
    k: int,
    constellation: Constellation,
    noise: NoiseSpec,
    rng: np.random.Generator,
    theta: Optional[float] = None,
) -> Prompt:
    """
    Sample one prompt of k examples plus query

    Draw order is fixed (theta, channel, symbols, noise) so the prompt is a
    deterministic function of the generator state.

    Args:
        config: Scenario description
        k: Context length (k >= 0)
        constellation: Signal set and prior
        noise: Noise covariance
        rng: Generator owned by the caller
        theta: Optional fixed latent value (drawn from the latent prior otherwise)

    Returns:
        Prompt with y_n = H_n x_{s_n} + z_n for n in 0..k
    """
    if k < 0:
        raise ConfigurationError(f"Context length must be non-negative, got {k}")
    if noise.d != config.d:
        raise ConfigurationError(f"Noise is for d={noise.d} but the scenario has d={config.d}")

    latent_index = rng.choice(len(config.latent_values), p=config.latent_probabilities())
    if theta is None:
        theta = config.latent_values[latent_index]

    realization = draw_channel(config, theta, k + 1, rng)
    symbols = rng.choice(constellation.size, size=k + 1, p=constellation.priors)
    z = noise.sample(rng, k + 1)

    H = realization.H_real(k + 1)
    x = constellation.lifted[symbols]
    y = np.einsum("nij,nj->ni", H, x) + z
    return Prompt(y, symbols, realization, constellation)
