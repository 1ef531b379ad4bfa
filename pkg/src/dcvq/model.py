"""Correlated jointly-sparse sources, DCT sensing matrices and noisy
compressed measurements.

Sources follow ``x_l = theta + z_l`` on a common support of size ``K``; the
non-zero entries of ``theta`` and ``z_l`` are independent zero-mean Gaussians
whose variances add to one. Each terminal observes ``y_l = Phi_l x_l + w_l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dct

from dcvq.errors import InvalidArgumentError, InvalidParameterError
from dcvq.matrixio import dump_matrix, load_matrix


def derive_variances(rho: float) -> tuple[float, float]:
    """Split unit source power into (common, innovation) variances.

    >>> derive_variances(1.0)
    (0.5, 0.5)
    """
    try:
        rho = float(rho)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"rho must be a real number, got {rho!r}") from exc
    if not math.isfinite(rho) or rho < 0:
        raise InvalidParameterError(f"rho must be finite and >= 0, got {rho}")
    sigma_z_sq = 1.0 / (1.0 + rho)
    # complement keeps the pair summing to exactly one
    return 1.0 - sigma_z_sq, sigma_z_sq


def sigma_w_sq_for_smnr(K: int, M: int, smnr_db: float) -> float:
    """Measurement-noise variance giving the requested SMNR (inf dB -> 0)."""
    if math.isinf(smnr_db) and smnr_db > 0:
        return 0.0
    return K / (M * 10.0 ** (smnr_db / 10.0))


@dataclass(frozen=True)
class ModelParams:
    """Dimensions, sparsity, correlation and noise levels of the source model.

    ``rho`` may be ``math.inf`` to request the fully-correlated model
    (``sigma_z_sq == 0``) as an exact parameter value rather than a limit.
    ``M == N`` is accepted so limit checks with full sensing can be built;
    experiment configs enforce ``M < N``.
    """

    N: int
    K: int
    M: int
    rho: float = 1.0
    sigma_w_sq: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        sw = self.sigma_w_sq
        if np.isscalar(sw):
            sw = (float(sw), float(sw))
        sw = tuple(float(s) for s in sw)
        if len(sw) != 2:
            raise InvalidParameterError("sigma_w_sq must be a pair of variances")
        if any(not math.isfinite(s) or s < 0 for s in sw):
            raise InvalidParameterError(f"noise variances must be finite and >= 0: {sw}")
        object.__setattr__(self, "sigma_w_sq", sw)
        for name in ("N", "K", "M"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not (self.K <= self.M <= self.N):
            raise InvalidParameterError(
                f"K <= M <= N violated (N={self.N}, K={self.K}, M={self.M})"
            )
        if not (isinstance(self.rho, (int, float)) and self.rho == math.inf):
            derive_variances(self.rho)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def sigma_theta_sq(self) -> float:
        if math.isinf(self.rho):
            return 1.0
        return derive_variances(self.rho)[0]

    @property
    def sigma_z_sq(self) -> float:
        if math.isinf(self.rho):
            return 0.0
        return derive_variances(self.rho)[1]

    @property
    def alpha(self) -> float:
        return self.M / self.N

    @property
    def noiseless(self) -> bool:
        return min(self.sigma_w_sq) == 0.0

    def swapped(self) -> "ModelParams":
        """Same model with the terminal roles exchanged."""
        return replace(self, sigma_w_sq=self.sigma_w_sq[::-1])

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    """Fixed ``M x N`` sensing matrix of one terminal with unit-norm columns."""

    entries: np.ndarray
    terminal: int = 1

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2:
            raise InvalidArgumentError(f"sensing matrix must be 2-D, got {a.shape}")
        if self.terminal not in (1, 2):
            raise InvalidArgumentError(f"terminal must be 1 or 2, got {self.terminal}")
        norms = np.linalg.norm(a, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise InvalidArgumentError("sensing matrix columns must have unit norm")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape

    def columns(self, support) -> np.ndarray:
        return self.entries[:, list(support)]

    def dump(self, path) -> None:
        dump_matrix(self.entries, path)

    @classmethod
    def load(cls, path, terminal: int = 1) -> "SensingMatrix":
        return cls(load_matrix(path), terminal)


def build_dct_sensing_matrix(N: int, M: int, terminal: int) -> SensingMatrix:
    """Rows of the orthonormal DCT-II matrix, columns rescaled to unit norm.

    Terminal 1 keeps the first ``M`` rows (top down), terminal 2 the last
    ``M`` rows (bottom up).
    """
    if M > N or M < 1:
        raise InvalidParameterError(f"need 1 <= M <= N, got M={M}, N={N}")
    if terminal not in (1, 2):
        raise InvalidParameterError(f"terminal must be 1 or 2, got {terminal}")
    full = dct(np.eye(N), type=2, norm="ortho", axis=0)
    rows = np.arange(M) if terminal == 1 else np.arange(N - 1, N - 1 - M, -1)
    phi = full[rows]
    phi = phi / np.linalg.norm(phi, axis=0)
    return SensingMatrix(phi, terminal)


def smnr(params: ModelParams) -> tuple[float, float]:
    """Per-terminal signal-to-measurement-noise ratio in dB (inf when clean)."""
    out = []
    for s in params.sigma_w_sq:
        if s == 0.0:
            out.append(math.inf)
        else:
            out.append(10.0 * math.log10(params.K / (params.M * s)))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class SourceDraw:
    """One realisation of the support, latent components and measurements."""

    support: tuple
    theta: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray


@dataclass(frozen=True, eq=False)
class SourceBatch:
    """``T`` independent realisations stored row-wise."""

    supports: np.ndarray  # (T, K), sorted rows
    theta: np.ndarray  # (T, N)
    z1: np.ndarray
    z2: np.ndarray
    y1: np.ndarray  # (T, M)
    y2: np.ndarray
    x1: np.ndarray = field(init=False)
    x2: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "x1", self.theta + self.z1)
        object.__setattr__(self, "x2", self.theta + self.z2)

    def __len__(self) -> int:
        return self.theta.shape[0]

    def __getitem__(self, t: int) -> SourceDraw:
        return SourceDraw(
            support=tuple(int(v) for v in self.supports[t]),
            theta=self.theta[t],
            z1=self.z1[t],
            z2=self.z2[t],
            x1=self.x1[t],
            x2=self.x2[t],
            y1=self.y1[t],
            y2=self.y2[t],
        )

    @property
    def x(self) -> np.ndarray:
        """Stacked sources ``[x1, x2]``, shape (T, 2N)."""
        return np.hstack([self.x1, self.x2])

    @property
    def y(self) -> np.ndarray:
        """Stacked measurements ``[y1, y2]``, shape (T, 2M)."""
        return np.hstack([self.y1, self.y2])

    def dump(self, path) -> None:
        """Write ``[support | theta | z1 | z2 | y1 | y2]`` rows as a text matrix."""
        dump_matrix(
            np.hstack([self.supports, self.theta, self.z1, self.z2, self.y1, self.y2]),
            path,
        )

    @classmethod
    def load(cls, path, params: ModelParams) -> "SourceBatch":
        a = load_matrix(path)
        N, K, M = params.N, params.K, params.M
        if a.shape[1] != K + 3 * N + 2 * M:
            raise InvalidArgumentError(f"{path}: column count does not match params")
        cuts = np.cumsum([K, N, N, N, M])
        sup, th, z1, z2, y1, y2 = np.split(a, cuts, axis=1)
        return cls(sup.astype(int), th, z1, z2, y1, y2)


def sample_supports(N: int, K: int, size: int, rng) -> np.ndarray:
    """Uniform K-subsets of ``range(N)`` as sorted rows, shape (size, K)."""
    if K > N or K < 1:
        raise InvalidParameterError(f"need 1 <= K <= N, got K={K}, N={N}")
    keys = rng.random((size, N))
    idx = np.argpartition(keys, K - 1, axis=1)[:, :K] if K < N else np.tile(np.arange(N), (size, 1))
    return np.sort(idx, axis=1)


def sample_support(params: ModelParams, rng) -> tuple:
    """Draw one support set uniformly from all C(N, K) possibilities."""
    return tuple(int(v) for v in sample_supports(params.N, params.K, 1, rng)[0])


def sample_sources(params: ModelParams, phi1, phi2, rng, size: int | None = None):
    """Draw sources and their noisy measurements.

    Returns a :class:`SourceDraw` when ``size`` is None, otherwise a
    :class:`SourceBatch`. Draw order (supports, latent Gaussians, then
    measurement noise) is fixed, so batches with equal ``size`` share their
    source part across measurement settings for the same generator state.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    N, K, M = params.N, params.K, params.M
    if phi1.shape != (M, N) or phi2.shape != (M, N):
        raise InvalidArgumentError(
            f"sensing matrices must be {(M, N)}, got {phi1.shape} and {phi2.shape}"
        )
    T = 1 if size is None else int(size)
    if T < 1:
        raise InvalidArgumentError("size must be positive")
    supports = sample_supports(N, K, T, rng)
    g = rng.standard_normal((T, 3, K))
    rows = np.arange(T)[:, None]
    theta = np.zeros((T, N))
    z1 = np.zeros((T, N))
    z2 = np.zeros((T, N))
    theta[rows, supports] = math.sqrt(params.sigma_theta_sq) * g[:, 0]
    z1[rows, supports] = math.sqrt(params.sigma_z_sq) * g[:, 1]
    z2[rows, supports] = math.sqrt(params.sigma_z_sq) * g[:, 2]
    w = rng.standard_normal((T, 2, M))
    s1, s2 = (math.sqrt(s) for s in params.sigma_w_sq)
    y1 = (theta + z1) @ phi1.T + s1 * w[:, 0]
    y2 = (theta + z2) @ phi2.T + s2 * w[:, 1]
    batch = SourceBatch(supports, theta, z1, z2, y1, y2)
    return batch[0] if size is None else batch
