"""Phase-space points of the Galerkin-truncated NLS and the Hamiltonian on them.

A state is the vector of Fourier coefficients ``psi_k`` for ``|k| <= N``,
stored in an array whose last axis has length ``2N+1`` (index ``i`` holds
mode ``k = i - N``).  All functions accept batches: any leading axes are
carried along, which is what the samplers and the integrator rely on.

Conventions
-----------
``psi_k = (2 pi)^(-1/2) int psi(x) exp(-ikx) dx`` and hence
``psi(x) = (2 pi)^(-1/2) sum_k psi_k exp(ikx)``.  The Hamiltonian is

    H = 1/2 sum_k k^2 |psi_k|^2 + sum_j c_j/(2j) int |psi|^(2j) dx,

and the flow it generates (see ``dynamics``) is ``i dpsi_k/dt = 2 dH/dpsibar_k``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SQRT_2PI = math.sqrt(2.0 * math.pi)


def modes(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


def truncation_of(psi: np.ndarray) -> int:
    n = psi.shape[-1]
    if n % 2 != 1:
        raise ValueError(f"coefficient axis has even length {n}; expected 2N+1")
    return (n - 1) // 2


def required_grid(N: int, q: int) -> int:
    """Smallest admissible quadrature grid: next power of two >= 2qN+1."""
    need = 2 * q * N + 1
    return 1 << (need - 1).bit_length()


def to_grid(psi: np.ndarray, M: int) -> np.ndarray:
    """Values of ``psi(x)`` at ``x_j = 2 pi j / M``."""
    N = truncation_of(psi)
    if M < 2 * N + 1:
        raise ValueError(f"grid of {M} points cannot hold modes |k| <= {N}")
    buf = np.zeros(psi.shape[:-1] + (M,), dtype=complex)
    buf[..., modes(N) % M] = psi
    return np.fft.ifft(buf, axis=-1) * (M / SQRT_2PI)


def from_grid(u: np.ndarray, N: int) -> np.ndarray:
    """Fourier coefficients ``|k| <= N`` of grid values (exact for band-limited data)."""
    M = u.shape[-1]
    c = np.fft.fft(u, axis=-1) * (SQRT_2PI / M)
    return c[..., modes(N) % M]


@dataclass(frozen=True)
class ModelParams:
    """Nonlinearity ``F(x) = sum_{j=2}^q c_j x^j``, inverse temperature and truncation.

    ``c`` holds ``(c_2, ..., c_q)``.  ``check=False`` skips the validation and
    is only meant for tests of the linear flow (all ``c_j = 0``).
    """

    c: tuple[float, ...]
    beta: float
    N: int
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        if len(self.c) < 1:
            raise ValueError("need at least c_2")
        if self.N < 0:
            raise ValueError("truncation N must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not self.check:
            return
        if self.c[0] == 0.0:
            raise ValueError("c_2 must be nonzero")
        x = np.concatenate([[0.0], np.logspace(-8, 3, 600)])
        if np.any(self.F(x) < -1e-12 * (1.0 + np.abs(x) ** self.q)):
            raise ValueError("F(x) must be nonnegative for x >= 0")

    @property
    def q(self) -> int:
        return len(self.c) + 1

    def cj(self, j: int) -> float:
        if not 2 <= j <= self.q:
            return 0.0
        return self.c[j - 2]

    def F(self, x):
        x = np.asarray(x, dtype=float)
        return sum(cj * x**j for j, cj in enumerate(self.c, start=2))

    def force(self, x):
        """Pointwise nonlinear frequency ``sum_j c_j x^(j-1)`` of the flow of H."""
        x = np.asarray(x, dtype=float)
        return sum(cj * x ** (j - 1) for j, cj in enumerate(self.c, start=2))

    @property
    def grid(self) -> int:
        return required_grid(self.N, self.q)

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.c, beta, self.N, self.check)

    def with_N(self, N: int) -> "ModelParams":
        return ModelParams(self.c, self.beta, N, self.check)


class FourierState:
    """Immutable truncated coefficient vector with a per-grid evaluation cache."""

    __slots__ = ("_coeffs", "_grid_cache")

    def __init__(self, coeffs):
        arr = np.array(coeffs, dtype=complex)
        if arr.ndim != 1:
            raise ValueError("FourierState holds a single state; use arrays for batches")
        truncation_of(arr)
        arr.setflags(write=False)
        self._coeffs = arr
        self._grid_cache: dict[int, np.ndarray] = {}

    @classmethod
    def zeros(cls, N: int) -> "FourierState":
        return cls(np.zeros(2 * N + 1, dtype=complex))

    @classmethod
    def from_modes(cls, N: int, values: dict[int, complex]) -> "FourierState":
        arr = np.zeros(2 * N + 1, dtype=complex)
        for k, v in values.items():
            if abs(k) > N:
                raise ValueError(f"mode {k} outside truncation |k| <= {N}")
            arr[k + N] = v
        return cls(arr)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def N(self) -> int:
        return truncation_of(self._coeffs)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.N:
            raise IndexError(f"mode {k} outside truncation |k| <= {self.N}")
        return complex(self._coeffs[k + self.N])

    def grid(self, M: int) -> np.ndarray:
        if M not in self._grid_cache:
            g = to_grid(self._coeffs, M)
            g.setflags(write=False)
            self._grid_cache[M] = g
        return self._grid_cache[M]

    def replace(self, coeffs) -> "FourierState":
        return FourierState(coeffs)

    def restrict(self, N: int) -> "FourierState":
        """Low-mode restriction (or zero-padding when ``N`` exceeds the truncation)."""
        return FourierState(resize(self._coeffs, N))

    def __repr__(self):
        return f"FourierState(N={self.N}, l2={hs_norm(self._coeffs, 0.0):.4g})"

    def __eq__(self, other):
        return isinstance(other, FourierState) and np.array_equal(self._coeffs, other._coeffs)

    __hash__ = None


def _coeffs(state) -> np.ndarray:
    return state.coeffs if isinstance(state, FourierState) else np.asarray(state)


def resize(psi: np.ndarray, N: int) -> np.ndarray:
    psi = np.asarray(psi)
    N0 = truncation_of(psi)
    if N <= N0:
        return psi[..., N0 - N : N0 + N + 1].copy()
    out = np.zeros(psi.shape[:-1] + (2 * N + 1,), dtype=complex)
    out[..., N - N0 : N + N0 + 1] = psi
    return out


def hs_norm(state, s1: float) -> np.ndarray:
    psi = _coeffs(state)
    k = modes(truncation_of(psi))
    w = (1.0 + k.astype(float) ** 2) ** s1
    return np.sqrt(np.sum(w * np.abs(psi) ** 2, axis=-1))


def action(state, k: int):
    psi = _coeffs(state)
    N = truncation_of(psi)
    if abs(k) > N:
        raise IndexError(f"mode {k} outside truncation |k| <= {N}")
    return np.abs(psi[..., k + N]) ** 2


def actions(state) -> np.ndarray:
    return np.abs(_coeffs(state)) ** 2


def momentum(state):
    psi = _coeffs(state)
    return np.sum(modes(truncation_of(psi)) * np.abs(psi) ** 2, axis=-1)


def _check_grid(N: int, q: int, M: int | None) -> int:
    need = 2 * q * N + 1
    if M is None:
        return required_grid(N, q)
    if M < need:
        raise ValueError(
            f"quadrature grid M={M} too coarse for q={q}, N={N}: need M >= {need}"
        )
    return M


def evaluate_P(state, params: ModelParams, M: int | None = None):
    """``P = sum_j c_j/(2j) int |psi|^(2j)`` by exact grid quadrature."""
    psi = _coeffs(state)
    N = truncation_of(psi)
    M = _check_grid(N, params.q, M)
    if isinstance(state, FourierState):
        u = state.grid(M)
    else:
        u = to_grid(psi, M)
    rho = np.abs(u) ** 2
    dx = 2.0 * math.pi / M
    total = 0.0
    for j, cj in enumerate(params.c, start=2):
        if cj != 0.0:
            total = total + cj / (2 * j) * dx * np.sum(rho**j, axis=-1)
    return np.asarray(total, dtype=float) + np.zeros(psi.shape[:-1])


def evaluate_P_fourier(state, params: ModelParams):
    """Same quantity through Fourier convolutions.

    ``int |psi|^(2j) dx = (2 pi)^(1-j) sum_m |(psi * ... * psi)_m|^2`` with a
    ``j``-fold discrete convolution; used as an independent route.
    """
    psi = np.atleast_2d(_coeffs(state))
    out = np.zeros(psi.shape[0])
    for b, row in enumerate(psi):
        power = row
        for j in range(2, params.q + 1):
            power = np.convolve(power, row)
            cj = params.cj(j)
            if cj != 0.0:
                out[b] += cj / (2 * j) * (2 * math.pi) ** (1 - j) * np.sum(np.abs(power) ** 2)
    return out.reshape(np.shape(_coeffs(state))[:-1])


def evaluate_H2(state):
    psi = _coeffs(state)
    k = modes(truncation_of(psi))
    return 0.5 * np.sum(k**2 * np.abs(psi) ** 2, axis=-1)


def hamiltonian(state, params: ModelParams, M: int | None = None):
    return evaluate_H2(state) + evaluate_P(state, params, M)


def gradient_H(state, params: ModelParams, M: int | None = None) -> np.ndarray:
    """Vector field coefficients ``g_k = 2 dH/dpsibar_k``.

    ``g_k = k^2 psi_k + [f(|psi|^2) psi]_k`` with ``f(x) = sum_j c_j x^(j-1)``,
    projected onto ``|k| <= N``; the flow is ``i dpsi_k/dt = g_k`` and the
    differential of H is ``dH[v] = Re sum_k conj(g_k) v_k``.
    """
    psi = _coeffs(state)
    N = truncation_of(psi)
    k = modes(N)
    lin = k**2 * psi
    if all(cj == 0.0 for cj in params.c):
        return lin
    M = _check_grid(N, params.q, M)
    u = state.grid(M) if isinstance(state, FourierState) else to_grid(psi, M)
    return lin + from_grid(params.force(np.abs(u) ** 2) * u, N)


# -- snapshots ---------------------------------------------------------------

def state_to_json(state, beta_hint: float | None = None) -> dict:
    psi = _coeffs(state)
    N = truncation_of(psi)
    return {
        "n": N,
        "beta_hint": beta_hint,
        "modes": [[int(k), float(v.real), float(v.imag)] for k, v in zip(modes(N), psi)],
    }


def state_from_json(obj: dict) -> FourierState:
    N = int(obj["n"])
    seen: set[int] = set()
    arr = np.zeros(2 * N + 1, dtype=complex)
    for entry in obj["modes"]:
        k, re, im = int(entry[0]), float(entry[1]), float(entry[2])
        if k in seen:
            raise ValueError(f"duplicate mode {k} in snapshot")
        if abs(k) > N:
            raise ValueError(f"mode {k} outside truncation |k| <= {N}")
        seen.add(k)
        arr[k + N] = complex(re, im)
    return FourierState(arr)


def save_state(path, state, beta_hint: float | None = None) -> None:
    Path(path).write_text(json.dumps(state_to_json(state, beta_hint)))


def load_state(path) -> FourierState:
    return state_from_json(json.loads(Path(path).read_text()))


def random_state(N: int, rng: np.random.Generator, scale: float = 1.0,
                 decay: float = 1.0, size: Sequence[int] = ()) -> np.ndarray:
    """Complex Gaussian coefficients with variance ``scale^2 (1+k^2)^-decay``."""
    k = modes(N)
    sd = scale * (1.0 + k.astype(float) ** 2) ** (-decay / 2)
    shape = tuple(size) + (2 * N + 1,)
    return sd * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
