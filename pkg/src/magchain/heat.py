"""Macroscopic heat equation on the torus, solved exactly mode by mode.

Measures on the torus are stored as truncated Fourier coefficients

    T_hat[k] = int exp(-2 pi i k u) T(du),   |k| <= K,

so that the heat semigroup acts diagonally and the weak formulation can be
checked against trigonometric test functions without discretisation error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "TorusMeasure",
    "TrigFunction",
    "heat_evolve",
    "heat_rate",
    "weak_test",
    "xi_extract",
    "measure_distance",
    "distance_tail_bound",
    "convergence_rate_psi",
]

DEFAULT_KMAX = 64


@dataclass(frozen=True)
class TrigFunction:
    """Real trigonometric polynomial ``c0 + sum_m cos[m-1] cos(2 pi m u) + sin[m-1] sin(2 pi m u)``."""

    const: float = 0.0
    cos: tuple = ()
    sin: tuple = ()

    @property
    def degree(self) -> int:
        return max(len(self.cos), len(self.sin))

    def coefficients(self, K: int | None = None) -> np.ndarray:
        """Complex coefficients ``phi[k]`` with ``phi(u) = sum_k phi[k] exp(2 pi i k u)``, index ``k + K``."""
        K = self.degree if K is None else K
        out = np.zeros(2 * K + 1, dtype=complex)
        out[K] = self.const
        for m, c in enumerate(self.cos, start=1):
            if m <= K:
                out[K + m] += c / 2
                out[K - m] += c / 2
        for m, s in enumerate(self.sin, start=1):
            if m <= K:
                out[K + m] += s / 2j
                out[K - m] -= s / 2j
        return out

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        val = np.full(u.shape, float(self.const))
        for m, c in enumerate(self.cos, start=1):
            val = val + c * np.cos(2 * np.pi * m * u)
        for m, s in enumerate(self.sin, start=1):
            val = val + s * np.sin(2 * np.pi * m * u)
        return val

    def second_derivative(self) -> "TrigFunction":
        scale = [-(2 * np.pi * m) ** 2 for m in range(1, self.degree + 1)]
        return TrigFunction(
            0.0,
            tuple(c * scale[i] for i, c in enumerate(self.cos)),
            tuple(s * scale[i] for i, s in enumerate(self.sin)),
        )


class TorusMeasure:
    """Finite real measure on the torus held as Fourier coefficients ``|k| <= K``.

    Parameters
    ----------
    fourier : array_like of complex, length 2K+1
        ``fourier[k + K] = int exp(-2 pi i k u) T(du)``. Hermitian symmetry is
        enforced by averaging with the reflected conjugate.
    """

    def __init__(self, fourier):
        c = np.asarray(fourier, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1:
            raise ValueError("fourier must be a 1-d array of odd length 2K+1")
        self.fourier = 0.5 * (c + np.conj(c[::-1]))
        self.fourier.setflags(write=False)

    @property
    def kmax(self) -> int:
        return (self.fourier.size - 1) // 2

    @property
    def mass(self) -> float:
        return float(self.fourier[self.kmax].real)

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(-self.kmax, self.kmax + 1)

    def coefficient(self, k: int) -> complex:
        if abs(k) > self.kmax:
            return 0j
        return complex(self.fourier[k + self.kmax])

    def truncate(self, K: int) -> "TorusMeasure":
        out = np.zeros(2 * K + 1, dtype=complex)
        m = min(K, self.kmax)
        out[K - m : K + m + 1] = self.fourier[self.kmax - m : self.kmax + m + 1]
        return TorusMeasure(out)

    @classmethod
    def from_trig(cls, density: TrigFunction, kmax: int = DEFAULT_KMAX) -> "TorusMeasure":
        """Measure with a trigonometric-polynomial density."""
        return cls(density.coefficients(kmax))

    @classmethod
    def uniform(cls, mass: float, kmax: int = DEFAULT_KMAX) -> "TorusMeasure":
        c = np.zeros(2 * kmax + 1, dtype=complex)
        c[kmax] = mass
        return cls(c)

    def density(self, u) -> np.ndarray:
        """Truncated Fourier density evaluated at points ``u``."""
        u = np.asarray(u, dtype=float)
        phase = np.exp(2j * np.pi * np.multiply.outer(u, self.wavenumbers))
        return (phase @ self.fourier).real

    def pair(self, phi: TrigFunction) -> float:
        """``int phi dT`` for a trigonometric test function."""
        K = self.kmax
        coeffs = phi.coefficients(max(K, phi.degree))
        Kp = (coeffs.size - 1) // 2
        coeffs = coeffs[Kp - K : Kp + K + 1]
        # int exp(2 pi i k u) dT = T_hat[-k]
        return float(np.sum(coeffs * self.fourier[::-1]).real)

    def to_json(self) -> str:
        return json.dumps([[int(k), float(c.real), float(c.imag)] for k, c in zip(self.wavenumbers, self.fourier)])

    @classmethod
    def from_json(cls, text: str) -> "TorusMeasure":
        rows = json.loads(text)
        K = max(abs(int(r[0])) for r in rows)
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, re, im in rows:
            c[int(k) + K] = re + 1j * im
        return cls(c)

    def __repr__(self):
        return f"TorusMeasure(kmax={self.kmax}, mass={self.mass:.6g})"


def heat_rate(D: float, gamma: float) -> float:
    """Diffusivity ``D / (2 gamma)`` of the macroscopic equation."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return D / (2.0 * gamma)


def heat_evolve(T0: TorusMeasure, t: float, D: float, gamma: float) -> TorusMeasure:
    """Exact solution of ``dT/dt = (D / 2 gamma) d^2T/du^2`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    k = T0.wavenumbers
    return TorusMeasure(T0.fourier * np.exp(-4 * np.pi**2 * k**2 * heat_rate(D, gamma) * t))


def weak_test(
    T_series: Callable[[float], TorusMeasure],
    phi: TrigFunction,
    t: float,
    D: float,
    gamma: float,
    n_quad: int = 48,
) -> float:
    """Residual of the weak heat equation for the curve ``s -> T_series(s)`` at time ``t``.

    The time integral uses Gauss-Legendre quadrature on ``[0, t]``.
    """
    lhs = T_series(t).pair(phi) - T_series(0.0).pair(phi)
    if t == 0:
        return abs(lhs)
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    s = 0.5 * t * (nodes + 1.0)
    phi2 = phi.second_derivative()
    integral = 0.5 * t * sum(w * T_series(si).pair(phi2) for si, w in zip(s, weights))
    return abs(lhs - heat_rate(D, gamma) * integral)


def xi_extract(profile: Sequence[float], kmax: int | None = None) -> TorusMeasure:
    """Empirical energy measure ``N^-1 sum_x e_x delta_{x/N}`` as Fourier coefficients."""
    e = np.asarray(profile, dtype=float)
    N = e.size
    if kmax is None:
        kmax = min(DEFAULT_KMAX, (N - 1) // 2)
    if N < 2 * kmax + 1:
        raise ValueError(f"profile of length {N} cannot resolve kmax={kmax}")
    c = np.fft.fft(e) / N
    k = np.arange(-kmax, kmax + 1)
    return TorusMeasure(c[k % N])


def distance_tail_bound(kmax: int) -> float:
    """Upper bound on the metric terms dropped beyond ``|k| > kmax``."""
    return 2.0 ** (-kmax + 1)


def measure_distance(mu: TorusMeasure, nu: TorusMeasure, return_tail: bool = False):
    """Weak-topology metric ``sum_k 2^-|k| min(1, |mu_hat_k - nu_hat_k|)`` over ``|k| <= K``."""
    K = min(mu.kmax, nu.kmax)
    a = mu.truncate(K).fourier
    b = nu.truncate(K).fourier
    k = np.arange(-K, K + 1)
    d = float(np.sum(2.0 ** (-np.abs(k)) * np.minimum(1.0, np.abs(a - b))))
    if return_tail:
        return d, distance_tail_bound(K)
    return d


def convergence_rate_psi(profile, T0: TorusMeasure, kmax: int | None = None):
    """Per-mode discrepancies and the weighted rate ``Psi = sum_k k^-2 varpi_k``.

    Returns
    -------
    varpi : dict
        ``k -> |xi_hat_k - T0_hat_k| / E0`` for ``1 <= |k| <= kmax``.
    psi : float
    """
    E0 = T0.mass
    if not E0 > 0:
        raise ValueError("zero total energy is not admissible")
    xi = xi_extract(profile, kmax)
    K = min(xi.kmax, T0.kmax)
    varpi = {}
    for k in range(-K, K + 1):
        if k:
            varpi[k] = abs(xi.coefficient(k) - T0.coefficient(k)) / E0
    psi = sum(v / k**2 for k, v in varpi.items())
    return varpi, psi
