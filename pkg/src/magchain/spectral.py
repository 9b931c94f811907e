"""Lattice Fourier machinery, Green's functions and the thermal diffusivity.

The discrete transform uses the unitary convention

    v_hat[j] = sum_x v[x] * conj(psi_j(x)),   psi_j(x) = exp(2 pi i j x / N) / sqrt(N),

which diagonalises the pinned lattice operator ``omega0**2 - Laplacian`` with
eigenvalues ``mu_j = omega0**2 + 4 sin(pi j / N)**2``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ModeData",
    "mode_indices",
    "mode_eigenvalues",
    "dft",
    "idft",
    "dft_direct",
    "green_function",
    "green_function_quad",
    "periodic_green_function",
    "diffusion_closed_form",
    "diffusion_kinetic",
    "diffusion_fd",
    "diffusion_all",
    "effective_derivative_sum",
    "heat_kernel_integral",
    "harmonic_multipliers",
    "harmonic_propagator_matrix",
    "harmonic_increment_matrix",
    "harmonic_flow_arrays",
]


def _check_omega0(omega0):
    if not omega0 > 0:
        raise ValueError(f"pinning frequency must be positive, got {omega0!r}")


def mode_indices(N: int) -> np.ndarray:
    """Symmetric representatives of Z_N.

    ``{-(N-1)/2, ..., (N-1)/2}`` for odd N and ``{-N/2+1, ..., N/2}`` for even N.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if N % 2:
        h = (N - 1) // 2
        return np.arange(-h, h + 1)
    return np.arange(-N // 2 + 1, N // 2 + 1)


def mode_eigenvalues(N: int, omega0: float, j=None) -> np.ndarray:
    """Eigenvalues ``mu_j`` of ``omega0^2 - Laplacian`` on the ring of N sites."""
    if j is None:
        j = np.arange(N)
    return omega0**2 + 4.0 * np.sin(np.pi * np.asarray(j) / N) ** 2


class ModeData:
    """Mode bookkeeping for a ring of ``N`` sites with pinning ``omega0``.

    Attributes
    ----------
    indices : ndarray
        Symmetric representatives of Z_N.
    mu : ndarray
        ``mu_j`` in FFT order (j = 0..N-1).
    lam : ndarray
        Laplacian eigenvalues ``4 sin^2(pi j/N)`` in FFT order.
    """

    def __init__(self, N: int, omega0: float):
        _check_omega0(omega0)
        self.N = int(N)
        self.omega0 = float(omega0)
        self.indices = mode_indices(self.N)
        self.lam = 4.0 * np.sin(np.pi * np.arange(self.N) / self.N) ** 2
        self.mu = self.omega0**2 + self.lam

    @property
    def frequencies(self) -> np.ndarray:
        return np.sqrt(self.mu)

    def psi(self, j, x) -> np.ndarray:
        return np.exp(2j * np.pi * np.multiply.outer(x, j) / self.N) / np.sqrt(self.N)


def dft(v, axis: int = -1) -> np.ndarray:
    """Unitary discrete Fourier transform along ``axis``."""
    return np.fft.fft(v, axis=axis, norm="ortho")


def idft(v_hat, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`dft`. Returns a complex array."""
    return np.fft.ifft(v_hat, axis=axis, norm="ortho")


def dft_direct(v) -> np.ndarray:
    """O(N^2) reference transform built from the explicit eigenvectors."""
    v = np.asarray(v)
    N = v.shape[-1]
    x = np.arange(N)
    psi_conj = np.exp(-2j * np.pi * np.outer(x, x) / N) / np.sqrt(N)
    return v @ psi_conj


def _green_decay(omega0):
    # a_+ = 1 + w^2/2 + w sqrt(1 + w^2/4); G decays like a_+^{-|x|}
    return 1.0 + 0.5 * omega0**2 + omega0 * np.sqrt(1.0 + 0.25 * omega0**2)


def green_function(omega0: float, x) -> np.ndarray | float:
    """Green's function of ``-Laplacian + omega0^2`` on the infinite lattice Z."""
    _check_omega0(omega0)
    x = np.abs(np.asarray(x))
    val = _green_decay(omega0) ** (-x.astype(float)) / (omega0 * np.sqrt(omega0**2 + 4.0))
    return float(val) if val.ndim == 0 else val


def green_function_quad(omega0: float, x, n_points: int = 4096) -> np.ndarray | float:
    """Integral form of the lattice Green's function, by the periodic trapezoid rule."""
    u = np.arange(n_points) / n_points
    x = np.asarray(x, dtype=float)
    integrand = np.cos(2 * np.pi * np.multiply.outer(x, u)) / (4 * np.sin(np.pi * u) ** 2 + omega0**2)
    val = integrand.mean(axis=-1)
    return float(val) if val.ndim == 0 else val


def periodic_green_function(N: int, omega0: float) -> np.ndarray:
    """Inverse of ``omega0^2 - Laplacian`` on the ring Z_N as a dense N x N matrix.

    Obtained by periodising the lattice Green's function, which sums to a closed
    geometric series.
    """
    _check_omega0(omega0)
    a = 1.0 / _green_decay(omega0)
    c = 1.0 / (omega0 * np.sqrt(omega0**2 + 4.0))
    r = np.arange(N)
    # -expm1 keeps 1 - a^N accurate when a^N is close to 1 (small omega0)
    g = c * (a**r + a ** (N - r)) / (-np.expm1(N * np.log(a)))
    idx = (r[None, :] - r[:, None]) % N
    return g[idx]


def diffusion_closed_form(omega0: float) -> float:
    r"""Thermal diffusivity ``D = 2 / (2 + w^2 + w sqrt(4 + w^2))``."""
    _check_omega0(omega0)
    return 2.0 / (2.0 + omega0**2 + omega0 * np.sqrt(4.0 + omega0**2))


def diffusion_kinetic(omega0: float, quad_points: int = 4096) -> float:
    """Phonon (kinetic) expression ``int_0^1 (1 - cos 4 pi k) / omega(k)^2 dk``.

    The integrand is smooth and periodic, so the trapezoid rule converges
    exponentially; the rate degrades as ``omega0 -> 0``.
    """
    _check_omega0(omega0)
    if quad_points < 1000:
        raise ValueError("quad_points must be at least 1000")
    k = np.arange(quad_points) / quad_points
    omega2 = omega0**2 + 4.0 * np.sin(np.pi * k) ** 2
    return float(np.mean((1.0 - np.cos(4 * np.pi * k)) / omega2))


def diffusion_fd(omega0: float) -> float:
    """Fluctuation-dissipation expression ``1 - w^2 (G(0) + G(1))``."""
    _check_omega0(omega0)
    return 1.0 - omega0**2 * (green_function(omega0, 0) + green_function(omega0, 1))


def diffusion_all(omega0: float, quad_points: int = 4096) -> dict:
    """All three diffusivity values and their largest pairwise gap."""
    vals = {
        "closed_form": diffusion_closed_form(omega0),
        "kinetic": diffusion_kinetic(omega0, quad_points),
        "fluctuation_dissipation": diffusion_fd(omega0),
    }
    v = list(vals.values())
    vals["max_discrepancy"] = max(abs(a - b) for a in v for b in v)
    return vals


def effective_derivative_sum(N: int, k: int, omega0: float, gamma: float) -> complex:
    """Direct evaluation of ``sum_j (exp(2 pi i j/N) - 1) Phi(mu_j, mu_{k-j})``.

    For ``k`` in the symmetric index set this approaches ``2 pi i k D`` with an
    ``O(k^2 / N)`` error.
    """
    from .stochastic import phi_tilde

    j = np.arange(N)
    mu = mode_eigenvalues(N, omega0, j)
    mu_kj = mode_eigenvalues(N, omega0, (k - j) % N)
    terms = (np.exp(2j * np.pi * j / N) - 1.0) * phi_tilde(mu, mu_kj, gamma)
    return complex(terms.sum())


def heat_kernel_integral(omega0: float, n_points: int = 4096) -> float:
    """``int_0^{2 pi} sin^2(t) / (omega0^2 + 2 - 2 cos t) dt`` (equals ``pi D``)."""
    _check_omega0(omega0)
    t = 2 * np.pi * np.arange(n_points) / n_points
    return float(2 * np.pi * np.mean(np.sin(t) ** 2 / (omega0**2 + 2 - 2 * np.cos(t))))


def harmonic_multipliers(N: int, omega0: float, delta: float):
    """Per-mode entries of the exact harmonic flow over ``delta``.

    Each mode obeys ``q'' = -mu_j q``, so ``(q_hat, p_hat)`` is mapped by
    ``[[cos, sin / w], [-w sin, cos]]`` evaluated at ``w_j delta``.
    Returned in FFT order.
    """
    _check_omega0(omega0)
    w = np.sqrt(mode_eigenvalues(N, omega0))
    c = np.cos(w * delta)
    s = np.sin(w * delta)
    return c, s / w, -w * s


def _circulant(mult):
    kernel = np.fft.ifft(mult).real
    N = kernel.size
    r = np.arange(N)
    return kernel[(r[:, None] - r[None, :]) % N]


def harmonic_propagator_matrix(N: int, omega0: float, delta: float) -> np.ndarray:
    """Dense ``2N x 2N`` matrix ``P`` with ``[q', p'] = [q, p] @ P`` for row vectors.

    Useful for small rings where one matrix product beats two FFT round trips.
    """
    c, sw, ws = harmonic_multipliers(N, omega0, delta)
    C, Sqp, Spq = _circulant(c), _circulant(sw), _circulant(ws)
    # circulants of even symbols are symmetric, so no transposes are needed
    return np.block([[C, Spq], [Sqp, C]])


def harmonic_increment_matrix(N: int, omega0: float, delta: float) -> np.ndarray:
    """``P - I`` for :func:`harmonic_propagator_matrix`, accurate to relative roundoff.

    For small ``delta`` the diagonal of ``P`` is ``1 - O(delta^2)``; storing it
    directly biases the energy by about one ulp per step.  Updating with
    ``z + z @ (P - I)`` keeps the rounding unbiased.
    """
    _, sw, ws = harmonic_multipliers(N, omega0, delta)
    w = np.sqrt(mode_eigenvalues(N, omega0))
    cm1 = -2.0 * np.sin(0.5 * w * delta) ** 2
    C, Sqp, Spq = _circulant(cm1), _circulant(sw), _circulant(ws)
    return np.block([[C, Spq], [Sqp, C]])


def harmonic_flow_arrays(q, p, omega0: float, delta: float, axis: int = -2):
    """Exact harmonic flow of position/momentum arrays along the site ``axis``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if delta == 0:
        return q.copy(), p.copy()
    N = q.shape[axis]
    c, sw, ws = harmonic_multipliers(N, omega0, delta)
    h = N // 2 + 1
    shape = [1] * q.ndim
    shape[axis] = h
    c, sw, ws = (m[:h].reshape(shape) for m in (c, sw, ws))
    qh = np.fft.rfft(q, axis=axis)
    ph = np.fft.rfft(p, axis=axis)
    q_new = np.fft.irfft(c * qh + sw * ph, n=N, axis=axis)
    p_new = np.fft.irfft(ws * qh + c * ph, n=N, axis=axis)
    return q_new, p_new
