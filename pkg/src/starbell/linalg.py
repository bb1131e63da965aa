"""Dense complex-matrix helpers for the small qubit systems used here.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Dimensions never
exceed ``2**(2m)`` with ``m <= 4`` so everything is dense.
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

for _m in (I2, SX, SY, SZ):
    _m.setflags(write=False)


class DimensionError(ValueError):
    """Operands have incompatible or non-square shapes."""


class PhysicalityError(ValueError):
    """A matrix that must be a physical operator (Hermitian, PSD, unit trace) is not."""


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return a


def kron(a, b) -> np.ndarray:
    """Kronecker product; the left factor varies slowest."""
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(*factors) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, as_matrix(f))
    return out


def trace(m) -> complex:
    return complex(np.trace(as_matrix(m)))


def dagger(m) -> np.ndarray:
    return as_matrix(m).conj().T


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b


def hermiticity_error(m) -> float:
    a = as_matrix(m)
    return float(np.max(np.abs(a - a.conj().T)))


def psd_sqrt_2x2(m) -> np.ndarray:
    """Unique positive semidefinite square root of a 2x2 Hermitian PSD matrix.

    Uses the closed-form eigendecomposition: writing ``m = c*I + r*(n . sigma)``
    with ``|n| = 1``, the eigenvalues are ``c +/- r`` and the root is
    ``alpha*I + beta*(n . sigma)`` with ``alpha = (sqrt(c+r) + sqrt(c-r))/2``
    and ``beta = (sqrt(c+r) - sqrt(c-r))/2``.

    Raises
    ------
    PhysicalityError
        If ``m`` is not Hermitian or has an eigenvalue below ``-1e-10``.
    """
    a = as_matrix(m)
    if a.shape != (2, 2):
        raise DimensionError(f"psd_sqrt_2x2 needs a 2x2 matrix, got {a.shape}")
    if hermiticity_error(a) > HERMITIAN_TOL:
        raise PhysicalityError("matrix is not Hermitian")
    c = 0.5 * (a[0, 0].real + a[1, 1].real)
    # Bloch components of the traceless part
    rz = 0.5 * (a[0, 0].real - a[1, 1].real)
    rx = 0.5 * (a[0, 1].real + a[1, 0].real)
    ry = 0.5 * (a[1, 0].imag - a[0, 1].imag)
    r = float(np.sqrt(rx * rx + ry * ry + rz * rz))
    lo, hi = c - r, c + r
    if lo < PSD_TOL:
        raise PhysicalityError(f"negative eigenvalue {lo:.3e}")
    s_hi = np.sqrt(hi)
    s_lo = np.sqrt(max(lo, 0.0))
    alpha = 0.5 * (s_hi + s_lo)
    if r == 0.0:
        return alpha * I2.copy()
    beta = 0.5 * (s_hi - s_lo) / r
    return alpha * I2 + beta * (rx * SX + ry * SY + rz * SZ)


def check_density(rho, *, name: str = "state") -> np.ndarray:
    """Return ``rho`` as an array after checking it is a density operator.

    Hermitian to 1e-12 (max entry), unit trace to 1e-12 and eigenvalues no
    lower than -1e-10. Violations raise :class:`PhysicalityError`.
    """
    a = as_matrix(rho)
    herm = hermiticity_error(a)
    if herm > HERMITIAN_TOL:
        raise PhysicalityError(f"{name}: not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(a)
    if abs(tr - 1.0) > TRACE_TOL:
        raise PhysicalityError(f"{name}: trace {tr.real:.15g} != 1")
    lam = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    if lam[0] < PSD_TOL:
        raise PhysicalityError(f"{name}: negative eigenvalue {lam[0]:.3e}")
    return a


def is_density(rho) -> bool:
    try:
        check_density(rho)
    except (PhysicalityError, DimensionError):
        return False
    return True


def partial_trace_first(rho, d_first: int = 2) -> np.ndarray:
    """Trace out the left tensor factor of dimension ``d_first``."""
    a = as_matrix(rho)
    d_rest = a.shape[0] // d_first
    return np.einsum("ijik->jk", a.reshape(d_first, d_rest, d_first, d_rest))


def partial_trace_second(rho, d_second: int = 2) -> np.ndarray:
    """Trace out the right tensor factor of dimension ``d_second``."""
    a = as_matrix(rho)
    d_first = a.shape[0] // d_second
    return np.einsum("ijkj->ik", a.reshape(d_first, d_second, d_first, d_second))
