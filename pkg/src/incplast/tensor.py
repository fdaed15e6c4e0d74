"""3x3 tensor algebra and the SL(3) helpers used by the plastic-strain updates.

Matrices are plain ``(3, 3)`` float64 numpy arrays.  Traceless matrices (the
tangent space of SL(3)) are ordinary matrices whose trace vanishes to roundoff;
:func:`deviator` projects onto them.
"""
from __future__ import annotations

import numpy as np

from . import _kernels as _k

# Shared tolerance for |det P - 1| when SL(3) membership matters.
SL3_TOL = 1e-8
# Relative trace tolerance for traceless arguments.
TRACE_TOL = 1e-12


class LogUndefinedError(ValueError):
    """Principal matrix logarithm does not exist for this argument."""


class NotInSL3Error(ValueError):
    """Matrix is not unimodular within SL3_TOL."""


def identity() -> np.ndarray:
    return np.eye(3)


def frobenius(a: np.ndarray) -> float:
    """Frobenius norm of an array of any shape."""
    return float(np.sqrt(np.sum(np.square(a))))


def deviator(a: np.ndarray) -> np.ndarray:
    """Trace-free part a - (tr a / 3) I."""
    return _k._dev3(np.ascontiguousarray(a, dtype=np.float64))


def cofactor(a: np.ndarray) -> np.ndarray:
    """Cofactor matrix; equals det(a) a^{-T} for invertible a."""
    return _k._cof3(np.ascontiguousarray(a, dtype=np.float64))


def determinant(a: np.ndarray) -> float:
    return float(_k._det3(np.ascontiguousarray(a, dtype=np.float64)))


def is_traceless(a: np.ndarray, tol: float = TRACE_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(a))))
    return abs(float(np.trace(a))) <= tol * scale


def is_sl3(p: np.ndarray, tol: float = SL3_TOL) -> bool:
    return abs(determinant(p) - 1.0) <= tol


def require_sl3(p: np.ndarray, tol: float = SL3_TOL) -> None:
    d = determinant(p)
    if not abs(d - 1.0) <= tol:
        raise NotInSL3Error(f"det = {d!r} is not 1 within {tol:g}")


def project_sl3(p: np.ndarray) -> np.ndarray:
    """Rescale by det^{-1/3} so the determinant is exactly 1.

    Raises NotInSL3Error for non-positive determinants, where no rescaling
    reaches the identity component.
    """
    d = determinant(p)
    if d <= 0.0 or not np.isfinite(d):
        raise NotInSL3Error(f"cannot renormalize det = {d!r}")
    return p * d ** (-1.0 / 3.0)


def mat_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring, degree-6 diagonal Pade).

    For traceless input the result is unimodular to roundoff.
    """
    return _k._expm3(np.ascontiguousarray(a, dtype=np.float64))


def _spectrum_blocks_log(m: np.ndarray) -> bool:
    """True when an eigenvalue sits on the closed negative real axis."""
    eig = np.linalg.eigvals(m)
    for lam in eig:
        if lam.real <= 0.0 and abs(lam.imag) <= 1e-12 * max(1.0, abs(lam)):
            return True
    return False


def mat_log(m: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm (inverse scaling and squaring).

    Raises LogUndefinedError when the spectrum touches the closed negative
    real axis, where no principal branch exists.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise LogUndefinedError("non-finite input")
    if _spectrum_blocks_log(m):
        raise LogUndefinedError("eigenvalue on the closed negative real axis")
    out, ok = _k._logm3(m)
    if not ok:
        raise LogUndefinedError("log iteration failed to reduce the argument")
    return out


def random_traceless(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Gaussian traceless matrix with Frobenius norm exactly ``scale``."""
    a = deviator(rng.standard_normal((3, 3)))
    n = frobenius(a)
    while n < 1e-12:  # essentially impossible, but stay total
        a = deviator(rng.standard_normal((3, 3)))
        n = frobenius(a)
    return a * (scale / n)


def random_sl3(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """exp of a random traceless matrix of norm ``scale``; unimodular by construction."""
    return mat_exp(random_traceless(rng, scale))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
