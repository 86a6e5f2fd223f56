"""
Complex-valued kernels used by the rest of the package.

The DFT convention is unitary: forward transform uses ``exp(-j 2 pi n k / N)``
and both directions scale by ``1/sqrt(N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

COND_LIMIT = 1e8


def dft(v: np.ndarray, inverse: bool = False, axis: int = -1) -> np.ndarray:
    """Unitary DFT (or inverse) along ``axis``. Any length >= 2 is accepted."""
    v = np.asarray(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise InvalidInput("dft needs a non-empty vector")
    if v.shape[axis] < 2:
        raise InvalidInput(f"dft size must be >= 2, got {v.shape[axis]}")
    if inverse:
        return np.fft.ifft(v, axis=axis, norm="ortho")
    return np.fft.fft(v, axis=axis, norm="ortho")


def dft_matrix(n: int) -> np.ndarray:
    """Explicit unitary DFT matrix, built entry by entry (no FFT)."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def apply_banded(center: complex, off: complex, v: np.ndarray,
                 circular: bool = False) -> np.ndarray:
    """Apply the symmetric tridiagonal kernel ``[off, center, off]``.

    ``out[n] = off*v[n-1] + center*v[n] + off*v[n+1]``; entries outside the
    vector are zero unless ``circular`` is set, in which case they wrap.
    Works along the first axis so matrices are filtered column by column.
    """
    v = np.asarray(v)
    if v.shape[0] < 3:
        raise InvalidInput(f"apply_banded needs length >= 3, got {v.shape[0]}")
    out = center * v.astype(np.result_type(v, complex))
    if circular:
        out += off * (np.roll(v, 1, axis=0) + np.roll(v, -1, axis=0))
    else:
        out[1:] += off * v[:-1]
        out[:-1] += off * v[1:]
    return out


def circulant(first_row: np.ndarray) -> np.ndarray:
    """Circulant matrix whose row ``i`` is ``first_row`` rolled right by ``i``."""
    first_row = np.asarray(first_row)
    n = first_row.size
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return first_row[idx]


@dataclass(frozen=True)
class LsProblem:
    design: np.ndarray
    observations: np.ndarray
    support: np.ndarray | None = None
    ridge: float = 0.0

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design))
        obs = np.asarray(self.observations).ravel()
        if design.shape[0] != obs.size:
            raise InvalidInput(
                f"design has {design.shape[0]} rows but {obs.size} observations")
        support = (np.arange(design.shape[1]) if self.support is None
                   else np.asarray(self.support, dtype=int).ravel())
        if support.size == 0:
            raise InvalidInput("support must be non-empty")
        if support.min() < 0 or support.max() >= design.shape[1]:
            raise InvalidInput("support index out of range")
        if self.ridge < 0:
            raise InvalidInput("ridge must be nonnegative")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "support", support)


@dataclass(frozen=True)
class LsSolution:
    x: np.ndarray
    cond: float
    ill_conditioned: bool
    residual: np.ndarray


def solve_ls(problem: LsProblem) -> LsSolution:
    """
    Support-restricted ridge least squares.

    Minimises ``||A x - b||^2 + ridge ||x||^2`` with ``x`` zero off-support.
    With ``ridge == 0`` and a rank-deficient restricted design the
    minimum-norm solution is returned and ``ill_conditioned`` is set.
    """
    a = problem.design[:, problem.support]
    b = problem.observations
    s = np.linalg.svd(a, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if a.shape[0] < a.shape[1]:
        # fewer equations than unknowns: rank cannot exceed the row count
        cond = np.inf
    if problem.ridge > 0:
        k = a.shape[1]
        a_aug = np.vstack([a, np.sqrt(problem.ridge) * np.eye(k)])
        b_aug = np.concatenate([b, np.zeros(k, dtype=b.dtype)])
        xs = np.linalg.lstsq(a_aug, b_aug, rcond=None)[0]
        ill = False
    else:
        xs = np.linalg.lstsq(a, b, rcond=None)[0]
        ill = not cond < COND_LIMIT
    x = np.zeros(problem.design.shape[1], dtype=np.result_type(a, b, complex))
    x[problem.support] = xs
    return LsSolution(x=x, cond=cond, ill_conditioned=ill,
                      residual=b - problem.design @ x)
