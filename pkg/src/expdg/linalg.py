"""Linear and nonlinear solves backing the implicit time steps.

The linear systems produced by the schemes are circulant stencils plus
diagonal scalings, i.e. banded matrices with two wrap-around corner blocks.
They are solved by a banded factorization of the core band plus a low-rank
Woodbury correction for the corners; small systems just use a dense solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonConvergenceError, SingularMatrixError

# below this size a dense solve is at least as fast as the banded path
DENSE_CUTOFF = 512


class PeriodicBandedMatrix:
    """Square matrix with A[i, (i+d) % n] = diags[d][i], offsets |d| <= b.

    Built incrementally by the step assemblers; `diags` maps each stencil
    offset to the length-n array of entries read along the rows.
    """

    def __init__(self, size: int, dtype=float):
        self.size = size
        self.dtype = np.dtype(dtype)
        self.diags: dict[int, np.ndarray] = {}

    def _row(self, offset: int) -> np.ndarray:
        if offset not in self.diags:
            self.diags[offset] = np.zeros(self.size, dtype=self.dtype)
        return self.diags[offset]

    def add_diagonal(self, offset: int, values) -> "PeriodicBandedMatrix":
        self._row(offset)
        self.diags[offset] = self.diags[offset] + np.asarray(values)
        return self

    def add_stencil(self, stencil, scale=1.0, col_weights=None) -> "PeriodicBandedMatrix":
        """Add scale * C or scale * C @ diag(col_weights) for stencil C."""
        for d, c in stencil:
            if col_weights is None:
                self.add_diagonal(d, scale * c)
            else:
                # entry A[i, j] = scale * c * col_weights[j] with j = (i+d) % n
                self.add_diagonal(d, scale * c * np.roll(col_weights, -d))
        return self

    @property
    def half_bandwidth(self) -> int:
        return max(abs(d) for d in self.diags) if self.diags else 0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.result_type(self.dtype, x.dtype))
        for d, vals in self.diags.items():
            out += vals * np.roll(x, -d)
        return out

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.size, self.size), dtype=self.dtype)
        idx = np.arange(self.size)
        for d, vals in self.diags.items():
            a[idx, (idx + d) % self.size] += vals
        return a


def identity_matrix(size: int, scale=1.0, dtype=float) -> PeriodicBandedMatrix:
    m = PeriodicBandedMatrix(size, dtype=dtype)
    m.add_diagonal(0, np.full(size, scale, dtype=np.result_type(dtype, type(scale))))
    return m


def _solve_dense(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution from dense factorization")
    return x


def solve_periodic_banded(a: PeriodicBandedMatrix, rhs: np.ndarray, method: str = "auto") -> np.ndarray:
    """Solve A x = rhs.  method: auto | dense | woodbury."""
    n = a.size
    rhs = np.asarray(rhs)
    if rhs.shape != (n,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({n},)")
    b = a.half_bandwidth
    if method == "dense" or (method == "auto" and (n <= DENSE_CUTOFF or n <= 4 * b + 2)):
        return _solve_dense(a.to_dense(), rhs)
    if method not in ("auto", "woodbury"):
        raise ValueError(f"unknown method {method!r}")

    dtype = np.result_type(a.dtype, rhs.dtype)
    # core band: entries that do not wrap, in LAPACK banded storage
    ab = np.zeros((2 * b + 1, n), dtype=dtype)
    for d, vals in a.diags.items():
        lo = max(0, -d)
        hi = n - max(0, d)
        ab[b - d, lo + d : hi + d] = vals[lo:hi]

    # wrap-around entries as a rank-2b correction U e_cols^T
    cols = list(range(b)) + list(range(n - b, n))
    col_pos = {j: m for m, j in enumerate(cols)}
    u = np.zeros((n, len(cols)), dtype=dtype)
    for d, vals in a.diags.items():
        if d > 0:
            for i in range(n - d, n):
                u[i, col_pos[i + d - n]] += vals[i]
        elif d < 0:
            for i in range(0, -d):
                u[i, col_pos[i + d + n]] += vals[i]

    stacked = np.concatenate([rhs[:, None], u], axis=1)
    try:
        sol = scipy.linalg.solve_banded((b, b), ab, stacked)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularMatrixError(str(exc)) from exc
    y, z = sol[:, 0], sol[:, 1:]
    cap = np.eye(len(cols), dtype=dtype) + z[cols, :]
    t = _solve_dense(cap, y[cols])
    x = y - z @ t
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution from banded factorization")
    return x


@dataclass(frozen=True)
class NonlinearSolveSettings:
    tolerance: float = 1e-12
    max_iterations: int = 50
    method: str = "newton"  # newton | fixed_point
    jacobian: str = "analytic"  # analytic | finite_difference

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method not in ("newton", "fixed_point"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.jacobian not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")


def _fd_jacobian(residual_fn, x: np.ndarray, r0: np.ndarray) -> np.ndarray:
    n = x.size
    jac = np.zeros((n, n))
    for j in range(n):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (residual_fn(xp) - r0) / h
    return jac


def newton_solve(residual_fn, jacobian_fn, guess: np.ndarray, settings: NonlinearSolveSettings):
    """Drive residual_fn to zero; returns (solution, iterations).

    jacobian_fn(x) may return a dense array or a PeriodicBandedMatrix; pass
    None (or jacobian='finite_difference') for a finite-difference fallback.
    """
    x = np.array(guess, dtype=float)
    r = residual_fn(x)
    if np.max(np.abs(r)) <= settings.tolerance:
        return x, 0
    use_fd = jacobian_fn is None or settings.jacobian == "finite_difference"
    for it in range(1, settings.max_iterations + 1):
        if settings.method == "fixed_point":
            x = x - r
        else:
            if use_fd:
                jac = _fd_jacobian(residual_fn, x, r)
            else:
                jac = jacobian_fn(x)
            if isinstance(jac, PeriodicBandedMatrix):
                delta = solve_periodic_banded(jac, r)
            else:
                delta = _solve_dense(np.asarray(jac), r)
            x = x - delta
        r = residual_fn(x)
        res_norm = np.max(np.abs(r))
        if not np.isfinite(res_norm):
            raise NonConvergenceError("residual became non-finite", iterations=it, residual=float("nan"))
        if res_norm <= settings.tolerance:
            return x, it
    raise NonConvergenceError(
        f"no convergence after {settings.max_iterations} iterations (residual {res_norm:.3e})",
        iterations=settings.max_iterations,
        residual=float(res_norm),
    )


def gauss_legendre_2():
    """Two-point Gauss rule on [0,1]: exact for polynomials of degree <= 3."""
    shift = np.sqrt(3.0) / 6.0
    nodes = np.array([0.5 - shift, 0.5 + shift])
    weights = np.array([0.5, 0.5])
    return nodes, weights
