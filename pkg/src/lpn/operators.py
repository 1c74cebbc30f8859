"""Linear measurement operators, power iteration and conjugate gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class LinearOperator:
    """A linear map with an explicit adjoint.

    Subclasses set ``input_dim``/``output_dim`` and implement ``_apply`` and
    ``_adjoint`` on 1-D arrays; ``spec()`` returns a JSON-friendly description
    that ``make_operator`` turns back into an equal operator.
    """

    kind = "abstract"
    input_dim: int
    output_dim: int

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"{self.kind}: expected input of length {self.input_dim}, got shape {x.shape}")
        return self._apply(x)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.output_dim,):
            raise ValueError(f"{self.kind}: expected input of length {self.output_dim}, got shape {y.shape}")
        return self._adjoint(y)

    def normal(self, x):
        """``A^T A x``."""
        return self.adjoint(self.apply(x))

    def to_dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.input_dim)])

    def spec(self) -> dict:
        raise NotImplementedError


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = int(dim)

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply

    def spec(self):
        return {"kind": self.kind, "dim": self.input_dim}


class MatrixOperator(LinearOperator):
    kind = "matrix"

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("matrix operator needs a 2-D array")
        self.output_dim, self.input_dim = self.matrix.shape

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return self.matrix.copy()

    def spec(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


class GaussianCS(MatrixOperator):
    """``m x n`` matrix with i.i.d. ``N(0, 1/m)`` entries drawn from ``seed``."""

    kind = "gaussian_cs"

    def __init__(self, rows: int, cols: int, seed: int = 0):
        self.rows, self.cols, self.seed = int(rows), int(cols), int(seed)
        rng = np.random.default_rng(self.seed)
        super().__init__(rng.standard_normal((self.rows, self.cols)) / np.sqrt(self.rows))

    def spec(self):
        return {"kind": self.kind, "rows": self.rows, "cols": self.cols, "seed": self.seed}


class Mask(LinearOperator):
    """Keeps the entries at ``indices``; the adjoint scatters back with zeros elsewhere."""

    kind = "mask"

    def __init__(self, dim: int, indices):
        self.input_dim = int(dim)
        self.indices = np.asarray(indices, dtype=int)
        if self.indices.ndim != 1 or len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("mask indices must be a 1-D list of distinct positions")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.input_dim):
            raise ValueError("mask index out of range")
        self.output_dim = len(self.indices)

    def _apply(self, x):
        return x[self.indices]

    def _adjoint(self, y):
        out = np.zeros(self.input_dim)
        out[self.indices] = y
        return out

    def spec(self):
        return {"kind": self.kind, "dim": self.input_dim, "indices": self.indices.tolist()}


def _reflect(j, n):
    # numpy "reflect" padding: the edge sample is not repeated
    if n == 1:
        return np.zeros_like(j)
    period = 2 * (n - 1)
    j = np.mod(j, period)
    return np.where(j < n, j, period - j)


class Blur(LinearOperator):
    """Convolution with a 1-D or 2-D stencil under reflect boundary handling.

    ``shape`` is the signal shape (``(n,)`` or ``(rows, cols)``); vectors are
    the row-major flattening. The map is stored as a sparse matrix so the
    adjoint is its exact transpose.
    """

    kind = "blur"

    def __init__(self, kernel, shape):
        self.kernel = np.atleast_1d(np.asarray(kernel, dtype=np.float64))
        self.shape = tuple(int(s) for s in np.atleast_1d(shape))
        if self.kernel.ndim != len(self.shape) or self.kernel.ndim not in (1, 2):
            raise ValueError("kernel and signal shape must both be 1-D or both 2-D")
        if any(k % 2 == 0 for k in self.kernel.shape):
            raise ValueError("kernel sides must have odd length")
        self.input_dim = self.output_dim = int(np.prod(self.shape))
        self.matrix = self._build()

    def _build(self):
        grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        out_idx = np.ravel_multi_index(grids, self.shape).ravel()
        rows, cols, vals = [], [], []
        centre = [k // 2 for k in self.kernel.shape]
        for offs in np.ndindex(*self.kernel.shape):
            weight = self.kernel[offs]
            if weight == 0.0:
                continue
            src = [_reflect(g - (o - c), s) for g, o, c, s in zip(grids, offs, centre, self.shape)]
            rows.append(out_idx)
            cols.append(np.ravel_multi_index(src, self.shape).ravel())
            vals.append(np.full(out_idx.size, weight))
        if not rows:
            return sp.csr_matrix((self.output_dim, self.input_dim))
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.output_dim, self.input_dim))
        return m.tocsr()

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return self.matrix.toarray()

    def spec(self):
        return {"kind": self.kind, "kernel": self.kernel.tolist(), "shape": list(self.shape)}


def gaussian_kernel_1d(taps: int, width: float) -> np.ndarray:
    """Normalized sampled Gaussian with ``taps`` (odd) entries."""
    t = np.arange(taps) - taps // 2
    k = np.exp(-0.5 * (t / width) ** 2)
    return k / k.sum()


def make_operator(spec: dict) -> LinearOperator:
    kind = spec["kind"]
    if kind == "identity":
        return Identity(spec["dim"])
    if kind == "blur":
        return Blur(spec["kernel"], spec["shape"])
    if kind == "gaussian_cs":
        return GaussianCS(spec["rows"], spec["cols"], spec.get("seed", 0))
    if kind == "mask":
        return Mask(spec["dim"], spec["indices"])
    if kind == "matrix":
        return MatrixOperator(spec["matrix"])
    raise ValueError(f"unknown operator kind {kind!r}")


@dataclass
class OpNormEstimate:
    value: float
    iterations: int
    history: list = field(default_factory=list)


def op_norm_sq(op: LinearOperator, iters: int = 200, seed: int = 0, tol: float = 0.0) -> OpNormEstimate:
    """Power iteration on ``A^T A``; the estimate is the Rayleigh quotient.

    For a positive semidefinite map the Rayleigh quotients of successive power
    iterates never decrease. Stops early once the relative change drops
    below ``tol`` (0 runs all ``iters``).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.input_dim)
    v /= np.linalg.norm(v)
    history = []
    est = 0.0
    for k in range(1, iters + 1):
        w = op.normal(v)
        est = float(v @ w)
        history.append(est)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return OpNormEstimate(0.0, k, history)
        v = w / nw
        if tol and k > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-1]):
            break
    return OpNormEstimate(est, k, history)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def cg_solve(apply_M, b, tol: float = 1e-10, max_iters: int = 1000, x0=None) -> CGResult:
    """Conjugate gradients for symmetric positive definite ``M x = b``.

    Converged means ``||M x - b|| <= tol * ||b||``. When ``max_iters`` runs out
    the last iterate is returned with ``converged=False``.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    target = tol * bnorm
    k = 0
    r = b - apply_M(x) if x0 is not None else b.copy()
    res = float(np.linalg.norm(r))
    # restart from the true residual if round-off lets the recursive one drift
    while res > target and k < max_iters:
        p = r.copy()
        rs = res * res
        while np.sqrt(rs) > target and k < max_iters:
            Mp = apply_M(p)
            pMp = float(p @ Mp)
            if pMp <= 0.0:
                break
            step = rs / pMp
            x += step * p
            r -= step * Mp
            rs_new = float(r @ r)
            p = r + (rs_new / rs) * p
            rs = rs_new
            k += 1
        r = b - apply_M(x)
        new_res = float(np.linalg.norm(r))
        if new_res >= res:
            res = new_res
            break
        res = new_res
    return CGResult(x, k, res, res <= target)
