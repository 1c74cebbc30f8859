"""Recover the regularizer implied by an LPN.

For ``f = grad psi(.; alpha)`` the regularizer satisfies

    R(f(y)) = <y, f(y)> - 1/2 ||f(y)||^2 - psi(y; alpha)

so evaluating ``R(x)`` at an arbitrary point needs a preimage ``y`` with
``f(y) = x``. Because ``psi(.; alpha)`` is alpha-strongly convex that preimage
is the unique minimizer of ``psi(y; alpha) - <x, y>``, whose gradient is
exactly ``f(y) - x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .icnn import IcnnParams, directional_derivative, lpn_forward, psi

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 10_000


@dataclass
class InversionResult:
    y_hat: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass
class PriorEval:
    value: float
    inversion: InversionResult


@dataclass
class PriorCurve:
    """Regularizer values over a set of points, shifted so the minimum is 0."""

    points: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.converged))


def _rows(params: IcnnParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    x2 = np.atleast_1d(x)[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.arch.input_dim:
        raise ValueError(f"expected points of length {params.arch.input_dim}, got shape {x.shape}")
    return x2, single


def _rownorm(a):
    return np.sqrt(np.sum(a * a, axis=1))


def _batched_cg(matvec, b, rtol, max_iters):
    """Row-wise CG for independent SPD systems ``M_i d_i = b_i``."""
    d = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r, axis=1)
    target = (rtol * _rownorm(b)) ** 2
    for _ in range(max_iters):
        active = rs > target
        if not active.any():
            break
        Mp = matvec(p)
        pMp = np.sum(p * Mp, axis=1)
        step = np.where(active & (pMp > 0), rs / np.where(pMp > 0, pMp, 1.0), 0.0)
        d += step[:, None] * p
        r -= step[:, None] * Mp
        rs_new = np.sum(r * r, axis=1)
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta[:, None] * p
        rs = rs_new
    return d


def _invert_newton(params, x, y0, tol, max_iters):
    y = y0.copy()
    r = lpn_forward(params, y) - x
    res = _rownorm(r)
    iters = np.zeros(len(x), dtype=int)
    stuck = np.zeros(len(x), dtype=bool)
    n = params.arch.input_dim
    for _ in range(max_iters):
        active = (res > tol) & ~stuck
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ya, ra = y[idx], r[idx]
        forcing = np.minimum(0.1, np.sqrt(res[idx]))
        d = _batched_cg(lambda v: directional_derivative(params, ya, v), -ra, forcing, 2 * n + 10)
        # backtrack on the gradient norm ||f(y) - x||, which is what must reach tol
        t = np.ones(len(idx))
        base = res[idx]
        pending = np.ones(len(idx), dtype=bool)
        y_new, r_new, res_new = ya.copy(), ra.copy(), base.copy()
        for _ in range(60):
            if not pending.any():
                break
            cand = ya[pending] + t[pending, None] * d[pending]
            rc = lpn_forward(params, cand) - x[idx[pending]]
            nc = _rownorm(rc)
            ok = nc <= (1.0 - 1e-4 * t[pending]) * base[pending]
            sel = np.flatnonzero(pending)
            good = sel[ok]
            y_new[good], r_new[good], res_new[good] = cand[ok], rc[ok], nc[ok]
            pending[good] = False
            t[sel[~ok]] *= 0.5
        y[idx], r[idx], res[idx] = y_new, r_new, res_new
        iters[idx] += 1
        # no acceptable step: round-off floor reached, stop iterating these rows
        stuck[idx[pending]] = True
    return y, res, iters


def _invert_gd(params, x, y0, tol, max_iters):
    """Gradient descent with Armijo backtracking on psi(y; alpha) - <x, y>.

    Near the solution the objective decrease falls below round-off, so a step
    that stays within round-off of the objective and shrinks ``||f(y) - x||``
    is accepted as well.
    """
    y = y0.copy()
    obj = lambda yy, xx: psi(params, yy) - np.sum(xx * yy, axis=1)
    r = lpn_forward(params, y) - x
    res = _rownorm(r)
    val = obj(y, x)
    step = np.ones(len(x))
    iters = np.zeros(len(x), dtype=int)
    stuck = np.zeros(len(x), dtype=bool)
    eps = np.finfo(np.float64).eps
    for _ in range(max_iters):
        active = (res > tol) & ~stuck
        if not active.any():
            break
        idx = np.flatnonzero(active)
        s = step[idx] * 2.0
        done = np.zeros(len(idx), dtype=bool)
        for _ in range(60):
            cand = y[idx] - s[:, None] * r[idx]
            vc = obj(cand, x[idx])
            rc = lpn_forward(params, cand) - x[idx]
            nc = _rownorm(rc)
            slack = 64 * eps * (np.abs(val[idx]) + 1.0)
            ok = (vc <= val[idx] - 0.5 * s * res[idx] ** 2) | ((vc <= val[idx] + slack) & (nc < res[idx]))
            done |= ok
            if done.all():
                break
            s = np.where(done, s, 0.5 * s)
        take = idx[done]
        y[take], val[take], step[take] = cand[done], vc[done], s[done]
        r[take], res[take] = rc[done], nc[done]
        iters[idx] += 1
        stuck[idx[~done]] = True
    return y, res, iters


def invert_convex_batch(params: IcnnParams, x, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                        y0=None, method: str = "newton"):
    """Preimages of many points at once; returns (y_hat, residual, iterations, converged) arrays."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x2, _ = _rows(params, x)
    if y0 is None:
        # f(y) ~ alpha y far out; x itself is a reasonable start for trained networks
        start = x2.copy()
    else:
        start, _ = _rows(params, y0)
        start = start.copy()
    if method == "newton":
        y, res, iters = _invert_newton(params, x2, start, tol, max_iters)
    elif method == "gd":
        y, res, iters = _invert_gd(params, x2, start, tol, max_iters)
    else:
        raise ValueError(f"unknown inversion method {method!r}")
    return y, res, iters, res <= tol


def invert_convex(params: IcnnParams, x, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                  y0=None, method: str = "newton") -> InversionResult:
    """Solve ``f(y) = x`` by minimizing the strongly convex ``psi(y; alpha) - <x, y>``.

    ``method="newton"`` takes Newton steps (Hessian solves by CG on exact
    Jacobian-vector products) with backtracking on ``||f(y) - x||``;
    ``method="gd"`` is plain gradient descent with Armijo backtracking on the
    objective. Either way the stopping rule is ``||f(y) - x|| <= tol``.
    """
    y, res, iters, conv = invert_convex_batch(params, x, tol, max_iters, y0, method)
    return InversionResult(y[0], float(res[0]), int(iters[0]), bool(conv[0]))


def invert_nonconvex(params: IcnnParams, x, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                     y0=None) -> InversionResult:
    """Solve ``f(y) = x`` by gradient descent on ``1/2 ||f(y) - x||^2``.

    The gradient ``J^T r`` equals ``J r`` since the Jacobian is symmetric.
    Steps follow the Barzilai-Borwein rule, safeguarded by backtracking on the
    residual. No global guarantee; the achieved residual is reported.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x2, _ = _rows(params, x)
    x1 = x2[0]
    y = x1.copy() if y0 is None else np.asarray(y0, dtype=np.float64).copy()
    r = lpn_forward(params, y) - x1
    res = float(np.linalg.norm(r))
    g = directional_derivative(params, y, r)
    step = 1.0
    it = 0
    while res > tol and it < max_iters:
        s = step
        for _ in range(60):
            cand = y - s * g
            rc = lpn_forward(params, cand) - x1
            nc = float(np.linalg.norm(rc))
            if nc * nc <= res * res - 1e-4 * s * float(g @ g):
                break
            s *= 0.5
        else:
            break
        gc = directional_derivative(params, cand, rc)
        dy, dg = cand - y, gc - g
        denom = float(dy @ dg)
        step = float(dy @ dy) / denom if denom > 0 else 2.0 * s
        y, r, res, g = cand, rc, nc, gc
        it += 1
    return InversionResult(y, res, it, res <= tol)


def prior_at_image(params: IcnnParams, y):
    """``R(f(y))`` straight from a preimage ``y``, no inversion needed."""
    y2, single = _rows(params, y)
    f = lpn_forward(params, y2)
    val = np.sum(y2 * f, axis=1) - 0.5 * np.sum(f * f, axis=1) - psi(params, y2)
    return float(val[0]) if single else val


def _value_from_preimage(params, y, x):
    return np.sum(y * x, axis=1) - 0.5 * np.sum(x * x, axis=1) - psi(params, y)


def eval_prior(params: IcnnParams, x, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
               y0=None) -> PriorEval:
    """``R(x) = <y, x> - 1/2 ||x||^2 - psi(y; alpha)`` at the preimage ``y`` of ``x``.

    A failed inversion is reported through ``inversion.converged``; the value
    is still computed from the best iterate.
    """
    x2, _ = _rows(params, x)
    inv = invert_convex(params, x2[0], tol, max_iters, y0)
    value = float(_value_from_preimage(params, inv.y_hat[None, :], x2)[0])
    return PriorEval(value, inv)


def eval_prior_batch(params: IcnnParams, xs, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                     y0=None):
    """Unnormalized ``R`` at many points plus the inversion diagnostics."""
    x2, _ = _rows(params, xs)
    y, res, iters, conv = invert_convex_batch(params, x2, tol, max_iters, y0)
    return _value_from_preimage(params, y, x2), res, iters, conv


def eval_prior_curve(params: IcnnParams, xs, tol: float = DEFAULT_TOL,
                     max_iters: int = DEFAULT_MAX_ITERS) -> PriorCurve:
    """Regularizer over ``xs`` with the offset fixed by setting the minimum to 0.

    Scalars in ``xs`` are taken as 1-D points.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("need at least one point")
    if xs.ndim == 1 and params.arch.input_dim == 1:
        xs = xs[:, None]
    raw, res, iters, conv = eval_prior_batch(params, xs, tol, max_iters)
    return PriorCurve(xs, raw - raw.min(), raw, res, iters, conv)
