"""Plug-and-play ADMM and proximal gradient with an LPN as the proximal step.

ADMM updates in the order x, u, z::

    x+ = argmin_x 1/2 ||y - A x||^2 + rho/2 ||z - u - x||^2
    u+ = u + x+ - z
    z+ = f(u+ + x+)

PGD iterates ``x+ = f(x - eta A^T (A x - y))``. Convergence of either needs
``rho > ||A^T A||`` and ``0 < eta < 1/||A^T A||``; out-of-range values run
anyway and are flagged in the state metadata.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .icnn import IcnnParams, lpn_forward
from .operators import LinearOperator, cg_solve, op_norm_sq
from .prior import invert_convex_batch, _value_from_preimage


class PnpError(RuntimeError):
    pass


@dataclass(frozen=True)
class PnpConfig:
    """Solver settings; ``rho``/``eta`` left as None default to 1.1 ||A^T A|| and 0.9 / ||A^T A||."""

    rho: float | None = None
    eta: float | None = None
    max_iters: int = 500
    fp_tol: float = 1e-8
    inner_cg_tol: float = 1e-12
    inner_cg_iters: int = 1000
    norm_iters: int = 500
    keep_iterates: bool = True


@dataclass
class PnpState:
    x: np.ndarray
    u: np.ndarray | None = None
    z: np.ndarray | None = None
    history: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    prox_inputs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class KktResiduals:
    primal: float
    dual: float
    prox: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.prox)

    def as_dict(self) -> dict:
        return {"r1_primal": self.primal, "r2_dual": self.dual, "r3_prox": self.prox}


def _h(op, y, x):
    r = op.apply(x) - y
    return 0.5 * float(r @ r)


def _grad_h(op, y, x):
    return op.adjoint(op.apply(x) - y)


def _op_norm(op, config):
    return op_norm_sq(op, iters=config.norm_iters, seed=0, tol=1e-12).value


def admm_step(params: IcnnParams, op: LinearOperator, y, rho: float, x, u, z,
              cg_tol: float = 1e-12, cg_iters: int = 1000):
    """One pass of the x, u, z updates; returns the new triple and the prox input."""
    rhs = op.adjoint(y) + rho * (z - u)
    sol = cg_solve(lambda v: op.normal(v) + rho * v, rhs, tol=cg_tol, max_iters=cg_iters, x0=x)
    if not sol.converged and sol.residual > 1e3 * cg_tol * max(np.linalg.norm(rhs), 1.0):
        raise PnpError(f"x-update CG failed (residual {sol.residual:.3e} after {sol.iterations} iterations)")
    x_new = sol.x
    u_new = u + x_new - z
    v = u_new + x_new
    z_new = lpn_forward(params, v)
    return x_new, u_new, z_new, v


def admm_solve(params: IcnnParams, op: LinearOperator, y, config: PnpConfig = PnpConfig(), x0=None):
    """PnP-ADMM with the LPN as the z-update.

    Stops when both the change of the stacked triple and ``||x - z||`` fall
    to ``fp_tol``, or after ``max_iters``. Returns the final ``x`` and the
    full state with per-iteration history.
    """
    y = np.asarray(y, dtype=np.float64)
    n = op.input_dim
    if params.arch.input_dim != n:
        raise ValueError(f"network input {params.arch.input_dim} does not match operator input {n}")
    norm = _op_norm(op, config)
    rho = 1.1 * norm if config.rho is None else float(config.rho)
    if not rho > 0:
        raise ValueError("rho must be positive")
    meta = {"solver": "admm", "rho": rho, "op_norm_sq": norm, "rho_bound_ok": bool(rho > norm)}
    if not meta["rho_bound_ok"]:
        warnings.warn(f"rho={rho:.4g} does not exceed ||A^T A||={norm:.4g}; convergence is not guaranteed")

    x = op.adjoint(y) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    u = np.zeros(n)
    z = x.copy()
    state = PnpState(x, u, z, meta=meta)
    converged = False
    for k in range(config.max_iters):
        try:
            x1, u1, z1, v = admm_step(params, op, y, rho, x, u, z, config.inner_cg_tol, config.inner_cg_iters)
        except PnpError as exc:
            raise PnpError(f"iteration {k}: {exc}") from exc
        fp = float(np.sqrt(np.sum((x1 - x) ** 2) + np.sum((u1 - u) ** 2) + np.sum((z1 - z) ** 2)))
        primal = float(np.linalg.norm(x1 - z1))
        x, u, z = x1, u1, z1
        state.history.append({"iteration": k + 1, "fp_residual": fp, "primal_residual": primal,
                              "objective_proxy": _h(op, y, x)})
        if config.keep_iterates:
            state.iterates.append(x.copy())
            state.prox_inputs.append(v)
        if fp <= config.fp_tol and primal <= config.fp_tol:
            converged = True
            break
    state.x, state.u, state.z = x, u, z
    state.meta.update(converged=converged, iterations=len(state.history))
    return x, state


def pgd_step(params: IcnnParams, op: LinearOperator, y, eta: float, x):
    v = x - eta * _grad_h(op, y, x)
    return lpn_forward(params, v), v


def pgd_solve(params: IcnnParams, op: LinearOperator, y, config: PnpConfig = PnpConfig(), x0=None):
    """PnP proximal gradient; stops when ``||x_{k+1} - x_k|| <= fp_tol``."""
    y = np.asarray(y, dtype=np.float64)
    n = op.input_dim
    if params.arch.input_dim != n:
        raise ValueError(f"network input {params.arch.input_dim} does not match operator input {n}")
    norm = _op_norm(op, config)
    eta = 0.9 / norm if config.eta is None else float(config.eta)
    if not eta > 0:
        raise ValueError("eta must be positive")
    meta = {"solver": "pgd", "eta": eta, "op_norm_sq": norm, "eta_bound_ok": bool(eta * norm < 1.0)}
    if not meta["eta_bound_ok"]:
        warnings.warn(f"eta={eta:.4g} is not below 1/||A^T A||={1.0 / norm:.4g}; convergence is not guaranteed")

    x = op.adjoint(y) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    state = PnpState(x, meta=meta)
    if config.keep_iterates:
        state.iterates.append(x.copy())
    converged = False
    for k in range(config.max_iters):
        x1, v = pgd_step(params, op, y, eta, x)
        fp = float(np.linalg.norm(x1 - x))
        x = x1
        state.history.append({"iteration": k + 1, "fp_residual": fp, "primal_residual": 0.0,
                              "objective_proxy": _h(op, y, x)})
        if config.keep_iterates:
            state.iterates.append(x.copy())
            state.prox_inputs.append(v)
        if fp <= config.fp_tol:
            converged = True
            break
    state.x = x
    state.meta.update(converged=converged, iterations=len(state.history))
    return x, state


def kkt_residuals(params: IcnnParams, op: LinearOperator, y, state: PnpState, rho: float) -> KktResiduals:
    """Stationarity gaps of an ADMM limit point.

    r1 = ||x - z||, r2 = ||u + A^T (A x - y) / rho||, r3 = ||u - grad R(z)||.
    ``grad R(z)`` comes from the prox identity ``grad R(f(v)) = v - f(v)``
    with ``v = u + x`` the input of the last z-update, so R is never
    differentiated. ``z`` is recomputed as ``f(v)`` so that r3 does not
    depend on how the state was stored.
    """
    y = np.asarray(y, dtype=np.float64)
    x, u, z = state.x, state.u, state.z
    if u is None or z is None:
        raise ValueError("state has no u/z; KKT residuals apply to ADMM states")
    r1 = float(np.linalg.norm(x - z))
    r2 = float(np.linalg.norm(u + _grad_h(op, y, x) / rho))
    v = u + x
    r3 = float(np.linalg.norm(u - (v - lpn_forward(params, v))))
    return KktResiduals(r1, r2, r3)


def pgd_objective_trace(params: IcnnParams, op: LinearOperator, y, state: PnpState, eta: float,
                        tol: float = 1e-12):
    """``h(x_k) + R(x_k) / eta`` along the stored PGD iterates.

    Returns the values and a boolean array flagging iterates whose preimage
    could not be recovered to ``tol``.
    """
    if not state.iterates:
        raise ValueError("state holds no iterates; run the solver with keep_iterates=True")
    y = np.asarray(y, dtype=np.float64)
    X = np.array(state.iterates)
    # x_{k+1} = f(v_k), so v_k is the natural warm start for every iterate but the first
    starts = np.vstack([X[:1], np.array(state.prox_inputs)]) if state.prox_inputs else X.copy()
    starts = starts[:len(X)]
    pre, res, _, conv = invert_convex_batch(params, X, tol=tol, y0=starts)
    R = _value_from_preimage(params, pre, X)
    h = np.array([_h(op, y, x) for x in X])
    return h + R / eta, ~conv


HISTORY_COLUMNS = ("iteration", "fp_residual", "primal_residual", "objective_proxy")


def write_history(state: PnpState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in state.history:
            writer.writerow([row["iteration"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"iteration": int(r["iteration"]), **{c: float(r[c]) for c in HISTORY_COLUMNS[1:]}}
                for r in csv.DictReader(fh)]
