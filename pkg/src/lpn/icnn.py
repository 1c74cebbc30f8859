"""Input-convex scalar network and its input-gradient map.

The potential is

    psi(y) = w^T z_K + b + (alpha/2) ||y||^2
    z_1 = g(H_1 y + b_1),   z_k = g(W_k z_{k-1} + H_k y + b_k),  k = 2..K

with softplus ``g(x) = log(1 + exp(beta x)) / beta`` and entrywise nonnegative
``W_k`` and ``w``. The learned proximal network is ``f = grad_y psi``.

All parameters live in one flat float64 vector whose order is also the
checkpoint order: H_1, b_1, W_2, H_2, b_2, ..., W_K, H_K, b_K, w, b.
Every kernel accepts a single point of shape ``(n,)`` or a batch ``(B, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit

from .losses import _per_sample_loss


@dataclass(frozen=True)
class IcnnArch:
    input_dim: int
    hidden_widths: tuple[int, ...]
    alpha: float = 0.01
    beta: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(m) for m in self.hidden_widths))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"hidden widths must be a nonempty list of positive ints, got {self.hidden_widths}")
        if not 0.0 <= self.alpha <= 1.0:
            # the endpoints serve analytic test networks (alpha = 1 with zero
            # weights is the identity prox); training and the inverse-problem
            # guarantees need 0 < alpha < 1.
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    @cached_property
    def _blocks(self) -> tuple[tuple[str, tuple[int, ...], int, int], ...]:
        """(name, shape, offset, size) of every block in storage order."""
        n = self.input_dim
        shapes = []
        prev = None
        for k, m in enumerate(self.hidden_widths, start=1):
            if k > 1:
                shapes.append((f"W{k}", (m, prev)))
            shapes.append((f"H{k}", (m, n)))
            shapes.append((f"b{k}", (m,)))
            prev = m
        shapes.append(("w", (prev,)))
        shapes.append(("b", ()))
        out, offset = [], 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            out.append((name, shape, offset, size))
            offset += size
        return tuple(out)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """(name, shape) of every parameter block in storage order."""
        return [(name, shape) for name, shape, _, _ in self._blocks]

    @cached_property
    def num_params(self) -> int:
        _, _, offset, size = self._blocks[-1]
        return offset + size

    @cached_property
    def _nonneg_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_params, dtype=bool)
        for name, _, offset, size in self._blocks:
            if name.startswith("W") or name == "w":
                mask[offset:offset + size] = True
        mask.flags.writeable = False
        return mask

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "hidden_widths": list(self.hidden_widths),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IcnnArch":
        return cls(int(d["input_dim"]), tuple(d["hidden_widths"]), float(d["alpha"]), float(d["beta"]))


@dataclass(frozen=True, eq=False)
class IcnnParams:
    """Flat parameter vector plus named views into it.

    The same container doubles as a parameter gradient (no sign constraint).
    """

    arch: IcnnArch
    theta: np.ndarray
    _views: dict = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.shape != (self.arch.num_params,):
            raise ValueError(f"expected {self.arch.num_params} parameters, got shape {theta.shape}")
        object.__setattr__(self, "theta", theta)
        views = {name: theta[offset:offset + size].reshape(shape)
                 for name, shape, offset, size in self.arch._blocks}
        object.__setattr__(self, "_views", views)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def H(self, k: int) -> np.ndarray:
        return self._views[f"H{k}"]

    def W(self, k: int) -> np.ndarray:
        return self._views[f"W{k}"]

    def bias(self, k: int) -> np.ndarray:
        return self._views[f"b{k}"]

    @property
    def w(self) -> np.ndarray:
        return self._views["w"]

    @property
    def b(self) -> float:
        return float(self._views["b"])

    def nonneg_mask(self) -> np.ndarray:
        """Boolean mask over ``theta`` selecting the W_k and w entries (read-only)."""
        return self.arch._nonneg_mask

    def replace(self, theta: np.ndarray) -> "IcnnParams":
        return IcnnParams(self.arch, np.array(theta, dtype=np.float64, copy=True))

    def copy(self) -> "IcnnParams":
        return self.replace(self.theta)


ParamGrad = IcnnParams


def zero_params(arch: IcnnArch) -> IcnnParams:
    return IcnnParams(arch, np.zeros(arch.num_params))


def init_params(arch: IcnnArch, seed: int = 0, scheme: str = "exp_gaussian", scale: float | None = None) -> IcnnParams:
    """Random initial parameters.

    Every block is drawn as ``N(0, 1) / sqrt(fan_in)`` (or ``* scale`` when
    given). With ``scheme="exp_gaussian"`` the nonnegative blocks are then
    exponentiated, otherwise they are clipped at zero.
    """
    if scheme not in ("gaussian", "exp_gaussian"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    blocks = []
    for name, shape in arch.layout():
        if name.startswith("b"):
            blocks.append(np.zeros(int(np.prod(shape))))
            continue
        fan_in = shape[-1] if name != "w" else shape[0]
        s = scale if scale is not None else 1.0 / np.sqrt(fan_in)
        block = s * rng.standard_normal(shape)
        if name.startswith("W") or name == "w":
            if scheme == "exp_gaussian":
                # dividing by fan-in keeps layer outputs O(1) after exponentiation
                block = np.exp(block) / fan_in
            else:
                block = np.maximum(block, 0.0)
        blocks.append(block.ravel())
    return IcnnParams(arch, np.concatenate(blocks))


def clip_nonneg(params: IcnnParams) -> IcnnParams:
    """Project W_k and w onto the nonnegative orthant; other blocks untouched."""
    theta = params.theta.copy()
    mask = params.nonneg_mask()
    theta[mask] = np.maximum(theta[mask], 0.0)
    return IcnnParams(params.arch, theta)


# softplus and its derivatives, overflow-safe for large |beta x|

def softplus(x, beta):
    return np.logaddexp(0.0, beta * x) / beta


def softplus_d1(x, beta):
    return expit(beta * x)


def softplus_d2(x, beta):
    return beta * expit(beta * x) * expit(-beta * x)


def _softplus_parts(a, beta):
    """g(a), g'(a), g''(a) sharing a single exp(-|beta a|)."""
    t = beta * a
    # exp(-60) ~ 1e-26 is already negligible next to 1; clamping keeps exp and
    # everything downstream out of the subnormal range, which is very slow
    e = np.exp(-np.minimum(np.abs(t), 60.0))
    inv = 1.0 / (1.0 + e)
    z = (np.maximum(t, 0.0) + np.log1p(e)) / beta
    s = np.where(t >= 0.0, inv, e * inv)
    gpp = beta * e * inv * inv
    return z, s, gpp


def _as_batch(params: IcnnParams, y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    if y2.ndim != 2 or y2.shape[1] != params.arch.input_dim:
        raise ValueError(f"expected input of length {params.arch.input_dim}, got shape {y.shape}")
    return y2, single


def _forward(params: IcnnParams, y: np.ndarray):
    """Per-layer pre-activations, activations, g' and g'' for a batch (rows are samples)."""
    beta = params.arch.beta
    pre, act, gp, gpp = [], [], [], []
    z = None
    for k in range(1, params.arch.depth + 1):
        a = y @ params.H(k).T + params.bias(k)
        if k > 1:
            a += z @ params.W(k).T
        z, s, s2 = _softplus_parts(a, beta)
        pre.append(a)
        act.append(z)
        gp.append(s)
        gpp.append(s2)
    return pre, act, gp, gpp


def _backward_deltas(params: IcnnParams, gp):
    """delta_k = d psi / d a_k, from the top layer down."""
    K = params.arch.depth
    deltas = [None] * K
    deltas[K - 1] = params.w * gp[K - 1]
    for k in range(K, 1, -1):
        deltas[k - 2] = (deltas[k - 1] @ params.W(k)) * gp[k - 2]
    return deltas


def _collect(params: IcnnParams, deltas):
    out = deltas[0] @ params.H(1)
    for k in range(2, params.arch.depth + 1):
        out += deltas[k - 1] @ params.H(k)
    return out


def psi(params: IcnnParams, y, plain: bool = False):
    """Potential value; includes ``(alpha/2)||y||^2`` unless ``plain``."""
    y2, single = _as_batch(params, y)
    _, act, _, _ = _forward(params, y2)
    out = act[-1] @ params.w + params.b
    if not plain:
        out = out + 0.5 * params.arch.alpha * np.sum(y2 * y2, axis=1)
    return out[0] if single else out


def lpn_forward(params: IcnnParams, y, plain: bool = False):
    """``grad psi(y) + alpha y`` by an analytic backward pass."""
    y2, single = _as_batch(params, y)
    _, _, gp, _ = _forward(params, y2)
    f = _collect(params, _backward_deltas(params, gp))
    if not plain:
        f += params.arch.alpha * y2
    return f[0] if single else f


def _tangent(params: IcnnParams, v, gp):
    """Forward-mode tangents of the pre-activations and activations along ``v``."""
    adot, zdot = [], []
    zd = None
    for k in range(1, params.arch.depth + 1):
        ad = v @ params.H(k).T
        if k > 1:
            ad += zd @ params.W(k).T
        zd = gp[k - 1] * ad
        adot.append(ad)
        zdot.append(zd)
    return adot, zdot


def directional_derivative(params: IcnnParams, y, v):
    """Exact Jacobian-vector product ``J_f(y) v`` (forward mode over the gradient pass)."""
    y2, single = _as_batch(params, y)
    v2, _ = _as_batch(params, v)
    v2 = np.broadcast_to(v2, y2.shape)
    K = params.arch.depth
    _, _, gp, gpp = _forward(params, y2)
    deltas = _backward_deltas(params, gp)
    adot, _ = _tangent(params, v2, gp)

    ddot = [None] * K
    ddot[K - 1] = params.w * gpp[K - 1] * adot[K - 1]
    for k in range(K, 1, -1):
        back = deltas[k - 1] @ params.W(k)
        ddot[k - 2] = (ddot[k - 1] @ params.W(k)) * gp[k - 2] + back * gpp[k - 2] * adot[k - 2]

    out = _collect(params, ddot) + params.arch.alpha * v2
    return out[0] if single else out


def lpn_jacobian(params: IcnnParams, y) -> np.ndarray:
    """Dense Jacobian of ``f`` at a single point, one basis direction per column."""
    y = np.asarray(y, dtype=np.float64)
    n = params.arch.input_dim
    if y.shape != (n,):
        raise ValueError(f"expected a single point of length {n}, got shape {y.shape}")
    if n > 256:
        raise ValueError(f"dense Jacobian limited to n <= 256, got {n}")
    cols = directional_derivative(params, np.broadcast_to(y, (n, n)), np.eye(n))
    return cols.T


def param_grad_through_lpn(params: IcnnParams, x, y, loss_kind: str = "l2", gamma: float | None = None,
                           form: str = "unnormalized") -> tuple[float, IcnnParams]:
    """Mean denoising loss ``loss(f(y_i), x_i)`` and its exact parameter gradient.

    The gradient of ``loss(f(y))`` equals the parameter gradient of the
    directional derivative ``D = r^T grad_y psi(y)`` with ``r = dloss/df``
    held fixed. ``D`` is computed by a forward-mode tangent pass and then
    differentiated by reverse mode through both the primal and tangent
    streams.
    """
    x2, _ = _as_batch(params, x)
    y2, _ = _as_batch(params, y)
    if x2.shape != y2.shape:
        raise ValueError(f"x and y batches differ: {x2.shape} vs {y2.shape}")
    B = y2.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    arch = params.arch
    K = arch.depth

    _, act, gp, gpp = _forward(params, y2)
    f = _collect(params, _backward_deltas(params, gp)) + arch.alpha * y2
    losses, r = _per_sample_loss(loss_kind, f, x2, gamma, form)
    r = r / B
    adot, zdot = _tangent(params, r, gp)

    grad = IcnnParams(arch, np.zeros(arch.num_params))
    grad["w"][...] = zdot[-1].sum(axis=0)
    # p: adjoint of zdot_k, q: adjoint of z_k (zero at the top: D reads only zdot_K)
    p = np.broadcast_to(params.w, (B, params.w.shape[0]))
    q = None
    for k in range(K, 0, -1):
        P = p * gp[k - 1]
        Q = p * gpp[k - 1] * adot[k - 1]
        if q is not None:
            Q += q * gp[k - 1]
        grad.H(k)[...] = P.T @ r + Q.T @ y2
        grad.bias(k)[...] = Q.sum(axis=0)
        if k > 1:
            grad.W(k)[...] = P.T @ zdot[k - 2] + Q.T @ act[k - 2]
            p = P @ params.W(k)
            q = Q @ params.W(k)
    return float(losses.mean()), grad
