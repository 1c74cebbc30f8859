"""Denoising losses: squared l2, l1 and proximal matching."""
import numpy as np


def loss_pm(residual_norm, gamma: float, dim: int = 1, form: str = "unnormalized"):
    """Proximal-matching penalty of the residual norm.

    ``1 - exp(-r^2/gamma^2)`` in unnormalized form; the normalized form scales
    the exponential by ``(pi gamma^2)^(-dim/2)``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    r = np.asarray(residual_norm, dtype=np.float64)
    e = np.exp(-(r / gamma) ** 2)
    if form == "unnormalized":
        return 1.0 - e
    if form == "normalized":
        return 1.0 - (np.pi * gamma**2) ** (-dim / 2.0) * e
    raise ValueError(f"unknown loss form {form!r}")


def loss_l2(f_out, x):
    f_out, x = np.asarray(f_out, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if f_out.shape != x.shape:
        raise ValueError(f"shape mismatch {f_out.shape} vs {x.shape}")
    return 0.5 * np.sum((f_out - x) ** 2, axis=-1)


def loss_l1(f_out, x):
    f_out, x = np.asarray(f_out, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if f_out.shape != x.shape:
        raise ValueError(f"shape mismatch {f_out.shape} vs {x.shape}")
    return np.sum(np.abs(f_out - x), axis=-1)


def _per_sample_loss(kind: str, f, x, gamma, form):
    """Per-sample loss values and their gradients with respect to ``f``."""
    e = f - x
    if kind == "l2":
        return 0.5 * np.sum(e * e, axis=1), e
    if kind == "l1":
        return np.sum(np.abs(e), axis=1), np.sign(e)
    if kind == "pm":
        if gamma is None:
            raise ValueError("pm loss needs gamma")
        sq = np.sum(e * e, axis=1)
        n = f.shape[1]
        scale = 1.0 if form == "unnormalized" else (np.pi * gamma**2) ** (-n / 2.0)
        ex = scale * np.exp(-sq / gamma**2)
        return 1.0 - ex, (2.0 / gamma**2) * ex[:, None] * e
    raise ValueError(f"unknown loss kind {kind!r}")
