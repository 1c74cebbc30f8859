"""Denoising training of learned proximal networks.

Training runs an optional pretraining phase (l1 by default) followed by the
proximal-matching stages of a gamma schedule. Every iteration draws a fresh
batch ``y = x + sigma * v`` and takes one Adam step followed by clipping of
the nonnegative weights.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._alloc import keep_heap_pages
from .icnn import IcnnArch, IcnnParams, clip_nonneg, init_params, param_grad_through_lpn
from .losses import loss_l1, loss_l2, loss_pm

__all__ = [
    "AdamState", "DataSource", "GammaSchedule", "LogRow", "TrainConfig", "TrainingError",
    "adam_step", "laplacian_config", "load_config", "loss_l1", "loss_l2", "loss_pm",
    "make_batch", "read_log", "save_config", "train", "write_log",
]

logger = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GammaSchedule:
    """Piecewise-constant plan of ``(iterations, gamma, learning_rate)`` stages."""

    stages: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self):
        stages = tuple((int(n), float(g), float(lr)) for n, g, lr in self.stages)
        object.__setattr__(self, "stages", stages)
        for n, g, lr in stages:
            if n < 1 or g <= 0 or lr <= 0:
                raise ValueError(f"invalid stage {(n, g, lr)}")
        gammas = [g for _, g, _ in stages]
        if any(b > a for a, b in zip(gammas, gammas[1:])):
            raise ValueError(f"gamma must be non-increasing across stages, got {gammas}")

    @property
    def total_iters(self) -> int:
        return sum(n for n, _, _ in self.stages)

    @classmethod
    def halving(cls, gamma0: float, iters: int, every: int, lr: float) -> "GammaSchedule":
        """``gamma0`` halved every ``every`` iterations, constant learning rate."""
        stages = []
        g = gamma0
        left = iters
        while left > 0:
            n = min(every, left)
            stages.append((n, g, lr))
            left -= n
            g *= 0.5
        return cls(tuple(stages))


# Proximal-matching plan of the 1-D Laplacian study: (iterations, gamma, lr).
LAPLACIAN_SCHEDULE = GammaSchedule((
    (2000, 0.5, 1e-3),
    (2000, 0.5, 1e-4),
    (4000, 0.4, 1e-4),
    (4000, 0.3, 1e-4),
    (4000, 0.2, 1e-5),
    (4000, 0.1, 1e-5),
    (4000, 0.1, 1e-6),
))


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 1.0
    batch_size: int = 2000
    pretrain: tuple[tuple[int, float], ...] = ((10000, 1e-3), (10000, 1e-4))
    pretrain_loss: str = "l1"
    schedule: GammaSchedule = field(default_factory=GammaSchedule)
    seed: int = 0
    loss_form: str = "unnormalized"
    init_scheme: str = "exp_gaussian"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_loss not in ("l1", "l2"):
            raise ValueError(f"pretrain_loss must be l1 or l2, got {self.pretrain_loss!r}")
        if self.loss_form not in ("normalized", "unnormalized"):
            raise ValueError(f"unknown loss form {self.loss_form!r}")
        pretrain = tuple((int(n), float(lr)) for n, lr in self.pretrain)
        if any(n < 0 or lr <= 0 for n, lr in pretrain):
            raise ValueError(f"invalid pretraining stages {pretrain}")
        object.__setattr__(self, "pretrain", pretrain)
        if not isinstance(self.schedule, GammaSchedule):
            object.__setattr__(self, "schedule", GammaSchedule(self.schedule))

    @property
    def pretrain_iters(self) -> int:
        return sum(n for n, _ in self.pretrain)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = [list(s) for s in self.schedule.stages]
        d["pretrain"] = [list(s) for s in self.pretrain]
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = GammaSchedule(tuple(tuple(s) for s in d["schedule"]))
        if "pretrain" in d:
            d["pretrain"] = tuple(tuple(s) for s in d["pretrain"])
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


def laplacian_config(seed: int = 0, loss: str = "pm", batch_size: int = 2000) -> TrainConfig:
    """Training plan of the Laplacian study for ``loss`` in {l1, l2, pm}.

    l1 and l2 train 10k iterations at 1e-3 then 10k at 1e-4. pm starts from
    the same l1 run and continues with ``LAPLACIAN_SCHEDULE``.
    """
    if loss not in ("l1", "l2", "pm"):
        raise ValueError(f"unknown loss {loss!r}")
    return TrainConfig(
        sigma=1.0,
        batch_size=batch_size,
        pretrain=((10000, 1e-3), (10000, 1e-4)),
        pretrain_loss="l2" if loss == "l2" else "l1",
        schedule=LAPLACIAN_SCHEDULE if loss == "pm" else GammaSchedule(),
        seed=seed,
    )


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


def load_config(path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DataSource:
    """Sampler for clean signals.

    kind ``laplacian`` uses ``mu``/``scale``; ``gaussian_mixture`` uses
    ``means`` (components x dim), ``stds`` and ``weights``; ``file_dataset``
    resamples rows of the ``.npy`` array at ``path``.
    """

    kind: str
    dim: int = 1
    mu: float = 0.0
    scale: float = 1.0
    means: tuple = ()
    stds: tuple = ()
    weights: tuple = ()
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("laplacian", "gaussian_mixture", "file_dataset"):
            raise ValueError(f"unknown data source kind {self.kind!r}")
        if self.kind == "gaussian_mixture":
            means = np.asarray(self.means, dtype=np.float64)
            if means.ndim != 2 or means.shape[1] != self.dim:
                raise ValueError(f"mixture means must have shape (components, {self.dim})")
            if len(self.stds) != means.shape[0]:
                raise ValueError("one std per mixture component required")
        if self.kind == "file_dataset" and self.path is None:
            raise ValueError("file_dataset needs a path")
        if self.kind == "laplacian" and not self.scale > 0:
            raise ValueError("laplacian scale must be positive")

    @classmethod
    def laplacian(cls, mu: float = 0.0, scale: float = 1.0, dim: int = 1) -> "DataSource":
        return cls("laplacian", dim=dim, mu=mu, scale=scale)

    @classmethod
    def gaussian_mixture(cls, means, stds, weights=None) -> "DataSource":
        means = np.asarray(means, dtype=np.float64)
        stds = tuple(float(s) for s in np.broadcast_to(stds, (means.shape[0],)))
        if weights is None:
            weights = (1.0 / means.shape[0],) * means.shape[0]
        return cls("gaussian_mixture", dim=means.shape[1], means=tuple(map(tuple, means)),
                   stds=stds, weights=tuple(float(w) for w in weights))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "laplacian":
            return rng.laplace(self.mu, self.scale, size=(size, self.dim))
        if self.kind == "gaussian_mixture":
            means = np.asarray(self.means)
            w = np.asarray(self.weights)
            comp = rng.choice(len(w), size=size, p=w / w.sum())
            noise = rng.standard_normal((size, self.dim))
            return means[comp] + np.asarray(self.stds)[comp, None] * noise
        data = _load_dataset(self.path)
        if data.shape[1] != self.dim:
            raise ValueError(f"dataset rows have length {data.shape[1]}, expected {self.dim}")
        return data[rng.integers(0, data.shape[0], size=size)]


_DATASETS: dict[str, np.ndarray] = {}


def _load_dataset(path: str) -> np.ndarray:
    if path not in _DATASETS:
        arr = np.load(path).astype(np.float64)
        _DATASETS[path] = arr.reshape(arr.shape[0], -1)
    return _DATASETS[path]


def make_batch(source: DataSource, sigma: float, batch_size: int, rng: np.random.Generator):
    """Clean samples ``x`` and noisy observations ``y = x + sigma * v``, both (batch, dim)."""
    x = source.sample(rng, batch_size)
    y = x + sigma * rng.standard_normal(x.shape)
    return x, y


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, params: IcnnParams, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        z = np.zeros_like(params.theta)
        return cls(z, z.copy(), 0, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: IcnnParams, grad: IcnnParams, lr: float):
    """One bias-corrected Adam update followed by nonnegativity clipping."""
    g = grad.theta
    if g.shape != params.theta.shape or state.first_moment.shape != g.shape:
        raise ValueError("parameter, gradient and optimizer state shapes differ")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return new_state, clip_nonneg(IcnnParams(params.arch, theta))


@dataclass(frozen=True)
class LogRow:
    iteration: int
    stage: str
    gamma: float
    lr: float
    loss: float


def _stages(config: TrainConfig):
    for i, (n, lr) in enumerate(config.pretrain):
        if n > 0:
            yield f"{config.pretrain_loss}:{i}", config.pretrain_loss, n, None, lr
    for i, (n, gamma, lr) in enumerate(config.schedule.stages):
        yield f"pm:{i}", "pm", n, gamma, lr


def train(arch: IcnnArch, config: TrainConfig, source: DataSource, init: IcnnParams | None = None,
          progress_every: int = 0, on_stage_end=None) -> tuple[IcnnParams, list[LogRow]]:
    """Train an LPN on denoising pairs drawn from ``source``.

    Parameters
    ----------
    init
        Starting parameters; defaults to ``init_params(arch, config.seed)``.
    progress_every
        Emit a log message every this many iterations (0 disables).
    on_stage_end
        Optional ``callback(label, params)`` run after each stage.

    Returns
    -------
    The final parameters and one log row per iteration (loss measured
    before that iteration's update).
    """
    if not 0.0 < arch.alpha < 1.0:
        raise ValueError(f"training needs 0 < alpha < 1, got {arch.alpha}")
    if source.dim != arch.input_dim:
        raise ValueError(f"source dimension {source.dim} does not match network input {arch.input_dim}")
    params = init if init is not None else init_params(arch, config.seed, config.init_scheme)
    params = clip_nonneg(params)
    keep_heap_pages()
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(params, *config.adam_betas, config.adam_eps)
    log: list[LogRow] = []
    it = 0
    for label, kind, n_iters, gamma, lr in _stages(config):
        for _ in range(n_iters):
            x, y = make_batch(source, config.sigma, config.batch_size, rng)
            loss, grad = param_grad_through_lpn(params, x, y, kind, gamma, config.loss_form)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad.theta)):
                raise TrainingError(f"non-finite loss at iteration {it} (stage {label}, gamma={gamma}, lr={lr})")
            state, params = adam_step(state, params, grad, lr)
            log.append(LogRow(it, label, float("nan") if gamma is None else gamma, lr, loss))
            it += 1
            if progress_every and it % progress_every == 0:
                logger.info("iter %d stage %s loss %.6g", it, label, loss)
        if on_stage_end is not None:
            on_stage_end(label, params)
    return params, log


LOG_COLUMNS = ("iteration", "stage", "gamma", "lr", "loss")


def write_log(log: list[LogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([row.iteration, row.stage, repr(row.gamma), repr(row.lr), repr(row.loss)])


def read_log(path) -> list[LogRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [LogRow(int(r["iteration"]), r["stage"], float(r["gamma"]), float(r["lr"]), float(r["loss"]))
                for r in reader]
