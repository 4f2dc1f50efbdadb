"""Regional adversarial training: region sampler, distance-aware labels, train steps.

A PGD path gives a first and an end adversarial point per benign sample. Each
training point is drawn on the ray from the benign sample through a random
point of the segment between them, at a scale ``s`` picked from a candidate
set; its soft label keeps confidence ``beta`` on the true class, with ``beta``
falling linearly as ``s`` grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, first_end_points, pgd
from .engine import MlpModel, SgdState, backward, one_hot, sgd_step


@dataclass(frozen=True)
class RatConfig:
    scales: tuple[float, ...] = tuple(round(0.1 * i, 10) for i in range(21))
    samples_per_point: int = 2
    beta_max: float = 1.0
    beta_min: float = 0.1
    # Collapse the segment onto the end point; together with scales=(1,) and
    # beta_max=beta_min=1 this is plain PGD adversarial training.
    force_end_point: bool = False

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales:
            raise ValueError("scale set must be nonempty")
        if any(b < a for a, b in zip(scales, scales[1:])):
            raise ValueError("scale set must be sorted ascending")
        if scales[0] < 0:
            raise ValueError("scales must be nonnegative")
        if scales[-1] <= 0:
            raise ValueError("max scale must be positive")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be >= 1")
        if not 0 < self.beta_max <= 1:
            raise ValueError(f"beta_max must lie in (0, 1], got {self.beta_max}")
        if not 0 <= self.beta_min <= self.beta_max:
            raise ValueError(
                f"beta_min ({self.beta_min}) must lie in [0, beta_max ({self.beta_max})]"
            )

    @property
    def max_scale(self) -> float:
        return self.scales[-1]


@dataclass
class PerturbedSample:
    """A batch of sampled training points with the draws that produced them."""

    x_hat: np.ndarray  # [k, d]
    lam: np.ndarray  # [k]
    scale: np.ndarray  # [k]
    clipped: np.ndarray  # [k] bool


@dataclass
class SoftLabel:
    probs: np.ndarray  # [k, c]
    beta: np.ndarray  # [k]


@dataclass
class StepMetrics:
    loss: float
    pgd_fail_frac: float = 0.0
    mean_s: float = 0.0
    mean_beta: float = 1.0
    n_points: int = 0
    extras: dict = field(default_factory=dict)


def sample_direction(x_first, x_end, rng: np.random.Generator, lam=None):
    """``x_bar = lam * x_first + (1 - lam) * x_end`` with one ``lam ~ U(0, 1)`` per row."""
    x_first = np.asarray(x_first)
    x_end = np.asarray(x_end)
    if x_first.shape != x_end.shape:
        raise ValueError(f"shape mismatch: {x_first.shape} vs {x_end.shape}")
    if lam is None:
        lam = rng.random(x_first.shape[0])
    lam = np.asarray(lam, dtype=np.float64)
    lam_c = lam.astype(x_end.dtype)[:, None]
    # written as an offset from x_end so a degenerate segment returns x_end exactly
    x_bar = x_end + lam_c * (x_first - x_end)
    return x_bar, lam


def sample_perturbed(x, x_bar, lam, cfg: RatConfig, rng: np.random.Generator, scale=None) -> PerturbedSample:
    """``x_hat = clip01(x + s * (x_bar - x))`` with ``s`` uniform over the scale set.

    No epsilon-ball projection: for ``s > 1`` the region extends past the ball.
    """
    x = np.asarray(x)
    x_bar = np.asarray(x_bar)
    if x.shape != x_bar.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_bar.shape}")
    if scale is None:
        scale = np.asarray(cfg.scales)[rng.integers(0, len(cfg.scales), size=x.shape[0])]
    scale = np.asarray(scale, dtype=np.float64)
    raw = x + scale.astype(x.dtype)[:, None] * (x_bar - x)
    x_hat = np.clip(raw, 0, 1)
    clipped = np.any(x_hat != raw, axis=1)
    return PerturbedSample(x_hat, np.asarray(lam, dtype=np.float64), scale, clipped)


def dls_beta(s, cfg: RatConfig):
    """``beta = beta_max - s * (beta_max - beta_min) / S``."""
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0) or np.any(s_arr > cfg.max_scale):
        raise ValueError(f"scale must lie in [0, {cfg.max_scale}], got {s}")
    beta = cfg.beta_max - s_arr * (cfg.beta_max - cfg.beta_min) / cfg.max_scale
    return float(beta) if beta.ndim == 0 else beta


def dls_label(y, num_classes: int, beta, dtype=np.float64) -> SoftLabel:
    """True class gets ``beta``, every other class ``(1 - beta) / (c - 1)``."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    y = np.atleast_1d(np.asarray(y))
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), y.shape)
    if np.any(beta < 0) or np.any(beta > 1):
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    off = (1.0 - beta) / (num_classes - 1)
    probs = np.repeat(off[:, None], num_classes, axis=1)
    probs[np.arange(len(y)), y] = beta
    return SoftLabel(probs.astype(dtype), beta.copy())


def ars_sample(x, y, path, cfg: RatConfig, rng: np.random.Generator, num_classes: int):
    """Draw ``m`` training points and soft labels per benign sample.

    Output rows are ordered sample-major within each draw: row ``j * n + i`` is
    the ``j``-th draw for benign sample ``i``. ``lam`` and ``s`` are redrawn
    independently for every row. Returns ``(PerturbedSample, SoftLabel, found)``.
    """
    x = np.asarray(x, dtype=path.benign.dtype)
    y = np.asarray(y)
    x_first, x_end, found = first_end_points(path)
    if cfg.force_end_point:
        x_first = x_end
    m = cfg.samples_per_point
    xs = np.concatenate([x] * m)
    ys = np.concatenate([y] * m)
    x_bar, lam = sample_direction(np.concatenate([x_first] * m), np.concatenate([x_end] * m), rng)
    sample = sample_perturbed(xs, x_bar, lam, cfg, rng)
    label = dls_label(ys, num_classes, dls_beta(sample.scale, cfg), dtype=x.dtype)
    return sample, label, found


def st_train_step(model: MlpModel, x, y, sgd_state: SgdState) -> StepMetrics:
    """Plain cross-entropy step on the clean batch."""
    targets = one_hot(y, model.num_classes, model.layers[0].weights.dtype)
    grads = backward(model, x, targets)
    sgd_step(model, grads, sgd_state)
    return StepMetrics(grads.loss, 0.0, 0.0, 1.0, len(y))


def sat_train_step(model: MlpModel, x, y, attack_cfg: AttackConfig, sgd_state: SgdState,
                   rng: np.random.Generator) -> StepMetrics:
    """One PGD adversarial training step on the end points x'_K with one-hot labels."""
    path = pgd(model, x, y, attack_cfg, rng)
    targets = one_hot(y, model.num_classes, model.layers[0].weights.dtype)
    grads = backward(model, path.end_point, targets)
    sgd_step(model, grads, sgd_state)
    fail = float(np.mean(path.first_adv_index < 0))
    return StepMetrics(grads.loss, fail, 1.0, 1.0, len(y))


def rat_train_step(model: MlpModel, x, y, attack_cfg: AttackConfig, rat_cfg: RatConfig,
                   sgd_state: SgdState, rng: np.random.Generator,
                   sample_rng: np.random.Generator | None = None) -> StepMetrics:
    """One regional adversarial training step.

    A single PGD run per benign point; ``n * m`` sampled points are then
    trained on jointly, so the loss is the mean over all ``n * m`` rows.
    Attack random starts come from ``rng``, region draws from ``sample_rng``
    (defaults to ``rng``, drawn after the attack).
    """
    sample_rng = rng if sample_rng is None else sample_rng
    path = pgd(model, x, y, attack_cfg, rng)
    sample, label, found = ars_sample(x, y, path, rat_cfg, sample_rng, model.num_classes)
    grads = backward(model, sample.x_hat, label.probs)
    sgd_step(model, grads, sgd_state)
    return StepMetrics(
        grads.loss,
        float(np.mean(~found)),
        float(sample.scale.mean()),
        float(label.beta.mean()),
        len(y),
        {"clipped_frac": float(sample.clipped.mean())},
    )
