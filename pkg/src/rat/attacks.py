"""White-box l-infinity attacks: FGSM, trajectory-recording PGD and CW-margin PGD.

All attacks are batched: ``x`` is ``[n, d]`` in [0, 1] and ``y`` holds ``n``
class indices. Gradients are taken of the per-sample loss, so the step
direction of one sample never depends on the batch size.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .engine import MlpModel, backprop, cross_entropy_logit_grad, forward, one_hot, predict

LOSS_KINDS = ("cross_entropy", "cw_margin")

# Benign points attacked by pgd()/cw_pgd(), keyed by function name. Used to
# audit the one-attack-per-point training cost.
ATTACK_COUNTER: Counter = Counter()


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: float
    iterations: int = 10
    random_start: bool = True
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class AttackPath:
    """Recorded PGD trajectory for a batch.

    ``points[t]`` is the iterate after step ``t + 1`` (so ``points[-1]`` is the
    end point x'_K); ``success[t]`` flags misclassification of that iterate.
    ``first_adv_index[i]`` is the smallest ``t`` with ``success[t, i]``, or -1.
    """

    points: np.ndarray  # [K, n, d]
    success: np.ndarray  # [K, n] bool
    first_adv_index: np.ndarray  # [n] int, -1 when the attack never succeeded
    benign: np.ndarray  # [n, d]
    labels: np.ndarray  # [n]

    @property
    def end_point(self) -> np.ndarray:
        return self.points[-1]

    @property
    def iterations(self) -> int:
        return self.points.shape[0]


def _margin_logit_grad(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of max_{i != y} z_i - z_y w.r.t. the logits."""
    n = logits.shape[0]
    masked = logits.copy()
    masked[np.arange(n), y] = -np.inf
    runner_up = np.argmax(masked, axis=1)
    g = np.zeros_like(logits)
    g[np.arange(n), runner_up] = 1
    g[np.arange(n), y] -= 1
    return g


def margin_loss(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = logits.shape[0]
    masked = logits.astype(np.float64)
    true = masked[np.arange(n), y].copy()
    masked[np.arange(n), y] = -np.inf
    return masked.max(axis=1) - true


def input_gradient(model: MlpModel, x: np.ndarray, y: np.ndarray, loss_kind="cross_entropy"):
    """Per-sample loss gradient w.r.t. the input, together with the logits at ``x``."""
    logits, cache = forward(model, x, return_cache=True)
    if loss_kind == "cross_entropy":
        dlogits = cross_entropy_logit_grad(logits, one_hot(y, logits.shape[1], logits.dtype))
    else:
        dlogits = _margin_logit_grad(logits, y)
    _, gx = backprop(model, cache, dlogits, need_params=False)
    return gx, logits


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the epsilon-ball around ``x``, then clip to [0, 1]."""
    eps = x.dtype.type(epsilon)
    out = np.clip(x_adv, x - eps, x + eps)
    return np.clip(out, 0, 1, out=out)


def _signed_step(x_adv, x, grad, alpha, epsilon):
    # np.sign maps exact zeros to 0, so zero-gradient coordinates stay put
    return project(x_adv + x.dtype.type(alpha) * np.sign(grad), x, epsilon)


def random_start(x: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the epsilon-ball intersected with [0, 1]^d."""
    eps = x.dtype.type(epsilon)
    lo = np.maximum(x - eps, 0)
    hi = np.minimum(x + eps, 1)
    u = rng.random(x.shape, dtype=np.float64).astype(x.dtype)
    return project(lo + u * (hi - lo), x, epsilon)


def _run(model, x, y, cfg: AttackConfig, rng, record: bool):
    x = np.asarray(x, dtype=model.layers[0].weights.dtype)
    y = np.asarray(y)
    if cfg.random_start:
        if rng is None:
            raise ValueError("random_start requires an rng")
        x_adv = random_start(x, cfg.epsilon, rng)
    else:
        x_adv = x.copy()
    points, success = [], []
    grad, _ = input_gradient(model, x_adv, y, cfg.loss_kind)
    for t in range(cfg.iterations):
        x_adv = _signed_step(x_adv, x, grad, cfg.alpha, cfg.epsilon)
        if record or t < cfg.iterations - 1:
            # one forward/backward serves both this iterate's success flag and the next step
            grad, logits = input_gradient(model, x_adv, y, cfg.loss_kind)
        if record:
            points.append(x_adv)
            success.append(predict(logits) != y)
    return x, y, x_adv, points, success


def pgd(model: MlpModel, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> AttackPath:
    """Sign-gradient ascent with per-step projection, recording every iterate."""
    ATTACK_COUNTER["pgd"] += len(y)
    x, y, _, points, success = _run(model, x, y, cfg, rng, record=True)
    success = np.stack(success)
    first = np.where(success.any(axis=0), success.argmax(axis=0), -1)
    return AttackPath(np.stack(points), success, first, x, y)


def cw_pgd(model: MlpModel, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """PGD on the untargeted CW margin ``max_{i != y} z_i - z_y`` (kappa = 0); returns x'_K."""
    ATTACK_COUNTER["cw_pgd"] += len(y)
    margin_cfg = AttackConfig(cfg.epsilon, cfg.alpha, cfg.iterations, cfg.random_start, "cw_margin")
    return _run(model, x, y, margin_cfg, rng, record=False)[2]


def pgd_end_point(model: MlpModel, x, y, cfg: AttackConfig, rng=None) -> np.ndarray:
    """Final PGD iterate without storing the trajectory (evaluation helper)."""
    ATTACK_COUNTER["pgd"] += len(y)
    return _run(model, x, y, cfg, rng, record=False)[2]


def fgsm(model: MlpModel, x, y, epsilon: float) -> np.ndarray:
    """``clip01(x + epsilon * sign(grad))``; identical to PGD with K=1, alpha=epsilon, no random start."""
    x = np.asarray(x, dtype=model.layers[0].weights.dtype)
    grad, _ = input_gradient(model, x, np.asarray(y))
    return _signed_step(x.copy(), x, grad, epsilon, epsilon)


def first_end_points(path: AttackPath):
    """First and end adversarial points per sample.

    Returns ``(x_first, x_end, found)``. Where the attack never succeeded,
    ``x_first`` falls back to the end point, collapsing the segment to the
    single end-point direction.
    """
    x_end = path.end_point
    found = path.first_adv_index >= 0
    idx = np.where(found, path.first_adv_index, path.iterations - 1)
    x_first = path.points[idx, np.arange(path.points.shape[1])]
    return x_first, x_end, found
