"""Clean/robust accuracy, PGD sweeps, generalization gaps, scale probe, gradient-masking checks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, AttackPath, cw_pgd, fgsm, first_end_points, pgd_end_point
from .data import Dataset
from .engine import MlpModel, forward, one_hot, per_sample_cross_entropy, predict
from .regional import sample_direction

ATTACKS = ("clean", "fgsm", "pgd", "cw")
EVAL_BATCH = 500


@dataclass
class EvalReport:
    clean_accuracy: float
    robust_accuracy: dict[str, float]
    n_evaluated: int


@dataclass
class SweepResult:
    axis: str  # "pgd_iterations" or "pgd_epsilon"
    points: list[tuple[float, float]]


@dataclass
class ProbeRecord:
    scale: float
    loss: float
    adversarial: bool


@dataclass
class ScaleProbe:
    records: list[ProbeRecord]
    lam: float = 0.5


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "not evaluated"
    detail: str = ""
    values: dict = field(default_factory=dict)


def _correct(model, x, y) -> np.ndarray:
    return predict(forward(model, x)) == y


def clean_accuracy(model: MlpModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    hits = 0
    for start in range(0, len(dataset), EVAL_BATCH):
        sl = slice(start, start + EVAL_BATCH)
        hits += int(_correct(model, dataset.inputs[sl], dataset.labels[sl]).sum())
    return hits / len(dataset)


def robust_accuracy(model: MlpModel, dataset: Dataset, attack: str, cfg: AttackConfig,
                    seed: int = 0) -> float:
    """Fraction of samples classified correctly both clean and after the attack.

    Clean misclassifications count as failures, so the result never exceeds
    the clean accuracy. ``attack`` is one of ``clean``, ``fgsm``, ``pgd``, ``cw``.
    """
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}")
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, len(dataset), EVAL_BATCH):
        x = dataset.inputs[start:start + EVAL_BATCH]
        y = dataset.labels[start:start + EVAL_BATCH]
        ok = _correct(model, x, y)
        if attack == "fgsm":
            x_adv = fgsm(model, x, y, cfg.epsilon)
        elif attack == "pgd":
            x_adv = pgd_end_point(model, x, y, cfg, rng)
        elif attack == "cw":
            x_adv = cw_pgd(model, x, y, cfg, rng)
        else:
            x_adv = None
        if x_adv is not None:
            ok &= _correct(model, x_adv, y)
        hits += int(ok.sum())
    return hits / len(dataset)


def evaluate(model: MlpModel, dataset: Dataset, cfg: AttackConfig, seed: int = 0,
             pgd_iterations: int | None = None) -> EvalReport:
    """Clean, FGSM, PGD and CW-margin accuracies at the budget in ``cfg``."""
    pgd_cfg = cfg if pgd_iterations is None else replace(cfg, iterations=pgd_iterations)
    robust = {
        "fgsm": robust_accuracy(model, dataset, "fgsm", cfg, seed),
        "pgd": robust_accuracy(model, dataset, "pgd", pgd_cfg, seed),
        "cw": robust_accuracy(model, dataset, "cw", pgd_cfg, seed),
    }
    return EvalReport(clean_accuracy(model, dataset), robust, len(dataset))


def _check_increasing(values, what):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{what} must be strictly increasing, got {list(values)}")


def sweep_iterations(model, dataset, epsilon, alpha, iterations, seed=0,
                     random_start=True) -> SweepResult:
    _check_increasing(iterations, "iteration counts")
    points = []
    for k in iterations:
        cfg = AttackConfig(epsilon, alpha, int(k), random_start)
        points.append((int(k), robust_accuracy(model, dataset, "pgd", cfg, seed)))
    return SweepResult("pgd_iterations", points)


def sweep_epsilon(model, dataset, epsilons, alpha, iterations, seed=0,
                  random_start=True) -> SweepResult:
    _check_increasing(epsilons, "budgets")
    points = []
    for eps in epsilons:
        cfg = AttackConfig(float(eps), alpha, iterations, random_start)
        points.append((float(eps), robust_accuracy(model, dataset, "pgd", cfg, seed)))
    return SweepResult("pgd_epsilon", points)


def generalization_gaps(model, train_set: Dataset, test_set: Dataset, cfg: AttackConfig,
                        seed: int = 0) -> dict[str, float]:
    """Train-minus-test accuracy, clean and under PGD."""
    out = {
        "standard_train": clean_accuracy(model, train_set),
        "standard_test": clean_accuracy(model, test_set),
        "robust_train": robust_accuracy(model, train_set, "pgd", cfg, seed),
        "robust_test": robust_accuracy(model, test_set, "pgd", cfg, seed),
    }
    out["standard_gap"] = out["standard_train"] - out["standard_test"]
    out["robust_gap"] = out["robust_train"] - out["robust_test"]
    return out


def scale_probe(model: MlpModel, x, y: int, path: AttackPath, scales, lam: float = 0.5,
                index: int = 0) -> ScaleProbe:
    """Loss and attack outcome along one fixed region direction at each scale.

    ``path`` is a PGD path over a batch containing ``x`` at position ``index``.
    Points are ``clip01(x + s * (x_bar - x))`` as in training.
    """
    x_first, x_end, _ = first_end_points(path)
    x = np.asarray(x, dtype=x_end.dtype).reshape(1, -1)
    x_bar, _ = sample_direction(x_first[index:index + 1], x_end[index:index + 1], None, lam=[lam])
    scales = np.asarray(scales, dtype=np.float64)
    pts = np.clip(x + scales.astype(x.dtype)[:, None] * (x_bar - x), 0, 1)
    logits = forward(model, pts)
    labels = np.full(len(scales), y)
    losses = per_sample_cross_entropy(logits, one_hot(labels, model.num_classes, logits.dtype))
    adv = predict(logits) != labels
    records = [ProbeRecord(float(s), float(l), bool(a)) for s, l, a in zip(scales, losses, adv)]
    return ScaleProbe(records, lam)


def obfuscation_report(model: MlpModel, dataset: Dataset, cfg: AttackConfig,
                       epsilons=(0.0, 0.05, 0.1, 0.15, 0.2), strong_iterations: int = 20,
                       tolerance: float = 0.01, seed: int = 0) -> list[CheckResult]:
    """Two white-box sanity checks for gradient masking.

    1. an iterative attack must not be weaker than a one-step attack;
    2. black-box vs white-box comparison is not evaluated here;
    3. accuracy must not rise with the budget (beyond ``tolerance``).
    """
    acc_fgsm = robust_accuracy(model, dataset, "fgsm", cfg, seed)
    acc_pgd = robust_accuracy(model, dataset, "pgd", replace(cfg, iterations=strong_iterations), seed)
    one_step = CheckResult(
        "iterative_stronger_than_one_step",
        "pass" if acc_pgd <= acc_fgsm else "fail",
        f"PGD-{strong_iterations} {acc_pgd:.4f} vs FGSM {acc_fgsm:.4f}",
        {"pgd": acc_pgd, "fgsm": acc_fgsm},
    )
    black_box = CheckResult("white_box_stronger_than_black_box", "not evaluated",
                            "no black-box attack in this toolkit")
    sweep = sweep_epsilon(model, dataset, epsilons, cfg.alpha, cfg.iterations, seed,
                          cfg.random_start)
    accs = [a for _, a in sweep.points]
    monotone = all(b <= a + tolerance for a, b in zip(accs, accs[1:]))
    budget = CheckResult(
        "accuracy_nonincreasing_in_budget",
        "pass" if monotone else "fail",
        ", ".join(f"eps={e:g}: {a:.4f}" for e, a in sweep.points),
        {"epsilons": [e for e, _ in sweep.points], "accuracy": accs},
    )
    return [one_step, black_box, budget]
