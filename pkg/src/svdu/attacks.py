"""Input-dependent adversarial attacks: gradient, FGSM, DeepFool.

These are the per-sample attacks the universalizer consumes. Each returns
the raw perturbation vector (no clipping, no normalization) together with
a `fooled` flag re-checked by a fresh forward pass, so downstream code can
trust the flag. Perturbations with norm below ZERO_DIRECTION_TOL are
flagged `zero_direction`; they cannot be normalized into attack directions
and get excluded when stacking the direction matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from svdu import linalg, netcore
from svdu.errors import InputError

ZERO_DIRECTION_TOL = 1e-12


class AttackKind(str, Enum):
    GRADIENT = "gradient"
    FGSM = "fgsm"
    DEEPFOOL = "deepfool"


@dataclass(frozen=True)
class AttackConfig:
    """An attack kind plus its per-kind parameters."""

    kind: AttackKind
    eps: float = 0.1              # FGSM step size
    max_iter: int = 50            # DeepFool iteration cap
    overshoot: float = 0.02       # DeepFool boundary overshoot
    use_predicted_labels: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise InputError("max_iter must be >= 1")
        if self.overshoot < 0:
            raise InputError("overshoot must be >= 0")


@dataclass
class AttackResult:
    perturbation: np.ndarray
    fooled: bool
    iterations: int
    l2_norm: float
    zero_direction: bool = False


def _result(model, x, perturbation, iterations) -> AttackResult:
    norm = float(np.linalg.norm(perturbation))
    zero = norm < ZERO_DIRECTION_TOL
    if zero:
        fooled = False
    else:
        _, before = netcore.forward(model, x)
        _, after = netcore.forward(model, x + perturbation)
        fooled = after != before
    return AttackResult(perturbation, fooled, iterations, norm, zero)


def gradient_attack(model: netcore.MlpModel, x, y: int) -> AttackResult:
    """Perturb along the loss gradient at (x, y), unnormalized."""
    _, grad = netcore.loss_and_input_gradient(model, x, y)
    return _result(model, x, grad, 1)


def fgsm_attack(model: netcore.MlpModel, x, y: int, eps: float) -> AttackResult:
    """eps * sign(grad), with sign(0) = 0; bounded by eps in l-infinity."""
    if eps <= 0:
        raise InputError("fgsm eps must be positive")
    _, grad = netcore.loss_and_input_gradient(model, x, y)
    return _result(model, x, eps * np.sign(grad), 1)


def deepfool_attack(model: netcore.MlpModel, x, max_iter: int = 50,
                    overshoot: float = 0.02) -> AttackResult:
    """Iterative minimal-l2 attack via repeated linearization.

    At each iterate the logit differences against the original class are
    linearized; the step projects onto the nearest face of that polyhedral
    approximation (class l minimizing |df_l| / ||w_l||, stepping
    (|df_l| / ||w_l||^2) w_l where w_l is the Jacobian row difference).
    Stops once the label at x + (1 + overshoot) * sum(steps) changes. If it
    never changes, the accumulated perturbation is returned with
    fooled=False rather than raising.
    """
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    if overshoot < 0:
        raise InputError("overshoot must be >= 0")
    x = linalg.as_vector(x)
    _, orig_label = netcore.forward(model, x)
    k = model.num_classes
    others = [c for c in range(k) if c != orig_label]
    r_total = np.zeros_like(x)
    steps = 0
    for _ in range(max_iter):
        x_t = x + (1.0 + overshoot) * r_total
        logits, label_t = netcore.forward(model, x_t)
        if label_t != orig_label:
            break
        J = netcore.logit_jacobian(model, x_t)
        w = J[others] - J[orig_label]
        df = logits[others] - logits[orig_label]
        w_norms = np.linalg.norm(w, axis=1)
        live = w_norms >= ZERO_DIRECTION_TOL
        if not np.any(live):
            break
        scores = np.where(live, np.abs(df) / np.where(live, w_norms, 1.0), np.inf)
        l = int(np.argmin(scores))
        r_total = r_total + (abs(df[l]) / w_norms[l] ** 2) * w[l]
        steps += 1
    return _result(model, x, (1.0 + overshoot) * r_total, steps)


def run_attack(model: netcore.MlpModel, x, y: int,
               config: AttackConfig) -> AttackResult:
    """Dispatch one sample through the configured attack."""
    if config.use_predicted_labels and config.kind is not AttackKind.DEEPFOOL:
        _, y = netcore.forward(model, x)
    if config.kind is AttackKind.GRADIENT:
        return gradient_attack(model, x, y)
    if config.kind is AttackKind.FGSM:
        return fgsm_attack(model, x, y, config.eps)
    if config.kind is AttackKind.DEEPFOOL:
        return deepfool_attack(model, x, config.max_iter, config.overshoot)
    raise InputError(f"unknown attack kind {config.kind!r}")


def export_attack_results(results: list[AttackResult], kind: AttackKind,
                          matrix_path, csv_path) -> None:
    """Write perturbations as an n x d matrix file plus a CSV sidecar."""
    if not results:
        raise InputError("no attack results to export")
    linalg.save_matrix(matrix_path, np.stack([r.perturbation for r in results]))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "kind", "fooled", "iterations", "l2_norm"])
        for i, r in enumerate(results):
            writer.writerow([i, kind.value, int(r.fooled), r.iterations,
                             repr(float(r.l2_norm))])
