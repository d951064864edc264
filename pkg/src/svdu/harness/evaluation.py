"""Fooling-rate evaluation sweeps over perturbation norms.

A universal direction is judged by the fraction of evaluation points whose
prediction changes under x + s * norm * v, for each norm in a grid and for
both signs of v (the SVD leaves the sign arbitrary, so both are always
measured and the per-norm max is the headline). Error rates against the
true labels ride along, and the set-inclusion inequality
fooling >= error - (1 - accuracy) is asserted on every row.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from svdu import netcore
from svdu.attacks import AttackConfig, AttackKind
from svdu.errors import InputError, InternalError
from svdu.universal import (
    UniversalPerturbation,
    build_attack_matrix,
    mdfff_universal,
    random_direction,
    svd_universal,
)

FLOAT_SLACK = 1e-12
DEFAULT_NORM_PCTS = (2.0, 4.0, 7.1, 14.2, 20.0)


@dataclass
class FoolingRow:
    sign: str          # '+', '-' or 'max'
    norm: float
    norm_pct: float
    fooling_rate: float
    error_rate: float


@dataclass
class FoolingReport:
    perturbation_source: str
    clip_mode: str
    eval_set_size: int
    avg_data_norm: float
    accuracy: float
    norms: list[float]
    rows: list[FoolingRow] = field(default_factory=list)

    def rate_at(self, norm: float, sign: str = "max") -> float:
        for row in self.rows:
            if row.sign == sign and row.norm == norm:
                return row.fooling_rate
        raise InputError(f"no row for norm={norm} sign={sign!r}")


def validate_norm_grid(norms) -> list[float]:
    grid = [float(x) for x in norms]
    if not grid:
        raise InputError("norm grid is empty")
    if any(x < 0 for x in grid):
        raise InputError("norms must be nonnegative")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InputError("norm grid must be strictly increasing")
    return grid


def make_norm_grid(avg_data_norm: float,
                   pcts=DEFAULT_NORM_PCTS) -> list[float]:
    """Absolute norms from percentages of the average data norm."""
    return validate_norm_grid([avg_data_norm * p / 100.0 for p in pcts])


def evaluate_universal(model: netcore.MlpModel, data: netcore.LabeledDataset,
                       pert: UniversalPerturbation, norm_grid,
                       clip_mode: str = "none") -> FoolingReport:
    """Fooling and error rates of a unit direction across a norm grid."""
    if clip_mode not in ("none", "clip01"):
        raise InputError(f"unknown clip_mode {clip_mode!r}")
    grid = validate_norm_grid(norm_grid)
    v = pert.direction
    if v.shape[0] != data.inputs.shape[1]:
        raise InputError("perturbation dimension does not match the data")

    clean = netcore.predict_batch(model, data.inputs)
    acc = float(np.mean(clean == data.labels))
    avg_norm = float(np.mean(np.linalg.norm(data.inputs, axis=1)))
    report = FoolingReport(
        perturbation_source=pert.source,
        clip_mode=clip_mode,
        eval_set_size=len(data),
        avg_data_norm=avg_norm,
        accuracy=acc,
        norms=grid,
    )
    for norm in grid:
        per_sign = {}
        for sign_label, s in (("+", 1.0), ("-", -1.0)):
            Xp = data.inputs + s * norm * v
            if clip_mode == "clip01":
                Xp = np.clip(Xp, 0.0, 1.0)
            preds = netcore.predict_batch(model, Xp)
            fool = float(np.mean(preds != clean))
            err = float(np.mean(preds != data.labels))
            if norm == 0.0 and fool != 0.0:
                raise InternalError("nonzero fooling rate at norm 0")
            if not (0.0 <= fool <= 1.0 and 0.0 <= err <= 1.0):
                raise InternalError("rate outside [0,1]")
            if fool < err - (1.0 - acc) - FLOAT_SLACK:
                raise InternalError(
                    f"fooling/error inequality violated at norm {norm}: "
                    f"fooling={fool} error={err} accuracy={acc}")
            pct = 100.0 * norm / avg_norm if avg_norm > 0 else 0.0
            per_sign[sign_label] = FoolingRow(sign_label, norm, pct, fool, err)
            report.rows.append(per_sign[sign_label])
        best = max(per_sign.values(), key=lambda r: (r.fooling_rate, r.sign))
        report.rows.append(FoolingRow("max", norm, best.norm_pct,
                                      best.fooling_rate, best.error_rate))
    return report


@dataclass
class MethodComparison:
    reports: dict[str, FoolingReport]
    perturbations: dict[str, UniversalPerturbation]
    construction_indices: list[int]
    eval_indices: list[int]


def _subset(data: netcore.LabeledDataset, indices) -> netcore.LabeledDataset:
    return netcore.LabeledDataset(
        data.inputs[indices], data.labels[indices],
        name=f"{data.name}[{len(indices)}]", num_classes=data.num_classes)


def compare_methods(model: netcore.MlpModel, data: netcore.LabeledDataset,
                    sample_indices, norm_grid, eval_indices=None,
                    clip_mode: str = "none", fgsm_eps: float = 0.1,
                    deepfool_max_iter: int = 50, overshoot: float = 0.02,
                    mdfff_eps_budget: float | None = None,
                    mdfff_target: float = 0.8, mdfff_max_passes: int = 10,
                    random_seed: int = 0) -> MethodComparison:
    """Side-by-side fooling curves for every universalization method.

    Builds SVD-universalized gradient/FGSM/DeepFool directions and the
    iterative baseline from the same construction samples, plus a random
    unit control, and evaluates all of them on a disjoint evaluation set
    (the complement of the construction samples by default). Overlap
    between the two sets only warns, since it is occasionally requested.
    """
    sample_indices = [int(i) for i in sample_indices]
    if eval_indices is None:
        taken = set(sample_indices)
        eval_indices = [i for i in range(len(data)) if i not in taken]
    else:
        eval_indices = [int(i) for i in eval_indices]
        overlap = set(sample_indices) & set(eval_indices)
        if overlap:
            warnings.warn(f"{len(overlap)} samples appear in both the "
                          "construction and evaluation sets")
    if not eval_indices:
        raise InputError("evaluation set is empty")
    eval_data = _subset(data, eval_indices)
    grid = validate_norm_grid(norm_grid)

    if mdfff_eps_budget is None:
        avg_norm = float(np.mean(np.linalg.norm(eval_data.inputs, axis=1)))
        mdfff_eps_budget = max(grid) if max(grid) > 0 else 0.2 * avg_norm

    configs = [
        AttackConfig(AttackKind.GRADIENT),
        AttackConfig(AttackKind.FGSM, eps=fgsm_eps),
        AttackConfig(AttackKind.DEEPFOOL, max_iter=deepfool_max_iter,
                     overshoot=overshoot),
    ]
    perts: dict[str, UniversalPerturbation] = {}
    for config in configs:
        vset = build_attack_matrix(model, data, sample_indices, config)
        pert = svd_universal(vset)
        perts[pert.source] = pert
    perts["mdfff"] = mdfff_universal(
        model, data, sample_indices, eps_budget=mdfff_eps_budget,
        target_fooling=mdfff_target, max_passes=mdfff_max_passes,
        deepfool_max_iter=deepfool_max_iter, overshoot=overshoot)
    perts["random"] = random_direction(model.input_dim, random_seed)

    reports = {name: evaluate_universal(model, eval_data, pert, grid, clip_mode)
               for name, pert in perts.items()}
    return MethodComparison(reports, perts, sample_indices, eval_indices)


@dataclass
class BatchSizeEntry:
    seed: int
    size: int
    report: FoolingReport
    direction_distance: float      # sign-corrected, vs the largest size
    curve_gap: float               # max over norms of |fooling - reference|


@dataclass
class BatchSizeSweep:
    sizes: list[int]
    seeds: list[int]
    entries: list[BatchSizeEntry]

    def mean_distance(self, size: int) -> float:
        vals = [e.direction_distance for e in self.entries if e.size == size]
        return float(np.mean(vals))

    def mean_curve_gap(self, size: int) -> float:
        vals = [e.curve_gap for e in self.entries if e.size == size]
        return float(np.mean(vals))


def sweep_batch_size(model: netcore.MlpModel, data: netcore.LabeledDataset,
                     config: AttackConfig, sizes, seeds, norm_grid,
                     eval_indices, construction_pool=None,
                     clip_mode: str = "none") -> BatchSizeSweep:
    """SVD-universal directions from nested construction samples of
    varying size, compared against the largest size.

    Per seed, the construction pool is shuffled once and each size takes a
    prefix, so smaller batches are subsets of larger ones. Reported per
    entry: the sign-corrected distance between the direction and the
    largest-size direction, and the max-over-norms gap between their
    max-sign fooling curves.
    """
    sizes = sorted(int(s) for s in set(sizes))
    if not sizes or sizes[0] < 1:
        raise InputError("sizes must be positive")
    eval_indices = [int(i) for i in eval_indices]
    if construction_pool is None:
        taken = set(eval_indices)
        construction_pool = [i for i in range(len(data)) if i not in taken]
    construction_pool = [int(i) for i in construction_pool]
    if sizes[-1] > len(construction_pool):
        raise InputError(f"largest size {sizes[-1]} exceeds the construction "
                         f"pool ({len(construction_pool)})")
    eval_data = _subset(data, eval_indices)
    grid = validate_norm_grid(norm_grid)

    entries: list[BatchSizeEntry] = []
    for seed in seeds:
        rng = np.random.default_rng((int(seed), 2))
        pool = [construction_pool[j] for j in rng.permutation(len(construction_pool))]
        per_size: dict[int, tuple[UniversalPerturbation, FoolingReport]] = {}
        for size in sizes:
            vset = build_attack_matrix(model, data, pool[:size], config)
            pert = svd_universal(vset)
            report = evaluate_universal(model, eval_data, pert, grid, clip_mode)
            per_size[size] = (pert, report)
        ref_pert, ref_report = per_size[sizes[-1]]
        for size in sizes:
            pert, report = per_size[size]
            dist = min(
                float(np.linalg.norm(pert.direction - ref_pert.direction)),
                float(np.linalg.norm(pert.direction + ref_pert.direction)))
            gap = max(abs(report.rate_at(norm) - ref_report.rate_at(norm))
                      for norm in grid)
            entries.append(BatchSizeEntry(int(seed), size, report, dist, gap))
    return BatchSizeSweep(sizes, [int(s) for s in seeds], entries)


def write_fooling_csv(path, reports: dict[str, FoolingReport]) -> None:
    """`method,sign,norm,norm_pct,fooling_rate,error_rate` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sign", "norm", "norm_pct",
                         "fooling_rate", "error_rate"])
        for method in sorted(reports):
            for row in reports[method].rows:
                writer.writerow([method, row.sign, repr(float(row.norm)),
                                 repr(float(row.norm_pct)),
                                 repr(float(row.fooling_rate)),
                                 repr(float(row.error_rate))])


def write_theory_csv(path, curve) -> None:
    """`m,trial,eigvec_err,matrix_err,weyl_err,dk_bound` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "trial", "eigvec_err", "matrix_err",
                         "weyl_err", "dk_bound"])
        for row in curve.rows:
            writer.writerow([row.m, row.trial, repr(float(row.eigvec_err)),
                             repr(float(row.matrix_err)),
                             repr(float(row.weyl_err)),
                             repr(float(row.dk_bound))])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_to_json(report: FoolingReport) -> dict:
    return {
        "perturbation_source": report.perturbation_source,
        "clip_mode": report.clip_mode,
        "eval_set_size": report.eval_set_size,
        "avg_data_norm": report.avg_data_norm,
        "accuracy": report.accuracy,
        "rows": [
            {"sign": r.sign, "norm": r.norm, "norm_pct": r.norm_pct,
             "fooling_rate": r.fooling_rate, "error_rate": r.error_rate}
            for r in report.rows
        ],
    }
