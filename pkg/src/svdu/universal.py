"""Universal attack directions from per-sample attacks.

The core construction: run an input-dependent attack on n samples,
normalize each perturbation to a unit row, stack the rows into a matrix,
and take the top right singular vector as the single universal direction.
Also here: the iterative accumulation baseline (repeated DeepFool on
still-unfooled samples with an l2 budget), a random-direction control, and
spectral diagnostics of the stacked direction matrix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from svdu import linalg, netcore
from svdu._parallel import ordered_map
from svdu.attacks import ZERO_DIRECTION_TOL, AttackConfig, deepfool_attack, run_attack
from svdu.errors import InputError, InternalError

ROW_NORM_TOL = 1e-10


@dataclass
class AttackVectorSet:
    """Unit attack directions stacked as rows of an n x d matrix."""

    directions: np.ndarray
    source_kind: str
    sample_indices: list[int]
    excluded: list[int]

    def __post_init__(self):
        self.directions = linalg.as_matrix(self.directions)
        if self.directions.shape[0] < 1:
            raise InputError("attack vector set is empty")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.max(np.abs(norms - 1.0)) > ROW_NORM_TOL:
            raise InternalError("attack directions are not unit rows")


@dataclass
class SpectralReport:
    """Spectrum diagnostics of the direction matrix M (n rows).

    lambda_hat is sigma_1^2 / n, the top eigenvalue of the second-moment
    matrix M^T M / n. Since the rows are unit vectors that matrix has unit
    trace, so trace_check must come out as 1 and intrinsic_dimension
    (trace / top eigenvalue) is at least 1.
    """

    singular_values: np.ndarray
    lambda_hat: float
    trace_check: float
    intrinsic_dimension: float
    eigengap_ratio: float
    degenerate_gap: bool
    sample_size: int


@dataclass
class UniversalPerturbation:
    """A unit direction plus provenance; magnitude is applied at evaluation."""

    direction: np.ndarray
    source: str
    sample_size: int
    spectral: SpectralReport | None = None
    construction_fooling_rate: float | None = None
    passes_used: int | None = None

    def __post_init__(self):
        self.direction = linalg.as_vector(self.direction)
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > ROW_NORM_TOL:
            raise InternalError("universal direction is not unit norm")


def build_attack_matrix(model: netcore.MlpModel, data: netcore.LabeledDataset,
                        indices, config: AttackConfig) -> AttackVectorSet:
    """Attack each indexed sample, normalize, and stack the directions.

    Samples whose attack comes back as zero_direction cannot be normalized
    and are recorded in `excluded`. Samples the attack failed to fool are
    kept: a direction is a direction.
    """
    indices = [int(i) for i in indices]
    if not indices:
        raise InputError("need at least one sample index")
    n = len(data)
    bad = [i for i in indices if not 0 <= i < n]
    if bad:
        raise InputError(f"sample indices out of range: {bad[:5]}")

    results = ordered_map(
        lambda i: run_attack(model, data.inputs[i], int(data.labels[i]), config),
        indices)
    rows, kept, excluded = [], [], []
    for i, res in zip(indices, results):
        if res.zero_direction:
            excluded.append(i)
            continue
        rows.append(res.perturbation / res.l2_norm)
        kept.append(i)
    if not rows:
        raise InputError("every sampled attack produced a zero direction; "
                         "no matrix to decompose")
    return AttackVectorSet(np.stack(rows), config.kind.value, kept, excluded)


def _spectral_report(directions: np.ndarray, k: int, tol: float,
                     max_iter: int, seed: int) -> tuple[SpectralReport, np.ndarray]:
    n, d = directions.shape
    k_eff = max(1, min(k, n, d))
    svd = linalg.top_k_svd(directions, k_eff, tol=tol, max_iter=max_iter, seed=seed)
    lam = svd.singular_values ** 2 / n
    lambda1 = float(lam[0])
    lambda2 = float(lam[1]) if k_eff >= 2 else 0.0
    trace = float(np.sum(directions * directions)) / n
    if lambda1 <= 0.0:
        intrinsic = float("inf")
        gap_ratio = 0.0
    else:
        intrinsic = trace / lambda1
        gap_ratio = (lambda1 - lambda2) / lambda1
    report = SpectralReport(
        singular_values=svd.singular_values,
        lambda_hat=lambda1,
        trace_check=trace,
        intrinsic_dimension=intrinsic,
        eigengap_ratio=gap_ratio,
        degenerate_gap=svd.degenerate_gap,
        sample_size=n,
    )
    return report, svd.right_vectors[0]


def svd_universal(vset: AttackVectorSet, k: int = 20, tol: float = 1e-10,
                  max_iter: int = 10_000, seed: int = 0) -> UniversalPerturbation:
    """Top right singular vector of the direction matrix.

    The sign is whatever the eigensolver produced; evaluation must try
    both signs. k only controls how much of the spectrum lands in the
    attached diagnostics.
    """
    report, top = _spectral_report(vset.directions, k, tol, max_iter, seed)
    return UniversalPerturbation(
        direction=top,
        source=f"svd-{vset.source_kind}",
        sample_size=vset.directions.shape[0],
        spectral=report,
    )


def singular_value_spectrum(vset: AttackVectorSet, k: int = 20,
                            seed: int = 0) -> SpectralReport:
    """Top-k spectrum of the direction matrix, for decay diagnostics."""
    if k > min(vset.directions.shape):
        raise InputError(f"k={k} exceeds min{vset.directions.shape}")
    report, _ = _spectral_report(vset.directions, k, 1e-10, 10_000, seed)
    return report


def mdfff_universal(model: netcore.MlpModel, data: netcore.LabeledDataset,
                    indices, eps_budget: float, target_fooling: float = 0.8,
                    max_passes: int = 10, deepfool_max_iter: int = 50,
                    overshoot: float = 0.02) -> UniversalPerturbation:
    """Iterative universal baseline: accumulate DeepFool steps on unfooled samples.

    Keeps a running perturbation v (starting at zero); each pass walks the
    samples in order and, for any sample still classified as its clean
    prediction under x + v, adds the DeepFool perturbation computed at
    x + v, rescaling v back onto the eps_budget ball whenever it leaves.
    Stops when the sample fooling rate reaches target_fooling or the pass
    budget runs out. The returned direction is v normalized to unit norm;
    evaluation reapplies magnitudes.
    """
    if eps_budget <= 0:
        raise InputError("eps_budget must be positive")
    if not 0 < target_fooling <= 1:
        raise InputError("target_fooling must be in (0, 1]")
    if max_passes < 1:
        raise InputError("max_passes must be >= 1")
    indices = [int(i) for i in indices]
    if not indices:
        raise InputError("need at least one sample index")

    X = data.inputs[indices]
    clean = netcore.predict_batch(model, X)
    v = np.zeros(model.input_dim)
    rate = 0.0
    passes = 0
    for _ in range(max_passes):
        passes += 1
        for row, x in enumerate(X):
            if netcore.forward(model, x + v)[1] != clean[row]:
                continue
            res = deepfool_attack(model, x + v, deepfool_max_iter, overshoot)
            if res.zero_direction:
                continue
            v = v + res.perturbation
            norm = float(np.linalg.norm(v))
            if norm > eps_budget:
                v *= eps_budget / norm
        rate = float(np.mean(netcore.predict_batch(model, X + v) != clean))
        if rate >= target_fooling:
            break
    norm = float(np.linalg.norm(v))
    if norm < ZERO_DIRECTION_TOL:
        raise InternalError(
            f"accumulated perturbation is zero after {passes} passes; "
            "the attack never moved any sample")
    return UniversalPerturbation(
        direction=v / norm,
        source="mdfff",
        sample_size=len(indices),
        construction_fooling_rate=rate,
        passes_used=passes,
    )


def random_direction(dim: int, seed: int) -> UniversalPerturbation:
    """Uniform direction on the unit sphere (normalized Gaussian), seeded."""
    if dim < 1:
        raise InputError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(dim)
    norm = float(np.linalg.norm(g))
    while norm < ZERO_DIRECTION_TOL:  # pragma: no cover - probability ~0
        g = rng.standard_normal(dim)
        norm = float(np.linalg.norm(g))
    return UniversalPerturbation(direction=g / norm, source="random",
                                 sample_size=0)


def _spectral_to_json(report: SpectralReport | None):
    if report is None:
        return None
    return {
        "singular_values": [float(s) for s in report.singular_values],
        "lambda_hat": report.lambda_hat,
        "trace_check": report.trace_check,
        "intrinsic_dimension": report.intrinsic_dimension,
        "eigengap_ratio": report.eigengap_ratio,
        "degenerate_gap": report.degenerate_gap,
        "sample_size": report.sample_size,
    }


def save_perturbation(base_path, pert: UniversalPerturbation) -> None:
    """Write `<base>.mat` (1 x d matrix) and `<base>.json` (provenance)."""
    base = str(base_path)
    linalg.save_matrix(base + ".mat", pert.direction[None, :])
    meta = {
        "source": pert.source,
        "sample_size": pert.sample_size,
        "spectral": _spectral_to_json(pert.spectral),
        "construction_fooling_rate": pert.construction_fooling_rate,
        "passes_used": pert.passes_used,
    }
    with open(base + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_perturbation(base_path) -> UniversalPerturbation:
    base = str(base_path)
    if base.endswith(".mat") or base.endswith(".json"):
        base = base.rsplit(".", 1)[0]
    mat = linalg.load_matrix(base + ".mat")
    if mat.shape[0] != 1:
        raise InputError(f"{base}.mat: expected a single row, got {mat.shape}")
    with open(base + ".json") as fh:
        meta = json.load(fh)
    spectral = None
    if meta.get("spectral"):
        s = meta["spectral"]
        spectral = SpectralReport(
            singular_values=np.asarray(s["singular_values"]),
            lambda_hat=s["lambda_hat"],
            trace_check=s["trace_check"],
            intrinsic_dimension=s["intrinsic_dimension"],
            eigengap_ratio=s["eigengap_ratio"],
            degenerate_gap=s["degenerate_gap"],
            sample_size=s["sample_size"],
        )
    return UniversalPerturbation(
        direction=mat[0],
        source=meta["source"],
        sample_size=meta["sample_size"],
        spectral=spectral,
        construction_fooling_rate=meta.get("construction_fooling_rate"),
        passes_used=meta.get("passes_used"),
    )


def save_direction_pgm(path, direction) -> None:
    """Render a square-dimensional direction as a binary PGM image.

    Entries are min-max scaled to the 0..255 range; sign information
    survives only as brightness around mid-gray.
    """
    v = linalg.as_vector(direction)
    side = int(round(np.sqrt(v.shape[0])))
    if side * side != v.shape[0]:
        raise InputError(f"dimension {v.shape[0]} is not a perfect square; "
                         "cannot shape an image")
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-300:
        pixels = np.zeros(v.shape[0], dtype=np.uint8)
    else:
        pixels = np.clip(np.rint((v - lo) / (hi - lo) * 255.0),
                         0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_spectrum_csv(path, report: SpectralReport) -> None:
    """Emit `index,sigma,sigma_sq_over_n` rows for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "sigma", "sigma_sq_over_n"])
        for i, s in enumerate(report.singular_values):
            writer.writerow([i, repr(float(s)),
                             repr(float(s * s / report.sample_size))])
