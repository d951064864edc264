"""Empirical verification of the spectral bounds behind universalization.

Two statements get checked numerically. First: if the second-moment matrix
of normalized attack directions has top eigenvalue lambda and unit top
eigenvector v, then u = +-(eps/delta) v fools at least
   Pr(attack fools) - (1 - lambda) / (1 - delta^2)
of the distribution, provided every perturbation with enough projection
along an attack direction also fools that point (exact for a halfspace
classifier, which `LinearWorld` constructs). Second: the top eigenvector
estimated from m sampled directions converges at the rate dictated by
matrix concentration, with Weyl's inequality |lambda - lambda_m| <= ||M - M_m||
and the Davis-Kahan corollary min_s ||v - s v_m|| <= 2 sqrt(2) ||M - M_m|| / gap
holding on every draw.

A small caveat baked into LinearWorld: its minimal attack lands exactly on
the decision boundary, where floating-point dot products have an arbitrary
sign. All boundary-touching predicates therefore go through the closed-form
margin geometry (label flips iff the clean margin is strictly positive)
instead of re-evaluating the classifier at the projected point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from svdu import linalg, netcore
from svdu.attacks import ZERO_DIRECTION_TOL, AttackConfig, AttackKind, run_attack
from svdu.errors import InputError, InternalError

# absolute slack when asserting mathematically-exact inequalities on floats
FLOAT_SLACK = 1e-12
DEGENERATE_GAP_ABS = 1e-9


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    std: float = 1.0


@dataclass(frozen=True)
class OrthogonalAttackRule:
    """Deterministic rule diverting some inputs to a non-fooling direction.

    Inputs with projection(q) > threshold get attacked along `direction`
    (orthogonal to the classifier weight, so the attack never fools them).
    This manufactures a population matrix with top eigenvalue < 1 whose
    value is known in closed form from the Gaussian mixture.
    """

    q: np.ndarray
    threshold: float
    direction: np.ndarray
    norm: float = 1.0


class LinearWorld:
    """Halfspace classifier f(x) = 1{w.x + b > 0} over a Gaussian mixture.

    The attack is the exact projection onto the decision hyperplane
    (DeepFool with zero overshoot is exact here, in one step). For a point
    with positive margin the projection changes the label, so whether the
    attack fools a point is a closed-form predicate on its margin.
    """

    def __init__(self, w, b: float, components: list[GaussianComponent],
                 attack_kind: AttackKind = AttackKind.DEEPFOOL,
                 orthogonal_rule: OrthogonalAttackRule | None = None):
        self.w = linalg.as_vector(w)
        if float(np.linalg.norm(self.w)) <= 0:
            raise InputError("halfspace weight must be nonzero")
        self.b = float(b)
        if attack_kind is not AttackKind.DEEPFOOL:
            raise InputError(
                f"LinearWorld only supports the deepfool attack, got {attack_kind}")
        if not components:
            raise InputError("need at least one mixture component")
        total = sum(c.weight for c in components)
        if total <= 0:
            raise InputError("component weights must sum to a positive value")
        self.components = [
            GaussianComponent(c.weight / total, linalg.as_vector(c.mean), float(c.std))
            for c in components]
        for c in self.components:
            if c.mean.shape != self.w.shape:
                raise InputError("component mean dimension mismatch")
            if c.std <= 0:
                raise InputError("component std must be positive")
        self.rule = orthogonal_rule
        if self.rule is not None:
            if abs(float(self.rule.direction @ self.w)) > 1e-10:
                raise InputError("orthogonal attack direction must be "
                                 "orthogonal to the classifier weight")
            if self.rule.norm <= 0:
                raise InputError("orthogonal attack norm must be positive")
        self.exact_assumption = True

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def margins(self, X: np.ndarray) -> np.ndarray:
        return X @ self.w + self.b

    def classify_batch(self, X: np.ndarray) -> np.ndarray:
        return (self.margins(X) > 0.0).astype(np.int64)

    def sample_batch(self, n: int, rng) -> tuple[np.ndarray, None]:
        weights = np.array([c.weight for c in self.components])
        counts = rng.multinomial(n, weights)
        chunks = []
        for c, cnt in zip(self.components, counts):
            if cnt:
                chunks.append(c.mean + c.std * rng.standard_normal((cnt, self.dim)))
        X = np.concatenate(chunks, axis=0)
        return X[rng.permutation(n)], None

    def sample_inputs(self, n: int, rng) -> np.ndarray:
        return self.sample_batch(n, rng)[0]

    def _orthogonal_mask(self, X: np.ndarray) -> np.ndarray:
        if self.rule is None:
            return np.zeros(X.shape[0], dtype=bool)
        return X @ self.rule.q > self.rule.threshold

    def attack_batch(self, X: np.ndarray, aux=None) -> np.ndarray:
        w2 = float(self.w @ self.w)
        A = (-self.margins(X) / w2)[:, None] * self.w[None, :]
        mask = self._orthogonal_mask(X)
        if np.any(mask):
            A[mask] = self.rule.norm * (self.rule.direction
                                        / np.linalg.norm(self.rule.direction))
        return A

    def attack_fooled(self, X: np.ndarray, aux=None, A=None) -> np.ndarray:
        # exact-arithmetic semantics of the boundary projection: the label
        # at margin 0 is 0, so only strictly-positive-margin points flip
        fooled = self.margins(X) > 0.0
        fooled[self._orthogonal_mask(X)] = False
        return fooled

    def sample_directions(self, n: int, rng) -> np.ndarray:
        X = self.sample_inputs(n, rng)
        A = self.attack_batch(X)
        norms = np.linalg.norm(A, axis=1)
        keep = norms >= ZERO_DIRECTION_TOL
        return A[keep] / norms[keep, None]

    def population_matrix(self):
        return None  # estimated from a pool, like every attack-backed source

    def orthogonal_fraction(self) -> float:
        """Closed-form probability mass diverted to the orthogonal attack."""
        if self.rule is None:
            return 0.0
        qn = float(np.linalg.norm(self.rule.q))
        p = 0.0
        for c in self.components:
            mu = float(self.rule.q @ c.mean)
            sd = c.std * qn
            z = (self.rule.threshold - mu) / sd
            p += c.weight * 0.5 * math.erfc(z / math.sqrt(2.0))
        return p

    def analytic_lambda(self) -> float:
        """Top eigenvalue of the population direction matrix, in closed form."""
        p = self.orthogonal_fraction()
        return max(p, 1.0 - p)


class MlpWorld:
    """Adapter giving an MLP + data pool the same surface as LinearWorld.

    Inputs are resampled with replacement from the pool; whether the
    attack fools a point is decided by an actual forward pass. The
    halfspace assumption is only spot-checked here (curved boundaries can
    break it), so violations warn instead of aborting.
    """

    default_pool_size = 10_000

    def __init__(self, model: netcore.MlpModel, data: netcore.LabeledDataset,
                 config: AttackConfig):
        self.model = model
        self.data = data
        self.config = config
        self.exact_assumption = False

    @property
    def dim(self) -> int:
        return self.model.input_dim

    def classify_batch(self, X: np.ndarray) -> np.ndarray:
        return netcore.predict_batch(self.model, X)

    def sample_batch(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.integers(0, len(self.data), size=n)
        return self.data.inputs[idx], self.data.labels[idx]

    def sample_inputs(self, n: int, rng) -> np.ndarray:
        return self.sample_batch(n, rng)[0]

    def attack_batch(self, X: np.ndarray, aux=None) -> np.ndarray:
        labels = aux if aux is not None else self.classify_batch(X)
        rows = [run_attack(self.model, x, int(y), self.config).perturbation
                for x, y in zip(X, labels)]
        return np.stack(rows)

    def attack_fooled(self, X: np.ndarray, aux=None, A=None) -> np.ndarray:
        if A is None:
            A = self.attack_batch(X, aux)
        return self.classify_batch(X + A) != self.classify_batch(X)

    def sample_directions(self, n: int, rng) -> np.ndarray:
        X, Y = self.sample_batch(n, rng)
        A = self.attack_batch(X, Y)
        norms = np.linalg.norm(A, axis=1)
        keep = norms >= ZERO_DIRECTION_TOL
        return A[keep] / norms[keep, None]

    def population_matrix(self):
        return None


@dataclass
class SpikedDirectionSource:
    """Synthetic unit directions with an exactly known spiked spectrum.

    u = sqrt(l1) s1 e1 + sqrt(l2) s2 e2 + sqrt(1 - l1 - l2) t, with s1, s2
    independent random signs and t uniform on the sphere of the remaining
    coordinates, so E[u u^T] = diag(l1, l2, rest/(d-2), ...) exactly.
    """

    dim: int
    lambda1: float = 0.6
    lambda2: float = 0.1

    def __post_init__(self):
        if self.dim < 3:
            raise InputError("spiked source needs dim >= 3")
        rest = 1.0 - self.lambda1 - self.lambda2
        if rest < 0 or self.lambda2 <= rest / (self.dim - 2):
            raise InputError("need lambda1 + lambda2 <= 1 and lambda2 above "
                             "the residual per-coordinate mass")
        if self.lambda1 <= self.lambda2:
            raise InputError("lambda1 must exceed lambda2")

    def population_matrix(self) -> np.ndarray:
        rest = 1.0 - self.lambda1 - self.lambda2
        diag = np.full(self.dim, rest / (self.dim - 2))
        diag[0] = self.lambda1
        diag[1] = self.lambda2
        return np.diag(diag)

    def sample_directions(self, n: int, rng) -> np.ndarray:
        signs = rng.integers(0, 2, size=(n, 2)) * 2 - 1
        tail = rng.standard_normal((n, self.dim - 2))
        tail /= np.maximum(np.linalg.norm(tail, axis=1, keepdims=True), 1e-300)
        rest = 1.0 - self.lambda1 - self.lambda2
        out = np.empty((n, self.dim))
        out[:, 0] = math.sqrt(self.lambda1) * signs[:, 0]
        out[:, 1] = math.sqrt(self.lambda2) * signs[:, 1]
        out[:, 2:] = math.sqrt(rest) * tail
        return out


@dataclass
class IsotropicDirectionSource:
    """Uniform directions on the unit sphere; population matrix is I/d."""

    dim: int

    def population_matrix(self):
        return None  # left to the pool on purpose: exercises that path

    def sample_directions(self, n: int, rng) -> np.ndarray:
        g = rng.standard_normal((n, self.dim))
        return g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)


@dataclass
class PopulationSpectrum:
    matrix: np.ndarray
    top_eigenvalue: float
    top_eigenvector: np.ndarray
    gap: float                 # absolute: lambda_1 - lambda_2
    gamma: float               # relative: gap / lambda_1
    degenerate: bool


def population_m_matrix(source, pool_size: int | None = None,
                        seed: int = 0) -> PopulationSpectrum:
    """Second-moment matrix of attack directions over a large proxy pool.

    The pool stands in for the true expectation; its own estimation error
    is exactly what the concentration bounds under test quantify. Warns
    when the pool is smaller than the ambient dimension. When pool_size is
    omitted the source's default applies (100k for synthetic/halfspace
    sources, 10k for model-backed ones, where each direction costs an
    attack run).
    """
    if pool_size is None:
        pool_size = getattr(source, "default_pool_size", 100_000)
    if pool_size < 1:
        raise InputError("pool_size must be >= 1")
    if pool_size < source.dim:
        warnings.warn(f"pool_size {pool_size} below dimension {source.dim}; "
                      "population estimate will be rank-deficient")
    rng = np.random.default_rng((seed, 0))
    U = source.sample_directions(pool_size, rng)
    if U.shape[0] < 1:
        raise InputError("source produced no usable directions")
    M = (U.T @ U) / U.shape[0]
    return _spectrum_of(M)


def _spectrum_of(M: np.ndarray) -> PopulationSpectrum:
    w, V = linalg.full_symmetric_eig(M)
    gap = float(w[0] - w[1]) if w.shape[0] >= 2 else float(w[0])
    return PopulationSpectrum(
        matrix=M,
        top_eigenvalue=float(w[0]),
        top_eigenvector=V[:, 0],
        gap=gap,
        gamma=gap / float(w[0]) if w[0] > 0 else 0.0,
        degenerate=gap < DEGENERATE_GAP_ABS,
    )


@dataclass
class TheoremOneReport:
    """One eigenvalue-bound trial: does +-(eps/delta) v fool enough points?"""

    lambda_top: float
    delta: float
    eps_max: float
    base_fool_rate: float
    measured_fool_rate_pos: float
    measured_fool_rate_neg: float
    measured_fool_rate_u: float
    bound_value: float
    statistical_slack: float
    n_eval: int
    degenerate_gap: bool
    satisfied: bool


def _check_halfspace_assumption(world, X, A, fooled, rng, checks: int) -> None:
    # for fooled points, any z with <z, a> >= ||a||^2 must also fool
    idx = np.flatnonzero(fooled)
    if idx.size == 0:
        return
    take = idx[rng.permutation(idx.size)[:checks]]
    clean = world.classify_batch(X[take])
    for row, x, label in zip(take, X[take], clean):
        a = A[row]
        a2 = float(a @ a)
        if a2 < ZERO_DIRECTION_TOL ** 2:
            continue
        for _ in range(3):
            stretch = 1.0 + rng.uniform(0.05, 1.0)
            y = rng.standard_normal(x.shape[0])
            y -= a * (float(a @ y) / a2)
            z = stretch * a + rng.uniform(-1.0, 1.0) * y
            new_label = world.classify_batch((x + z)[None, :])[0]
            if new_label == label:
                msg = ("halfspace assumption violated: a perturbation with "
                       "sufficient projection along the attack failed to fool")
                if world.exact_assumption:
                    raise InternalError(msg + " (impossible for a halfspace; "
                                              "this indicates a bug)")
                warnings.warn(msg)
                return


def verify_theorem_one(world, delta: float, n_eval: int = 2000, seed: int = 0,
                       pool_size: int | None = None,
                       assumption_checks: int = 32) -> TheoremOneReport:
    """Measure the eigenvalue fooling bound on one seeded trial.

    Builds the population spectrum from a pool, takes eps as the largest
    attack norm over the fresh evaluation sample, and compares the fooling
    rate of u = +-(eps/delta) v against
    base_rate - (1 - lambda) / (1 - delta^2) minus three binomial standard
    errors of the base rate.
    """
    if not 0.0 < delta < 1.0:
        raise InputError("delta must lie strictly between 0 and 1")
    if n_eval < 1:
        raise InputError("n_eval must be >= 1")
    pop = population_m_matrix(world, pool_size, seed=seed)
    lam, v = pop.top_eigenvalue, pop.top_eigenvector

    rng = np.random.default_rng((seed, 1))
    X, aux = world.sample_batch(n_eval, rng)
    A = world.attack_batch(X, aux)
    norms = np.linalg.norm(A, axis=1)
    usable = norms >= ZERO_DIRECTION_TOL
    if not np.any(usable):
        raise InputError("attack produced no nonzero perturbations to bound")
    eps = float(norms[usable].max())

    fooled = world.attack_fooled(X, aux, A)
    base = float(np.mean(fooled))
    _check_halfspace_assumption(world, X, A, fooled, rng, assumption_checks)

    clean = world.classify_batch(X)
    u = (eps / delta) * v
    rate_pos = float(np.mean(world.classify_batch(X + u) != clean))
    rate_neg = float(np.mean(world.classify_batch(X - u) != clean))
    measured = max(rate_pos, rate_neg)
    bound = base - (1.0 - lam) / (1.0 - delta * delta)
    slack = 3.0 * math.sqrt(base * (1.0 - base) / n_eval)
    return TheoremOneReport(
        lambda_top=lam,
        delta=delta,
        eps_max=eps,
        base_fool_rate=base,
        measured_fool_rate_pos=rate_pos,
        measured_fool_rate_neg=rate_neg,
        measured_fool_rate_u=measured,
        bound_value=bound,
        statistical_slack=slack,
        n_eval=n_eval,
        degenerate_gap=pop.degenerate,
        satisfied=measured >= bound - slack - FLOAT_SLACK,
    )


@dataclass
class CurveRow:
    m: int
    trial: int
    eigvec_err: float
    matrix_err: float
    weyl_err: float
    dk_bound: float
    weyl_ok: bool
    dk_ok: bool


@dataclass
class SampleComplexityCurve:
    """Convergence of the sampled top eigenvector toward the population one."""

    m_values: list[int]
    eigvec_errors: list[float]           # mean over trials, per m
    matrix_errors: list[float]
    weyl_errors: list[float]
    davis_kahan_bounds: list[float]
    median_eigvec_errors: list[float]
    rows: list[CurveRow] = field(default_factory=list)
    gap: float = 0.0           # absolute eigengap of the population matrix
    gamma: float = 0.0         # relative eigengap, gap / lambda_1
    gap_degenerate: bool = False
    weyl_violations: int = 0
    dk_violations: int = 0


def verify_theorem_two(source, m_grid: list[int], trials: int, seed: int = 0,
                       pool_size: int | None = None) -> SampleComplexityCurve:
    """Sample-complexity curve plus Weyl / Davis-Kahan validation.

    For every (m, trial) a fresh direction sample builds the empirical
    second-moment matrix; the sign-corrected top-eigenvector error, the
    spectral norm of the matrix deviation, the eigenvalue error, and the
    Davis-Kahan bound 2 sqrt(2) ||M - M_m|| / gap are recorded. Sources
    that know their population matrix exactly supply it; otherwise a pool
    estimate stands in. When the eigengap is degenerate the bound columns
    are still emitted but flagged invalid.
    """
    if not m_grid or any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise InputError("m_grid must be nonempty and strictly increasing")
    if any(m < 1 for m in m_grid):
        raise InputError("sample sizes must be >= 1")
    if trials < 1:
        raise InputError("trials must be >= 1")

    M = source.population_matrix()
    if M is None:
        pop = population_m_matrix(source, pool_size, seed=seed)
    else:
        pop = _spectrum_of(linalg.as_matrix(M))
    lam, v, gap = pop.top_eigenvalue, pop.top_eigenvector, pop.gap

    rows: list[CurveRow] = []
    for m in m_grid:
        for trial in range(trials):
            rng = np.random.default_rng((seed, trial, m))
            U = source.sample_directions(m, rng)
            Mm = (U.T @ U) / U.shape[0]
            wm, Vm = linalg.full_symmetric_eig(Mm)
            vm = Vm[:, 0]
            eig_err = min(float(np.linalg.norm(v - vm)),
                          float(np.linalg.norm(v + vm)))
            mat_err = linalg.spectral_norm_diff(pop.matrix, Mm)
            weyl_err = abs(lam - float(wm[0]))
            dk_bound = (2.0 ** 1.5) * mat_err / gap if gap > 0 else float("inf")
            rows.append(CurveRow(
                m=m, trial=trial,
                eigvec_err=eig_err, matrix_err=mat_err,
                weyl_err=weyl_err, dk_bound=dk_bound,
                weyl_ok=weyl_err <= mat_err + FLOAT_SLACK,
                dk_ok=(not pop.degenerate
                       and eig_err <= dk_bound + FLOAT_SLACK),
            ))

    def _per_m(metric):
        return [[getattr(r, metric) for r in rows if r.m == m] for m in m_grid]

    eig = _per_m("eigvec_err")
    return SampleComplexityCurve(
        m_values=list(m_grid),
        eigvec_errors=[float(np.mean(e)) for e in eig],
        matrix_errors=[float(np.mean(e)) for e in _per_m("matrix_err")],
        weyl_errors=[float(np.mean(e)) for e in _per_m("weyl_err")],
        davis_kahan_bounds=[float(np.mean(e)) for e in _per_m("dk_bound")],
        median_eigvec_errors=[float(np.median(e)) for e in eig],
        rows=rows,
        gap=gap,
        gamma=pop.gamma,
        gap_degenerate=pop.degenerate,
        weyl_violations=sum(not r.weyl_ok for r in rows),
        dk_violations=(0 if pop.degenerate
                       else sum(not r.dk_ok for r in rows)),
    )


@dataclass
class GapCheckResult:
    fooling_rate: float
    error_rate: float
    accuracy: float
    inequality_ok: bool


def fooling_error_gap_check(model: netcore.MlpModel, data: netcore.LabeledDataset,
                            direction, norm: float,
                            clip01: bool = False) -> GapCheckResult:
    """Fooling rate vs error rate at one perturbation norm.

    The inequality fooling >= error - (1 - accuracy) is a set-inclusion
    fact on any fixed evaluation set, so it must hold on every call.
    """
    direction = linalg.as_vector(direction)
    if norm < 0:
        raise InputError("norm must be >= 0")
    Xp = data.inputs + norm * direction
    if clip01:
        Xp = np.clip(Xp, 0.0, 1.0)
    clean = netcore.predict_batch(model, data.inputs)
    pert = netcore.predict_batch(model, Xp)
    fooling = float(np.mean(pert != clean))
    error = float(np.mean(pert != data.labels))
    acc = float(np.mean(clean == data.labels))
    ok = fooling >= error - (1.0 - acc) - FLOAT_SLACK
    if not ok:
        raise InternalError(
            f"fooling/error inequality violated: fooling={fooling} "
            f"error={error} accuracy={acc}")
    return GapCheckResult(fooling, error, acc, ok)
