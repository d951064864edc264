"""Dense float64 linear algebra: top-k SVD and a Jacobi eigensolver.

Matrices are 2-D numpy arrays, vectors 1-D; everything is validated to be
finite on the way in. The top singular pairs come from power iteration on
the Gram operator v -> M^T(Mv) with Hotelling deflation, so no LAPACK-class
dependency is needed for the one vector the universalizer actually uses.
A cyclic Jacobi eigensolver serves as the high-accuracy reference for
small symmetric matrices and for spectral norms.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from svdu.errors import InputError, InternalError

# relative gap below which two leading singular values count as tied
DEGENERATE_GAP_RTOL = 1e-6

_HEADER = struct.Struct("<QQ")


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a finite float64 2-D array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.size and not np.all(np.isfinite(m)):
        raise InputError("matrix contains non-finite entries")
    return m


def as_vector(a) -> np.ndarray:
    """Validate and return `a` as a finite float64 1-D array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise InputError(f"expected a 1-D vector, got ndim={v.ndim}")
    if v.size and not np.all(np.isfinite(v)):
        raise InputError("vector contains non-finite entries")
    return v


def matvec(A, x) -> np.ndarray:
    """Dense matrix-vector product with dimension checking."""
    A = as_matrix(A)
    x = as_vector(x)
    if A.shape[1] != x.shape[0]:
        raise InputError(f"matvec shape mismatch: {A.shape} @ ({x.shape[0]},)")
    return A @ x


@dataclass
class SvdResult:
    """Top-k singular values and right singular vectors of a matrix.

    `right_vectors` holds one unit vector per row, matching
    `singular_values` (nonincreasing). Vectors are defined only up to a
    global sign; consumers must be sign-agnostic. `degenerate_gap` is set
    when the two leading singular values are relatively closer than
    DEGENERATE_GAP_RTOL, in which case the top vector is not unique.
    """

    singular_values: np.ndarray
    right_vectors: np.ndarray
    converged: list[bool] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    degenerate_gap: bool = False


def _orthonormal_completion(found: list[np.ndarray], dim: int) -> np.ndarray:
    # deterministic unit vector orthogonal to everything in `found`: the
    # basis vector with the largest residual after projection (at least
    # 1/sqrt(dim) survives whenever len(found) < dim)
    best, best_norm = None, 0.0
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        for u in found:
            e -= u * (u @ e)
        n = float(np.linalg.norm(e))
        if n > best_norm:
            best, best_norm = e / n, n
    if best is None or best_norm < 1e-6:
        raise InternalError("no orthonormal completion found")
    for u in found:  # second Gram-Schmidt pass for orthogonality headroom
        best -= u * (u @ best)
    return best / float(np.linalg.norm(best))


def _jacobi_small(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # scalar cyclic Jacobi for tiny symmetric blocks (Rayleigh-Ritz use);
    # deliberately separate code from full_symmetric_eig so the two never
    # share a bug when tested against each other
    B = B.copy()
    n = B.shape[0]
    R = np.eye(n)
    for _ in range(60):
        off = max((abs(B[p, q]) for p in range(n) for q in range(p + 1, n)),
                  default=0.0)
        if off <= 1e-15 * (1.0 + abs(B).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(B[p, q]) <= 1e-18 * (1.0 + abs(B).max()):
                    continue
                tau = (B[q, q] - B[p, p]) / (2.0 * B[p, q])
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                for X in (B, R):
                    xp = X[:, p].copy()
                    X[:, p] = c * xp - s * X[:, q]
                    X[:, q] = s * xp + c * X[:, q]
                bp = B[p, :].copy()
                B[p, :] = c * bp - s * B[q, :]
                B[q, :] = s * bp + c * B[q, :]
                B[p, q] = B[q, p] = 0.0
    return np.diag(B).copy(), R


def top_k_svd(M, k: int, tol: float = 1e-10, max_iter: int = 10_000,
              seed: int = 0) -> SvdResult:
    """Top-k singular triplet (values + right vectors) via power iteration.

    Runs power iteration on the Gram operator v -> M^T(Mv), deflating each
    found pair (sigma_i^2, v_i) Hotelling-style before hunting the next.
    A vector counts as converged once successive unit iterates satisfy
    ||v_new - v|| <= tol or ||v_new + v|| <= tol (sign-invariant test).
    Non-convergence is reported in `converged`, not raised. A zero matrix
    yields zero singular values, an arbitrary orthonormal set, and the
    degenerate flag.

    A final Rayleigh-Ritz pass re-diagonalizes the Gram operator within the
    span of the found vectors: clustered singular values make the per-vector
    iteration rotation-blind inside the cluster even though the cluster
    subspace itself converges quickly, and the block rotation repairs
    exactly that.
    """
    M = as_matrix(M)
    n, d = M.shape
    if k < 1 or k > min(n, d):
        raise InputError(f"k={k} must be in [1, min{M.shape}]")
    if tol <= 0:
        raise InputError("tol must be positive")
    rng = np.random.default_rng(seed)
    fro2 = float(np.sum(M * M))
    null_floor = fro2 * 1e-28 + 1e-300

    sig2: list[float] = []
    vecs: list[np.ndarray] = []
    conv: list[bool] = []
    iters: list[int] = []
    for _ in range(k):
        # seeded start vector, kept orthogonal to the pairs already found
        v = rng.standard_normal(d)
        for u in vecs:
            v -= u * (u @ v)
        nv = float(np.linalg.norm(v))
        exhausted = False
        if nv < 1e-8 or fro2 == 0.0:
            exhausted = True
        else:
            v /= nv
        steps = 0
        converged = False
        if not exhausted:
            for steps in range(1, max_iter + 1):
                w = M.T @ (M @ v)
                for s2, u in zip(sig2, vecs):
                    w -= s2 * u * (u @ v)
                # drift control: the deflated operator keeps the found
                # subspace invariant only in exact arithmetic
                for u in vecs:
                    w -= u * (u @ w)
                nw = float(np.linalg.norm(w))
                if nw <= null_floor:
                    exhausted = True
                    break
                w /= nw
                if (np.linalg.norm(w - v) <= tol
                        or np.linalg.norm(w + v) <= tol):
                    v = w
                    converged = True
                    break
                v = w
        if exhausted:
            # remaining spectrum is numerically zero
            v = _orthonormal_completion(vecs, d)
            converged = True
        sigma = float(np.linalg.norm(M @ v))
        sig2.append(sigma * sigma)
        vecs.append(v)
        conv.append(converged)
        iters.append(steps)

    # Rayleigh-Ritz refinement within span(vecs)
    V = np.stack(vecs, axis=0)
    W = (M.T @ (M @ V.T)).T           # Gram operator applied to each vector
    B = V @ W.T
    _, R = _jacobi_small(0.5 * (B + B.T))
    V = R.T @ V
    norms = np.linalg.norm(V, axis=1)
    V /= np.where(norms > 0, norms, 1.0)[:, None]
    sig2 = [float(np.sum((M @ v) ** 2)) for v in V]
    vecs = list(V)

    order = np.argsort(-np.asarray(sig2), kind="stable")
    values = np.sqrt(np.maximum(np.asarray(sig2)[order], 0.0))
    vectors = np.stack([vecs[i] for i in order], axis=0)
    conv = [conv[i] for i in order]
    iters = [iters[i] for i in order]

    degenerate = bool(values[0] <= 0.0)
    if not degenerate and k >= 2:
        degenerate = bool(
            (values[0] - values[1]) / values[0] < DEGENERATE_GAP_RTOL)
    return SvdResult(values, vectors, conv, iters, degenerate)


def full_symmetric_eig(S, tol: float = 1e-12,
                       max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of a small symmetric matrix by cyclic Jacobi sweeps.

    Returns (eigenvalues, eigenvectors) with eigenvalues nonincreasing and
    eigenvectors as orthonormal columns of the second array. Input must be
    symmetric within 1e-10 and at most 512x512 (this is the oracle-scale
    solver, not a general-purpose one).
    """
    A = as_matrix(S)
    n, m = A.shape
    if n != m:
        raise InputError(f"eigendecomposition needs a square matrix, got {A.shape}")
    if n > 512:
        raise InputError(f"dimension {n} exceeds the 512 oracle-scale limit")
    if n and float(np.max(np.abs(A - A.T))) > 1e-10:
        raise InputError("matrix is not symmetric within 1e-10")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    fro = float(np.linalg.norm(A))
    if fro == 0.0 or n == 1:
        w = np.diag(A).copy()
        order = np.argsort(-w, kind="stable")
        return w[order], V[:, order]

    stop = tol * fro
    skip = stop / (2.0 * n)
    for _ in range(max_sweeps):
        # measured directly off the zeroed-diagonal copy: the subtraction
        # form sum(A^2) - sum(diag^2) cancels catastrophically at this tol
        off = A.copy()
        np.fill_diagonal(off, 0.0)
        off2 = float(np.sum(off * off))
        if off2 <= stop * stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise InternalError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def spectral_norm_diff(A, B) -> float:
    """Spectral norm ||A - B|| for symmetric A, B (largest |eigenvalue|)."""
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape != B.shape:
        raise InputError(f"shape mismatch: {A.shape} vs {B.shape}")
    for name, X in (("A", A), ("B", B)):
        if X.size and float(np.max(np.abs(X - X.T))) > 1e-10:
            raise InputError(f"{name} is not symmetric within 1e-10")
    D = A - B
    n = D.shape[0]
    if n <= 128:
        w, _ = full_symmetric_eig(D)
        return float(np.max(np.abs(w))) if n else 0.0
    # large case: sigma_1(D) via power iteration on D^T D = (A-B)^2
    res = top_k_svd(D, 1)
    return float(res.singular_values[0])


def save_matrix(path, A) -> None:
    """Write a matrix as `u64 rows, u64 cols` + row-major little-endian f64."""
    A = as_matrix(A)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(A.shape[0], A.shape[1]))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by save_matrix, validating size and finiteness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise InputError(f"{path}: truncated header ({len(blob)} bytes)")
    rows, cols = _HEADER.unpack_from(blob)
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise InputError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return as_matrix(data.reshape(rows, cols))


def load_matrix_csv(path) -> np.ndarray:
    """Read a small matrix from comma-separated plain text."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or (len(cells) == 1 and not cells[0].strip()):
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"{path}: ragged rows (expected width {width})")
    return as_matrix(np.asarray(rows))


def save_matrix_csv(path, A) -> None:
    A = as_matrix(A)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in A:
            writer.writerow([repr(float(x)) for x in row])
