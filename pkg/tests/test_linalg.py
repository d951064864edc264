import numpy as np
import pytest

from svdu import linalg
from svdu.errors import InputError


def subspace_angle(u, v):
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(c, 1.0)))


class TestMatvec:
    def test_identity(self):
        out = linalg.matvec(np.eye(3), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])

    def test_projector(self):
        out = linalg.matvec([[1.0, 0.0], [0.0, 0.0]], [5.0, 7.0])
        np.testing.assert_array_equal(out, [5.0, 0.0])

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((4, 3))
        x = rng.standard_normal(3)
        # independent oracle: explicit sum over j of A[i,j] * x[j]
        expected = np.array([sum(A[i, j] * x[j] for j in range(3))
                             for i in range(4)])
        np.testing.assert_allclose(linalg.matvec(A, x), expected, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            linalg.matvec(np.eye(3), [1.0, 2.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(InputError):
            linalg.matvec([[np.nan, 0.0], [0.0, 1.0]], [1.0, 1.0])


class TestTopKSvd:
    def test_diagonal_gram(self):
        # rows (1,0),(1,0),(0,1): Gram diag(2,1) so sigma_1 = sqrt(2), v = +-e1
        M = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        res = linalg.top_k_svd(M, 2)
        np.testing.assert_allclose(res.singular_values, [np.sqrt(2), 1.0],
                                   atol=1e-12)
        assert abs(abs(res.right_vectors[0][0]) - 1.0) < 1e-10
        assert abs(res.right_vectors[0][1]) < 1e-10

    def test_rank_one(self):
        rng = np.random.default_rng(3)
        u = rng.standard_normal(6)
        u /= np.linalg.norm(u)
        M = np.tile(u, (5, 1))
        res = linalg.top_k_svd(M, 2)
        assert abs(res.singular_values[0] - np.sqrt(5)) < 1e-10
        assert subspace_angle(res.right_vectors[0], u) < 1e-8
        assert res.singular_values[1] < 1e-8 * res.singular_values[0]

    def test_matches_jacobi_oracle(self):
        rng = np.random.default_rng(11)
        M = rng.standard_normal((50, 20))
        res = linalg.top_k_svd(M, 5)
        w, V = linalg.full_symmetric_eig(M.T @ M)
        for i in range(5):
            sigma_oracle = np.sqrt(max(w[i], 0.0))
            assert abs(res.singular_values[i] - sigma_oracle) < 1e-8
            assert subspace_angle(res.right_vectors[i], V[:, i]) < 1e-6

    def test_zero_matrix(self):
        res = linalg.top_k_svd(np.zeros((4, 3)), 3)
        np.testing.assert_array_equal(res.singular_values, np.zeros(3))
        assert res.degenerate_gap
        G = res.right_vectors @ res.right_vectors.T
        np.testing.assert_allclose(G, np.eye(3), atol=1e-12)

    def test_nonconvergence_is_flagged_not_fatal(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((30, 30))
        res = linalg.top_k_svd(M, 2, tol=1e-15, max_iter=3)
        assert len(res.converged) == 2
        assert not all(res.converged)

    def test_preconditions(self):
        with pytest.raises(InputError):
            linalg.top_k_svd(np.eye(3), 4)
        with pytest.raises(InputError):
            linalg.top_k_svd(np.eye(3), 1, tol=0.0)

    def test_orthonormality_and_order(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            M = rng.standard_normal((20, 12))
            res = linalg.top_k_svd(M, 6)
            k = len(res.singular_values)
            G = res.right_vectors @ res.right_vectors.T
            for i in range(k):
                assert abs(G[i, i] - 1.0) < 1e-12
                for j in range(i + 1, k):
                    assert abs(G[i, j]) < 1e-8
            assert all(a >= b for a, b in zip(res.singular_values,
                                              res.singular_values[1:]))

    def test_sigma_squared_matches_gram_eigenvalue(self):
        rng = np.random.default_rng(17)
        for rows, cols in [(10, 7), (40, 100), (100, 30)]:
            M = rng.standard_normal((rows, cols)) / np.sqrt(rows)
            res = linalg.top_k_svd(M, 1)
            w, _ = linalg.full_symmetric_eig(M.T @ M)
            assert abs(res.singular_values[0] ** 2 - w[0]) < 1e-9

    def test_energy_bound_and_equality_at_full_rank(self):
        rng = np.random.default_rng(19)
        M = rng.standard_normal((9, 6))
        fro2 = float(np.sum(M * M))
        partial = linalg.top_k_svd(M, 3)
        assert np.sum(partial.singular_values ** 2) <= fro2 + 1e-9
        full = linalg.top_k_svd(M, 6)
        assert abs(np.sum(full.singular_values ** 2) - fro2) < 1e-8


class TestFullSymmetricEig:
    def test_diagonal(self):
        w, V = linalg.full_symmetric_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(w, [3.0, 2.0, 1.0], atol=1e-14)
        # eigenvectors are the axes, in eigenvalue order
        np.testing.assert_allclose(np.abs(V),
                                   np.eye(3)[:, [0, 2, 1]], atol=1e-12)

    def test_exchange_matrix(self):
        w, V = linalg.full_symmetric_eig([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-14)
        r2 = 1.0 / np.sqrt(2)
        assert subspace_angle(V[:, 0], np.array([r2, r2])) < 1e-10
        assert subspace_angle(V[:, 1], np.array([r2, -r2])) < 1e-10

    def test_reconstruction(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((12, 12))
        S = 0.5 * (A + A.T)
        w, V = linalg.full_symmetric_eig(S)
        np.testing.assert_allclose(V @ np.diag(w) @ V.T, S, atol=1e-10)
        np.testing.assert_allclose(V.T @ V, np.eye(12), atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(InputError):
            linalg.full_symmetric_eig([[0.0, 1.0], [0.0, 0.0]])

    def test_rejects_oversize(self):
        with pytest.raises(InputError):
            linalg.full_symmetric_eig(np.eye(513))


class TestSpectralNormDiff:
    def test_equal_matrices(self):
        A = np.diag([1.0, 2.0])
        assert linalg.spectral_norm_diff(A, A) == 0.0

    def test_rank_one_difference(self):
        assert abs(linalg.spectral_norm_diff(np.diag([1.0, 0.0]),
                                             np.diag([0.0, 0.0])) - 1.0) < 1e-12

    def test_matches_jacobi_oracle(self):
        rng = np.random.default_rng(29)
        X = rng.standard_normal((10, 10))
        Y = rng.standard_normal((10, 10))
        A, B = 0.5 * (X + X.T), 0.5 * (Y + Y.T)
        w, _ = linalg.full_symmetric_eig(A - B)
        oracle = float(np.max(np.abs(w)))
        assert abs(linalg.spectral_norm_diff(A, B) - oracle) < 1e-9

    def test_large_path_uses_power_iteration(self):
        rng = np.random.default_rng(31)
        X = rng.standard_normal((150, 150))
        A = 0.5 * (X + X.T)
        B = np.zeros_like(A)
        got = linalg.spectral_norm_diff(A, B)
        expected = float(np.max(np.abs(np.linalg.eigvalsh(A))))
        assert abs(got - expected) < 1e-7 * expected

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            linalg.spectral_norm_diff(np.eye(2), np.eye(3))


class TestMatrixIO:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(37)
        A = rng.standard_normal((7, 5))
        path = tmp_path / "m.mat"
        linalg.save_matrix(path, A)
        B = linalg.load_matrix(path)
        np.testing.assert_array_equal(A, B)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.mat"
        linalg.save_matrix(path, np.eye(3))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(InputError):
            linalg.load_matrix(path)

    def test_header_only_and_garbage(self, tmp_path):
        path = tmp_path / "m.mat"
        path.write_bytes(b"\x01\x02\x03")
        with pytest.raises(InputError):
            linalg.load_matrix(path)

    def test_csv_reader(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1.0,2.0\n3.5,-4.25\n")
        M = linalg.load_matrix_csv(path)
        np.testing.assert_array_equal(M, [[1.0, 2.0], [3.5, -4.25]])

    def test_csv_ragged(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1.0,2.0\n3.5\n")
        with pytest.raises(InputError):
            linalg.load_matrix_csv(path)

    def test_csv_writer_round_trip(self, tmp_path):
        rng = np.random.default_rng(41)
        A = rng.standard_normal((3, 4))
        path = tmp_path / "m.csv"
        linalg.save_matrix_csv(path, A)
        np.testing.assert_array_equal(linalg.load_matrix_csv(path), A)
