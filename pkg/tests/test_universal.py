import numpy as np
import pytest

from svdu import linalg, netcore, universal
from svdu.attacks import AttackConfig, AttackKind
from svdu.errors import InputError
from svdu.netcore import LabeledDataset, MlpModel, TrainConfig
from svdu.universal import AttackVectorSet


def linear_model(W, b=None):
    W = np.asarray(W, dtype=float)
    k, d = W.shape
    return MlpModel([d, k], [W.copy()],
                    [np.zeros(k) if b is None else np.asarray(b, dtype=float)])


def sign_corrected_distance(u, v):
    return min(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))


@pytest.fixture(scope="module")
def blob_model():
    rng = np.random.default_rng(10)
    n = 400
    X = np.concatenate([
        rng.standard_normal((n, 4)) * 0.06 + [0.3, 0.3, 0.5, 0.5],
        rng.standard_normal((n, 4)) * 0.06 + [0.7, 0.7, 0.5, 0.5],
    ])
    y = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    data = LabeledDataset(np.clip(X, 0, 1), y, name="blob4d")
    model = netcore.init_model([4, 16, 2], seed=10)
    netcore.train(model, data, TrainConfig(epochs=30, batch_size=16,
                                           learning_rate=0.5, rng_seed=10))
    assert netcore.accuracy(model, data) > 0.97
    return model, data


class TestBuildAttackMatrix:
    def test_single_sample(self, blob_model):
        model, data = blob_model
        vset = universal.build_attack_matrix(
            model, data, [0], AttackConfig(AttackKind.GRADIENT))
        assert vset.directions.shape == (1, 4)
        assert abs(np.linalg.norm(vset.directions[0]) - 1.0) < 1e-10

    def test_linear_binary_model_gives_rank_one(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal(3)
        model = linear_model(np.vstack([w, -w]))
        X = np.clip(rng.uniform(0.2, 0.8, size=(12, 3)), 0, 1)
        data = LabeledDataset(X, rng.integers(0, 2, 12), num_classes=2)
        vset = universal.build_attack_matrix(
            model, data, list(range(12)), AttackConfig(AttackKind.GRADIENT))
        # every gradient is parallel to w, so the stacked matrix has rank 1
        res = linalg.top_k_svd(vset.directions, 2)
        assert res.singular_values[1] < 1e-8 * res.singular_values[0]

    def test_row_norms_are_unit(self, blob_model):
        model, data = blob_model
        vset = universal.build_attack_matrix(
            model, data, list(range(64)), AttackConfig(AttackKind.GRADIENT))
        norms = np.linalg.norm(vset.directions, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-10

    def test_zero_directions_are_excluded(self):
        # logit gap 120 at the first point underflows the softmax tail; the
        # other two stay within gradient range
        model = linear_model(np.array([[60.0, 0.0], [-60.0, 0.0]]))
        X = np.array([[1.0, 0.0], [0.2, 0.5], [0.15, 0.55]])
        data = LabeledDataset(X, [0, 0, 1], num_classes=2)
        vset = universal.build_attack_matrix(
            model, data, [0, 1, 2], AttackConfig(AttackKind.GRADIENT))
        assert vset.excluded == [0]
        assert vset.sample_indices == [1, 2]

    def test_all_zero_directions_fatal(self):
        model = linear_model(np.array([[60.0, 0.0], [-60.0, 0.0]]))
        data = LabeledDataset(np.array([[1.0, 0.0]]), [0], num_classes=2)
        with pytest.raises(InputError):
            universal.build_attack_matrix(model, data, [0],
                                          AttackConfig(AttackKind.GRADIENT))

    def test_empty_indices(self, blob_model):
        model, data = blob_model
        with pytest.raises(InputError):
            universal.build_attack_matrix(model, data, [],
                                          AttackConfig(AttackKind.GRADIENT))


class TestSvdUniversal:
    def test_rank_one_set(self):
        rng = np.random.default_rng(12)
        u = rng.standard_normal(6)
        u /= np.linalg.norm(u)
        vset = AttackVectorSet(np.tile(u, (9, 1)), "gradient",
                               list(range(9)), [])
        pert = universal.svd_universal(vset)
        assert sign_corrected_distance(pert.direction, u) < 1e-8
        assert pert.source == "svd-gradient"
        assert pert.sample_size == 9

    def test_basis_rows_flag_degenerate(self):
        vset = AttackVectorSet(np.eye(5), "gradient", list(range(5)), [])
        pert = universal.svd_universal(vset)
        assert pert.spectral.degenerate_gap
        assert abs(np.linalg.norm(pert.direction) - 1.0) < 1e-10

    def test_matches_jacobi_top_eigenvector(self):
        rng = np.random.default_rng(13)
        D = rng.standard_normal((64, 32))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
        vset = AttackVectorSet(D, "deepfool", list(range(64)), [])
        pert = universal.svd_universal(vset)
        w, V = linalg.full_symmetric_eig(D.T @ D)
        cos = abs(float(pert.direction @ V[:, 0]))
        assert np.arccos(min(cos, 1.0)) < 1e-6

    def test_permutation_invariance(self):
        rng = np.random.default_rng(14)
        for trial in range(20):
            D = rng.standard_normal((10, 6))
            D /= np.linalg.norm(D, axis=1, keepdims=True)
            vset = AttackVectorSet(D, "fgsm", list(range(10)), [])
            base = universal.svd_universal(vset)
            perm = rng.permutation(10)
            shuffled = AttackVectorSet(D[perm], "fgsm", list(perm), [])
            other = universal.svd_universal(shuffled)
            assert sign_corrected_distance(base.direction,
                                           other.direction) < 1e-7

    def test_scaling_invariance_of_raw_vectors(self):
        # positive per-sample rescaling dies in normalization, so the
        # stacked matrix (hence the top vector) cannot change
        rng = np.random.default_rng(15)
        raw = rng.standard_normal((8, 5))
        scales = rng.uniform(0.1, 10.0, size=8)
        D1 = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        scaled = raw * scales[:, None]
        D2 = scaled / np.linalg.norm(scaled, axis=1, keepdims=True)
        np.testing.assert_allclose(D1, D2, atol=1e-12)


class TestSpectrum:
    def test_rank_one_spectrum(self):
        u = np.zeros(7)
        u[2] = 1.0
        vset = AttackVectorSet(np.tile(u, (16, 1)), "gradient",
                               list(range(16)), [])
        rep = universal.singular_value_spectrum(vset, k=3)
        assert abs(rep.singular_values[0] - 4.0) < 1e-10
        assert rep.singular_values[1] <= 1e-8 * rep.singular_values[0]
        assert abs(rep.lambda_hat - 1.0) < 1e-10

    def test_trace_identity_at_full_k(self):
        rng = np.random.default_rng(16)
        D = rng.standard_normal((12, 5))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
        vset = AttackVectorSet(D, "deepfool", list(range(12)), [])
        rep = universal.singular_value_spectrum(vset, k=5)
        assert abs(np.sum(rep.singular_values ** 2) / 12 - 1.0) < 1e-9
        assert abs(rep.trace_check - 1.0) < 1e-9
        assert rep.intrinsic_dimension >= 1.0 - 1e-9

    def test_k_cannot_exceed_dimensions(self):
        vset = AttackVectorSet(np.eye(3), "gradient", [0, 1, 2], [])
        with pytest.raises(InputError):
            universal.singular_value_spectrum(vset, k=4)

    def test_blob_model_spectra_emitted(self, blob_model):
        model, data = blob_model
        for kind in (AttackKind.GRADIENT, AttackKind.FGSM, AttackKind.DEEPFOOL):
            vset = universal.build_attack_matrix(
                model, data, list(range(48)), AttackConfig(kind, eps=0.05))
            rep = universal.singular_value_spectrum(vset, k=4)
            assert abs(rep.trace_check - 1.0) < 1e-9
            assert 0.0 <= rep.lambda_hat <= 1.0 + 1e-9
            assert rep.eigengap_ratio >= 0.0


class TestMdfff:
    def test_single_sample_reduces_to_deepfool(self, blob_model):
        from svdu.attacks import deepfool_attack
        model, data = blob_model
        pert = universal.mdfff_universal(model, data, [3], eps_budget=10.0)
        df = deepfool_attack(model, data.inputs[3])
        assert sign_corrected_distance(
            pert.direction, df.perturbation / df.l2_norm) < 1e-9
        assert pert.passes_used == 1
        assert pert.construction_fooling_rate == 1.0

    def test_binary_linear_one_pass_gives_w_direction(self):
        rng = np.random.default_rng(17)
        w = rng.standard_normal(3)
        model = linear_model(np.vstack([w, np.zeros(3)]))
        # all samples on the positive-margin side
        X = np.clip(np.abs(rng.uniform(0.2, 0.8, size=(10, 3)))
                    * np.sign(w)[None, :], -1, 1)
        X = np.clip(X * 0.5 + 0.5, 0, 1)
        margins = X @ w
        keep = margins > 0.05
        data = LabeledDataset(X[keep], np.zeros(int(keep.sum()), dtype=int),
                              num_classes=2)
        pert = universal.mdfff_universal(model, data,
                                         list(range(len(data))),
                                         eps_budget=100.0)
        assert pert.passes_used == 1
        assert pert.construction_fooling_rate == 1.0
        assert sign_corrected_distance(pert.direction,
                                       w / np.linalg.norm(w)) < 1e-9

    def test_budget_is_respected_and_target_reached(self, blob_model):
        model, data = blob_model
        indices = list(range(32))
        pert = universal.mdfff_universal(model, data, indices,
                                         eps_budget=0.6, target_fooling=0.8,
                                         max_passes=10)
        assert pert.construction_fooling_rate >= 0.8
        assert abs(np.linalg.norm(pert.direction) - 1.0) < 1e-10

    def test_parameter_validation(self, blob_model):
        model, data = blob_model
        with pytest.raises(InputError):
            universal.mdfff_universal(model, data, [0], eps_budget=0.0)
        with pytest.raises(InputError):
            universal.mdfff_universal(model, data, [0], eps_budget=1.0,
                                      target_fooling=0.0)


class TestRandomDirection:
    def test_unit_norm(self):
        pert = universal.random_direction(33, seed=0)
        assert abs(np.linalg.norm(pert.direction) - 1.0) < 1e-12

    def test_distinct_seeds_differ(self):
        a = universal.random_direction(8, seed=1)
        b = universal.random_direction(8, seed=2)
        assert np.linalg.norm(a.direction - b.direction) > 1e-3

    def test_mean_projection_matches_sphere_moment(self):
        # E|<u, e>| for u uniform on the sphere is ~ sqrt(2 / (pi d))
        d = 100
        u = np.zeros(d)
        u[0] = 1.0
        samples = np.array([
            abs(float(universal.random_direction(d, seed=s).direction @ u))
            for s in range(1000)])
        expected = np.sqrt(2.0 / (np.pi * d))
        se = samples.std(ddof=1) / np.sqrt(len(samples))
        assert abs(samples.mean() - expected) <= 3 * se


class TestPerturbationIO:
    def test_round_trip(self, tmp_path, blob_model):
        model, data = blob_model
        vset = universal.build_attack_matrix(
            model, data, list(range(16)), AttackConfig(AttackKind.DEEPFOOL))
        pert = universal.svd_universal(vset)
        base = tmp_path / "universal_deepfool"
        universal.save_perturbation(base, pert)
        loaded = universal.load_perturbation(base)
        np.testing.assert_array_equal(loaded.direction, pert.direction)
        assert loaded.source == pert.source
        assert loaded.sample_size == pert.sample_size
        np.testing.assert_array_equal(loaded.spectral.singular_values,
                                      pert.spectral.singular_values)

    def test_spectrum_csv(self, tmp_path):
        vset = AttackVectorSet(np.eye(4), "gradient", list(range(4)), [])
        rep = universal.singular_value_spectrum(vset, k=4)
        path = tmp_path / "spectrum.csv"
        universal.write_spectrum_csv(path, rep)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "index,sigma,sigma_sq_over_n"
        assert len(lines) == 5

    def test_pgm_export(self, tmp_path):
        rng = np.random.default_rng(50)
        v = rng.standard_normal(16)
        v /= np.linalg.norm(v)
        path = tmp_path / "dir.pgm"
        universal.save_direction_pgm(path, v)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n4 4\n255\n")
        assert len(blob) == len(b"P5\n4 4\n255\n") + 16

    def test_pgm_requires_square_dimension(self, tmp_path):
        with pytest.raises(InputError):
            universal.save_direction_pgm(tmp_path / "x.pgm", np.ones(5))


class TestThreadedConstruction:
    def test_thread_count_does_not_change_results(self, blob_model,
                                                  monkeypatch):
        model, data = blob_model
        config = AttackConfig(AttackKind.DEEPFOOL)
        monkeypatch.delenv("SVDU_THREADS", raising=False)
        serial = universal.build_attack_matrix(model, data, list(range(24)),
                                               config)
        monkeypatch.setenv("SVDU_THREADS", "4")
        threaded = universal.build_attack_matrix(model, data, list(range(24)),
                                                 config)
        np.testing.assert_array_equal(serial.directions, threaded.directions)
        assert serial.sample_indices == threaded.sample_indices
