import hashlib
import os

import numpy as np
import pytest

from spherefm.corpus import load_corpus
from spherefm.fit import FitConfig, fit_corpus, fit_mesh
from spherefm.metrics import build_report
from spherefm.model import fit_pca, identity, load_model, project, reconstruct
from spherefm.mesh import rmse_point_to_point
from spherefm.synth import SynthConfig, generate, grid_shape, oracle_report, sample_centers, write_synth
from spherefm.train import read_codes_csv

SMALL = dict(vertex_count=60, d_true=5, n_identities=4, samples_per_identity=3)


def test_same_seed_bit_identical():
    a, ta = generate(SynthConfig(**SMALL, seed=2))
    b, tb = generate(SynthConfig(**SMALL, seed=2))
    np.testing.assert_array_equal(a.matrix(), b.matrix())
    np.testing.assert_array_equal(ta.model.basis, tb.model.basis)
    np.testing.assert_array_equal(a.labels, b.labels)
    c, _ = generate(SynthConfig(**SMALL, seed=3))
    assert not np.array_equal(a.matrix(), c.matrix())


def test_written_files_byte_identical(tmp_path):
    def digest(directory):
        return {n: hashlib.sha256((directory / n).read_bytes()).hexdigest() for n in sorted(os.listdir(directory))}

    for name in ("a", "b"):
        corpus, truth = generate(SynthConfig(**SMALL, seed=5))
        write_synth(corpus, truth, tmp_path / name)
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert {"labels.csv", "truth.sfmb", "truth_codes.csv"} <= set(digest(tmp_path / "a"))


def test_written_corpus_round_trips(tmp_path):
    corpus, truth = generate(SynthConfig(**SMALL, seed=1))
    write_synth(corpus, truth, tmp_path)
    back = load_corpus(tmp_path)
    np.testing.assert_allclose(back.matrix(), corpus.matrix(), rtol=0, atol=0)
    np.testing.assert_array_equal(back.labels, corpus.labels)
    np.testing.assert_array_equal(load_model(tmp_path / "truth.sfmb").basis, truth.model.basis)
    codes, labels = read_codes_csv(tmp_path / "truth_codes.csv")
    assert len(codes) == len(corpus)
    np.testing.assert_array_equal(identity(codes[0]), identity(truth.codes[0]))


def test_truth_invariants():
    corpus, truth = generate(SynthConfig(**SMALL, within_identity_angle=0.2, seed=4))
    B = truth.model.basis
    assert np.linalg.norm(B.T @ B - np.eye(B.shape[1])) < 1e-12
    np.testing.assert_allclose(np.linalg.norm(truth.centers, axis=1), 1.0, atol=1e-12)
    cos = truth.centers @ truth.centers.T
    assert np.all(cos[~np.eye(len(cos), dtype=bool)] <= np.cos(0.4) + 1e-12)
    assert all(c.s > 0 for c in truth.codes)
    assert corpus.n_classes == 4 and len(corpus) == 12
    assert list(corpus.labels) == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_noise_free_corpus_is_in_span():
    corpus, truth = generate(SynthConfig(**SMALL, vertex_noise=0.0, seed=0))
    for mesh in corpus.meshes:
        assert rmse_point_to_point(reconstruct(truth.model, project(truth.model, mesh)), mesh) < 1e-9
    pca = fit_pca(corpus, SMALL["d_true"])
    worst = max(rmse_point_to_point(reconstruct(pca, project(pca, m)), m) for m in corpus.meshes)
    assert worst < 1e-9


def test_degenerate_clusters_fit_exactly():
    corpus, truth = generate(SynthConfig(**SMALL, within_identity_angle=0.0, vertex_noise=0.0, seed=6))
    for k in range(SMALL["n_identities"]):
        ids = [identity(c) for c, lab in zip(truth.codes, corpus.labels) if lab == k]
        for other in ids[1:]:
            np.testing.assert_allclose(other, ids[0], atol=1e-15)
    for mesh, code in zip(corpus.meshes, truth.codes):
        res = fit_mesh(truth.model, mesh, FitConfig(iterations=100))
        assert res.final_rmse < 1e-6
        assert np.linalg.norm(res.code.s * identity(res.code) - code.s * identity(code)) < 1e-6


def test_oracle_separable_config_scc_high():
    corpus, truth = generate(SynthConfig(vertex_count=100, d_true=16, n_identities=20, samples_per_identity=5,
                                         within_identity_angle=0.05, seed=0))
    assert oracle_report(truth, corpus).scc > 0.8


def test_truth_upper_bounds_fitted_codes():
    """Fitted codes through the true model never beat the generating codes (5% slack)."""
    for seed in range(10):
        corpus, truth = generate(SynthConfig(vertex_count=100, d_true=8, n_identities=6, samples_per_identity=5,
                                             seed=seed))
        ref = oracle_report(truth, corpus)
        codes, labels, rmses = fit_corpus(truth.model, corpus, FitConfig(iterations=0)).successful()
        got = build_report(codes, labels, rmses)
        for name in ("sce", "scc", "ch"):
            bound = getattr(ref, name)
            assert getattr(got, name) <= bound + 0.05 * abs(bound), (seed, name)


def test_oracle_single_identity_raises():
    corpus, truth = generate(SynthConfig(**{**SMALL, "n_identities": 1}, seed=0))
    with pytest.raises(ValueError, match="at least 2 classes"):
        oracle_report(truth, corpus)


def test_oracle_size_mismatch():
    corpus, truth = generate(SynthConfig(**SMALL, seed=0))
    with pytest.raises(ValueError, match="differ"):
        oracle_report(truth, corpus.subset(np.arange(3)))


def test_rejection_sampling_gives_up():
    with pytest.raises(RuntimeError, match="could not place"):
        sample_centers(10, 2, 1.5, np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [
    dict(vertex_count=0), dict(d_true=200, vertex_count=60), dict(vertex_noise=-1.0),
    dict(scale_mean=0.0), dict(vertex_count=7),
])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**{**SMALL, **kwargs}).validate()


def test_grid_shape():
    assert grid_shape(500) == (20, 25)
    assert grid_shape(36) == (6, 6)
    with pytest.raises(ValueError):
        grid_shape(13)
