import numpy as np
import pytest

import glsasm


@pytest.fixture(scope="module")
def corpus():
    return glsasm.generate_corpus(10, seed=4, image_size=240, occlude="25-31")


@pytest.fixture(scope="module")
def model(corpus):
    return glsasm.train(corpus)


def test_corpus_is_deterministic(corpus):
    again = glsasm.generate_corpus(10, seed=4, image_size=240, occlude="25-31")
    assert np.array_equal(corpus[3].image, again[3].image)
    assert corpus[0].image.shape == (240, 240)
    assert corpus[0].landmarks.dtype == np.complex128
    assert len(corpus[0].landmarks) == 40
    assert len(corpus[0].occlusions) == 1


def test_procrustes_and_pdm(corpus):
    aligned, transforms, mean = glsasm.procrustes_align([s.landmarks for s in corpus])
    assert len(aligned) == len(transforms) == 10
    assert np.linalg.norm(mean) == pytest.approx(1.0)
    pdm = glsasm.train_pdm(aligned, variance_fraction=1.0)
    assert pdm.n_landmarks == 40
    assert np.allclose(pdm.modes.T @ pdm.modes, np.eye(pdm.n_modes), atol=1e-10)
    b = np.full(pdm.n_modes, 10.0) * np.sqrt(pdm.eigenvalues)
    assert glsasm.plausibility(glsasm.constrain(b, pdm), pdm) <= pdm.xi + 1e-9


def test_gls_fit_recovers_in_model_shape(model):
    pdm = model.pdm
    b = 0.5 * np.sqrt(pdm.eigenvalues)
    pose = glsasm.SimilarityTransform(0.01 * np.exp(0.4j), 2 - 1j)
    targets = glsasm.reconstruct(b, pose, pdm)
    fit = glsasm.gls_fit(targets, pdm, inner_alternations=2000, objective_tol=0.0)
    assert np.abs(fit.landmarks - targets).max() < 1e-6
    weighted = glsasm.gls_fit(targets, pdm, weight=np.linspace(0.5, 2.0, 40), inner_alternations=2000,
                              objective_tol=0.0)
    assert np.abs(weighted.landmarks - targets).max() < 1e-6


def test_weighting_helpers():
    rng = np.random.default_rng(0)
    residuals = [rng.normal(size=6) + 1j * rng.normal(size=6) for _ in range(40)]
    r_hat, r_inv = glsasm.estimate_covariance(residuals, diagonal_only=False, shrinkage=0.2)
    e = np.array(residuals)
    assert np.allclose(glsasm.sample_residual_covariance(residuals), e.T @ e.conj() / 40)
    assert np.allclose(r_hat, r_hat.conj().T)
    assert np.all(np.linalg.eigvalsh(r_hat) >= -1e-12)
    assert r_inv.shape == (6, 6)

    assert glsasm.chi_square_upper_quantile(0.10, 10) == pytest.approx(15.987179, abs=1e-6)
    d = np.array([1, 2, 15.98, 15.99, np.inf, 0, 3, 7], dtype=float)
    flags, fallback, insufficient = glsasm.chi_square_gate(d)
    assert flags.tolist() == [1, 1, 1, 0, 0, 1, 1, 1]
    assert not fallback and not insufficient


def test_segment_and_errors(corpus, model):
    assert model.calibrated
    fit, iterations = glsasm.segment(model, corpus[0].image, glsasm.Strategy.gls_diagonal, iterations=20)
    assert iterations == 20
    err = [glsasm.point_to_contour_distance(p, corpus[0].landmarks) for p in fit.landmarks]
    assert np.isfinite(err).all()
    assert glsasm.parse_strategy("zhao") == glsasm.Strategy.zhao
    with pytest.raises(glsasm.Error, match="ConfigError"):
        glsasm.parse_strategy("ols")
    with pytest.raises(glsasm.Error, match="InvariantViolation"):
        glsasm.segment(model, np.zeros(5), glsasm.Strategy.identity)


def test_leave_one_out(corpus, tmp_path):
    cfg = glsasm.LooConfig()
    cfg.max_iterations = 10
    cfg.occluded_landmarks = list(range(25, 32))
    report = glsasm.run_leave_one_out(corpus[:6], [glsasm.Strategy.identity, glsasm.Strategy.gls_diagonal], cfg)
    assert report.image_ids == list(range(6))
    assert report.failures == []
    gls = report.find(glsasm.Strategy.gls_diagonal)
    assert gls.rmse.shape == (40,)
    assert np.isfinite(gls.group_rmse(cfg.occluded_landmarks))
    assert "gls_diagonal" in report.results_table()


def test_model_round_trip(model, tmp_path):
    path = tmp_path / "model.json"
    model.save(path)
    back = glsasm.load_model(path)
    assert np.array_equal(back.pdm.eigenvalues, model.pdm.eigenvalues)
    assert back.critical_value == model.critical_value
    assert glsasm.checksum(b"123456789") == "cbf43926"
