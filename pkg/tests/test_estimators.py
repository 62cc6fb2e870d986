import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from semrd.ba import BAConfig, ba_solve
from semrd.core import binary_entropy
from semrd.estimators import BlahutArimotoSRD, NESRDEstimator
from semrd.sources import gaussian_benchmark, sample_gaussian

from _instances import binary_identity


class TestBlahutArimotoSRD:
    def test_params_round_trip(self):
        est = BlahutArimotoSRD(lambda1=-2.0, tol=1e-8)
        assert est.get_params() == {"lambda1": -2.0, "lambda2": -1.0, "max_iters": 2000, "tol": 1e-8}
        assert clone(est).set_params(lambda2=-3.0).lambda2 == -3.0

    def test_matches_solver(self):
        src, spec = binary_identity()
        est = BlahutArimotoSRD(-2.0, 0.0).fit(src, spec)
        point = ba_solve(src, spec, BAConfig(-2.0, 0.0))[0]
        assert est.point_.rate_nats == point.rate_nats
        assert est.score() == -point.rate_bits
        np.testing.assert_allclose(est.marginal_.sum(), 1.0, atol=1e-12)
        assert est.transform([0, 1]).shape == (2, 2, 2)

    def test_binary_value(self):
        src, spec = binary_identity()
        d = 0.1
        est = BlahutArimotoSRD(np.log(d / (1 - d)), 0.0).fit(src, spec)
        assert est.point_.rate_bits == pytest.approx(1 - binary_entropy(d), abs=1e-6)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            BlahutArimotoSRD().transform([0])


class TestNESRDEstimator:
    def test_params(self):
        est = NESRDEstimator(alpha1=-0.5)
        params = est.get_params()
        assert params["alpha1"] == -0.5 and params["learning_rate"] == 1e-4 and params["layer_sizes"] == (10, 5, 5, 5)

    def test_fit_transform_score(self):
        train = sample_gaussian(gaussian_benchmark(), 200, 3, m=100, seed=1)
        held = sample_gaussian(gaussian_benchmark(), 200, 3, m=100, seed=2)
        est = NESRDEstimator(epochs=2, batch_n1=32, learning_rate=1e-3).fit(train, held)
        assert est.losses_.shape == (2,) and est.point_.method == "nesrd"
        assert est.transform(np.zeros((4, 10))).shape == (4, 5)
        assert est.score(held) == pytest.approx(-est.point_.rate_bits)

    def test_zero_slopes(self):
        train = sample_gaussian(gaussian_benchmark(), 50, 1, m=20, seed=1)
        est = NESRDEstimator(alpha1=0.0, alpha2=0.0, epochs=1).fit(train)
        assert est.point_.rate_nats == 0.0

    def test_cross_entropy_head(self):
        from semrd.sources import synth_labeled

        data = synth_labeled(2, [[-2, 0], [2, 0]], np.eye(2), 100, seed=0).to_samples(latent=np.random.default_rng(0).normal(size=(30, 3)))
        est = NESRDEstimator(layer_sizes=(3, 4, 4), s_dim=2, semantic="cross_entropy", epochs=1).fit(data)
        out = est.transform(np.zeros((2, 3)))
        np.testing.assert_allclose(out[:, 2:].sum(axis=1), 1.0, atol=1e-12)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            NESRDEstimator().transform(np.zeros((1, 10)))
