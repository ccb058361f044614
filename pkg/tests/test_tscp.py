"""Transfer-prediction pipeline: sampling, labelling, fitting, metrics."""

import numpy as np
import pytest

from wildgrid.model import ParseError, SchemaError
from wildgrid.tscp import (
    MAX_NOISE_LEVEL,
    PerturbationSpec,
    TscpModel,
    build_dataset,
    evaluate,
    fit_linear,
    predict,
    sample_loads,
    train_model,
)

BASE_LOADS = np.array([120.0, 80.0, 100.0])


def affine_model(theta, theta0):
    return TscpModel(theta=tuple(theta), theta0=theta0, contingency_id="t", n=0, seed=0)


def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(distribution="levy")
    with pytest.raises(ValueError):
        PerturbationSpec(sigma=-0.1)
    with pytest.raises(ValueError):
        PerturbationSpec(truncation_sigmas=0.0)
    with pytest.raises(ValueError):
        PerturbationSpec(distribution="empirical")  # no factors given


def test_sampling_is_deterministic_and_bounded(corridor9):
    spec = PerturbationSpec(sigma=0.05, truncation_sigmas=3.0)
    a = sample_loads(corridor9, spec, 100, seed=11)
    b = sample_loads(corridor9, spec, 100, seed=11)
    c = sample_loads(corridor9, spec, 100, seed=12)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (100, 3)
    rel = a / BASE_LOADS
    # 3 sigma of 5% keeps factors in [0.85, 1.15]; the upper load limits sit
    # at the base point so the top clips to 1
    assert rel.min() >= 0.85 - 1e-12
    assert rel.max() <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        sample_loads(corridor9, spec, 0, seed=1)


def test_empirical_sampling(corridor9):
    spec = PerturbationSpec(distribution="empirical", empirical_factors=(0.9, 0.95))
    s = sample_loads(corridor9, spec, 50, seed=2)
    rel = np.round(s / BASE_LOADS, 12)
    assert set(np.unique(rel)) <= {0.9, 0.95}


def test_dataset_labels(corridor9, corridor_sequence):
    spec = PerturbationSpec(sigma=0.03)
    samples = sample_loads(corridor9, spec, 4, seed=7)
    ds = build_dataset(corridor9, samples, corridor_sequence)
    assert ds.load_ids == (1, 2, 3)
    assert len(ds.status) == 4
    assert set(ds.status) <= {"stable", "unstable", "failed"}
    for yk, st in zip(ds.y, ds.status):
        if st == "stable":
            assert yk == 0.0
        elif st == "unstable":
            assert yk > 0.0
        else:
            assert np.isnan(yk)


def test_dataset_marks_impossible_rows_failed(corridor9, corridor_sequence):
    # 1200 MW of load cannot be covered by 570 MW of capacity
    samples = np.vstack([BASE_LOADS, [400.0, 400.0, 400.0]])
    ds = build_dataset(corridor9, samples, corridor_sequence)
    assert ds.status[0] == "unstable"  # base point separates G1
    assert ds.status[1] == "failed"
    assert np.isnan(ds.y[1])
    assert list(ds.ok_rows) == [True, False]


def test_fit_recovers_exact_affine():
    rng = np.random.default_rng(0)
    x = rng.uniform(50.0, 150.0, size=(60, 3))
    theta_true = np.array([1.5, -0.25, 0.75])
    y = x @ theta_true + 12.5
    theta, theta0, ridge_used = fit_linear(x, y)
    assert not ridge_used
    assert np.allclose(theta, theta_true, atol=1e-9)
    assert theta0 == pytest.approx(12.5, abs=1e-8)


def test_fit_rank_deficient_falls_back_to_ridge():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.0, 1.0, size=(30, 2))
    x = np.hstack([x, x[:, :1]])  # duplicated column
    y = x[:, 0] + 2.0
    theta, theta0, ridge_used = fit_linear(x, y)
    assert ridge_used
    yhat = x @ theta + theta0
    assert np.allclose(yhat, y, atol=1e-4)
    with pytest.raises(ValueError, match="rank"):
        fit_linear(x, y, ridge_fallback=False)


def test_fit_input_validation():
    with pytest.raises(ValueError, match="NaN"):
        fit_linear(np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="mismatch"):
        fit_linear(np.ones((3, 2)), np.ones(4))


def test_predict_clamps_at_zero():
    model = affine_model([1.0, 1.0], -1000.0)
    assert predict(model, [10.0, 20.0]) == 0.0
    assert predict(model, [600.0, 500.0]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        predict(model, [1.0, 2.0, 3.0])


def test_metrics_perfect_model():
    model = affine_model([2.0], 5.0)
    x = np.array([[10.0], [20.0], [30.0]])
    y = np.array([25.0, 45.0, 65.0])
    m = evaluate(model, x, y)
    assert m.rmse == pytest.approx(0.0, abs=1e-12)
    assert m.r2 == pytest.approx(1.0)
    assert m.mbd == pytest.approx(0.0, abs=1e-12)
    assert m.robustness == 0.0
    assert m.n == 3


def test_metrics_noise_cap():
    model = affine_model([2.0], 5.0)
    x = np.array([[10.0], [20.0], [30.0]])
    y = np.array([25.0, 45.0, 65.0])
    with pytest.raises(ValueError):
        evaluate(model, x, y, noise_level=2 * MAX_NOISE_LEVEL)
    m = evaluate(model, x, y, noise_level=MAX_NOISE_LEVEL, seed=4)
    # a perfect model can only lose accuracy under input noise
    assert m.robustness >= 0.0


def test_model_json_round_trip():
    model = TscpModel(
        theta=(1.5, -0.25), theta0=3.75, contingency_id="fire-pair",
        n=64, seed=9, load_ids=(1, 2), cm=(1,), ridge_used=True,
    )
    again = TscpModel.from_json(model.to_json())
    assert again == model


def test_model_json_errors():
    with pytest.raises(ParseError):
        TscpModel.from_json("{not json")
    with pytest.raises(SchemaError, match="theta0"):
        TscpModel.from_json('{"theta": [1.0], "contingency_id": "x", "n": 1, "seed": 0}')


def test_training_pipeline(corridor9, corridor_sequence):
    model, ds = train_model(corridor9, corridor_sequence, "fire-pair", n=12, seed=5)
    assert model.contingency_id == "fire-pair"
    assert model.load_ids == (1, 2, 3)
    assert model.cm == (1,)  # G1 separates in every unstable sample
    assert not model.ridge_used
    assert all(np.isfinite(model.theta)) and np.isfinite(model.theta0)
    # the fit reproduces the measured base-point transfer closely
    assert predict(model, BASE_LOADS) == pytest.approx(45.32, abs=1.0)
    assert set(ds.status) == {"unstable"}
