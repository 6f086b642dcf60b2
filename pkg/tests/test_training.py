import json

import numpy as np
import pytest

from jacgc import autodiff as ad
from jacgc import model as M
from jacgc import training as TR
from jacgc.regularizer import RegularizerSpec


def test_standardize_round_trip_and_constant_column():
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 3))
    x[:, 2] = 7.0
    z, st = TR.standardize(x)
    np.testing.assert_allclose(z[:, :2].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z[:, :2].std(axis=0), 1, atol=1e-12)
    assert st.stds[2] == 1.0 and not z[:, 2].any()
    np.testing.assert_allclose(st.inverse(z), x, atol=1e-12)


def test_standardize_already_standard_is_identity():
    z0, _ = TR.standardize(np.random.default_rng(1).normal(size=(40, 2)))
    z1, st = TR.standardize(z0)
    np.testing.assert_allclose(z1, z0, atol=1e-12)
    np.testing.assert_allclose(st.means, 0, atol=1e-12)


def test_standardize_needs_two_rows():
    with pytest.raises(ValueError):
        TR.standardize(np.ones((1, 3)))


def test_window_enumeration():
    data = TR.window(np.arange(1.0, 6.0)[:, None], 3)
    np.testing.assert_array_equal(data.inputs, [[1, 2, 3], [2, 3, 4]])
    np.testing.assert_array_equal(data.targets, [[4], [5]])


def test_window_layout_two_variables():
    x = np.column_stack([np.arange(10.0), 100 + np.arange(10.0)])
    data = TR.window(x, 3)
    assert data.M == 7
    # oldest lag first within each variable
    np.testing.assert_array_equal(data.inputs[0], [0, 1, 2, 100, 101, 102])
    np.testing.assert_array_equal(data.targets[0], [3, 103])
    for i in range(2):
        for a in range(1, 4):
            assert data.inputs[0, M.input_index(i, a, 3)] == x[3 - a, i]


def test_window_too_short():
    with pytest.raises(ValueError):
        TR.window(np.ones((3, 2)), 3)


def test_validation_split_is_chronological_tail():
    data = TR.window(np.arange(24.0)[:, None], 3)  # M = 21
    tr, va = data.split(0.2)
    assert va.M == 5 and tr.M == 16
    assert tr.targets.max() < va.targets.min()
    np.testing.assert_array_equal(va.targets[:, 0], np.arange(19.0, 24.0))
    tr0, va0 = data.split(0.0)
    assert va0.M == 0 and tr0.M == 21


def _loss_value(params, cfg, x, y, reg):
    t = ad.Tape()
    pv = {k: t.leaf(v, requires_grad=True) for k, v in params.items()}
    total, fit, _ = TR.loss(pv, cfg, t.leaf(x, requires_grad=True), t.const(y), reg)
    return float(total.value), float(fit.value)


def _affine_identity():
    cfg = M.ResidualMlpConfig(dim=2, lag=1, hidden=2)
    p = M.init(cfg, 0)
    p["fc1.weight"] = np.zeros((2, 2))
    p["fc2.weight"] = np.zeros((2, 2))
    return p, cfg


def test_loss_hand_case():
    p, cfg = _affine_identity()
    total, fit = _loss_value(p, cfg, np.zeros((1, 2)), np.array([[1.0, 0.0]]), RegularizerSpec(lam=0.0))
    assert total == fit == 0.5


def test_loss_zero_for_perfect_zero_model():
    p, cfg = _affine_identity()
    total, _ = _loss_value(p, cfg, np.ones((3, 2)), np.zeros((3, 2)), RegularizerSpec("fro_exact", lam=5.0))
    assert total == 0.0


def test_loss_adds_lambda_times_penalty():
    p, cfg = _affine_identity()
    p["fc1.weight"] = np.eye(2)
    p["fc2.weight"] = np.array([[1.0, 2.0], [3.0, 4.0]])
    x, y = np.zeros((2, 2)), np.ones((2, 2))
    total, fit = _loss_value(p, cfg, x, y, RegularizerSpec("fro_exact", lam=0.1))
    assert fit == pytest.approx(1.0)
    assert total == pytest.approx(1.0 + 0.1 * 30.0, rel=1e-12)


def test_adam_single_step_closed_form():
    # f(w) = 0.5 * a * w^2, gradient a * w
    a, w0, lr = 3.0, np.array([2.0, -1.5]), 0.01
    b1, b2, eps = 0.9, 0.999, 1e-8
    p = {"w": w0.copy()}
    opt = TR.Adam(p, lr, b1, b2, eps)
    g = a * w0
    opt.step(p, {"w": g})
    m, v = (1 - b1) * g, (1 - b2) * g * g
    expected = w0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    np.testing.assert_allclose(p["w"], expected, atol=1e-12)
    # first step of Adam moves each coordinate by about lr against the gradient sign
    np.testing.assert_allclose(np.abs(p["w"] - w0), lr, rtol=1e-6)


def test_sgd_step():
    p = {"w": np.array([1.0])}
    TR.SGD(p, 0.1).step(p, {"w": np.array([2.0])})
    assert p["w"][0] == pytest.approx(0.8)


def _rotation_series(T=300, theta=0.3):
    rot = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])
    x = np.empty((T, 2))
    x[0] = [1.0, 0.0]
    for t in range(1, T):
        x[t] = x[t - 1] @ rot
    return x


def test_affine_model_fits_noiseless_var():
    mc = M.ResidualMlpConfig(dim=2, lag=1, hidden=8)
    tc = TR.TrainConfig(lag=1, regularizer=RegularizerSpec(lam=0.0), learning_rate=1e-2, epochs=200,
                        batch_size=50, seed=0)
    _, report = TR.train(_rotation_series(), mc, tc)
    assert report.train_mse[-1] < 1e-4


def _var_data(T=200):
    from jacgc import datagen as G
    spec = G.var_random_coeffs(3, 2, seed=1)
    return G.var_simulate(spec, T, seed=1)[0].values


def _mean_fro(params, cfg, values, lag):
    data, _ = TR.prepare(values, lag, True)
    jac = M.batch_jacobian(params, cfg, data.inputs)
    return float(np.mean(np.sum(jac ** 2, axis=(1, 2))))


def test_huge_lambda_shrinks_jacobian():
    x = _var_data()
    mc = M.ResidualMlpConfig(dim=3, lag=2, hidden=10)
    base = dict(lag=2, learning_rate=1e-2, epochs=60, batch_size=50, seed=3)
    p0, _ = TR.train(x, mc, TR.TrainConfig(regularizer=RegularizerSpec("fro_exact", lam=0.0), **base))
    p1, _ = TR.train(x, mc, TR.TrainConfig(regularizer=RegularizerSpec("fro_exact", lam=1e3), **base))
    assert _mean_fro(p1, mc, x, 2) < 0.01 * _mean_fro(p0, mc, x, 2)


def test_training_is_deterministic_and_loss_decreases():
    x = _var_data()
    mc = M.ResidualMlpConfig(dim=3, lag=2, hidden=6, n_residual=1, dropout_rate=0.2)
    tc = TR.TrainConfig(lag=2, regularizer=RegularizerSpec(lam=0.01), epochs=15, batch_size=40, seed=11)
    p1, r1 = TR.train(x, mc, tc)
    p2, r2 = TR.train(x, mc, tc)
    assert r1.to_dict() == r2.to_dict()
    assert M.serialize(p1, mc) == M.serialize(p2, mc)
    assert r1.train_loss[-1] < r1.train_loss[0]
    assert len(r1.val_loss) == 15 and all(np.isfinite(r1.val_loss))
    p3, r3 = TR.train(x, mc, TR.TrainConfig(lag=2, regularizer=RegularizerSpec(lam=0.01), epochs=15,
                                            batch_size=40, seed=12))
    assert r3.train_loss != r1.train_loss


def test_no_validation_split_reports_without_nan():
    mc = M.ResidualMlpConfig(dim=3, lag=2, hidden=4)
    tc = TR.TrainConfig(lag=2, epochs=2, val_fraction=0.0)
    _, report = TR.train(_var_data(60), mc, tc)
    assert report.val_loss == []
    json.dumps(report.to_dict(), allow_nan=False)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_location():
    x = _var_data(60) * 1e200
    mc = M.ResidualMlpConfig(dim=3, lag=2, hidden=4)
    tc = TR.TrainConfig(lag=2, epochs=2, standardize=False)
    with pytest.raises(TR.TrainingError, match="epoch 1, batch 1"):
        TR.train(x, mc, tc)


def test_train_rejects_dim_mismatch():
    mc = M.ResidualMlpConfig(dim=2, lag=2)
    with pytest.raises(TR.ConfigError):
        TR.train(_var_data(60), mc, TR.TrainConfig(lag=2, epochs=1))


def test_train_config_validation():
    for bad in (dict(learning_rate=0.0), dict(epochs=0), dict(batch_size=0), dict(val_fraction=0.6),
                dict(optimizer="rmsprop")):
        with pytest.raises(TR.ConfigError):
            TR.TrainConfig(**bad)


def test_parse_run_config_defaults_and_unknown_keys():
    run = TR.parse_run_config({"dim": 4, "lag": 3})
    assert run["hidden"] == 50 and run["regularizer"] == "fro_random_projection" and run["epochs"] == 2000
    with pytest.raises(TR.ConfigError, match="learning_rate"):
        TR.parse_run_config({"dim": 4, "lag": 3, "learning_rate": 0.1})
    with pytest.raises(TR.ConfigError, match="lag"):
        TR.parse_run_config({"dim": 4})
    with pytest.raises(TR.ConfigError):
        TR.parse_run_config({"dim": 2.5, "lag": 1})
    with pytest.raises(TR.ConfigError):
        TR.parse_run_config({"dim": 2, "lag": 1, "standardize": "maybe"})


def test_load_run_config_formats(tmp_path):
    js = tmp_path / "a.json"
    js.write_text(json.dumps({"dim": 3, "lag": 2, "lambda": 0.01, "standardize": False}))
    kv = tmp_path / "a.cfg"
    kv.write_text("# comment\ndim = 3\nlag = 2\nlambda = 0.01  # trailing\nstandardize = false\n")
    assert TR.load_run_config(js) == TR.load_run_config(kv)
    bad = tmp_path / "b.cfg"
    bad.write_text("dim 3\n")
    with pytest.raises(TR.ConfigError, match=":1"):
        TR.load_run_config(bad)


def test_build_configs_maps_keys():
    mc, tc = TR.build_configs(TR.parse_run_config(
        {"dim": 5, "lag": 4, "hidden": 7, "n_residual": 2, "dropout": 0.1, "lambda": 0.5, "lr": 0.01}))
    assert (mc.dim, mc.lag, mc.hidden, mc.n_residual, mc.dropout_rate) == (5, 4, 7, 2, 0.1)
    assert tc.regularizer.lam == 0.5 and tc.learning_rate == 0.01 and tc.lag == 4
    with pytest.raises(TR.ConfigError):
        TR.build_configs(TR.parse_run_config({"dim": 5, "lag": 4, "regularizer": "l2"}))
