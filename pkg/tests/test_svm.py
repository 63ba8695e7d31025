import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdefs import _backend, svm
from bdefs.svm import SvmParams

compiled = pytest.mark.skipif(_backend.BACKEND != "cython", reason="extension not built")


def blobs(seed, n=100, margin=1.0):
    """Two 2-D blobs separated by a gap of at least ``2 * margin`` along x."""
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = rng.normal(size=(n, 2)) * 0.5
    x[:, 0] = np.abs(x[:, 0]) + margin
    x[:, 0] *= y
    return x, y


def test_standardizer_examples():
    s = svm.fit_standardizer(np.array([[1.0], [3.0]]))
    assert s.mean[0] == 2.0 and s.scale[0] == 1.0
    assert svm.standardize(s, [[1.0], [3.0]]).ravel().tolist() == [-1.0, 1.0]
    c = svm.fit_standardizer(np.full((3, 1), 5.0))
    assert c.scale[0] == 1.0
    assert np.all(c.transform(np.full((3, 1), 5.0)) == 0)
    z = np.array([[-1.0], [1.0]])
    assert np.allclose(svm.fit_standardizer(z).transform(z), z, atol=1e-9)
    with pytest.raises(ValueError):
        svm.fit_standardizer(np.zeros((0, 2)))


@settings(max_examples=40)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**31))
def test_standardizer_properties(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 100, d) + rng.uniform(-50, 50, d)
    s = svm.fit_standardizer(x)
    z = s.transform(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(s.scale > 0)
    assert np.allclose(s.inverse_transform(z), x, rtol=0, atol=1e-10 * max(1, np.abs(x).max()))


def test_train_binary_1d():
    f = svm.train_binary(np.array([[-2.0], [-1.0], [1.0], [2.0]]), [-1, -1, 1, 1])
    assert f.weights[0] > 0
    pred = np.sign(np.array([-2, -1, 1, 2]) * f.weights[0] + f.bias)
    assert pred.tolist() == [-1, -1, 1, 1]


@pytest.mark.parametrize("seed", range(5))
def test_separable_blobs_and_monotone_objective(seed):
    x, y = blobs(seed)
    f = svm.train_binary(x, y, SvmParams(seed=seed))
    assert np.all(np.sign(x @ f.weights + f.bias) == y)
    assert np.all(np.diff(f.objectives) <= 1e-12)


def test_reported_objective_is_returned_iterate():
    x, y = blobs(3)
    p = SvmParams(C=1.0)
    f = svm.train_binary(x, y, p)
    w = np.append(f.weights, f.bias)
    xa = np.hstack([x, np.ones((len(x), 1))])
    primal = 0.5 * w @ w + p.C * np.maximum(0, 1 - y * (xa @ w)).sum()
    assert primal == pytest.approx(f.objectives[-1], rel=1e-12)
    assert f.objectives[-1] <= f.raw_objectives.min() + 1e-12


def test_degenerate_identical_points_terminates():
    x = np.zeros((6, 2))
    y = np.array([1, -1, 1, -1, 1, -1.0])
    f = svm.train_binary(x, y, SvmParams(max_epochs=50))
    assert np.all(np.isfinite(f.weights)) and np.isfinite(f.bias)


@pytest.mark.parametrize("bad", [
    (np.ones((3, 1)), [1, 1, 1]),
    (np.array([[np.nan], [1.0]]), [1, -1]),
    (np.ones((3, 1)), [1, -1]),
    (np.ones((2, 1)), [1, 2]),
])
def test_train_binary_errors(bad):
    with pytest.raises(ValueError):
        svm.train_binary(*bad)


def test_params_validation():
    with pytest.raises(ValueError):
        SvmParams(C=0)


def three_blobs(seed, n=150):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 6], [6, -4], [-6, -4]], float)
    y = np.arange(n) % 3
    return centers[y] + rng.normal(size=(n, 2)), y


def test_train_ovr_three_blobs():
    x, y = three_blobs(0)
    m = svm.train_ovr(x, y)
    assert m.n_classes == 3 and m.n_features == 2
    assert np.mean(m.predict(x) == y) >= 0.99


def test_train_ovr_single_class_error():
    with pytest.raises(ValueError):
        svm.train_ovr(np.ones((4, 2)), [1, 1, 1, 1])


def test_two_class_scores_mirror_binary_decision():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(80, 3))
    y = (x[:, 0] + 0.3 * rng.normal(size=80) > 0).astype(int)
    m = svm.train_ovr(x, y)
    s = m.decision_scores(x)
    # both binary problems see the same data with flipped labels
    assert np.allclose(s[:, 0], -s[:, 1], atol=1e-6)
    assert np.array_equal(m.predict(x), (s[:, 1] > 0).astype(int))


def test_predict_argmax_and_ties():
    std = svm.Standardizer(np.zeros(3), np.ones(3))
    m = svm.SvmModel(np.eye(3), np.zeros(3), std)
    assert m.predict([[0.2, 0.9, 0.1]]).tolist() == [1]
    assert m.predict([[0.5, 0.5, 0.1]]).tolist() == [0]
    with pytest.raises(ValueError):
        m.predict([[1.0, 2.0]])


def test_determinism():
    x, y = three_blobs(4)
    a = svm.train_ovr(x, y, SvmParams(seed=9))
    b = svm.train_ovr(x, y, SvmParams(seed=9))
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)


def test_affine_rescaling_invariance():
    rng = np.random.default_rng(5)
    x, y = three_blobs(5)
    x = np.hstack([x, rng.normal(size=(len(x), 2))])
    scale = np.array([3.0, 0.01, 250.0, 7.0])
    shift = np.array([-4.0, 100.0, 0.5, 1e3])
    a = svm.train_ovr(x, y)
    b = svm.train_ovr(x * scale + shift, y)
    sa, sb = a.decision_scores(x), b.decision_scores(x * scale + shift)
    assert np.allclose(sa, sb, atol=1e-7)
    assert np.array_equal(a.predict(x), b.predict(x * scale + shift))


def test_column_masking_equivalence():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(60, 8))
    y = rng.integers(0, 3, 60)
    mask = np.array([1, 0, 1, 1, 0, 0, 1, 0], bool)
    a = svm.train_ovr(x[:, mask], y)
    b = svm.train_ovr(np.ascontiguousarray(x[:, np.flatnonzero(mask)]), y)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)


def test_model_text_roundtrip(tmp_path):
    x, y = three_blobs(7)
    m = svm.train_ovr(x, y)
    p = tmp_path / "m.svm"
    m.save(p)
    assert p.read_text().splitlines()[0] == "svm v1 3 2"
    r = svm.SvmModel.load(p)
    assert np.array_equal(r.weights, m.weights)
    assert np.array_equal(r.biases, m.biases)
    assert np.array_equal(r.standardizer.mean, m.standardizer.mean)
    assert np.array_equal(r.standardizer.scale, m.standardizer.scale)
    with pytest.raises(ValueError):
        svm.SvmModel.from_text("svm v2 3 2\n")


def test_missing_class_in_training_gets_zero_model():
    x, y = three_blobs(8)
    keep = y != 1
    m = svm.train_ovr(x[keep], y[keep], n_classes=3)
    assert np.all(m.weights[1] == 0) and m.biases[1] == -1.0
    assert 1 not in set(m.predict(x[keep]))


@compiled
@pytest.mark.parametrize("seed", range(4))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 5))
    y = np.where(x[:, 0] + 0.5 * rng.normal(size=40) > 0, 1.0, -1.0)
    p = SvmParams(seed=seed, max_epochs=200)
    a = svm.train_binary(x, y, p, backend="cython")
    b = svm.train_binary(x, y, p, backend="python")
    assert a.epochs == b.epochs
    assert np.allclose(a.weights, b.weights, atol=1e-10)
    assert np.allclose(a.objectives, b.objectives, rtol=1e-12)
