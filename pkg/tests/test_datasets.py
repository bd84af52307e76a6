import numpy as np
import pytest

from clipflow.datasets import DatasetError, DatasetSpec, generate, load_csv


def test_regression_is_deterministic_and_standardized():
    spec = DatasetSpec("synthetic_regression", n=50, dim=3, seed=4, split=0.8)
    a, at = generate(spec)
    b, _ = generate(spec)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    assert len(a) == 40 and len(at) == 10
    assert np.allclose(a.inputs.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(a.inputs.std(axis=0), 1)


def test_feature_scale_multiplies_inputs():
    base, _ = generate(DatasetSpec("synthetic_regression", n=20, dim=2, split=1.0))
    big, _ = generate(DatasetSpec("synthetic_regression", n=20, dim=2, split=1.0, feature_scale=3.0))
    assert np.allclose(big.inputs, 3 * base.inputs)


def test_blobs_and_moons_are_one_hot():
    tr, te = generate(DatasetSpec("gaussian_blobs", n=60, dim=4, classes=3, split=0.5))
    assert tr.classification and tr.targets.shape == (30, 3)
    assert set(np.concatenate([tr.labels, te.labels]).tolist()) == {0, 1, 2}
    tr, _ = generate(DatasetSpec("two_moons", n=20, dim=2, noise=0.1, split=1.0))
    assert tr.targets.shape == (20, 2)


def test_full_split_has_no_test_set():
    _, te = generate(DatasetSpec(n=10, split=1.0))
    assert te is None


def test_csv_round_trip(tmp_path):
    x = np.arange(12.0).reshape(6, 2)
    y = x @ [1.0, -1.0]
    p = tmp_path / "d.csv"
    p.write_text("a,target,b\n" + "".join(f"{r[0]},{t},{r[1]}\n" for r, t in zip(x, y)))
    tr, te = load_csv(p, "target", DatasetSpec(kind="csv", split=1.0, standardize=False))
    assert te is None
    order = np.argsort(tr.inputs[:, 0])
    assert np.array_equal(tr.inputs[order], x)
    assert np.array_equal(tr.targets[order, 0], y)


def test_csv_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3,4\n")
    with pytest.raises(DatasetError, match="no column named 'y'"):
        load_csv(p, "y")
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_csv(p, "b")
    p.write_text("a,b\n1,x\n3,4\n")
    with pytest.raises(DatasetError, match="non-numeric"):
        load_csv(p, "b")


def test_spec_validation():
    with pytest.raises(DatasetError):
        DatasetSpec("mnist")
    with pytest.raises(DatasetError):
        DatasetSpec(split=0.0)
    with pytest.raises(DatasetError):
        DatasetSpec("two_moons", dim=3)
    with pytest.raises(DatasetError):
        DatasetSpec(feature_scale=0.0)
