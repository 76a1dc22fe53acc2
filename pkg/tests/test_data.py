import numpy as np
import pytest

from saido.data import (
    ProtocolSpec,
    SampleSet,
    SceneSpec,
    TaskSpec,
    generate_task,
    load_feature_file,
    perturb_features,
    write_feature_file,
)


def spec(scale=1.0, d=16, n_train=400, n_test=400, seed=3, std=1.0, scenes=("a", "b", "c")):
    rng = np.random.default_rng(seed)
    shift = rng.standard_normal(d)
    shift /= np.linalg.norm(shift)
    return TaskSpec(
        "T", n_train, n_test, tuple(shift), scale,
        tuple(SceneSpec(s, tuple(3 * rng.standard_normal(d)), std) for s in scenes), seed,
    )


def logistic_probe(train, test, steps=500, lr=0.5):
    # plain gradient-descent logistic regression with standardized inputs
    mu, sd = train.X.mean(0), train.X.std(0) + 1e-12
    X, Xt = (train.X - mu) / sd, (test.X - mu) / sd
    w, b = np.zeros(X.shape[1]), 0.0
    for _ in range(steps):
        p = 1 / (1 + np.exp(-(X @ w + b)))
        w -= lr * X.T @ (p - train.y) / len(X)
        b -= lr * np.mean(p - train.y)
    return np.mean(((Xt @ w + b) > 0) == test.y)


def test_separable_task_is_learnable():
    s = spec(scale=10.0)
    train, test = generate_task(s)
    assert logistic_probe(train, test) >= 0.99


def test_null_signal_is_chance():
    train, test = generate_task(spec(scale=0.0, n_test=4000))
    assert abs(logistic_probe(train, test) - 0.5) <= 0.05


def test_generation_is_deterministic():
    a = generate_task(spec())
    b = generate_task(spec())
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert not a[0].equals(a[1])


@pytest.mark.parametrize("n", [6, 7, 31])
def test_balance_and_scene_coverage(n):
    train, test = generate_task(spec(n_train=n, n_test=n))
    for split in (train, test):
        assert abs(int(np.sum(split.y == 0)) - int(np.sum(split.y == 1))) <= 1
    for c in (0, 1):
        assert set(train.scenes[train.y == c]) == {"a", "b", "c"}


def test_class_statistics():
    s = spec(scale=2.0, n_train=6000, std=0.5)
    train, _ = generate_task(s)
    cent = np.array(s.scenes[0].centroid)
    real = train.X[(train.y == 0) & (train.scenes == "a")]
    fake = train.X[(train.y == 1) & (train.scenes == "a")]
    assert np.allclose(real.mean(0), cent, atol=0.06)
    assert np.allclose(fake.mean(0), cent + 2.0 * np.array(s.fake_shift), atol=0.06)
    assert abs(real.std(0).mean() - 0.5) < 0.02


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(n_train=1).validate()
    with pytest.raises(ValueError):
        spec(std=0.0).validate()
    with pytest.raises(ValueError):
        spec(scenes=("a", "a")).validate()
    with pytest.raises(ValueError):
        spec(n_train=4).validate()  # 3 scenes need 6 training samples
    dup = ProtocolSpec((spec(), spec()))
    with pytest.raises(ValueError, match="unique"):
        dup.validate()


def test_spec_dict_roundtrip_and_strict_keys():
    p = ProtocolSpec((spec(),), (TaskSpec("H", 4, 4, (0.0,) * 16, 0.0, (SceneSpec("a", (0.0,) * 16, 1.0),), 1),))
    assert ProtocolSpec.from_dict(p.to_dict()) == p
    d = spec().to_dict()
    d["extra"] = 1
    with pytest.raises(ValueError):
        TaskSpec.from_dict(d)


def test_feature_file_roundtrip(tmp_path):
    train, _ = generate_task(spec(n_train=30))
    path = tmp_path / "f.csv"
    write_feature_file(train, path)
    assert load_feature_file(path).equals(train)
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.startswith(b"label,scene,task,f0,")


def test_feature_file_happy_path(tmp_path):
    path = tmp_path / "ok.csv"
    path.write_text("label,scene,task,f0,f1\n0,a,T,1.5,2\n1,b,T,-1,0.25\n0,a,U,0,0\n")
    s = load_feature_file(path)
    assert len(s) == 3 and s.y.tolist() == [0, 1, 0] and s.X[1].tolist() == [-1.0, 0.25]
    assert s[2].task == "U"


@pytest.mark.parametrize(
    "body, where",
    [
        ("", "line 1"),
        ("lbl,scene,task,f0\n", "line 1"),
        ("label,scene,task,f0\n0,a,T,1\n2,a,T,1\n", "line 3"),
        ("label,scene,task,f0\n0,a,T\n", "line 2"),
        ("label,scene,task,f0\n0,a,T,x\n", "line 2"),
        ("label,scene,task,f0\n0,a,T,nan\n", "line 2"),
    ],
)
def test_feature_file_errors(tmp_path, body, where):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=where):
        load_feature_file(path)


def test_perturb():
    train, _ = generate_task(spec(n_train=10_000))
    same = perturb_features(train, 0.0, 1)
    assert same.equals(train)
    noisy = perturb_features(train, 0.3, 1)
    delta = noisy.X - train.X
    assert np.all(np.abs(delta.std(0) / 0.3 - 1) < 0.05)
    assert np.array_equal(noisy.y, train.y) and list(noisy.scenes) == list(train.scenes)
    assert perturb_features(train, 0.3, 1).equals(noisy)
    with pytest.raises(ValueError):
        perturb_features(train, -1.0, 1)


def test_sample_set_checks_lengths():
    with pytest.raises(ValueError):
        SampleSet(np.zeros((2, 3)), [0], ["a", "b"], ["t", "t"])
