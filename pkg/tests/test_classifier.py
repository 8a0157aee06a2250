"""Industry classification: MLP training math, persistence, metrics, LLM route."""

import numpy as np
import pytest

from sustainqa.classifier import (
    ClassifierMetrics,
    MlpConfig,
    MlpModel,
    llm_classify,
    load_model,
    load_training_rows,
    mlp_gradients,
    mlp_init,
    mlp_loss,
    mlp_predict,
    mlp_train,
    predict_proba,
    save_model,
    score,
    train_from_texts,
)
from sustainqa.generation import UnknownIndustryId
from sustainqa.providers.mock import MockProvider


def small_problem():
    rng = np.random.default_rng(100)
    X = rng.normal(size=(6, 4))
    Y = (rng.random((6, 3)) < 0.5).astype(float)
    return X, Y


def identity_model(threshold=0.6):
    eye = np.eye(2)
    return MlpModel(
        dims=(2, 2, 2, 2),
        weights=[eye.copy(), eye.copy(), eye.copy()],
        biases=[np.zeros(2), np.zeros(2), np.zeros(2)],
        labels=("a", "b"),
        threshold=threshold,
        seed=0,
    )


# --- gradients against central finite differences --------------------------------


def test_analytic_gradients_match_finite_differences_everywhere():
    X, Y = small_problem()
    model = mlp_init(4, 3, MlpConfig(hidden=(5, 4), seed=0))
    # finite differences need all pre-activations well away from the relu kink
    from sustainqa.classifier import _forward

    z1, _, z2, _, _ = _forward(model, X)
    assert min(np.abs(z1).min(), np.abs(z2).min()) > 1e-3

    dws, dbs = mlp_gradients(model, X, Y)
    h = 1e-6
    checked = 0
    for arr, grad in list(zip(model.weights, dws)) + list(zip(model.biases, dbs)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = mlp_loss(model, X, Y)
            arr[idx] = orig - h
            down = mlp_loss(model, X, Y)
            arr[idx] = orig
            numeric = (up - down) / (2 * h)
            assert grad[idx] == pytest.approx(numeric, abs=1e-5, rel=1e-5)
            checked += 1
    assert checked == 4 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3  # every parameter


def test_loss_is_stable_at_extreme_logits():
    model = identity_model()
    model.weights[2] = np.eye(2) * 1000.0
    X = np.array([[5.0, 5.0], [-5.0, -5.0]])
    Y = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss = mlp_loss(model, X, Y)
    assert np.isfinite(loss)
    probs = predict_proba(model, X)
    assert np.all((probs >= 0.0) & (probs <= 1.0))


# --- training ---------------------------------------------------------------------


def cluster_problem(n_per=20, seed=5):
    rng = np.random.default_rng(seed)
    centers = np.eye(3)
    X, Y = [], []
    for k in range(3):
        for _ in range(n_per):
            X.append(centers[k] + rng.normal(0, 0.05, size=3))
            row = [0.0, 0.0, 0.0]
            row[k] = 1.0
            Y.append(row)
    return np.asarray(X), np.asarray(Y)


def test_training_reduces_loss_and_separates_clusters():
    X, Y = cluster_problem()
    config = MlpConfig(hidden=(16, 8), learning_rate=0.5, epochs=150, seed=1)
    model = mlp_train(X, Y, ["a", "b", "c"], config)
    assert len(model.loss_history) == config.epochs + 1
    assert model.loss_history[-1] < model.loss_history[0] / 4
    preds = [mlp_predict(model, x) for x in X]
    truths = [tuple(lbl for lbl, on in zip("abc", row) if on) for row in Y]
    assert score(preds, truths).macro_f1 >= 0.9


def test_training_is_deterministic_per_seed():
    X, Y = cluster_problem(n_per=5)
    config = MlpConfig(hidden=(8, 4), epochs=20, seed=7)
    m1 = mlp_train(X, Y, ["a", "b", "c"], config)
    m2 = mlp_train(X, Y, ["a", "b", "c"], config)
    for w1, w2 in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)
    assert m1.loss_history == m2.loss_history
    m3 = mlp_train(X, Y, ["a", "b", "c"], MlpConfig(hidden=(8, 4), epochs=20, seed=8))
    assert not np.array_equal(m1.weights[0], m3.weights[0])


def test_training_input_validation():
    X, Y = cluster_problem(n_per=2)
    with pytest.raises(ValueError):
        mlp_train(X, Y[:3], ["a", "b", "c"])
    with pytest.raises(ValueError):
        mlp_train(X, Y, ["a", "b"])  # label count mismatch
    with pytest.raises(ValueError):
        mlp_train(X.ravel(), Y, ["a", "b", "c"])


# --- prediction -------------------------------------------------------------------


def test_predict_thresholds_per_label():
    model = identity_model(threshold=0.6)
    # relu chain passes positives through: logits (4, 0) -> probs (0.982, 0.5)
    assert mlp_predict(model, np.array([4.0, -4.0])) == ("a",)
    assert mlp_predict(model, np.array([4.0, 4.0])) == ("a", "b")


def test_predict_falls_back_to_argmax_when_nothing_clears():
    model = identity_model(threshold=0.9)
    assert mlp_predict(model, np.array([1.0, 2.0])) == ("b",)
    # ties take the first label, and the prediction is never empty
    assert mlp_predict(model, np.array([-5.0, -5.0])) == ("a",)


def test_predict_threshold_override_and_label_requirement():
    model = identity_model(threshold=0.9)
    assert mlp_predict(model, np.array([4.0, 4.0]), threshold=0.5) == ("a", "b")
    model.labels = ()
    with pytest.raises(ValueError):
        mlp_predict(model, np.array([1.0, 1.0]))


# --- persistence -------------------------------------------------------------------


def test_model_file_round_trip(tmp_path):
    X, Y = cluster_problem(n_per=4)
    model = mlp_train(X, Y, ["a", "b", "c"], MlpConfig(hidden=(8, 4), epochs=30, seed=2))
    path = tmp_path / "classifier.mlp"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.dims == model.dims
    assert loaded.labels == model.labels
    assert loaded.threshold == model.threshold
    assert loaded.seed == model.seed
    for w1, w2 in zip(model.weights, loaded.weights):
        assert np.array_equal(w1, w2)
    for b1, b2 in zip(model.biases, loaded.biases):
        assert np.array_equal(b1, b2)
    assert np.array_equal(predict_proba(model, X), predict_proba(loaded, X))


def test_model_file_rejects_truncation_and_trailing_bytes(tmp_path):
    X, Y = cluster_problem(n_per=2)
    model = mlp_train(X, Y, ["a", "b", "c"], MlpConfig(hidden=(4, 4), epochs=5))
    path = tmp_path / "classifier.mlp"
    save_model(model, path)
    blob = path.read_bytes()
    (tmp_path / "short.mlp").write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_model(tmp_path / "short.mlp")
    (tmp_path / "long.mlp").write_bytes(blob + b"\x00" * 8)
    with pytest.raises(ValueError):
        load_model(tmp_path / "long.mlp")


# --- metrics ----------------------------------------------------------------------


def test_score_three_example_fixture():
    predictions = [("A",), ("A", "B"), ("C",)]
    truths = [("A",), ("B",), ("B", "C")]
    m = score(predictions, truths)
    assert m.per_label_f1 == {"A": pytest.approx(2 / 3), "B": pytest.approx(2 / 3), "C": pytest.approx(1.0)}
    assert m.macro_f1 == pytest.approx(7 / 9, abs=1e-12)
    assert m.precision == pytest.approx(3 / 4, abs=1e-12)
    assert m.recall == pytest.approx(3 / 4, abs=1e-12)
    assert m.hamming_loss == pytest.approx(2 / 9, abs=1e-12)


def test_score_perfect_and_single_error():
    labels = ["a", "b", "c", "d", "e"]
    truths = [("a",), ("b", "c"), ("d",), ("e",)]
    perfect = score(truths, truths, labels=labels)
    assert perfect.macro_f1 == 1.0
    assert perfect.hamming_loss == 0.0
    slipped = [("a",), ("b", "c"), ("d", "e"), ("e",)]  # one extra prediction
    assert score(slipped, truths, labels=labels).hamming_loss == pytest.approx(1 / 20, abs=1e-12)


def test_score_label_universe_rules():
    # a label never true and never predicted is not scored
    m = score([("a",)], [("a",)], labels=["a", "unused"])
    assert "unused" not in m.per_label_f1
    assert m.macro_f1 == 1.0
    # a label wrongly predicted but never true scores zero and drags the macro
    m2 = score([("a", "ghost")], [("a",)])
    assert m2.per_label_f1["ghost"] == 0.0
    assert m2.macro_f1 == pytest.approx(0.5)


def test_score_validation():
    with pytest.raises(ValueError):
        score([("a",)], [("a",), ("b",)])
    with pytest.raises(ValueError):
        score([], [])


def test_metrics_is_a_plain_value_object():
    m = ClassifierMetrics(1.0, 1.0, 1.0, 0.0, {"a": 1.0})
    assert m.macro_f1 == 1.0


# --- LLM route --------------------------------------------------------------------

DESCRIPTIONS = {
    "airlines": "passenger air transport",
    "chemicals": "industrial chemistry",
    "metals": "mining and smelting",
    "rail": "rail transport",
}


def test_llm_classify_dedupes_and_truncates_to_three():
    provider = MockProvider(dimension=8)
    provider.script(
        "Classify which industries",
        {"industries": ["metals", "metals", "airlines", "chemicals", "rail"]},
    )
    result = llm_classify(provider, "m", "Which standard covers smelters?", DESCRIPTIONS)
    assert result == ("metals", "airlines", "chemicals")
    prompt = provider.calls[0].messages[-1].text
    assert "- airlines: passenger air transport" in prompt
    assert "Which standard covers smelters?" in prompt


def test_llm_classify_wraps_persistent_schema_failures():
    provider = MockProvider(dimension=8)
    provider.script(lambda r: True, {"industries": ["bogus_industry"]})
    with pytest.raises(UnknownIndustryId):
        llm_classify(provider, "m", "Which standard covers smelters?", DESCRIPTIONS)
    assert len(provider.calls) == 2  # the one repair re-prompt was used up


def test_llm_classify_validation():
    provider = MockProvider(dimension=8)
    with pytest.raises(ValueError):
        llm_classify(provider, "m", "   ", DESCRIPTIONS)
    with pytest.raises(ValueError):
        llm_classify(provider, "m", "query", {})


# --- training-data plumbing --------------------------------------------------------


def test_load_training_rows_round_trip(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text(
        '{"text": "fuel units", "labels": ["airlines"]}\n'
        "\n"
        '{"text": "smelter emissions", "labels": ["metals", "chemicals"]}\n',
        encoding="utf-8",
    )
    texts, labels = load_training_rows(path)
    assert texts == ["fuel units", "smelter emissions"]
    assert labels == [["airlines"], ["metals", "chemicals"]]
    (tmp_path / "empty.jsonl").write_text("", encoding="utf-8")
    with pytest.raises(ValueError):
        load_training_rows(tmp_path / "empty.jsonl")


def test_train_from_texts_uses_provider_embeddings():
    provider = MockProvider(dimension=16)
    texts = [f"question {i}" for i in range(8)]
    label_sets = [["airlines"] if i % 2 else ["metals"] for i in range(8)]
    model = train_from_texts(provider, texts, label_sets, MlpConfig(hidden=(8, 4), epochs=10))
    assert model.labels == ("airlines", "metals")  # sorted union
    assert model.dims[0] == 16
    assert provider.embed_calls == 1
    assert mlp_predict(model, provider.embed([texts[0]])[0]) != ()
