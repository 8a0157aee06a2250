"""Industry classification: an LLM route and a trainable MLP route.

The LLM route asks a model for the 1-3 most applicable industry ids
given the corpus descriptions. The MLP route is a small from-scratch
network (two ReLU hidden layers into per-label sigmoids, binary
cross-entropy, full-batch gradient descent) over question embeddings,
with deterministic seeded training. Multi-label metrics: macro F1,
micro precision/recall, hamming loss.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .generation import UnknownIndustryId, industry_blurb
from .ingest import IndustryDoc
from .providers.base import LlmProvider, Message, ProviderRequest, SchemaViolation

MAX_PREDICTED = 3


def industry_descriptions(docs: Sequence[IndustryDoc]) -> dict[str, str]:
    return {d.industry_id: industry_blurb(d) for d in docs}


# --- LLM route ---------------------------------------------------------------

CLASSIFY_PROMPT = (
    "Classify which industries the question below is about. Pick at least one and "
    "at most three ids from this list, most applicable first, and copy each id "
    "exactly as written:\n{listing}\n\nQuestion:\n{query}\n\nReturn JSON."
)


def classify_schema(ids: Sequence[str]) -> dict:
    return {
        "type": "object",
        "properties": {
            "industries": {
                "type": "array",
                "items": {"type": "string", "enum": sorted(ids)},
                "minItems": 1,
                "maxItems": 5,
            }
        },
        "required": ["industries"],
    }


def llm_classify(
    provider: LlmProvider,
    model_id: str,
    query: str,
    descriptions: dict[str, str],
    temperature: float = 0.0,
) -> tuple[str, ...]:
    """Predict 1-3 industry ids for a query.

    Unknown ids are handled by the provider's single repair re-prompt;
    if the model still cannot produce known ids, UnknownIndustryId is
    raised. More than three valid ids are truncated to the first three.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    if not descriptions:
        raise ValueError("descriptions must be non-empty")
    listing = "\n".join(f"- {ind}: {desc}" for ind, desc in sorted(descriptions.items()))
    req = ProviderRequest(
        model_id=model_id,
        messages=(Message("user", CLASSIFY_PROMPT.format(listing=listing, query=query)),),
        temperature=temperature,
        output_schema=classify_schema(list(descriptions)),
    )
    try:
        data = provider.complete(req).structured
    except SchemaViolation as exc:
        raise UnknownIndustryId(f"classifier returned ids outside the corpus: {exc}") from exc
    seen: list[str] = []
    for ind in data["industries"]:
        if ind not in seen:
            seen.append(ind)
    return tuple(seen[:MAX_PREDICTED])


# --- MLP route ---------------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, int] = (128, 64)
    learning_rate: float = 0.5
    epochs: int = 200
    seed: int = 0
    threshold: float = 0.5


@dataclass
class MlpModel:
    dims: tuple[int, ...]  # (input, hidden1, hidden2, n_labels)
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    labels: tuple[str, ...]
    threshold: float
    seed: int
    loss_history: list[float] = field(default_factory=list)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(model: MlpModel, X: np.ndarray) -> list[np.ndarray]:
    """Pre-activations and activations: [z1, a1, z2, a2, z3]."""
    w1, w2, w3 = model.weights
    b1, b2, b3 = model.biases
    z1 = X @ w1 + b1
    a1 = _relu(z1)
    z2 = a1 @ w2 + b2
    a2 = _relu(z2)
    z3 = a2 @ w3 + b3
    return [z1, a1, z2, a2, z3]


def predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return _sigmoid(_forward(model, X)[-1])


def mlp_loss(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean per-label binary cross-entropy, computed from logits as
    softplus(z) - y*z so extreme logits stay finite."""
    z = _forward(model, np.asarray(X, dtype=np.float64))[-1]
    Y = np.asarray(Y, dtype=np.float64)
    softplus = np.logaddexp(0.0, z)
    return float(np.mean(softplus - Y * z))


def mlp_gradients(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Analytic full-batch gradients of mlp_loss w.r.t. weights and biases."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    z1, a1, z2, a2, z3 = _forward(model, X)
    n = X.shape[0] * Y.shape[1]
    dz3 = (_sigmoid(z3) - Y) / n
    w1, w2, w3 = model.weights
    dw3 = a2.T @ dz3
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ w3.T
    dz2 = da2 * (z2 > 0)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2.T
    dz1 = da1 * (z1 > 0)
    dw1 = X.T @ dz1
    db1 = dz1.sum(axis=0)
    return [dw1, dw2, dw3], [db1, db2, db3]


def mlp_init(n_features: int, n_labels: int, config: MlpConfig) -> MlpModel:
    rng = np.random.default_rng(config.seed)
    dims = (n_features, config.hidden[0], config.hidden[1], n_labels)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, labels=(), threshold=config.threshold, seed=config.seed)


def mlp_train(
    X: np.ndarray,
    Y: np.ndarray,
    labels: Sequence[str],
    config: MlpConfig | None = None,
) -> MlpModel:
    """Train on a full batch with plain gradient descent.

    X is (n_examples, n_features), Y is (n_examples, n_labels) of 0/1.
    Training is deterministic for a fixed seed: same inputs, same model.
    """
    config = config or MlpConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-d with matching example counts")
    if Y.shape[1] != len(labels):
        raise ValueError("Y width must equal the number of labels")
    model = mlp_init(X.shape[1], len(labels), config)
    model.labels = tuple(labels)
    for _ in range(config.epochs):
        model.loss_history.append(mlp_loss(model, X, Y))
        dws, dbs = mlp_gradients(model, X, Y)
        for w, dw in zip(model.weights, dws):
            w -= config.learning_rate * dw
        for b, db in zip(model.biases, dbs):
            b -= config.learning_rate * db
    model.loss_history.append(mlp_loss(model, X, Y))
    return model


def mlp_predict(model: MlpModel, x: np.ndarray, threshold: float | None = None) -> tuple[str, ...]:
    """Labels whose probability clears the threshold; the argmax label
    alone when none do (never an empty prediction)."""
    if not model.labels:
        raise ValueError("model carries no label names")
    thr = model.threshold if threshold is None else threshold
    probs = predict_proba(model, np.asarray(x, dtype=np.float64))[0]
    chosen = [model.labels[i] for i in range(len(model.labels)) if probs[i] >= thr]
    if not chosen:
        chosen = [model.labels[int(np.argmax(probs))]]
    return tuple(chosen)


# --- model persistence ---------------------------------------------------------

_MODEL_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


def save_model(model: MlpModel, path: str | Path) -> None:
    """One file: little-endian uint32 header length, JSON header (dims,
    labels, threshold, seed), then all parameters as little-endian
    float64 in a fixed order."""
    header = json.dumps(
        {
            "dims": list(model.dims),
            "labels": list(model.labels),
            "threshold": model.threshold,
            "seed": model.seed,
        },
        sort_keys=True,
    ).encode("utf-8")
    flat = [
        arr.astype("<f8").tobytes(order="C")
        for pair in zip(model.weights, model.biases)
        for arr in pair
    ]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in flat:
            fh.write(blob)


def load_model(path: str | Path) -> MlpModel:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    dims = tuple(header["dims"])
    shapes = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += count * 8
    if offset != len(payload):
        raise ValueError("model file has trailing or missing weight bytes")
    return MlpModel(
        dims=dims,
        weights=[arrays[0], arrays[2], arrays[4]],
        biases=[arrays[1], arrays[3], arrays[5]],
        labels=tuple(header["labels"]),
        threshold=float(header["threshold"]),
        seed=int(header["seed"]),
    )


# --- metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierMetrics:
    macro_f1: float
    precision: float  # micro
    recall: float  # micro
    hamming_loss: float
    per_label_f1: dict[str, float]


def score(
    predictions: Sequence[Sequence[str]],
    truths: Sequence[Sequence[str]],
    labels: Sequence[str] | None = None,
) -> ClassifierMetrics:
    """Multi-label metrics over parallel prediction/truth label sets.

    Macro F1 averages per-label F1; a label with no true examples is
    skipped unless it was (wrongly) predicted, in which case it counts
    as F1 = 0. Hamming loss is (FP + FN) / (examples x labels).
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align")
    if not predictions:
        raise ValueError("cannot score an empty set")
    if labels is None:
        universe: set[str] = set()
        for p in predictions:
            universe.update(p)
        for t in truths:
            universe.update(t)
        labels = sorted(universe)
    label_list = list(labels)
    tp = {l: 0 for l in label_list}
    fp = {l: 0 for l in label_list}
    fn = {l: 0 for l in label_list}
    for pred, truth in zip(predictions, truths):
        pset, tset = set(pred), set(truth)
        for l in label_list:
            if l in pset and l in tset:
                tp[l] += 1
            elif l in pset:
                fp[l] += 1
            elif l in tset:
                fn[l] += 1
    per_label: dict[str, float] = {}
    macro_terms = []
    for l in label_list:
        support = tp[l] + fn[l]
        predicted = tp[l] + fp[l]
        if support == 0 and predicted == 0:
            continue  # never true, never predicted: not scored
        denom = 2 * tp[l] + fp[l] + fn[l]
        f1 = (2 * tp[l] / denom) if denom else 0.0
        per_label[l] = f1
        macro_terms.append(f1)
    total_tp = sum(tp.values())
    total_fp = sum(fp.values())
    total_fn = sum(fn.values())
    precision = total_tp / (total_tp + total_fp) if (total_tp + total_fp) else 0.0
    recall = total_tp / (total_tp + total_fn) if (total_tp + total_fn) else 0.0
    hamming = (total_fp + total_fn) / (len(predictions) * len(label_list))
    macro = sum(macro_terms) / len(macro_terms) if macro_terms else 0.0
    return ClassifierMetrics(macro, precision, recall, hamming, per_label)


# --- training-data plumbing --------------------------------------------------------

def load_training_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """JSONL rows of {"text": ..., "labels": [...]} -> (texts, label lists)."""
    texts: list[str] = []
    label_sets: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            texts.append(row["text"])
            label_sets.append(list(row["labels"]))
    if not texts:
        raise ValueError(f"no training rows in {path}")
    return texts, label_sets


def train_from_texts(
    provider: LlmProvider,
    texts: Sequence[str],
    label_sets: Sequence[Sequence[str]],
    config: MlpConfig | None = None,
) -> MlpModel:
    """Embed texts with the provider and train the MLP on the vectors."""
    labels = sorted({l for ls in label_sets for l in ls})
    X = np.asarray(provider.embed(list(texts)), dtype=np.float64)
    Y = np.zeros((len(texts), len(labels)))
    index = {l: i for i, l in enumerate(labels)}
    for row, ls in enumerate(label_sets):
        for l in ls:
            Y[row, index[l]] = 1.0
    return mlp_train(X, Y, labels, config)
