"""Spoof-aware speaker verification by selective self-distillation.

A 3-layer transform maps the countermeasure embedding into the speaker space;
a Hadamard gate modulates the test speaker embedding with it; the spoof-aware
score is the cosine between the enrollment embedding and the gated vector.
Bona fide trials train the gate to preserve the test embedding, spoof trials
train it to drift the gated vector away from the enrollment embedding. The
speaker and countermeasure networks stay frozen: only the transform learns.
"""

from dataclasses import dataclass, field

import numpy as np

from .metrics import NONTARGET, SPOOF, TARGET, ScoreRecord, sasv_eer_suite
from .tensorcore import (
    AdamState,
    Params,
    ShapeError,
    adam_update,
    glorot_uniform,
    leaky_relu,
    leaky_relu_grad,
)


class MissingEmbeddingError(KeyError):
    def __init__(self, embedding_id):
        super().__init__(f"missing embedding {embedding_id}")
        self.embedding_id = embedding_id


@dataclass
class SpeakerEmbedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if not np.all(np.isfinite(self.vector)):
            raise FloatingPointError(f"non-finite speaker embedding {self.id}")


@dataclass
class SasvTrial:
    enroll_id: str
    test_id: str
    label: str  # target | nontarget | spoof
    attack: str | None = None

    def __post_init__(self):
        if self.label not in (TARGET, NONTARGET, SPOOF):
            raise ValueError(f"bad trial label {self.label!r}")
        if (self.attack is not None) != (self.label == SPOOF):
            raise ValueError(
                f"attack id must be present iff label is spoof "
                f"({self.enroll_id} {self.test_id} {self.label})"
            )

    @property
    def bonafide(self):
        return self.label != SPOOF


@dataclass
class RssdModel:
    """Transform stack (3 FC layers, leaky ReLU between, no final activation)
    plus the Hadamard gating contract."""

    cm_dim: int  # input: countermeasure embedding
    spk_dim: int  # output: speaker embedding space
    hidden_dim: int = 256
    params: Params = field(default_factory=dict)
    gating: str = "hadamard"

    @classmethod
    def init(cls, cm_dim, spk_dim, rng, hidden_dim=256):
        dims = [(hidden_dim, cm_dim), (hidden_dim, hidden_dim), (spk_dim, hidden_dim)]
        p = {}
        for i, (n_out, n_in) in enumerate(dims, start=1):
            p[f"fc{i}_w"] = glorot_uniform(rng, n_out, n_in)
            p[f"fc{i}_b"] = np.zeros(n_out)
        return cls(cm_dim=cm_dim, spk_dim=spk_dim, hidden_dim=hidden_dim, params=p)


def transform(model: RssdModel, c: np.ndarray, return_cache=False):
    """Apply the transform stack to a countermeasure embedding."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (model.cm_dim,):
        raise ShapeError(f"expected cm embedding of dim {model.cm_dim}, got {c.shape}")
    p = model.params
    pre = []
    x = c
    for i in (1, 2):
        z = p[f"fc{i}_w"] @ x + p[f"fc{i}_b"]
        pre.append(z)
        x = leaky_relu(z)
    u = p["fc3_w"] @ x + p["fc3_b"]
    if not return_cache:
        return u
    return u, {"c": c, "pre": pre, "post": [leaky_relu(z) for z in pre]}


def _transform_backward(du, model, cache):
    p = model.params
    grads = {"fc3_w": np.outer(du, cache["post"][1]), "fc3_b": du}
    dx = p["fc3_w"].T @ du
    for i in (2, 1):
        dz = dx * leaky_relu_grad(cache["pre"][i - 1])
        x_in = cache["c"] if i == 1 else cache["post"][i - 2]
        grads[f"fc{i}_w"] = np.outer(dz, x_in)
        grads[f"fc{i}_b"] = dz
        dx = p[f"fc{i}_w"].T @ dz
    return grads


def gate(u: np.ndarray, e_t: np.ndarray) -> np.ndarray:
    """Hadamard gating of the test speaker embedding."""
    u = np.asarray(u, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    if u.shape != e_t.shape:
        raise ShapeError(f"gate dims differ: {u.shape} vs {e_t.shape}")
    return u * e_t


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _cosine_grad_b(a, b):
    # d cos(a, b) / d b
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cos = np.dot(a, b) / (na * nb)
    return a / (na * nb) - cos * b / (nb * nb)


def sasv_score(model, e_e, e_t, c_t, diagnostics=None) -> float:
    """Spoof-aware similarity: cosine(e_e, gate(transform(c_t), e_t)).

    A zero-norm gated vector scores -1 (worst case) rather than NaN; the
    occurrence is counted in ``diagnostics["zero_gated"]`` when provided.
    """
    g = gate(transform(model, c_t), e_t)
    if not np.any(g):
        if diagnostics is not None:
            diagnostics["zero_gated"] = diagnostics.get("zero_gated", 0) + 1
        return -1.0
    return cosine(e_e, g)


def loss_rdistill(model, e_t, c_t) -> float:
    """Self-distillation loss of a bona fide test: -cosine(e_t, gated)."""
    g = gate(transform(model, c_t), e_t)
    if not np.any(g):
        return 1.0  # worst case for the bona fide branch
    return -cosine(e_t, g)


def loss_spoof(model, e_e, e_t, c_t) -> float:
    """Spoof loss: +cosine(e_e, gated); minimal when the gated test drifts
    away from the enrollment embedding."""
    g = gate(transform(model, c_t), e_t)
    if not np.any(g):
        return -1.0
    return cosine(e_e, g)


def loss_total(model, trial: SasvTrial, embeddings) -> float:
    """Indicator-switched loss: r-distill for bona fide tests, spoof otherwise.

    ``embeddings`` provides ``speaker(id)`` and ``cm(id)``; the bona fide
    branch never looks up the enrollment embedding.
    """
    e_t = embeddings.speaker(trial.test_id)
    c_t = embeddings.cm(trial.test_id)
    if trial.bonafide:
        return loss_rdistill(model, e_t, c_t)
    e_e = embeddings.speaker(trial.enroll_id)
    return loss_spoof(model, e_e, e_t, c_t)


def loss_and_grads(model, trials, embeddings):
    """Mean loss over a batch of trials and its gradient w.r.t. the transform
    parameters. The frozen speaker/CM embeddings receive no gradient."""
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = 0.0
    for trial in trials:
        e_t = embeddings.speaker(trial.test_id)
        c_t = embeddings.cm(trial.test_id)
        u, cache = transform(model, c_t, return_cache=True)
        g = gate(u, e_t)
        if not np.any(g):
            total += 1.0 if trial.bonafide else -1.0
            continue  # flat region; no gradient defined through the fallback
        if trial.bonafide:
            total += -cosine(e_t, g)
            dg = -_cosine_grad_b(e_t, g)
        else:
            e_e = embeddings.speaker(trial.enroll_id)
            total += cosine(e_e, g)
            dg = _cosine_grad_b(e_e, g)
        du = dg * e_t
        for k, gr in _transform_backward(du, model, cache).items():
            grads[k] += gr
    n = len(trials)
    for k in grads:
        grads[k] /= n
    return total / n, grads


def enroll_speaker(utterance_embeddings) -> SpeakerEmbedding:
    """Enrollment model: arithmetic mean of utterance vectors, l2-normalized."""
    embs = list(utterance_embeddings)
    if not embs:
        raise ValueError("cannot enroll a speaker from zero utterances")
    mean = np.mean([e.vector for e in embs], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("enrollment mean vector has zero norm")
    return SpeakerEmbedding(id=embs[0].id, vector=mean / norm)


def score_trials(model, trials, embeddings):
    """Score every trial; returns (ScoreRecord list, diagnostics)."""
    diagnostics = {"zero_gated": 0}
    records = []
    for t in trials:
        s = sasv_score(
            model,
            embeddings.speaker(t.enroll_id),
            embeddings.speaker(t.test_id),
            embeddings.cm(t.test_id),
            diagnostics,
        )
        records.append(
            ScoreRecord(
                test_id=t.test_id,
                score=s,
                label=t.label,
                enroll_id=t.enroll_id,
                attack=t.attack,
            )
        )
    return records, diagnostics


@dataclass
class RssdTrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    spoof_oversample: float = 1.0  # >1 repeats spoof trials in the epoch pool


def check_coverage(trials, embeddings):
    """Every id a trial needs must resolve; missing ids are reported up front."""
    missing = []
    for t in trials:
        for lookup, key in (
            (embeddings.speaker, t.enroll_id),
            (embeddings.speaker, t.test_id),
            (embeddings.cm, t.test_id),
        ):
            try:
                lookup(key)
            except KeyError:
                missing.append(key)
    return sorted(set(missing))


def train_rssd(model, train_trials, dev_trials, embeddings, config: RssdTrainConfig):
    """Minimize the mean indicator-switched loss over minibatches; keep the
    checkpoint with the best dev SASV-EER. Returns (model, history)."""
    if not train_trials or not dev_trials:
        raise ValueError("train and dev trial lists must be nonempty")
    missing = check_coverage(list(train_trials) + list(dev_trials), embeddings)
    if missing:
        raise MissingEmbeddingError(", ".join(missing))
    rng = np.random.default_rng(config.seed)
    pool = list(train_trials)
    if config.spoof_oversample > 1.0:
        extra = int(round(config.spoof_oversample)) - 1
        for t in train_trials:
            if t.label == SPOOF:
                pool.extend([t] * extra)
    state = AdamState.for_params(model.params)

    def dev_suite():
        records, _ = score_trials(model, dev_trials, embeddings)
        return sasv_eer_suite(records)

    best = dev_suite()
    best_params = {k: v.copy() for k, v in model.params.items()}
    history = []
    n = len(pool)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = [pool[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = loss_and_grads(model, batch, embeddings)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            if config.lr != 0.0:
                adam_update(model.params, grads, state, config.lr)
            losses.append(loss)
        suite = dev_suite()
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), **suite})
        if suite["sasv_eer"] < best["sasv_eer"]:
            best = suite
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    return model, history
