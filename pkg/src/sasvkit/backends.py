"""Countermeasure back-ends: the 3-layer MLP and the attentive-statistics-pooling
head, with their shared weighted-cross-entropy training loop.

Both back-ends map a per-utterance feature sequence (T x D) to a fixed
countermeasure embedding and a scalar bona-fide score. Gradients are written
out by hand; the finite-difference checker in tensorcore pins them down.
"""

from dataclasses import dataclass, field

import numpy as np

from .metrics import compute_eer
from .tensorcore import (
    AdamState,
    Params,
    ShapeError,
    adam_update,
    glorot_uniform,
    leaky_relu,
    leaky_relu_grad,
    softmax,
)

SIGMA_EPS = 1e-9  # clamp under the std-dev sqrt; bounds its gradient

BONAFIDE = "bonafide"
SPOOF = "spoof"
# classifier logit order: index 0 = spoof, index 1 = bonafide
CLASS_INDEX = {SPOOF: 0, BONAFIDE: 1}


@dataclass
class FeatureMatrix:
    """Per-utterance feature sequence from one extractor layer."""

    utt_id: str
    layer: int
    values: np.ndarray  # (T, D)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ShapeError(f"feature matrix must be (T>=1, D>=1), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"non-finite features in {self.utt_id}")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class CmEmbedding:
    utt_id: str
    vector: np.ndarray
    backend: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)


@dataclass
class AspBackend:
    """Attentive statistics pooling head: scalar frame attention, weighted
    mean/std statistics of dimension 2D, linear projection to the embedding,
    2-class classifier."""

    feat_dim: int
    att_dim: int = 128
    emb_dim: int = 160
    params: Params = field(default_factory=dict)
    kind: str = "asp"

    @classmethod
    def init(cls, feat_dim, rng, att_dim=128, emb_dim=160):
        p = {
            "att_w1": glorot_uniform(rng, att_dim, feat_dim),
            "att_b1": np.zeros(att_dim),
            "att_w2": glorot_uniform(rng, 1, att_dim)[0],
            "att_b2": np.zeros(1),
            "proj_w": glorot_uniform(rng, emb_dim, 2 * feat_dim),
            "proj_b": np.zeros(emb_dim),
            "cls_w": glorot_uniform(rng, 2, emb_dim),
            "cls_b": np.zeros(2),
        }
        return cls(feat_dim=feat_dim, att_dim=att_dim, emb_dim=emb_dim, params=p)


@dataclass
class MlpBackend:
    """Three FC layers of width D with leaky ReLUs, applied to the temporal
    mean of the features, plus a 2-class classifier."""

    feat_dim: int
    params: Params = field(default_factory=dict)
    kind: str = "mlp"

    @property
    def emb_dim(self):
        return self.feat_dim

    @classmethod
    def init(cls, feat_dim, rng):
        p = {}
        for i in range(1, 4):
            p[f"fc{i}_w"] = glorot_uniform(rng, feat_dim, feat_dim)
            p[f"fc{i}_b"] = np.zeros(feat_dim)
        p["cls_w"] = glorot_uniform(rng, 2, feat_dim)
        p["cls_b"] = np.zeros(2)
        return cls(feat_dim=feat_dim, params=p)


def asp_pool(values: np.ndarray, params: Params, return_cache: bool = False):
    """Attention-weighted mean/std pooling of a (T, D) feature matrix.

    Returns the 2D statistics vector (mean concatenated with std); with
    ``return_cache`` also returns the intermediates the backward pass needs.
    """
    h = np.asarray(values, dtype=np.float64)
    if h.ndim != 2:
        raise ShapeError(f"expected (T, D) features, got {h.shape}")
    if h.shape[1] != params["att_w1"].shape[1]:
        raise ShapeError(
            f"feature dim {h.shape} does not match attention scorer "
            f"{params['att_w1'].shape}"
        )
    z = h @ params["att_w1"].T + params["att_b1"]  # (T, A)
    a = np.tanh(z)
    s = a @ params["att_w2"] + params["att_b2"][0]  # (T,)
    w = softmax(s)
    mu = w @ h
    m2 = w @ (h * h)
    var = m2 - mu * mu
    sigma = np.sqrt(np.maximum(var, SIGMA_EPS))
    stats = np.concatenate([mu, sigma])
    if not return_cache:
        return stats
    cache = {"h": h, "a": a, "w": w, "mu": mu, "var": var, "sigma": sigma}
    return stats, cache


def asp_pool_backward(dstats: np.ndarray, params: Params, cache) -> Params:
    """Gradients of the pooled statistics w.r.t. the attention-scorer params."""
    h, a, w = cache["h"], cache["a"], cache["w"]
    mu, var, sigma = cache["mu"], cache["var"], cache["sigma"]
    d = h.shape[1]
    dmu = dstats[:d].copy()
    dsigma = dstats[d:]
    dvar = np.where(var > SIGMA_EPS, dsigma * 0.5 / sigma, 0.0)
    dm2 = dvar
    dmu -= 2.0 * mu * dvar
    dw = h @ dmu + (h * h) @ dm2  # (T,)
    ds = w * (dw - np.dot(w, dw))  # softmax backward
    datt_w2 = a.T @ ds
    datt_b2 = np.array([np.sum(ds)])
    da = np.outer(ds, params["att_w2"])
    dz = da * (1.0 - a * a)
    return {
        "att_w1": dz.T @ h,
        "att_b1": dz.sum(axis=0),
        "att_w2": datt_w2,
        "att_b2": datt_b2,
    }


def _mlp_embed(values, params, slope=0.01, return_cache=False):
    x0 = values.mean(axis=0)
    pre, post = [], []
    x = x0
    for i in range(1, 4):
        z = params[f"fc{i}_w"] @ x + params[f"fc{i}_b"]
        pre.append(z)
        x = leaky_relu(z, slope)
        post.append(x)
    if not return_cache:
        return x
    return x, {"x0": x0, "pre": pre, "post": post}


def _mlp_embed_backward(demb, params, cache, slope=0.01):
    grads = {}
    dx = demb
    for i in range(3, 0, -1):
        dz = dx * leaky_relu_grad(cache["pre"][i - 1], slope)
        x_in = cache["x0"] if i == 1 else cache["post"][i - 2]
        grads[f"fc{i}_w"] = np.outer(dz, x_in)
        grads[f"fc{i}_b"] = dz
        dx = params[f"fc{i}_w"].T @ dz
    return grads


def cm_embed(backend, features: FeatureMatrix) -> CmEmbedding:
    """Map a feature sequence to a countermeasure embedding."""
    if features.dim != backend.feat_dim:
        raise ShapeError(
            f"feature dim {features.dim} does not match back-end dim "
            f"{backend.feat_dim}"
        )
    p = backend.params
    if backend.kind == "asp":
        stats = asp_pool(features.values, p)
        vec = p["proj_w"] @ stats + p["proj_b"]
    else:
        vec = _mlp_embed(features.values, p)
    return CmEmbedding(utt_id=features.utt_id, vector=vec, backend=backend.kind)


def cm_score(backend, embedding: CmEmbedding) -> float:
    """Bona-fide logit minus spoof logit; higher means more bona fide."""
    p = backend.params
    if embedding.vector.shape[0] != p["cls_w"].shape[1]:
        raise ShapeError(
            f"embedding dim {embedding.vector.shape} does not match classifier "
            f"{p['cls_w'].shape}"
        )
    logits = p["cls_w"] @ embedding.vector + p["cls_b"]
    return float(logits[CLASS_INDEX[BONAFIDE]] - logits[CLASS_INDEX[SPOOF]])


def cm_loss_and_grads(backend, batch, class_weights):
    """Weighted cross-entropy over a batch of (FeatureMatrix, label) pairs.

    Returns (mean loss, grads dict). Gradients are the exact derivative of the
    returned scalar, so grad_check applies directly.
    """
    p = backend.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    total = 0.0
    for feats, label in batch:
        y = CLASS_INDEX[label]
        weight = class_weights[label]
        if backend.kind == "asp":
            stats, cache = asp_pool(feats.values, p, return_cache=True)
            emb = p["proj_w"] @ stats + p["proj_b"]
        else:
            emb, cache = _mlp_embed(feats.values, p, return_cache=True)
        logits = p["cls_w"] @ emb + p["cls_b"]
        probs = softmax(logits)
        total += -weight * np.log(max(probs[y], 1e-300))
        dlogits = weight * probs
        dlogits[y] -= weight
        grads["cls_w"] += np.outer(dlogits, emb)
        grads["cls_b"] += dlogits
        demb = p["cls_w"].T @ dlogits
        if backend.kind == "asp":
            grads["proj_w"] += np.outer(demb, stats)
            grads["proj_b"] += demb
            dstats = p["proj_w"].T @ demb
            for k, g in asp_pool_backward(dstats, p, cache).items():
                grads[k] += g
        else:
            for k, g in _mlp_embed_backward(demb, p, cache).items():
                grads[k] += g
    n = len(batch)
    for k in grads:
        grads[k] /= n
    return total / n, grads


@dataclass
class CmTrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    class_weights: dict = field(
        default_factory=lambda: {BONAFIDE: 0.9, SPOOF: 0.1}
    )
    crop_frames: int = 200  # random crop at train time; full length at eval


def _crop_or_tile(values, budget, rng):
    t = values.shape[0]
    if t > budget:
        start = int(rng.integers(0, t - budget + 1))
        return values[start : start + budget]
    if t < budget:
        reps = int(np.ceil(budget / t))
        return np.tile(values, (reps, 1))[:budget]
    return values


def eval_cm_eer(backend, labeled_feats) -> float:
    """Pooled EER (%) of the back-end's scores over (FeatureMatrix, label) pairs."""
    pos, neg = [], []
    for feats, label in labeled_feats:
        s = cm_score(backend, cm_embed(backend, feats))
        (pos if label == BONAFIDE else neg).append(s)
    return compute_eer(pos, neg).eer


def train_cm(backend, train_set, dev_set, config: CmTrainConfig):
    """Train on weighted cross-entropy, keeping the checkpoint with the best
    dev pooled EER. Returns (trained backend, per-epoch history)."""
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be nonempty")
    for feats, label in list(train_set) + list(dev_set):
        if label not in CLASS_INDEX:
            raise ValueError(f"unknown label {label!r} for {feats.utt_id}")
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(backend.params)
    best_params = {k: v.copy() for k, v in backend.params.items()}
    best_eer = eval_cm_eer(backend, dev_set)
    history = []
    n = len(train_set)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = []
            for i in idx:
                feats, label = train_set[i]
                cropped = _crop_or_tile(feats.values, config.crop_frames, rng)
                batch.append((FeatureMatrix(feats.utt_id, feats.layer, cropped), label))
            loss, grads = cm_loss_and_grads(backend, batch, config.class_weights)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch start {lo}"
                )
            if config.lr != 0.0:
                adam_update(backend.params, grads, state, config.lr)
            losses.append(loss)
        dev_eer = eval_cm_eer(backend, dev_set)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_eer": dev_eer}
        )
        if dev_eer < best_eer:
            best_eer = dev_eer
            best_params = {k: v.copy() for k, v in backend.params.items()}
    backend.params = best_params
    return backend, history
