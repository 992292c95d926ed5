"""Shared oracles and synthetic-data builders for the test suite.

The oracles here deliberately recompute results from first principles
(comparison matrices, per-frame loops) so they stay independent of the
library's vectorized implementations.
"""

import numpy as np

from sasvkit.backends import FeatureMatrix
from sasvkit.rssd import SasvTrial


def brute_force_eer(pos, neg):
    """Threshold-sweep EER oracle: explicit comparison counts at every unique
    score plus a reject-all sentinel, linear interpolation at the crossing.
    Returns (eer percent, threshold)."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    thresholds = np.unique(np.concatenate([pos, neg]))
    sentinel = thresholds[-1] + max(1.0, abs(thresholds[-1]))
    thresholds = np.append(thresholds, sentinel)
    far = (neg[None, :] >= thresholds[:, None]).mean(axis=1)
    frr = (pos[None, :] < thresholds[:, None]).mean(axis=1)
    for i in range(len(thresholds)):
        d = far[i] - frr[i]
        if d <= 0.0:
            if d == 0.0:
                return 100.0 * far[i], thresholds[i]
            d_prev = far[i - 1] - frr[i - 1]
            lam = d_prev / (d_prev - d)
            eer = far[i - 1] + lam * (far[i] - far[i - 1])
            thr = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
            return 100.0 * eer, thr
    raise AssertionError("no FAR/FRR crossing found")


def asp_oracle(h, att_w1, att_b1, att_w2, att_b2):
    """Per-frame loop version of attentive statistics pooling, with a naive
    (max-shifted) exp/sum softmax."""
    t_frames, d = h.shape
    scores = np.array(
        [float(att_w2 @ np.tanh(att_w1 @ h[t] + att_b1) + att_b2[0]) for t in range(t_frames)]
    )
    shifted = scores - scores.max()
    w = np.exp(shifted) / np.exp(shifted).sum()
    mu = np.zeros(d)
    m2 = np.zeros(d)
    for t in range(t_frames):
        mu += w[t] * h[t]
        m2 += w[t] * h[t] * h[t]
    sigma = np.sqrt(np.maximum(m2 - mu * mu, 1e-9))
    return w, mu, sigma


def cosine_oracle(a, b):
    num = sum(x * y for x, y in zip(a, b))
    return num / (np.sqrt(sum(x * x for x in a)) * np.sqrt(sum(y * y for y in b)))


def make_cm_task(rng, n_per_class=200, frames=20, dim=8, spoof_var=3.0):
    """Separable CM task: bonafide utterances have unit-variance frames,
    spoof utterances have ``spoof_var`` times the variance."""
    data = []
    for i in range(n_per_class):
        data.append(
            (FeatureMatrix(f"bona{i:04d}", 0, rng.normal(0.0, 1.0, (frames, dim))), "bonafide")
        )
        data.append(
            (
                FeatureMatrix(
                    f"spoof{i:04d}", 0, rng.normal(0.0, np.sqrt(spoof_var), (frames, dim))
                ),
                "spoof",
            )
        )
    return data


class DictEmbeddings:
    """Trial-embedding lookup over plain dicts, with access instrumentation."""

    def __init__(self, speakers, cms):
        self.speakers = speakers
        self.cms = cms
        self.speaker_reads = []
        self.cm_reads = []

    def speaker(self, emb_id):
        self.speaker_reads.append(emb_id)
        return self.speakers[emb_id]

    def cm(self, emb_id):
        self.cm_reads.append(emb_id)
        return self.cms[emb_id]


def make_sasv_task(
    rng,
    n_speakers=8,
    spk_dim=16,
    cm_dim=8,
    utts_per_speaker=12,
    spk_noise=0.05,
    cm_noise=0.2,
):
    """Synthetic SASV task: speakers are unit-vector clusters in the speaker
    space; spoof CM embeddings sit in a region separated from bona fide ones.
    Spoofed tests mimic the enrolled speaker (e_t near the enrollment cluster)
    so only the CM embedding can expose them.

    Returns (trials, embeddings) with trials covering target / nontarget /
    spoof for every speaker.
    """
    centers = rng.normal(size=(n_speakers, spk_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    bona_center = np.concatenate([np.ones(cm_dim // 2), -np.ones(cm_dim - cm_dim // 2)])
    spoof_center = -bona_center
    speakers = {}
    cms = {}
    trials = []
    for s in range(n_speakers):
        enroll_id = f"spk{s}"
        speakers[enroll_id] = centers[s]
        for u in range(utts_per_speaker):
            # bona fide utterance of this speaker
            bid = f"spk{s}_bona{u}"
            speakers[bid] = centers[s] + rng.normal(0.0, spk_noise, spk_dim)
            cms[bid] = bona_center + rng.normal(0.0, cm_noise, cm_dim)
            trials.append(SasvTrial(enroll_id, bid, "target"))
            other = (s + 1 + int(rng.integers(0, n_speakers - 1))) % n_speakers
            trials.append(SasvTrial(f"spk{other}", bid, "nontarget"))
            # spoofed utterance mimicking this speaker
            sid = f"spk{s}_spoof{u}"
            speakers[sid] = centers[s] + rng.normal(0.0, spk_noise, spk_dim)
            cms[sid] = spoof_center + rng.normal(0.0, cm_noise, cm_dim)
            trials.append(SasvTrial(enroll_id, sid, "spoof", attack=f"A{7 + s % 13:02d}"))
    return trials, DictEmbeddings(speakers, cms)
