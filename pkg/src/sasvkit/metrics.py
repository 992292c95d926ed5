"""EER-family evaluation: pooled and per-attack CM-EER, the SV/SPF/SASV-EER
suite, DET operating points, and score histograms.

EER convention: a trial is accepted when its score >= threshold. Operating
points are swept over the unique scores (plus a reject-all sentinel) and the
crossing of false-acceptance and false-rejection rates is found by linear
interpolation between the two adjacent points straddling FAR = FRR.
"""

import warnings
from dataclasses import dataclass

import numpy as np

TARGET = "target"
NONTARGET = "nontarget"
SPOOF = "spoof"
BONAFIDE = "bonafide"


@dataclass
class ScoreRecord:
    test_id: str
    score: float
    label: str
    enroll_id: str | None = None
    attack: str | None = None


@dataclass
class EerResult:
    eer: float  # percent in [0, 100]
    threshold: float
    n_positive: int
    n_negative: int


def det_points(positives, negatives):
    """(thresholds, FAR, FRR) arrays over the threshold sweep.

    FAR(t) = fraction of negatives with score >= t, FRR(t) = fraction of
    positives with score < t. Thresholds are the sorted unique scores plus a
    sentinel above the maximum (the reject-all point).
    """
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise FloatingPointError("scores must be finite")
    all_scores = np.concatenate([pos, neg])
    thresholds = np.unique(all_scores)
    sentinel = thresholds[-1] + max(1.0, abs(thresholds[-1]))
    thresholds = np.append(thresholds, sentinel)
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    return thresholds, far, frr


def compute_eer(positives, negatives) -> EerResult:
    """EER (%) at the FAR/FRR crossing with linear interpolation."""
    thresholds, far, frr = det_points(positives, negatives)
    diff = far - frr
    # diff starts at +1 (accept everything) and ends at -1 (reject everything)
    i = int(np.argmax(diff <= 0.0))
    if diff[i] == 0.0:
        eer, thr = far[i], thresholds[i]
    else:
        lam = diff[i - 1] / (diff[i - 1] - diff[i])
        eer = far[i - 1] + lam * (far[i] - far[i - 1])
        thr = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
    return EerResult(
        eer=100.0 * float(eer),
        threshold=float(thr),
        n_positive=len(positives),
        n_negative=len(negatives),
    )


def sasv_eer_suite(records) -> dict:
    """SV-EER (target vs nontarget), SPF-EER (target vs spoof) and SASV-EER
    (target vs nontarget + spoof), each in percent."""
    by_label = {TARGET: [], NONTARGET: [], SPOOF: []}
    for r in records:
        if r.label not in by_label:
            raise ValueError(f"unexpected label {r.label!r} for {r.test_id}")
        by_label[r.label].append(r.score)
    for label, scores in by_label.items():
        if not scores:
            raise ValueError(f"no {label} trials in score set")
    tgt = by_label[TARGET]
    return {
        "sv_eer": compute_eer(tgt, by_label[NONTARGET]).eer,
        "spf_eer": compute_eer(tgt, by_label[SPOOF]).eer,
        "sasv_eer": compute_eer(tgt, by_label[NONTARGET] + by_label[SPOOF]).eer,
    }


def cm_breakdown(records) -> dict:
    """Per-attack EERs (bonafide vs that attack's spoofs) plus the pooled EER.

    Returns {"pooled": eer, "A07": eer, ...}; attacks with zero records are
    simply absent (a warning is emitted when an attack id appears on a
    non-spoof record).
    """
    bona = [r.score for r in records if r.label == BONAFIDE]
    spoof_by_attack = {}
    all_spoof = []
    for r in records:
        if r.label == SPOOF:
            if r.attack is None:
                raise ValueError(f"spoof record {r.test_id} is missing an attack id")
            spoof_by_attack.setdefault(r.attack, []).append(r.score)
            all_spoof.append(r.score)
        elif r.attack is not None:
            warnings.warn(f"attack id on non-spoof record {r.test_id}; ignored")
    if not bona or not all_spoof:
        raise ValueError("need both bonafide and spoof records")
    out = {"pooled": compute_eer(bona, all_spoof).eer}
    for attack in sorted(spoof_by_attack):
        out[attack] = compute_eer(bona, spoof_by_attack[attack]).eer
    return out


def score_histogram(records, bins: int):
    """Equal-width per-label histogram over [min, max] of all scores.

    Returns (edges array of length bins+1, {label: counts array}). All
    identical scores degenerate to a single bin.
    """
    if bins < 2:
        raise ValueError(f"bin count must be >= 2, got {bins}")
    records = list(records)
    if not records:
        raise ValueError("empty score set")
    scores = np.array([r.score for r in records])
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        edges = np.array([lo, hi])
        counts = {}
        for r in records:
            counts.setdefault(r.label, np.zeros(1, dtype=np.int64))[0] += 1
        return edges, counts
    edges = np.linspace(lo, hi, bins + 1)
    counts = {}
    for r in records:
        idx = min(int((r.score - lo) / (hi - lo) * bins), bins - 1)
        counts.setdefault(r.label, np.zeros(bins, dtype=np.int64))[idx] += 1
    return edges, counts


def format_metric_lines(values: dict, subset: str = "all"):
    """`metric<TAB>subset<TAB>value` lines, full precision."""
    return [f"{name}\t{subset}\t{value:.17g}" for name, value in values.items()]


def format_histogram_lines(edges, counts):
    """`bin_low<TAB>bin_high<TAB>label<TAB>count` lines."""
    lines = []
    for label in sorted(counts):
        for i, c in enumerate(counts[label]):
            lines.append(f"{edges[i]:.17g}\t{edges[i + 1]:.17g}\t{label}\t{int(c)}")
    return lines


def format_det_lines(thresholds, far, frr):
    """`threshold<TAB>far<TAB>frr` lines."""
    return [
        f"{t:.17g}\t{a:.17g}\t{r:.17g}"
        for t, a, r in zip(thresholds, far, frr)
    ]
