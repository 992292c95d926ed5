import numpy as np
import pytest

from helpers import DictEmbeddings, cosine_oracle, make_sasv_task
from sasvkit.metrics import sasv_eer_suite
from sasvkit.rssd import (
    MissingEmbeddingError,
    RssdModel,
    RssdTrainConfig,
    SasvTrial,
    SpeakerEmbedding,
    cosine,
    enroll_speaker,
    gate,
    loss_and_grads,
    loss_rdistill,
    loss_spoof,
    loss_total,
    sasv_score,
    score_trials,
    train_rssd,
)
from sasvkit.tensorcore import ShapeError, grad_check
from sasvkit.rssd import transform


def _model(cm_dim=3, spk_dim=4, hidden=5, seed=0):
    return RssdModel.init(cm_dim, spk_dim, np.random.default_rng(seed), hidden_dim=hidden)


def _pin_ones(model):
    """Force the transform output to all-ones regardless of input."""
    for k in model.params:
        model.params[k][:] = 0.0
    model.params["fc3_b"][:] = 1.0
    return model


def test_transform_zero_params_zero_output():
    m = _model()
    for k in m.params:
        m.params[k][:] = 0.0
    assert np.allclose(transform(m, np.ones(3)), 0.0)


def test_transform_matches_composition_oracle():
    rng = np.random.default_rng(1)
    m = _model()
    c = rng.normal(size=3)
    x = c
    for i in (1, 2):
        z = m.params[f"fc{i}_w"] @ x + m.params[f"fc{i}_b"]
        x = np.maximum(z, 0.01 * z)
    expected = m.params["fc3_w"] @ x + m.params["fc3_b"]
    got = transform(m, c)
    assert np.max(np.abs(got - expected)) < 1e-12
    assert np.array_equal(transform(m, c), got)


def test_transform_dim_mismatch():
    with pytest.raises(ShapeError):
        transform(_model(), np.zeros(5))


def test_gate_definition():
    assert np.allclose(gate(np.array([2.0, 3.0]), np.array([4.0, 5.0])), [8.0, 15.0])
    e = np.array([1.5, -2.5])
    assert np.array_equal(gate(np.ones(2), e), e)
    assert np.allclose(gate(np.zeros(2), e), 0.0)


def test_sasv_score_gate_identity_cases():
    m = _pin_ones(_model(spk_dim=2))
    e = np.array([1.0, 2.0])
    assert sasv_score(m, e, e, np.zeros(3)) == pytest.approx(1.0, abs=1e-12)
    perp = np.array([-2.0, 1.0])
    assert sasv_score(m, e, perp, np.zeros(3)) == pytest.approx(0.0, abs=1e-12)


def test_sasv_score_matches_cosine_oracle():
    rng = np.random.default_rng(2)
    m = _model(cm_dim=3, spk_dim=4)
    e_e, e_t = rng.normal(size=4), rng.normal(size=4)
    c = rng.normal(size=3)
    g = transform(m, c) * e_t
    assert abs(sasv_score(m, e_e, e_t, c) - cosine_oracle(e_e, g)) < 1e-12


def test_sasv_score_scale_invariance():
    rng = np.random.default_rng(3)
    m = _model()
    e_e, e_t, c = rng.normal(size=4), rng.normal(size=4), rng.normal(size=3)
    base = sasv_score(m, e_e, e_t, c)
    assert abs(sasv_score(m, 7.3 * e_e, e_t, c) - base) < 1e-10
    assert abs(sasv_score(m, e_e, 0.4 * e_t, c) - base) < 1e-10


def test_sasv_score_zero_gated_diagnostics():
    m = _model(spk_dim=2)
    for k in m.params:
        m.params[k][:] = 0.0
    diag = {}
    s = sasv_score(m, np.ones(2), np.ones(2), np.zeros(3), diag)
    assert s == -1.0
    assert diag["zero_gated"] == 1


def test_loss_rdistill_identity_gate():
    m = _pin_ones(_model(spk_dim=4))
    e_t = np.random.default_rng(4).normal(size=4)
    assert loss_rdistill(m, e_t, np.zeros(3)) == pytest.approx(-1.0, abs=1e-12)


def test_loss_rdistill_orthogonal_construction():
    # dim 2, equal-magnitude e_t, transform output flips exactly one sign
    m = _model(spk_dim=2)
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["fc3_b"][:] = np.array([1.0, -1.0])
    e_t = np.array([3.0, 3.0])
    assert loss_rdistill(m, e_t, np.zeros(3)) == pytest.approx(0.0, abs=1e-12)


def test_loss_rdistill_lower_bound():
    rng = np.random.default_rng(5)
    m = _model()
    for _ in range(50):
        val = loss_rdistill(m, rng.normal(size=4), rng.normal(size=3))
        assert val >= -1.0


def test_loss_spoof_cases_and_oracle():
    rng = np.random.default_rng(6)
    m = _pin_ones(_model(spk_dim=2))
    e_e = np.array([1.0, 1.0])
    assert loss_spoof(m, e_e, e_e, np.zeros(3)) == pytest.approx(1.0, abs=1e-12)
    assert loss_spoof(m, e_e, np.array([1.0, -1.0]), np.zeros(3)) == pytest.approx(0.0, abs=1e-12)
    m2 = _model(seed=7)
    e_e, e_t, c = rng.normal(size=4), rng.normal(size=4), rng.normal(size=3)
    g = transform(m2, c) * e_t
    assert abs(loss_spoof(m2, e_e, e_t, c) - cosine_oracle(e_e, g)) < 1e-12


def test_loss_total_branches_and_instrumentation():
    rng = np.random.default_rng(8)
    m = _model()
    emb = DictEmbeddings(
        {"enr": rng.normal(size=4), "tst": rng.normal(size=4)},
        {"tst": rng.normal(size=3)},
    )
    target = SasvTrial("enr", "tst", "target")
    assert loss_total(m, target, emb) == loss_rdistill(
        m, emb.speakers["tst"], emb.cms["tst"]
    )
    assert "enr" not in emb.speaker_reads  # bona fide branch never reads e_e
    emb.speaker_reads.clear()
    spoof = SasvTrial("enr", "tst", "spoof", attack="A07")
    assert loss_total(m, spoof, emb) == loss_spoof(
        m, emb.speakers["enr"], emb.speakers["tst"], emb.cms["tst"]
    )
    assert "enr" in emb.speaker_reads


def test_loss_total_missing_embedding_names_id():
    m = _model()
    emb = DictEmbeddings({}, {})
    with pytest.raises(KeyError):
        loss_total(m, SasvTrial("enr", "tst", "target"), emb)


def test_batch_loss_matches_per_trial_mean():
    rng = np.random.default_rng(9)
    m = _model()
    speakers = {f"s{i}": rng.normal(size=4) for i in range(4)}
    speakers.update({f"t{i}": rng.normal(size=4) for i in range(4)})
    cms = {f"t{i}": rng.normal(size=3) for i in range(4)}
    emb = DictEmbeddings(speakers, cms)
    trials = [
        SasvTrial("s0", "t0", "target"),
        SasvTrial("s1", "t1", "spoof", attack="A08"),
        SasvTrial("s2", "t2", "nontarget"),
        SasvTrial("s3", "t3", "spoof", attack="A09"),
    ]
    batch_loss, _ = loss_and_grads(m, trials, emb)
    per_trial = [loss_total(m, t, emb) for t in trials]
    assert abs(batch_loss - np.mean(per_trial)) < 1e-12


@pytest.mark.parametrize("label,attack", [("target", None), ("spoof", "A07")])
def test_loss_total_grad_check(label, attack):
    rng = np.random.default_rng(10)
    m = _model()
    emb = DictEmbeddings(
        {"enr": rng.normal(size=4), "tst": rng.normal(size=4)},
        {"tst": rng.normal(size=3)},
    )
    trials = [SasvTrial("enr", "tst", label, attack)]

    def f(params):
        m.params = params
        return loss_and_grads(m, trials, emb)

    assert grad_check(f, m.params, eps=1e-4) < 1e-4


def test_enroll_speaker():
    a = SpeakerEmbedding("u1", np.array([3.0, 0.0]))
    single = enroll_speaker([a])
    assert np.allclose(single.vector, [1.0, 0.0])
    dup = enroll_speaker([a, SpeakerEmbedding("u2", np.array([3.0, 0.0]))])
    assert np.allclose(dup.vector, [1.0, 0.0])
    rng = np.random.default_rng(11)
    v1, v2 = rng.normal(size=3), rng.normal(size=3)
    out = enroll_speaker([SpeakerEmbedding("a", v1), SpeakerEmbedding("b", v2)])
    mean = (v1 + v2) / 2.0
    assert np.max(np.abs(out.vector - mean / np.linalg.norm(mean))) < 1e-12
    with pytest.raises(ValueError):
        enroll_speaker([])


def test_trial_invariants():
    with pytest.raises(ValueError):
        SasvTrial("e", "t", "spoof")  # spoof needs attack id
    with pytest.raises(ValueError):
        SasvTrial("e", "t", "target", attack="A07")
    with pytest.raises(ValueError):
        SasvTrial("e", "t", "genuine")


def test_train_rssd_synthetic_task():
    rng = np.random.default_rng(12)
    train_trials, emb = make_sasv_task(rng, utts_per_speaker=10)
    held_trials, held_emb = make_sasv_task(np.random.default_rng(13), utts_per_speaker=6)
    emb.speakers.update(held_emb.speakers)
    emb.cms.update(held_emb.cms)
    model = RssdModel.init(8, 16, np.random.default_rng(0), hidden_dim=16)
    cfg = RssdTrainConfig(lr=1e-2, epochs=20, batch_size=32, seed=0)
    model, history = train_rssd(model, train_trials, held_trials, emb, cfg)
    records, _ = score_trials(model, held_trials, emb)
    assert sasv_eer_suite(records)["sasv_eer"] < 5.0


def test_train_rssd_zero_lr_keeps_params():
    rng = np.random.default_rng(14)
    trials, emb = make_sasv_task(rng, n_speakers=3, utts_per_speaker=2)
    model = RssdModel.init(8, 16, np.random.default_rng(1), hidden_dim=8)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = RssdTrainConfig(lr=0.0, epochs=2, batch_size=8, seed=0)
    model, _ = train_rssd(model, trials, trials, emb, cfg)
    for k in before:
        assert np.array_equal(model.params[k], before[k])


def test_train_rssd_deterministic_history():
    rng = np.random.default_rng(15)
    trials, emb = make_sasv_task(rng, n_speakers=4, utts_per_speaker=3)
    histories = []
    for _ in range(2):
        model = RssdModel.init(8, 16, np.random.default_rng(2), hidden_dim=8)
        cfg = RssdTrainConfig(lr=1e-3, epochs=3, batch_size=16, seed=7)
        _, history = train_rssd(model, trials, trials, emb, cfg)
        histories.append(history)
    assert histories[0] == histories[1]


def test_train_rssd_reports_coverage_gaps():
    rng = np.random.default_rng(16)
    trials, emb = make_sasv_task(rng, n_speakers=3, utts_per_speaker=2)
    missing_id = trials[0].test_id
    del emb.cms[missing_id]
    model = RssdModel.init(8, 16, np.random.default_rng(3), hidden_dim=8)
    with pytest.raises(MissingEmbeddingError, match=missing_id):
        train_rssd(model, trials, trials, emb, RssdTrainConfig(epochs=1))
