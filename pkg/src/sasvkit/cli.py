"""Command-line front door: CM training/eval, the layer sweep, embedding
dumps, RSSD training/eval, and plot-data export.

Config precedence: command-line flags > config file (flat ``key = value``
lines) > built-in defaults. Every run writes a manifest that suffices to
re-run it.
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backends import (
    AspBackend,
    CmTrainConfig,
    MlpBackend,
    cm_embed,
    cm_score,
    train_cm,
)
from .dataio import (
    EmbeddingStore,
    ParseError,
    TrialEmbeddings,
    load_checkpoint,
    load_feature_dir,
    parse_cm_protocol,
    parse_sasv_trials,
    read_score_file,
    save_checkpoint,
    write_score_file,
)
from .metrics import (
    ScoreRecord,
    cm_breakdown,
    det_points,
    format_det_lines,
    format_histogram_lines,
    format_metric_lines,
    sasv_eer_suite,
    score_histogram,
)
from .rssd import (
    RssdModel,
    RssdTrainConfig,
    SpeakerEmbedding,
    check_coverage,
    enroll_speaker,
    score_trials,
    train_rssd,
)

OUTPUT_ROOT_ENV = "SASVKIT_OUTPUT_ROOT"

ATTACK_ORDER = [f"A{i:02d}" for i in range(7, 20)]  # eval-set ordering A07..A19


class DataError(Exception):
    """User-facing data problem; reported as a one-line reason, exit 1."""


def _read_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, key, default=None, cast=str):
    """flags > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    config = getattr(args, "_config_values", {})
    if key in config:
        return cast(config[key])
    return default


def _output_dir(args, subcommand):
    out = _resolve(args, "out")
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if out is None:
        if root is None:
            raise DataError("no --out given and SASVKIT_OUTPUT_ROOT is unset")
        out = Path(root) / subcommand
    else:
        out = Path(out)
        if not out.is_absolute() and root is not None:
            out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out_dir, subcommand, settings, started):
    lines = [f"command = {subcommand}", f"sasvkit_version = {__version__}"]
    for key in sorted(settings):
        lines.append(f"{key} = {settings[key]}")
    lines.append(f"wall_time_s = {time.time() - started:.3f}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_labeled_features(feature_dir, protocol_path, layer=None):
    with open(protocol_path, "r", encoding="utf-8") as fh:
        records = parse_cm_protocol(fh, path=protocol_path)
    feats = load_feature_dir(feature_dir, layer=layer)
    labeled = []
    missing = []
    for rec in records:
        if rec.utt_id not in feats:
            missing.append(rec.utt_id)
        else:
            labeled.append((feats[rec.utt_id], rec.key, rec.attack))
    if missing:
        raise DataError(
            f"{len(missing)} protocol utterances have no feature file, "
            f"first: {missing[0]}"
        )
    return labeled


def _init_backend(kind, feat_dim, rng, att_dim, emb_dim):
    if kind == "asp":
        return AspBackend.init(feat_dim, rng, att_dim=att_dim, emb_dim=emb_dim)
    if kind == "mlp":
        return MlpBackend.init(feat_dim, rng)
    raise DataError(f"unknown back-end kind {kind!r}")


def _save_backend(path, backend):
    meta = {"feat_dim": backend.feat_dim}
    if backend.kind == "asp":
        meta.update(att_dim=backend.att_dim, emb_dim=backend.emb_dim)
    save_checkpoint(path, backend.kind, meta, backend.params)


def load_backend(path):
    kind, meta, params = load_checkpoint(path)
    if kind == "asp":
        return AspBackend(
            feat_dim=meta["feat_dim"],
            att_dim=meta["att_dim"],
            emb_dim=meta["emb_dim"],
            params=params,
        )
    if kind == "mlp":
        return MlpBackend(feat_dim=meta["feat_dim"], params=params)
    raise DataError(f"checkpoint {path} holds unknown model kind {kind!r}")


def _cm_train_config(args):
    return CmTrainConfig(
        lr=_resolve(args, "lr", 1e-4, float),
        epochs=_resolve(args, "epochs", 20, int),
        batch_size=_resolve(args, "batch_size", 32, int),
        seed=_resolve(args, "seed", 0, int),
        class_weights={
            "bonafide": _resolve(args, "weight_bonafide", 0.9, float),
            "spoof": _resolve(args, "weight_spoof", 0.1, float),
        },
        crop_frames=_resolve(args, "crop_frames", 200, int),
    )


def _write_history(path, history):
    if not history:
        return
    keys = list(history[0])
    lines = ["\t".join(keys)]
    for row in history:
        lines.append("\t".join(f"{row[k]:.17g}" if isinstance(row[k], float) else str(row[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _score_cm_set(backend, labeled):
    records = []
    for feats, key, attack in labeled:
        s = cm_score(backend, cm_embed(backend, feats))
        records.append(ScoreRecord(test_id=feats.utt_id, score=s, label=key, attack=attack))
    return records


def _cm_metric_lines(records):
    breakdown = cm_breakdown(records)
    ordered = {"pooled_eer": breakdown["pooled"]}
    for attack in ATTACK_ORDER:
        if attack in breakdown:
            ordered[f"eer_{attack}"] = breakdown[attack]
    for attack in sorted(breakdown):
        if attack != "pooled" and attack not in ATTACK_ORDER:
            ordered[f"eer_{attack}"] = breakdown[attack]
    return breakdown, format_metric_lines(ordered, subset="cm")


def cmd_train_cm(args):
    started = time.time()
    out = _output_dir(args, "train-cm")
    cfg = _cm_train_config(args)
    train = _load_labeled_features(args.train_features, args.train_protocol, args.layer)
    dev = _load_labeled_features(args.dev_features, args.dev_protocol, args.layer)
    feat_dim = train[0][0].dim
    rng = np.random.default_rng(cfg.seed)
    backend = _init_backend(
        _resolve(args, "backend", "asp"),
        feat_dim,
        rng,
        att_dim=_resolve(args, "att_dim", 128, int),
        emb_dim=_resolve(args, "emb_dim", 160, int),
    )
    backend, history = train_cm(
        backend, [(f, k) for f, k, _ in train], [(f, k) for f, k, _ in dev], cfg
    )
    _save_backend(out / "cm.ckpt", backend)
    _write_history(out / "history.tsv", history)
    best = min(h["dev_eer"] for h in history) if history else float("nan")
    print(f"best dev pooled EER {best:.2f}%")
    _write_manifest(out, "train-cm", _manifest_settings(args, cfg), started)
    return 0


def _manifest_settings(args, cfg=None):
    settings = {}
    for key, value in vars(args).items():
        if key.startswith("_") or key == "func" or value is None:
            continue
        settings[key] = value
    if cfg is not None:
        for key, value in vars(cfg).items():
            settings[f"cfg_{key}"] = value
    return settings


def cmd_eval_cm(args):
    started = time.time()
    out = _output_dir(args, "eval-cm")
    if args.scores is not None:
        records = read_score_file(args.scores)
    else:
        if args.model is None or args.features is None or args.protocol is None:
            raise DataError("eval-cm needs either --scores or --model/--features/--protocol")
        backend = load_backend(args.model)
        labeled = _load_labeled_features(args.features, args.protocol, args.layer)
        records = _score_cm_set(backend, labeled)
        write_score_file(out / "cm_scores.tsv", records)
    breakdown, lines = _cm_metric_lines(records)
    (out / "cm_metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"pooled EER {breakdown['pooled']:.2f}%")
    for attack in ATTACK_ORDER:
        if attack in breakdown:
            print(f"  {attack} EER {breakdown[attack]:.2f}%")
    _write_manifest(out, "eval-cm", _manifest_settings(args), started)
    return 0


def cmd_layer_sweep(args):
    started = time.time()
    out = _output_dir(args, "layer-sweep")
    cfg = _cm_train_config(args)
    layers = [int(x) for x in args.layers.split(",") if x.strip() != ""]
    if not layers:
        raise DataError("no layers listed")
    root = Path(args.features_root)
    rows = []
    attacks_seen = []
    for layer in layers:
        layer_dir = root / f"layer{layer}"
        if not layer_dir.is_dir():
            raise DataError(f"missing feature directory {layer_dir}")
        train = _load_labeled_features(layer_dir, args.train_protocol)
        eval_set = _load_labeled_features(layer_dir, args.eval_protocol)
        rng = np.random.default_rng(cfg.seed)  # identical init per layer
        backend = _init_backend(
            _resolve(args, "backend", "asp"),
            train[0][0].dim,
            rng,
            att_dim=_resolve(args, "att_dim", 128, int),
            emb_dim=_resolve(args, "emb_dim", 160, int),
        )
        backend, _ = train_cm(
            backend,
            [(f, k) for f, k, _ in train],
            [(f, k) for f, k, _ in eval_set],
            cfg,
        )
        records = _score_cm_set(backend, eval_set)
        breakdown = cm_breakdown(records)
        for a in breakdown:
            if a != "pooled" and a not in attacks_seen:
                attacks_seen.append(a)
        rows.append((layer, breakdown))
    attacks_seen.sort()
    best_layer = min(rows, key=lambda r: r[1]["pooled"])[0]
    header = ["layer", "pooled"] + attacks_seen + ["best"]
    lines = ["\t".join(header)]
    for layer, breakdown in rows:
        cells = [str(layer), f"{breakdown['pooled']:.17g}"]
        cells += [
            f"{breakdown[a]:.17g}" if a in breakdown else "-" for a in attacks_seen
        ]
        cells.append("*" if layer == best_layer else "")
        lines.append("\t".join(cells))
    (out / "layer_sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for layer, breakdown in rows:
        mark = "  <- best" if layer == best_layer else ""
        print(f"layer {layer}: pooled EER {breakdown['pooled']:.2f}%{mark}")
    _write_manifest(out, "layer-sweep", _manifest_settings(args, cfg), started)
    return 0


def cmd_dump_cm_embeddings(args):
    started = time.time()
    out = _output_dir(args, "dump-cm-embeddings")
    backend = load_backend(args.model)
    feats = load_feature_dir(args.features, layer=args.layer)
    if not feats:
        raise DataError(f"no feature files under {args.features}")
    embeddings = {
        utt: cm_embed(backend, fm).vector.astype(np.float32) for utt, fm in feats.items()
    }
    EmbeddingStore.save(out / "cm_embeddings", embeddings)
    print(f"wrote {len(embeddings)} embeddings")
    _write_manifest(out, "dump-cm-embeddings", _manifest_settings(args), started)
    return 0


def _load_trial_embeddings(args):
    spk = EmbeddingStore.load(args.spk_store)
    cm = EmbeddingStore.load(args.cm_store)
    if getattr(args, "enroll_lists", None):
        extra = {}
        with open(args.enroll_lists, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                fields = raw.split()
                if not fields:
                    continue
                if len(fields) < 2:
                    raise ParseError(args.enroll_lists, line_no, "expected model id + utterances")
                model_id, utts = fields[0], fields[1:]
                utt_embs = [SpeakerEmbedding(u, spk.get(u)) for u in utts]
                extra[model_id] = enroll_speaker(utt_embs).vector.astype(np.float32)
        merged = {k: spk.get(k) for k in spk.keys()}
        for k, v in extra.items():
            merged[k] = np.asarray(v, dtype=np.float64)
        spk = EmbeddingStore(merged)
    return TrialEmbeddings(spk, cm)


def _read_trials(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sasv_trials(fh, path=path)


def cmd_train_rssd(args):
    started = time.time()
    out = _output_dir(args, "train-rssd")
    cfg = RssdTrainConfig(
        lr=_resolve(args, "lr", 1e-4, float),
        epochs=_resolve(args, "epochs", 20, int),
        batch_size=_resolve(args, "batch_size", 32, int),
        seed=_resolve(args, "seed", 0, int),
        spoof_oversample=_resolve(args, "spoof_oversample", 1.0, float),
    )
    embeddings = _load_trial_embeddings(args)
    train = _read_trials(args.train_trials)
    dev = _read_trials(args.dev_trials)
    cm_dim = embeddings.cm(train[0].test_id).shape[0]
    spk_dim = embeddings.speaker(train[0].test_id).shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = RssdModel.init(
        cm_dim, spk_dim, rng, hidden_dim=_resolve(args, "hidden_dim", 256, int)
    )
    model, history = train_rssd(model, train, dev, embeddings, cfg)
    save_checkpoint(
        out / "rssd.ckpt",
        "rssd",
        {"cm_dim": cm_dim, "spk_dim": spk_dim, "hidden_dim": model.hidden_dim},
        model.params,
    )
    _write_history(out / "history.tsv", history)
    best = min(h["sasv_eer"] for h in history) if history else float("nan")
    print(f"best dev SASV-EER {best:.2f}%")
    _write_manifest(out, "train-rssd", _manifest_settings(args, cfg), started)
    return 0


def load_rssd(path):
    kind, meta, params = load_checkpoint(path)
    if kind != "rssd":
        raise DataError(f"checkpoint {path} holds {kind!r}, not an RSSD model")
    return RssdModel(
        cm_dim=meta["cm_dim"],
        spk_dim=meta["spk_dim"],
        hidden_dim=meta["hidden_dim"],
        params=params,
    )


def cmd_eval_sasv(args):
    started = time.time()
    out = _output_dir(args, "eval-sasv")
    model = load_rssd(args.model)
    embeddings = _load_trial_embeddings(args)
    trials = _read_trials(args.trials)
    records, diagnostics = score_trials(model, trials, embeddings)
    write_score_file(out / "sasv_scores.tsv", records)
    suite = sasv_eer_suite(records)
    lines = format_metric_lines(suite, subset="sasv")
    if diagnostics["zero_gated"]:
        lines.append(f"zero_gated_trials\tsasv\t{diagnostics['zero_gated']}")
    (out / "sasv_metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(
        f"SV-EER {suite['sv_eer']:.2f}%  SPF-EER {suite['spf_eer']:.2f}%  "
        f"SASV-EER {suite['sasv_eer']:.2f}%"
    )
    _write_manifest(out, "eval-sasv", _manifest_settings(args), started)
    return 0


def cmd_plot_scores(args):
    started = time.time()
    out = _output_dir(args, "plot-scores")
    records = read_score_file(args.scores)
    if not records:
        raise DataError(f"no score records in {args.scores}")
    bins = _resolve(args, "bins", 50, int)
    edges, counts = score_histogram(records, bins)
    (out / "histogram.tsv").write_text(
        "\n".join(format_histogram_lines(edges, counts)) + "\n", encoding="utf-8"
    )
    labels = {r.label for r in records}
    if labels <= {"bonafide", "spoof"}:
        pos = [r.score for r in records if r.label == "bonafide"]
        neg = [r.score for r in records if r.label == "spoof"]
    else:
        pos = [r.score for r in records if r.label == "target"]
        neg = [r.score for r in records if r.label != "target"]
    thresholds, far, frr = det_points(pos, neg)
    (out / "det.tsv").write_text(
        "\n".join(format_det_lines(thresholds, far, frr)) + "\n", encoding="utf-8"
    )
    print(f"wrote histogram ({bins} bins) and {len(thresholds)} DET points")
    _write_manifest(out, "plot-scores", _manifest_settings(args), started)
    return 0


def cmd_check_data(args):
    started = time.time()
    out = _output_dir(args, "check-data")
    problems = []
    if args.trials and args.spk_store and args.cm_store:
        embeddings = _load_trial_embeddings(args)
        trials = _read_trials(args.trials)
        for missing_id in check_coverage(trials, embeddings):
            problems.append(f"missing embedding {missing_id}")
    if args.features and args.protocol:
        try:
            _load_labeled_features(args.features, args.protocol, args.layer)
        except DataError as exc:
            problems.append(str(exc))
    report = "\n".join(problems) if problems else "ok"
    (out / "check_data.txt").write_text(report + "\n", encoding="utf-8")
    _write_manifest(out, "check-data", _manifest_settings(args), started)
    if problems:
        raise DataError(problems[0])
    print("ok")
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)


def _add_cm_hypers(p):
    p.add_argument("--backend", choices=["asp", "mlp"])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--att-dim", dest="att_dim", type=int)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.add_argument("--crop-frames", dest="crop_frames", type=int)
    p.add_argument("--weight-bonafide", dest="weight_bonafide", type=float)
    p.add_argument("--weight-spoof", dest="weight_spoof", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sasvkit",
        description="Spoofing-countermeasure back-ends, spoof-aware speaker "
        "verification, and EER evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train-cm", help="train a countermeasure back-end")
    _add_common(p)
    _add_cm_hypers(p)
    p.add_argument("--train-features", required=True)
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--dev-features", required=True)
    p.add_argument("--dev-protocol", required=True)
    p.add_argument("--layer", type=int)
    p.set_defaults(func=cmd_train_cm)

    p = sub.add_parser("eval-cm", help="evaluate CM scores or a CM model")
    _add_common(p)
    p.add_argument("--scores")
    p.add_argument("--model")
    p.add_argument("--features")
    p.add_argument("--protocol")
    p.add_argument("--layer", type=int)
    p.set_defaults(func=cmd_eval_cm)

    p = sub.add_parser("layer-sweep", help="train/eval one back-end per layer")
    _add_common(p)
    _add_cm_hypers(p)
    p.add_argument("--features-root", required=True)
    p.add_argument("--layers", required=True, help="comma-separated layer indices")
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--eval-protocol", required=True)
    p.set_defaults(func=cmd_layer_sweep)

    p = sub.add_parser("dump-cm-embeddings", help="export CM embeddings to a store")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--layer", type=int)
    p.set_defaults(func=cmd_dump_cm_embeddings)

    p = sub.add_parser("train-rssd", help="train the spoof-aware scoring module")
    _add_common(p)
    p.add_argument("--train-trials", required=True)
    p.add_argument("--dev-trials", required=True)
    p.add_argument("--spk-store", required=True)
    p.add_argument("--cm-store", required=True)
    p.add_argument("--enroll-lists")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--spoof-oversample", dest="spoof_oversample", type=float)
    p.set_defaults(func=cmd_train_rssd)

    p = sub.add_parser("eval-sasv", help="score trials with a trained RSSD model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--spk-store", required=True)
    p.add_argument("--cm-store", required=True)
    p.add_argument("--enroll-lists")
    p.set_defaults(func=cmd_eval_sasv)

    p = sub.add_parser("plot-scores", help="export histogram and DET point data")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_plot_scores)

    p = sub.add_parser("check-data", help="verify stores and protocols up front")
    _add_common(p)
    p.add_argument("--trials")
    p.add_argument("--spk-store")
    p.add_argument("--cm-store")
    p.add_argument("--enroll-lists")
    p.add_argument("--features")
    p.add_argument("--protocol")
    p.add_argument("--layer", type=int)
    p.set_defaults(func=cmd_check_data)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        args._config_values = _read_config_file(args.config)
    else:
        args._config_values = {}
    try:
        return args.func(args)
    except (DataError, ParseError, FileNotFoundError, KeyError, ValueError) as exc:
        message = str(exc).strip().strip("'") or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
