"""Protocol parsers, binary feature/embedding formats, checkpoints, and score
file I/O.

Binary layouts (all little-endian):
  feature file:   "W2VF" | u32 version=1 | u32 T | u32 D | u32 layer | T*D f32
  embedding file: "EMB1" | u32 version=1 | u32 dim | dim f32
  checkpoint:     "SKCP" | u32 version=1 | kind str | meta kv pairs | params

Features and embeddings are stored as 32-bit floats and widened to 64-bit on
read; checkpoints keep full 64-bit parameters. Every format round-trips
bit-exactly.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import FeatureMatrix
from .metrics import ScoreRecord
from .rssd import MissingEmbeddingError, SasvTrial, SpeakerEmbedding

FEATURE_MAGIC = b"W2VF"
EMBEDDING_MAGIC = b"EMB1"
CHECKPOINT_MAGIC = b"SKCP"
FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Base class for binary-format violations."""


class BadMagicError(FileFormatError):
    pass


class BadVersionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class ParseError(ValueError):
    """Text-format violation carrying the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class DuplicateIdError(ValueError):
    pass


@dataclass
class CmProtocolRecord:
    speaker_id: str
    utt_id: str
    attack: str | None
    key: str  # bonafide | spoof


def parse_cm_protocol(lines, path="<protocol>"):
    """Parse ASVspoof-style protocol lines:
    ``speaker utterance - attack-or-dash key``."""
    records = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ParseError(path, line_no, f"expected 5 fields, got {len(fields)}")
        speaker, utt, _, attack, key = fields
        if key not in ("bonafide", "spoof"):
            raise ParseError(path, line_no, f"unknown key {key!r}")
        attack = None if attack == "-" else attack
        if (attack is None) != (key == "bonafide"):
            raise ParseError(
                path, line_no, f"attack field {fields[3]!r} inconsistent with key {key!r}"
            )
        records.append(CmProtocolRecord(speaker, utt, attack, key))
    return records


def parse_sasv_trials(lines, path="<trials>"):
    """Parse trial lines: ``enroll test label [attack]``."""
    trials = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (3, 4):
            raise ParseError(path, line_no, f"expected 3 or 4 fields, got {len(fields)}")
        enroll, test, label = fields[:3]
        attack = fields[3] if len(fields) == 4 else None
        try:
            trials.append(SasvTrial(enroll, test, label, attack))
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from exc
    return trials


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{path}: truncated while reading {what}")
    return data


def write_feature_file(path, feats: FeatureMatrix):
    t, d = feats.frames, feats.dim
    payload = feats.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, t, d, feats.layer))
        fh.write(payload)


def read_feature_file(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != FEATURE_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        version, t, d, layer = struct.unpack("<IIII", _read_exact(fh, 16, path, "header"))
        if version != FORMAT_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        if t < 1 or d < 1:
            raise FileFormatError(f"{path}: invalid shape T={t}, D={d}")
        payload = _read_exact(fh, 4 * t * d, path, "payload")
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, d)
    utt_id = path.name.split(".")[0]
    return FeatureMatrix(utt_id=utt_id, layer=layer, values=values)


def feature_file_name(utt_id: str, layer: int) -> str:
    return f"{utt_id}.layer{layer}.w2vf"


def write_embedding_file(path, vector):
    vector = np.asarray(vector)
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, vector.shape[0]))
        fh.write(vector.astype("<f4").tobytes())


def read_embedding_file(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != EMBEDDING_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        version, dim = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        if version != FORMAT_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        payload = _read_exact(fh, 4 * dim, path, "payload")
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


class EmbeddingStore:
    """Directory of ``<id>.emb`` files, loaded into a keyed lookup."""

    def __init__(self, vectors: dict):
        self._vectors = vectors

    @classmethod
    def load(cls, directory) -> "EmbeddingStore":
        directory = Path(directory)
        vectors = {}
        for path in sorted(directory.rglob("*.emb")):
            key = path.stem
            if key in vectors:
                raise DuplicateIdError(f"duplicate embedding id {key!r} at {path}")
            vectors[key] = read_embedding_file(path)
        return cls(vectors)

    @classmethod
    def save(cls, directory, embeddings):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for emb_id, vector in embeddings.items():
            write_embedding_file(directory / f"{emb_id}.emb", vector)

    def get(self, emb_id) -> np.ndarray:
        try:
            return self._vectors[emb_id]
        except KeyError:
            raise MissingEmbeddingError(emb_id) from None

    def speaker(self, emb_id) -> np.ndarray:
        return self.get(emb_id)

    def cm(self, emb_id) -> np.ndarray:
        return self.get(emb_id)

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, emb_id):
        return emb_id in self._vectors

    def keys(self):
        return self._vectors.keys()


class TrialEmbeddings:
    """Joins a speaker store and a CM store into the lookup trials need."""

    def __init__(self, speaker_store, cm_store):
        self._speaker = speaker_store
        self._cm = cm_store

    def speaker(self, emb_id):
        return self._speaker.get(emb_id)

    def cm(self, emb_id):
        return self._cm.get(emb_id)


def _write_str(fh, s):
    data = s.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_str(fh, path):
    (n,) = struct.unpack("<I", _read_exact(fh, 4, path, "string length"))
    return _read_exact(fh, n, path, "string").decode("utf-8")


def save_checkpoint(path, kind: str, meta: dict, params: dict):
    """Versioned binary checkpoint: kind tag, integer metadata, and all
    parameter arrays as 64-bit little-endian reals."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_str(fh, kind)
        fh.write(struct.pack("<I", len(meta)))
        for key in sorted(meta):
            _write_str(fh, key)
            fh.write(struct.pack("<q", int(meta[key])))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            _write_str(fh, name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (kind, meta, params)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version != FORMAT_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        kind = _read_str(fh, path)
        (n_meta,) = struct.unpack("<I", _read_exact(fh, 4, path, "meta count"))
        meta = {}
        for _ in range(n_meta):
            key = _read_str(fh, path)
            (meta[key],) = struct.unpack("<q", _read_exact(fh, 8, path, "meta value"))
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, path, "param count"))
        params = {}
        for _ in range(n_params):
            name = _read_str(fh, path)
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, path, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, path, "shape"))
            data = _read_exact(fh, 8 * int(np.prod(shape)), path, f"param {name}")
            params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after parameters")
    return kind, meta, params


def write_score_file(path, records):
    """Tab-separated scores: ``enroll  test  score  label  [attack]``.

    Scores are written with 17 significant digits so a float64 round-trips
    bit-exactly; a missing enrollment id is written as '-'."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            enroll = r.enroll_id if r.enroll_id is not None else "-"
            line = f"{enroll}\t{r.test_id}\t{r.score:.17g}\t{r.label}"
            if r.attack is not None:
                line += f"\t{r.attack}"
            fh.write(line + "\n")


def read_score_file(path):
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (4, 5):
                raise ParseError(path, line_no, f"expected 4 or 5 fields, got {len(fields)}")
            enroll, test, score_text, label = fields[:4]
            attack = fields[4] if len(fields) == 5 else None
            try:
                score = float(score_text)
            except ValueError:
                raise ParseError(path, line_no, f"bad score {score_text!r}") from None
            records.append(
                ScoreRecord(
                    test_id=test,
                    score=score,
                    label=label,
                    enroll_id=None if enroll == "-" else enroll,
                    attack=attack,
                )
            )
    return records


def load_feature_dir(directory, layer=None):
    """Read every ``.w2vf`` file under a directory, keyed by utterance id."""
    directory = Path(directory)
    feats = {}
    for path in sorted(directory.rglob("*.w2vf")):
        fm = read_feature_file(path)
        if layer is not None and fm.layer != layer:
            continue
        if fm.utt_id in feats:
            raise DuplicateIdError(f"duplicate utterance id {fm.utt_id!r} at {path}")
        feats[fm.utt_id] = fm
    return feats


__all__ = [
    "CmProtocolRecord",
    "EmbeddingStore",
    "TrialEmbeddings",
    "FileFormatError",
    "BadMagicError",
    "BadVersionError",
    "TruncatedFileError",
    "ParseError",
    "DuplicateIdError",
    "parse_cm_protocol",
    "parse_sasv_trials",
    "read_feature_file",
    "write_feature_file",
    "feature_file_name",
    "read_embedding_file",
    "write_embedding_file",
    "save_checkpoint",
    "load_checkpoint",
    "write_score_file",
    "read_score_file",
    "load_feature_dir",
    "SpeakerEmbedding",
]
