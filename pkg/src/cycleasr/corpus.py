"""Synthetic speech/text corpus, manifest and feature I/O, and padded batching.

Each character owns a fixed random prototype vector; an utterance's frames are
the prototypes of its transcript, each repeated for a sampled duration, plus
Gaussian noise. Unpaired speech additionally gets a domain shift
``frames * shift_scale + shift_bias``; ``shift_eval`` extends it to dev/eval.

On-disk layout under the corpus directory::

    manifest.jsonl        one JSON object per line: id, path, transcript, split
    feats/<id>.csv        one frame per line, F comma-separated decimals
    corpus.json           the generating CorpusConfig
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .vocab import EOS, Vocabulary

PAIRED = "paired"
UNPAIRED_SPEECH = "unpaired_speech"
UNPAIRED_TEXT = "unpaired_text"
DEV = "dev"
EVAL = "eval"
SPLITS = (PAIRED, UNPAIRED_SPEECH, UNPAIRED_TEXT, DEV, EVAL)


@dataclass(frozen=True)
class CorpusConfig:
    alphabet: str = "abcdefg "
    utterances: int = 1000
    paired_fraction: float = 0.2
    dev_utterances: int = 100
    eval_utterances: int = 100
    min_length: int = 3
    max_length: int = 10
    min_duration: int = 2
    max_duration: int = 5
    noise_std: float = 0.3
    feat_dim: int = 16
    seed: int = 0
    shift_bias_std: float = 0.5
    shift_bias: tuple = ()
    shift_scale: float = 1.0
    shift_eval: bool = False

    def __post_init__(self):
        letters = self.alphabet.replace(" ", "")
        if len(set(self.alphabet)) != len(self.alphabet) or len(letters) < 2:
            raise ValueError("alphabet needs at least two distinct non-space characters and no duplicates")
        if not 0.0 < self.paired_fraction < 1.0:
            raise ValueError(f"paired_fraction must lie in (0, 1), got {self.paired_fraction}")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("transcript length range must satisfy 1 <= min <= max")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("duration range must satisfy 1 <= min <= max")
        if self.noise_std < 0 or self.shift_bias_std < 0 or self.shift_scale <= 0:
            raise ValueError("noise/shift std must be >= 0 and shift_scale > 0")
        if self.shift_bias and len(self.shift_bias) != self.feat_dim:
            raise ValueError(f"shift_bias needs {self.feat_dim} values, got {len(self.shift_bias)}")
        if self.utterances < 4 or self.feat_dim < 1:
            raise ValueError("need at least 4 utterances and a positive feature dimension")


@dataclass(frozen=True)
class Record:
    utt_id: str
    path: str | None
    transcript: str
    split: str


@dataclass
class Manifest:
    records: list[Record]
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list[Record]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]

    def write(self, path: str | Path) -> None:
        lines = [
            json.dumps({"id": r.utt_id, "path": r.path, "transcript": r.transcript, "split": r.split},
                       ensure_ascii=False)
            for r in self.records
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        records = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                records.append(Record(d["id"], d.get("path"), d["transcript"], d["split"]))
        return cls(records, path.parent)

    def split_hash(self, name: str) -> str:
        h = hashlib.sha256()
        for r in self.split(name):
            h.update(f"{r.utt_id}\t{r.transcript}\n".encode("utf-8"))
        return h.hexdigest()


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _sample_transcript(rng: np.random.Generator, cfg: CorpusConfig) -> str:
    n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    out: list[str] = []
    for i in range(n):
        choices = [c for c in cfg.alphabet
                   if (not out or c != out[-1]) and not (c == " " and (i == 0 or i == n - 1))]
        out.append(choices[int(rng.integers(len(choices)))])
    return "".join(out)


def write_features(path: Path, frames: np.ndarray) -> None:
    lines = (",".join(repr(float(v)) for v in row) for row in frames)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def read_features(path: Path) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")] for line in path.read_text(encoding="ascii").splitlines() if line]
    return np.array(rows, dtype=np.float64)


def synthesize(transcript: str, prototypes: dict[str, np.ndarray], rng: np.random.Generator,
               cfg: CorpusConfig) -> np.ndarray:
    durations = rng.integers(cfg.min_duration, cfg.max_duration + 1, size=len(transcript))
    clean = np.concatenate([np.repeat(prototypes[c][None], d, axis=0) for c, d in zip(transcript, durations)])
    return clean + rng.normal(0.0, 1.0, size=clean.shape) * cfg.noise_std


def prototypes_for(cfg: CorpusConfig) -> tuple[dict[str, np.ndarray], np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0])
    protos = rng.normal(0.0, 1.0, size=(len(cfg.alphabet), cfg.feat_dim))
    bias = (np.array(cfg.shift_bias, dtype=np.float64) if cfg.shift_bias
            else rng.normal(0.0, 1.0, size=cfg.feat_dim) * cfg.shift_bias_std)
    return dict(zip(cfg.alphabet, protos)), bias


def generate_corpus(cfg: CorpusConfig, out_dir: str | Path) -> Manifest:
    out_dir = Path(out_dir)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)
    prototypes, bias = prototypes_for(cfg)
    rng = np.random.default_rng([cfg.seed, 1])

    n_paired = int(round(cfg.utterances * cfg.paired_fraction))
    n_unpaired = cfg.utterances - n_paired
    n_speech = n_unpaired - n_unpaired // 2
    plan = ([PAIRED] * n_paired + [UNPAIRED_SPEECH] * n_speech + [UNPAIRED_TEXT] * (n_unpaired - n_speech)
            + [DEV] * cfg.dev_utterances + [EVAL] * cfg.eval_utterances)
    shifted = {UNPAIRED_SPEECH} | ({DEV, EVAL} if cfg.shift_eval else set())

    records = []
    for i, split in enumerate(plan):
        utt_id = f"{split}-{i:05d}"
        transcript = _sample_transcript(rng, cfg)
        frames = synthesize(transcript, prototypes, rng, cfg)
        if split == UNPAIRED_TEXT:
            records.append(Record(utt_id, None, transcript, split))
            continue
        if split in shifted:
            frames = frames * cfg.shift_scale + bias
        rel = f"feats/{utt_id}.csv"
        write_features(out_dir / rel, frames)
        records.append(Record(utt_id, rel, transcript, split))

    manifest = Manifest(records, out_dir)
    manifest.write(out_dir / "manifest.jsonl")
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["shift_bias"] = list(cfg.shift_bias)
    (out_dir / "corpus.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")
    return manifest


def build_vocabulary(manifest: Manifest) -> Vocabulary:
    texts = [r.transcript for r in manifest.records if r.split in (PAIRED, UNPAIRED_TEXT)]
    if not any(texts):
        raise ValueError("no paired or unpaired_text transcripts to build a vocabulary from")
    return Vocabulary.from_texts(texts)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class SpeechBatch:
    ids: list[str]
    feats: np.ndarray  # (B, T, F)
    mask: np.ndarray  # (B, T) bool

    def __len__(self):
        return len(self.ids)


@dataclass
class TextBatch:
    ids: list[str]
    labels: np.ndarray  # (B, L) int, padded with EOS
    lengths: np.ndarray  # (B,)

    @property
    def label_mask(self) -> np.ndarray:
        return np.arange(self.labels.shape[1])[None, :] < self.lengths[:, None]

    def __len__(self):
        return len(self.ids)


@dataclass
class PairedBatch:
    ids: list[str]
    feats: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def label_mask(self) -> np.ndarray:
        return np.arange(self.labels.shape[1])[None, :] < self.lengths[:, None]

    def speech(self) -> SpeechBatch:
        return SpeechBatch(self.ids, self.feats, self.mask)

    def text(self) -> TextBatch:
        return TextBatch(self.ids, self.labels, self.lengths)


def collate_speech(ids, feats: list[np.ndarray]) -> SpeechBatch:
    T = max(f.shape[0] for f in feats)
    F = feats[0].shape[1]
    out = np.zeros((len(feats), T, F))
    mask = np.zeros((len(feats), T), dtype=bool)
    for i, f in enumerate(feats):
        out[i, : f.shape[0]] = f
        mask[i, : f.shape[0]] = True
    return SpeechBatch(list(ids), out, mask)


def collate_text(ids, labels: list[list[int]]) -> TextBatch:
    L = max(len(y) for y in labels)
    out = np.full((len(labels), L), EOS, dtype=np.int64)
    for i, y in enumerate(labels):
        out[i, : len(y)] = y
    return TextBatch(list(ids), out, np.array([len(y) for y in labels], dtype=np.int64))


def collate_paired(ids, feats, labels) -> PairedBatch:
    s = collate_speech(ids, feats)
    t = collate_text(ids, labels)
    return PairedBatch(s.ids, s.feats, s.mask, t.labels, t.lengths)


class Corpus:
    """A loaded manifest with its vocabulary and lazily read features.

    Training views of ``unpaired_speech`` never expose transcripts; only
    :meth:`references` (used for scoring) reads them.
    """

    def __init__(self, manifest: Manifest, vocab: Vocabulary | None = None):
        self.manifest = manifest
        self.vocab = vocab or build_vocabulary(manifest)
        self._feats: dict[str, np.ndarray] = {}

    @classmethod
    def load(cls, manifest_path: str | Path) -> "Corpus":
        path = Path(manifest_path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        return cls(Manifest.read(path))

    @property
    def feat_dim(self) -> int:
        for r in self.manifest.records:
            if r.path:
                return self.features(r).shape[1]
        raise ValueError("corpus has no feature files")

    def features(self, record: Record) -> np.ndarray:
        if record.path is None:
            raise ValueError(f"utterance {record.utt_id} has no features")
        if record.utt_id not in self._feats:
            self._feats[record.utt_id] = read_features(self.manifest.root / record.path)
        return self._feats[record.utt_id]

    def speech_examples(self, split: str) -> list[tuple[str, np.ndarray]]:
        if split == UNPAIRED_TEXT:
            raise ValueError("unpaired_text has no speech")
        return [(r.utt_id, self.features(r)) for r in self.manifest.split(split)]

    def text_examples(self, split: str) -> list[tuple[str, list[int]]]:
        if split == UNPAIRED_SPEECH:
            raise ValueError("transcripts of unpaired_speech are withheld from training")
        return [(r.utt_id, self.vocab.encode(r.transcript)) for r in self.manifest.split(split)]

    def paired_examples(self, split: str) -> list[tuple[str, np.ndarray, list[int]]]:
        if split in (UNPAIRED_SPEECH, UNPAIRED_TEXT):
            raise ValueError(f"{split} is not a paired split")
        return [(r.utt_id, self.features(r), self.vocab.encode(r.transcript)) for r in self.manifest.split(split)]

    def references(self, split: str) -> dict[str, str]:
        return {r.utt_id: r.transcript for r in self.manifest.split(split)}


def make_batches(corpus: Corpus, split: str, batch_size: int, seed: int = 0, epoch: int = 0,
                 shuffle: bool = True) -> Iterator:
    """Padded batches for ``split``; order is a deterministic function of (seed, epoch)."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if split == UNPAIRED_SPEECH:
        items = corpus.speech_examples(split)
    elif split == UNPAIRED_TEXT:
        items = corpus.text_examples(split)
    else:
        items = corpus.paired_examples(split)
    order = np.arange(len(items))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(items))
    for start in range(0, len(items), batch_size):
        chunk = [items[i] for i in order[start : start + batch_size]]
        ids = [c[0] for c in chunk]
        if split == UNPAIRED_SPEECH:
            yield collate_speech(ids, [c[1] for c in chunk])
        elif split == UNPAIRED_TEXT:
            yield collate_text(ids, [c[1] for c in chunk])
        else:
            yield collate_paired(ids, [c[1] for c in chunk], [c[2] for c in chunk])


def cycle_batches(corpus: Corpus, split: str, batch_size: int, seed: int) -> Iterator:
    """Endless stream of batches, reshuffled every pass."""
    epoch = 0
    while True:
        yield from make_batches(corpus, split, batch_size, seed, epoch)
        epoch += 1
