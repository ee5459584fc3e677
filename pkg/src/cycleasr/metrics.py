"""Edit-distance scoring (CER/WER with S/D/I attribution) and embedding export."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .corpus import Corpus
from .model import FeatureSequence, ModelParams, embed_text, encode_speech

_OK, _SUB, _DEL, _INS = 0, 1, 2, 3


@dataclass(frozen=True)
class AlignmentResult:
    substitutions: int
    deletions: int
    insertions: int
    hits: int
    pairs: tuple[tuple[object, object], ...]  # (ref | None, hyp | None)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def ref_length(self) -> int:
        return self.hits + self.substitutions + self.deletions

    @property
    def error_rate(self) -> float:
        n = self.ref_length
        return self.errors / n if n else float(self.errors > 0)


def align(ref: Sequence, hyp: Sequence) -> AlignmentResult:
    """Minimum edit-distance alignment with unit costs.

    Among minimal alignments, more hits win, then fewer substitutions; any
    remaining tie is broken deterministically (diagonal, then deletion).
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # cost tuple: (edits, -hits, substitutions), compared lexicographically
    cost = [[(0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    back = [[_OK] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = (i, 0, 0)
        back[i][0] = _DEL
    for j in range(1, m + 1):
        cost[0][j] = (j, 0, 0)
        back[0][j] = _INS
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        for j in range(1, m + 1):
            e, h, s = prev[j - 1]
            diag = (e, h - 1, s) if ref[i - 1] == hyp[j - 1] else (e + 1, h, s + 1)
            e, h, s = prev[j]
            dele = (e + 1, h, s)
            e, h, s = row[j - 1]
            ins = (e + 1, h, s)
            best, op = diag, (_OK if ref[i - 1] == hyp[j - 1] else _SUB)
            if dele < best:
                best, op = dele, _DEL
            if ins < best:
                best, op = ins, _INS
            row[j] = best
            back[i][j] = op
    pairs = []
    i, j = n, m
    counts = [0, 0, 0, 0]
    while i > 0 or j > 0:
        op = back[i][j]
        counts[op] += 1
        if op in (_OK, _SUB):
            pairs.append((ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif op == _DEL:
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            j -= 1
    pairs.reverse()
    return AlignmentResult(counts[_SUB], counts[_DEL], counts[_INS], counts[_OK], tuple(pairs))


def tokenize(text: str, unit: str) -> list[str]:
    if unit == "char":
        return list(text)
    if unit == "word":
        return text.split()
    raise ValueError(f"unit must be 'char' or 'word', got {unit!r}")


@dataclass
class ErrorCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    hits: int = 0

    @property
    def ref_length(self) -> int:
        return self.hits + self.substitutions + self.deletions

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_length if self.ref_length else 0.0

    def add(self, a: AlignmentResult) -> None:
        self.substitutions += a.substitutions
        self.deletions += a.deletions
        self.insertions += a.insertions
        self.hits += a.hits


@dataclass
class CorpusScore:
    unit: str
    total: ErrorCounts
    per_utterance: dict[str, AlignmentResult]

    @property
    def rate(self) -> float:
        return self.total.rate


def score_corpus(references: dict[str, str], hypotheses: dict[str, str], unit: str = "char") -> CorpusScore:
    """Corpus error rate = total edits / total reference tokens (sorted-id reduction order)."""
    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise KeyError(f"no hypothesis for utterances: {', '.join(missing)}")
    unknown = sorted(set(hypotheses) - set(references))
    if unknown:
        raise KeyError(f"decoded utterances not in split: {', '.join(unknown)}")
    total = ErrorCounts()
    per = {}
    for utt in sorted(references):
        a = align(tokenize(references[utt], unit), tokenize(hypotheses[utt], unit))
        per[utt] = a
        total.add(a)
    return CorpusScore(unit, total, per)


@dataclass
class ScoreReport:
    model: str
    type: str
    lm: str
    char: CorpusScore
    word: CorpusScore
    extra: dict = field(default_factory=dict)

    @property
    def cer(self) -> float:
        return self.char.rate

    @property
    def wer(self) -> float:
        return self.word.rate


def beta_type(beta: float | None) -> str:
    """Table-style type tag: Text (beta=0), Speech (beta=1), Both otherwise."""
    if beta is None:
        return "-"
    if beta == 0:
        return "Text"
    if beta == 1:
        return "Speech"
    return "Both"


def make_report(references, hypotheses, model: str, beta: float | None = None, lm: bool = False) -> ScoreReport:
    return ScoreReport(
        model=model,
        type=beta_type(beta),
        lm="Y" if lm else "N",
        char=score_corpus(references, hypotheses, "char"),
        word=score_corpus(references, hypotheses, "word"),
    )


REPORT_FIELDS = ["model", "type", "lm", "cer", "wer", "char_sub", "char_del", "char_ins", "char_ref",
                 "word_sub", "word_del", "word_ins", "word_ref"]


def report_rows(reports: list[ScoreReport]) -> list[dict]:
    rows = []
    for r in reports:
        c, w = r.char.total, r.word.total
        rows.append({
            "model": r.model, "type": r.type, "lm": r.lm,
            "cer": f"{100 * r.cer:.2f}", "wer": f"{100 * r.wer:.2f}",
            "char_sub": c.substitutions, "char_del": c.deletions, "char_ins": c.insertions, "char_ref": c.ref_length,
            "word_sub": w.substitutions, "word_del": w.deletions, "word_ins": w.insertions, "word_ref": w.ref_length,
        })
    return rows


def write_report_csv(path: str | Path, reports: list[ScoreReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report_rows(reports))


def format_table(reports: list[ScoreReport]) -> str:
    """Plain-text table with columns Model, Type, LM, CER(%), WER(%)."""
    header = ("Model", "Type", "LM", "CER(%)", "WER(%)")
    rows = [(r.model, r.type, r.lm, f"{100 * r.cer:.2f}", f"{100 * r.wer:.2f}") for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    buf = io.StringIO()
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    buf.write(line + "\n" + "-" * len(line) + "\n")
    for row in rows:
        buf.write("  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip() + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------

def principal_projection(rows: np.ndarray, k: int = 2) -> np.ndarray:
    """Project centred rows on their top-k principal directions (deterministic signs)."""
    centred = rows - rows.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    vt = vt[:k]
    signs = np.sign(vt[np.arange(vt.shape[0]), np.abs(vt).argmax(axis=1)])
    signs[signs == 0] = 1.0
    proj = centred @ (vt * signs[:, None]).T
    if proj.shape[1] < k:
        proj = np.pad(proj, ((0, 0), (0, k - proj.shape[1])))
    return proj


def collect_embeddings(params: ModelParams, corpus: Corpus, split: str) -> list[tuple[str, str, int, np.ndarray]]:
    """(utt_id, source, frame, vector) rows for every speech and/or text item of ``split``."""
    out = []
    records = corpus.manifest.split(split)
    with ag.no_grad():
        for r in records:
            if r.path is not None:
                b = encode_speech(params, FeatureSequence(r.utt_id, corpus.features(r)))
                out.extend((r.utt_id, "speech", i, v) for i, v in enumerate(b.vectors.data))
            if split != "unpaired_speech" and r.transcript:
                e = embed_text(params, corpus.vocab.encode(r.transcript))
                out.extend((r.utt_id, "text", i, v) for i, v in enumerate(e.vectors.data))
    return out


def export_embeddings(params: ModelParams, corpus: Corpus, split: str, path: str | Path,
                      projection: bool = True) -> int:
    """Write embedding rows as CSV; returns the number of data rows."""
    rows = collect_embeddings(params, corpus, split)
    H = params.arch.hidden
    header = ["utt_id", "source", "frame"] + [f"h{i}" for i in range(H)]
    proj = None
    if projection and rows:
        header += ["proj0", "proj1"]
        proj = principal_projection(np.stack([r[3] for r in rows]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for n, (utt, source, frame, vec) in enumerate(rows):
            line = [utt, source, frame] + [repr(float(x)) for x in vec]
            if proj is not None:
                line += [repr(float(x)) for x in proj[n]]
            writer.writerow(line)
    return len(rows)
