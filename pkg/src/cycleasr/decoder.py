"""Greedy and beam-search decoding with optional character-LM shallow fusion."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .lm import LMParams, lm_step
from .model import DecoderState, EmbeddingSequence, Memory, ModelParams, decode_step, init_state, make_memory
from .vocab import BLANK, EOS, SOS

_EXCLUDED = (SOS, BLANK)


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[int, ...]
    score: float
    step_scores: tuple[float, ...]
    completed: bool = True

    def sort_key(self):
        return (-self.score, len(self.labels), self.labels)


@dataclass(frozen=True)
class BeamConfig:
    width: int = 5
    max_len_factor: float = 1.5
    lm_weight: float = 0.0
    lm: LMParams | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("beam width must be at least 1")
        if self.lm_weight < 0:
            raise ValueError("LM weight must be non-negative")
        if self.lm is None and self.lm_weight != 0:
            raise ValueError("LM weight must be 0 when no LM is supplied")


def max_decode_len(frames: int, factor: float) -> int:
    return max(1, math.ceil(factor * frames))


def fuse_lm_score(model_logp: np.ndarray, lm_logp: np.ndarray | None, weight: float) -> np.ndarray:
    """Shallow fusion: log p_model + weight * log p_lm, without renormalization."""
    model_logp = np.asarray(model_logp, dtype=np.float64)
    if lm_logp is None or weight == 0:
        return model_logp
    lm_logp = np.asarray(lm_logp, dtype=np.float64)
    if lm_logp.shape != model_logp.shape:
        raise ValueError(f"vocabulary mismatch: model {model_logp.shape} vs LM {lm_logp.shape}")
    return model_logp + weight * lm_logp


def _vectors(b) -> Tensor:
    return b.vectors if isinstance(b, EmbeddingSequence) else b


def greedy_decode_batch(params: ModelParams, b: Tensor, mask: np.ndarray, max_len_factor: float = 1.5
                        ) -> list[Hypothesis]:
    """Argmax decoding of a padded batch; gradient-free."""
    with ag.no_grad():
        b = b.detach()
        mask = np.asarray(mask, dtype=bool)
        B = b.shape[0]
        caps = [max_decode_len(int(n), max_len_factor) for n in mask.sum(axis=1)]
        memory = make_memory(params, b, mask)
        state = init_state(params, B)
        labels: list[list[int]] = [[] for _ in range(B)]
        steps: list[list[float]] = [[] for _ in range(B)]
        done = [False] * B
        completed = [False] * B
        prev = np.full(B, SOS, dtype=np.int64)
        for t in range(max(caps)):
            logp, state = decode_step(params, prev, state, memory)
            scores = logp.data.copy()
            scores[:, _EXCLUDED] = -np.inf
            best = scores.argmax(axis=1)
            for i in range(B):
                if done[i]:
                    continue
                k = int(best[i])
                steps[i].append(float(scores[i, k]))
                if k == EOS:
                    done[i] = completed[i] = True
                else:
                    labels[i].append(k)
                    if len(labels[i]) >= caps[i]:
                        done[i] = True
            if all(done):
                break
            prev = best
        return [Hypothesis(tuple(l), float(sum(s)), tuple(s), c) for l, s, c in zip(labels, steps, completed)]


def greedy_decode(params: ModelParams, b, max_len_factor: float = 1.5) -> Hypothesis:
    v = _vectors(b)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("greedy_decode needs a non-empty (U, H) embedding")
    return greedy_decode_batch(params, v.reshape(1, *v.shape), np.ones((1, v.shape[0]), bool), max_len_factor)[0]


def _expand_memory(memory: Memory, n: int) -> Memory:
    return Memory(
        Tensor(np.repeat(memory.values.data, n, axis=0)),
        Tensor(np.repeat(memory.keys.data, n, axis=0)),
        np.repeat(memory.additive_mask, n, axis=0),
    )


def _take_state(state: DecoderState, rows: list[int]) -> DecoderState:
    idx = np.asarray(rows, dtype=np.int64)
    return DecoderState(
        [Tensor(h.data[idx]) for h in state.hidden],
        Tensor(state.context.data[idx]),
        state.prev_label[idx],
    )


def beam_search(params: ModelParams, b, cfg: BeamConfig = BeamConfig()) -> list[Hypothesis]:
    """Length-synchronous beam search; returns up to ``cfg.width`` hypotheses, best first.

    Hypotheses are ranked by total score, then shorter length, then
    lexicographic labels. If nothing reaches EOS within the length cap the
    best unfinished hypotheses are returned with ``completed=False``.
    """
    v = _vectors(b)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("beam_search needs a non-empty (U, H) embedding")
    use_lm = cfg.lm is not None and cfg.lm_weight != 0
    cap = max_decode_len(v.shape[0], cfg.max_len_factor)
    with ag.no_grad():
        base = make_memory(params, v.detach())
        memories: dict[int, Memory] = {1: base}
        state = init_state(params, 1)
        lm_hidden = None
        active: list[Hypothesis] = [Hypothesis((), 0.0, (), False)]
        finished: list[Hypothesis] = []
        for _ in range(cap):
            n = len(active)
            if n not in memories:
                memories[n] = _expand_memory(base, n)
            prev = np.array([h.labels[-1] if h.labels else SOS for h in active], dtype=np.int64)
            logp, state = decode_step(params, prev, state, memories[n])
            lm_logp = None
            if use_lm:
                lm_out, lm_hidden = lm_step(cfg.lm, prev, lm_hidden)
                lm_logp = lm_out.data
            fused = fuse_lm_score(logp.data, lm_logp, cfg.lm_weight).copy()
            fused[:, _EXCLUDED] = -np.inf

            candidates = []
            for i, hyp in enumerate(active):
                for k in np.flatnonzero(np.isfinite(fused[i])):
                    s = float(fused[i, k])
                    total = hyp.score + s
                    labels = hyp.labels if k == EOS else hyp.labels + (int(k),)
                    candidates.append((-total, len(labels), labels, k == EOS, i, s))
            candidates.sort()
            chosen = candidates[: cfg.width]

            next_active, rows = [], []
            for neg_total, _, labels, is_eos, i, s in chosen:
                hyp = Hypothesis(labels, -neg_total, active[i].step_scores + (s,), bool(is_eos))
                if is_eos:
                    finished.append(hyp)
                else:
                    next_active.append(hyp)
                    rows.append(i)
            if not next_active:
                break
            finished.sort(key=Hypothesis.sort_key)
            if len(finished) >= cfg.width and next_active[0].score <= finished[cfg.width - 1].score:
                break
            state = _take_state(state, rows)
            if use_lm:
                lm_hidden = Tensor(lm_hidden.data[np.asarray(rows)])
            active = next_active

        if finished:
            finished.sort(key=Hypothesis.sort_key)
            return finished[: cfg.width]
        return sorted(next_active, key=Hypothesis.sort_key)[: cfg.width]


# ---------------------------------------------------------------------------
# decode output file: one JSON object per line {"id", "text", "score"}
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeRecord:
    utt_id: str
    text: str
    score: float


def write_decode_output(path: str | Path, records: list[DecodeRecord]) -> None:
    lines = [json.dumps({"id": r.utt_id, "text": r.text, "score": r.score}, ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_decode_output(path: str | Path) -> list[DecodeRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(DecodeRecord(d["id"], d["text"], float(d.get("score", 0.0))))
    return out
