"""Training objectives: paired, text autoencoder, MMD inter-domain, identity, cycle.

All batch losses are means over utterances (or frames, for the identity
loss). MMD treats frame vectors as samples; the RBF bandwidth is either fixed
or set per call by the median heuristic and then held constant, so gradients
flow only through the samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ExperimentConfig, KernelConfig, Variant
from .corpus import PairedBatch, SpeechBatch, TextBatch, collate_text
from .decoder import greedy_decode_batch
from .model import (
    ModelParams,
    ctc_log_prob_batch,
    embed_text_batch,
    frontend,
    make_memory,
    sequence_log_prob_batch,
    shared_encoder,
)
from .vocab import UNK

COMPONENTS = ("pair", "text", "dom", "cyc_dom", "idt_speech", "idt_text", "ctc")


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def median_bandwidth(*samples: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the pooled samples (1.0 if degenerate)."""
    pooled = np.concatenate([np.asarray(s, dtype=np.float64).reshape(-1, s.shape[-1]) for s in samples])
    sq = (pooled * pooled).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * pooled @ pooled.T
    iu = np.triu_indices(len(pooled), k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def _rbf(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    """Kernel matrix exp(-|a_i - b_j|^2 / (2 sigma^2)) for (..., n, H) and (..., m, H)."""
    na = (a * a).sum(axis=-1, keepdims=True)  # (..., n, 1)
    nb = (b * b).sum(axis=-1, keepdims=True)  # (..., m, 1)
    axes = tuple(range(b.ndim - 2)) + (b.ndim - 1, b.ndim - 2)
    d2 = na + nb.transpose(axes) - 2.0 * (a @ b.transpose(axes))
    return (d2 * (-0.5 / sigma ** 2)).exp()


def masked_mmd(p: Tensor, p_mask: np.ndarray, q: Tensor, q_mask: np.ndarray, sigma: float,
               estimator: str = "biased") -> Tensor:
    """Per-row squared MMD between batched sample sets, shape (B,).

    ``p`` is (B, n, H) with validity mask (B, n); ``q`` likewise.
    """
    pm = np.asarray(p_mask, dtype=np.float64)
    qm = np.asarray(q_mask, dtype=np.float64)
    n = pm.sum(axis=1)
    m = qm.sum(axis=1)
    if np.any(n < 1) or np.any(m < 1):
        raise ValueError("MMD needs non-empty sample sets")
    w_pp = pm[:, :, None] * pm[:, None, :]
    w_qq = qm[:, :, None] * qm[:, None, :]
    w_pq = pm[:, :, None] * qm[:, None, :]
    if estimator == "unbiased":
        if np.any(n < 2) or np.any(m < 2):
            raise ValueError("unbiased MMD needs at least two samples per set")
        w_pp = w_pp * (1.0 - np.eye(pm.shape[1]))[None] / (n * (n - 1))[:, None, None]
        w_qq = w_qq * (1.0 - np.eye(qm.shape[1]))[None] / (m * (m - 1))[:, None, None]
    elif estimator == "biased":
        w_pp = w_pp / (n * n)[:, None, None]
        w_qq = w_qq / (m * m)[:, None, None]
    else:
        raise ValueError(f"unknown MMD estimator {estimator!r}")
    w_pq = w_pq / (n * m)[:, None, None]
    k_pp = (_rbf(p, p, sigma) * w_pp).sum(axis=(1, 2))
    k_qq = (_rbf(q, q, sigma) * w_qq).sum(axis=(1, 2))
    k_pq = (_rbf(p, q, sigma) * w_pq).sum(axis=(1, 2))
    return k_pp + k_qq - 2.0 * k_pq


def _resolve_sigma(kernel: KernelConfig, *samples: np.ndarray) -> float:
    if kernel.bandwidth is not None:
        return float(kernel.bandwidth)
    return median_bandwidth(*samples)


def mmd(samples_p, samples_q, kernel: KernelConfig = KernelConfig()) -> Tensor:
    """Squared MMD between two sets of H-vectors (rows), RBF kernel."""
    p = samples_p if isinstance(samples_p, Tensor) else Tensor(samples_p)
    q = samples_q if isinstance(samples_q, Tensor) else Tensor(samples_q)
    if p.ndim == 1:
        p = p.reshape(-1, 1)
    if q.ndim == 1:
        q = q.reshape(-1, 1)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError("MMD needs non-empty sample sets")
    if p.shape[1] != q.shape[1]:
        raise ag.ShapeError(f"mmd: sample widths differ: {p.shape} and {q.shape}")
    sigma = _resolve_sigma(kernel, p.data, q.data)
    out = masked_mmd(p.reshape(1, *p.shape), np.ones((1, p.shape[0])),
                     q.reshape(1, *q.shape), np.ones((1, q.shape[0])), sigma, kernel.estimator)
    return out[0]


def _valid_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    B, U, H = x.shape
    idx = np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
    return ag.embedding_lookup(x.reshape(B * U, H), idx)


# ---------------------------------------------------------------------------
# component losses
# ---------------------------------------------------------------------------

def _pair_terms(params: ModelParams, batch: PairedBatch, ctc_weight: float):
    """Returns (L_pair, mean CTC NLL or None)."""
    if len(batch) == 0:
        raise ValueError("paired batch is empty")
    f_out, umask = frontend(params, batch.feats, batch.mask)
    total = None
    ctc = None
    if ctc_weight > 0:
        ctc = -ctc_log_prob_batch(params, f_out, umask, batch.labels, batch.lengths, batch.ids).mean()
        total = ctc * ctc_weight
    if ctc_weight < 1:
        b = shared_encoder(params, f_out, umask)
        att = -sequence_log_prob_batch(params, make_memory(params, b, umask), batch.labels, batch.lengths).mean()
        total = att * (1.0 - ctc_weight) if total is None else total + att * (1.0 - ctc_weight)
    return total, ctc


def loss_pair(params: ModelParams, batch: PairedBatch, ctc_weight: float = 0.3) -> Tensor:
    return _pair_terms(params, batch, ctc_weight)[0]


def _text_loss_from(params, emb: Tensor, batch: TextBatch) -> Tensor:
    memory = make_memory(params, emb, batch.label_mask)
    return -sequence_log_prob_batch(params, memory, batch.labels, batch.lengths).mean()


def loss_text(params: ModelParams, batch: TextBatch) -> Tensor:
    """Text autoencoder: mean -log Pr(y | shared(g(y)))."""
    if len(batch) == 0:
        raise ValueError("text batch is empty")
    emb = embed_text_batch(params, batch.labels, batch.label_mask)
    return _text_loss_from(params, emb, batch)


def _dom_from(b, umask, emb, tmask, kernel: KernelConfig) -> Tensor:
    p = _valid_rows(b, umask)
    q = _valid_rows(emb, tmask)
    return mmd(p, q, kernel)


def loss_dom(params: ModelParams, speech: SpeechBatch, text: TextBatch, kernel: KernelConfig = KernelConfig()) -> Tensor:
    """MMD between pooled speech-embedding frames and pooled text-embedding frames."""
    if len(speech) == 0 or len(text) == 0:
        raise ValueError("inter-domain loss needs non-empty speech and text batches")
    f_out, umask = frontend(params, speech.feats, speech.mask)
    b = shared_encoder(params, f_out, umask)
    emb = embed_text_batch(params, text.labels, text.label_mask)
    return _dom_from(b, umask, emb, text.label_mask, kernel)


def loss_idt(params: ModelParams, b: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over valid frames of |shared(b) - b|_1."""
    if b.ndim == 2:
        b = b.reshape(1, *b.shape)
    mask = np.ones(b.shape[:2], bool) if mask is None else np.asarray(mask, dtype=bool)
    m3 = mask[:, :, None].astype(np.float64)
    diff = (shared_encoder(params, b, mask) - b) * m3
    return ag.l1_norm(diff) * (1.0 / mask.sum())


@dataclass
class CycleResult:
    loss: Tensor
    hypotheses: list[tuple[int, ...]]
    empty_substituted: int


def _cyc_from(params, b: Tensor, umask: np.ndarray, kernel: KernelConfig, max_len_factor: float) -> CycleResult:
    hyps = greedy_decode_batch(params, b, umask, max_len_factor)
    labels = [list(h.labels) if h.labels else [UNK] for h in hyps]
    empty = sum(1 for h in hyps if not h.labels)
    tb = collate_text([str(i) for i in range(len(labels))], labels)
    cycle = embed_text_batch(params, tb.labels, tb.label_mask)
    sigma = _resolve_sigma(kernel, b.data[umask], cycle.data[tb.label_mask])
    per_utt = masked_mmd(b, umask, cycle, tb.label_mask, sigma, kernel.estimator)
    return CycleResult(per_utt.mean(), [tuple(l) for l in labels], empty)


def loss_cyc_dom(params: ModelParams, speech: SpeechBatch, kernel: KernelConfig = KernelConfig(),
                 max_len_factor: float = 1.5) -> CycleResult:
    """MMD between e(x) and shared(g(greedy(e(x)))), averaged over utterances.

    The hypothesis is discrete and gradient-stopped; an empty hypothesis is
    replaced by a single UNK label and counted in ``empty_substituted``.
    """
    if len(speech) == 0:
        raise ValueError("cycle loss needs a non-empty speech batch")
    f_out, umask = frontend(params, speech.feats, speech.mask)
    b = shared_encoder(params, f_out, umask)
    return _cyc_from(params, b, umask, kernel, max_len_factor)


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: Tensor
    components: dict[str, Tensor] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {k: v.item() for k, v in self.components.items()}


def _speech_needed(variant: Variant, beta: float) -> bool:
    return beta > 0 or variant is Variant.BASELINE


def combined_objective(params: ModelParams, cfg: ExperimentConfig, paired: PairedBatch | None,
                       speech: SpeechBatch | None = None, text: TextBatch | None = None) -> LossBreakdown:
    """total = alpha * L_pair + (1 - alpha) * L_unpair, with L_unpair chosen by the variant.

    Terms multiplied by zero (alpha, beta or 1 - beta at an endpoint) are not
    computed and do not appear in ``components``. ``ctc`` is informational:
    it is the CTC part already inside ``pair``.
    """
    variant = cfg.variant
    alpha = cfg.effective_alpha
    beta = cfg.beta
    comps: dict[str, Tensor] = {}
    diag: dict[str, float] = {}
    total = None

    if alpha > 0:
        if paired is None or len(paired) == 0:
            raise ValueError("paired batch required when alpha > 0")
        pair, ctc = _pair_terms(params, paired, cfg.ctc_weight)
        comps["pair"] = pair
        if ctc is not None:
            comps["ctc"] = ctc
        total = pair * alpha

    if alpha < 1:
        unpair = _unpaired(params, cfg, variant, beta, speech, text, comps, diag)
        total = unpair * (1.0 - alpha) if total is None else total + unpair * (1.0 - alpha)
    return LossBreakdown(total, comps, diag)


def _unpaired(params, cfg, variant, beta, speech, text, comps, diag) -> Tensor:
    use_speech = beta > 0
    use_text = beta < 1
    if variant is Variant.BASELINE:
        # L_dom draws its second sample set from the text batch at every beta
        need_text, need_speech = True, use_speech
    else:
        need_text, need_speech = use_text, use_speech
    if need_speech and (speech is None or len(speech) == 0):
        raise ValueError(f"{variant.value} with beta={beta} needs an unpaired speech batch")
    if need_text and (text is None or len(text) == 0):
        raise ValueError(f"{variant.value} with beta={beta} needs an unpaired text batch")

    b = umask = emb = None
    if need_speech:
        f_out, umask = frontend(params, speech.feats, speech.mask)
        b = shared_encoder(params, f_out, umask)
    text_emb_needed = use_text or (variant is Variant.BASELINE and use_speech)
    if text_emb_needed:
        emb = embed_text_batch(params, text.labels, text.label_mask)

    speech_term = text_term = None
    if variant is Variant.BASELINE:
        if use_speech:
            comps["dom"] = speech_term = _dom_from(b, umask, emb, text.label_mask, cfg.kernel)
        if use_text:
            comps["text"] = text_term = _text_loss_from(params, emb, text)
    elif variant is Variant.IDT:
        if use_speech:
            comps["idt_speech"] = speech_term = loss_idt(params, b, umask)
        if use_text:
            comps["idt_text"] = text_term = loss_idt(params, emb, text.label_mask)
    elif variant in (Variant.CYC, Variant.CYC_IDT):
        if use_speech:
            cyc = _cyc_from(params, b, umask, cfg.kernel, cfg.max_len_factor)
            comps["cyc_dom"] = speech_term = cyc.loss
            diag["empty_hypotheses"] = float(cyc.empty_substituted)
            if variant is Variant.CYC_IDT:
                comps["idt_speech"] = idt = loss_idt(params, b, umask)
                speech_term = speech_term + idt
        if use_text:
            comps["text"] = text_term = _text_loss_from(params, emb, text)
            if variant is Variant.CYC_IDT:
                comps["idt_text"] = idt = loss_idt(params, emb, text.label_mask)
                text_term = text_term + idt
    else:
        raise ValueError(f"variant {variant.value} has no unpaired objective")

    if speech_term is not None and text_term is not None:
        return speech_term * beta + text_term * (1.0 - beta)
    if speech_term is not None:
        return speech_term * beta
    return text_term * (1.0 - beta)
