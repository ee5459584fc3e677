"""Encoder-decoder model: front-end f, shared encoder, text embedding g, attention decoder d.

Speech path:  x -> f (linear + GRU, subsample 2) -> shared encoder -> b
Text path:    y -> g (one-hot lookup + BiGRU)    -> shared encoder -> b'
The CTC head reads f's output so the shared encoder stays a pure B -> B map.

Batched functions take padded numpy arrays plus boolean masks and return
tensors whose padded rows are exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .vocab import BLANK, EOS, SOS

_NEG = -1e30  # additive attention mask; exp underflows to exactly 0


@dataclass(frozen=True)
class Architecture:
    feat_dim: int = 16
    hidden: int = 32
    shared_layers: int = 1
    decoder_layers: int = 1
    vocab_size: int = 12
    embed_dim: int = 16
    att_dim: int = 32
    subsample: int = 2

    def __post_init__(self):
        if not 1 <= self.shared_layers <= 4:
            raise ValueError(f"shared_layers must be in 1..4, got {self.shared_layers}")
        for name in ("feat_dim", "hidden", "decoder_layers", "vocab_size", "embed_dim", "att_dim", "subsample"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        F, H, V, E, A = self.feat_dim, self.hidden, self.vocab_size, self.embed_dim, self.att_dim
        shapes: dict[str, tuple[int, ...]] = {}

        def gru(prefix, d_in):
            shapes[f"{prefix}.wx"] = (d_in, 3 * H)
            shapes[f"{prefix}.wh"] = (H, 3 * H)
            shapes[f"{prefix}.bx"] = (3 * H,)
            shapes[f"{prefix}.bh"] = (3 * H,)

        def bilayer(prefix, d_in):
            gru(f"{prefix}.fwd", d_in)
            gru(f"{prefix}.bwd", d_in)
            shapes[f"{prefix}.proj.w"] = (2 * H, H)
            shapes[f"{prefix}.proj.b"] = (H,)

        shapes["frontend.w"] = (F, H)
        shapes["frontend.b"] = (H,)
        gru("frontend.gru", H)
        shapes["ctc.w"] = (H, V)
        shapes["ctc.b"] = (V,)
        shapes["text.embed"] = (V, H)
        bilayer("text.layer0", H)
        for i in range(self.shared_layers):
            bilayer(f"shared.layer{i}", H)
        shapes["decoder.embed"] = (V, E)
        shapes["decoder.att.wq"] = (H, A)
        shapes["decoder.att.wk"] = (H, A)
        for i in range(self.decoder_layers):
            gru(f"decoder.layer{i}", E + H if i == 0 else H)
        shapes["decoder.out.w"] = (2 * H, V)
        shapes["decoder.out.b"] = (V,)
        return shapes


@dataclass
class ModelParams:
    """Named trainable tensors plus the architecture they were built for."""

    arch: Architecture
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.arch.param_shapes()
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise ValueError(f"missing parameters: {', '.join(missing)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.tensors[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, arch: Architecture, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in arch.param_shapes().items():
            if name.endswith("embed"):
                data = rng.normal(0.0, 1.0, size=shape)
            else:
                fan_in = shape[0] if len(shape) == 2 else arch.hidden
                k = 1.0 / math.sqrt(fan_in)
                data = rng.uniform(-k, k, size=shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(arch, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
        )

    def describe(self) -> dict:
        return asdict(self.arch)


def group_of(name: str) -> str:
    """Parameter group: frontend, ctc, text, shared or decoder."""
    return name.split(".", 1)[0]


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class FeatureSequence:
    utt_id: str
    frames: np.ndarray  # (T, F)


@dataclass
class EmbeddingSequence:
    vectors: Tensor  # (U, H)
    source: str  # "speech" | "text"


@dataclass
class DecoderState:
    hidden: list[Tensor]  # one (B, H) per decoder layer
    context: Tensor  # (B, H)
    prev_label: np.ndarray  # (B,)
    attention: Tensor | None = None  # (B, U) weights used for the last step


@dataclass
class Memory:
    """Encoder output prepared for attention."""

    values: Tensor  # (B, U, H)
    keys: Tensor  # (B, U, A)
    additive_mask: np.ndarray  # (B, U): 0 on valid frames, -1e30 on padding

    @property
    def batch(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

def _gru(params: ModelParams, prefix: str, x: Tensor, mask, reverse=False) -> Tensor:
    p = params.tensors
    return ag.gru(x, p[f"{prefix}.wx"], p[f"{prefix}.wh"], p[f"{prefix}.bx"], p[f"{prefix}.bh"],
                  mask=mask, reverse=reverse)


def _bilayer(params: ModelParams, prefix: str, x: Tensor, mask: np.ndarray) -> Tensor:
    fwd = _gru(params, f"{prefix}.fwd", x, mask)
    bwd = _gru(params, f"{prefix}.bwd", x, mask, reverse=True)
    both = ag.concat([fwd, bwd], axis=2)
    out = both @ params[f"{prefix}.proj.w"] + params[f"{prefix}.proj.b"]
    return out * mask[:, :, None].astype(np.float64)


def frontend(params: ModelParams, feats: np.ndarray, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """f: (B, T, F) features -> (B, U, H) with U = ceil(T / subsample)."""
    feats = np.asarray(feats, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if feats.ndim != 3 or feats.shape[1] == 0:
        raise ValueError(f"features must be (batch, T>=1, F), got shape {feats.shape}")
    if feats.shape[2] != params.arch.feat_dim:
        raise ValueError(f"feature dim {feats.shape[2]} != architecture feat_dim {params.arch.feat_dim}")
    proj = Tensor(feats) @ params["frontend.w"] + params["frontend.b"]
    h = _gru(params, "frontend.gru", proj, mask)
    s = params.arch.subsample
    return h[:, ::s, :], mask[:, ::s]


def shared_encoder(params: ModelParams, z: Tensor, mask: np.ndarray) -> Tensor:
    """The shared encoder: stack of BiGRU layers mapping width H to width H."""
    if z.ndim != 3 or z.shape[2] != params.arch.hidden:
        raise ValueError(f"shared encoder expects (batch, U, {params.arch.hidden}), got {z.shape}")
    for i in range(params.arch.shared_layers):
        z = _bilayer(params, f"shared.layer{i}", z, mask)
    return z


def text_frontend(params: ModelParams, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """g: one-hot labels (as a table lookup) followed by one BiGRU layer."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[1] == 0:
        raise ValueError(f"labels must be (batch, L>=1), got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= params.arch.vocab_size:
        raise ValueError("label index out of vocabulary range")
    emb = ag.embedding_lookup(params["text.embed"], labels)
    return _bilayer(params, "text.layer0", emb, np.asarray(mask, dtype=bool))


def encode_speech_batch(params, feats, mask) -> tuple[Tensor, np.ndarray]:
    z, umask = frontend(params, feats, mask)
    return shared_encoder(params, z, umask), umask


def embed_text_batch(params, labels, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    return shared_encoder(params, text_frontend(params, labels, mask), mask)


def encode_speech(params: ModelParams, x: FeatureSequence) -> EmbeddingSequence:
    frames = np.asarray(x.frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError(f"utterance {x.utt_id}: need at least one frame, got shape {frames.shape}")
    b, _ = encode_speech_batch(params, frames[None], np.ones((1, frames.shape[0]), bool))
    return EmbeddingSequence(b[0], "speech")


def embed_text(params: ModelParams, y) -> EmbeddingSequence:
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot embed an empty label sequence")
    b = embed_text_batch(params, y[None], np.ones((1, y.size), bool))
    return EmbeddingSequence(b[0], "text")


# ---------------------------------------------------------------------------
# attention decoder
# ---------------------------------------------------------------------------

def make_memory(params: ModelParams, b: Tensor, mask: np.ndarray | None = None) -> Memory:
    if b.ndim == 2:
        b = b.reshape(1, *b.shape)
    B, U, _ = b.shape
    mask = np.ones((B, U), bool) if mask is None else np.asarray(mask, dtype=bool)
    keys = b @ params["decoder.att.wk"]
    return Memory(b, keys, np.where(mask, 0.0, _NEG))


def init_state(params: ModelParams, batch: int) -> DecoderState:
    H = params.arch.hidden
    zeros = Tensor(np.zeros((batch, H)))
    return DecoderState(
        hidden=[zeros] * params.arch.decoder_layers,
        context=zeros,
        prev_label=np.full(batch, SOS, dtype=np.int64),
    )


def attend(params: ModelParams, query_state: Tensor, memory: Memory) -> tuple[Tensor, Tensor]:
    """Dot-product attention; returns (weights (B, U), context (B, H))."""
    B, U, H = memory.values.shape
    A = params.arch.att_dim
    q = query_state @ params["decoder.att.wq"]  # (B, A)
    scores = (memory.keys @ q.reshape(B, A, 1)).reshape(B, U) * (1.0 / math.sqrt(A))
    weights = (scores + memory.additive_mask).softmax(axis=-1)
    context = (weights.reshape(B, 1, U) @ memory.values).reshape(B, H)
    return weights, context


def decode_step(params: ModelParams, prev_label, state: DecoderState, memory: Memory):
    """One decoder step: returns (log-probabilities (B, V), next state).

    Input feeding: the recurrent update sees the previous label and the
    previous context, and the new hidden state then queries the memory.
    """
    prev_label = np.asarray(prev_label, dtype=np.int64).reshape(-1)
    inp = ag.concat([ag.embedding_lookup(params["decoder.embed"], prev_label), state.context], axis=1)
    hidden = []
    for i, h in enumerate(state.hidden):
        p = f"decoder.layer{i}"
        inp = ag.gru_cell(inp, h, params[f"{p}.wx"], params[f"{p}.wh"], params[f"{p}.bx"], params[f"{p}.bh"])
        hidden.append(inp)
    weights, context = attend(params, inp, memory)
    logits = ag.concat([inp, context], axis=1) @ params["decoder.out.w"] + params["decoder.out.b"]
    new_state = DecoderState(hidden, context, prev_label, weights)
    return logits.log_softmax(axis=-1), new_state


def teacher_forcing_io(labels: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decoder inputs (SOS + y), targets (y + EOS) and their mask, each (B, L+1)."""
    B, L = labels.shape
    inputs = np.full((B, L + 1), EOS, dtype=np.int64)
    targets = np.full((B, L + 1), EOS, dtype=np.int64)
    inputs[:, 0] = SOS
    for i, n in enumerate(lengths):
        inputs[i, 1 : n + 1] = labels[i, :n]
        targets[i, :n] = labels[i, :n]
    tmask = np.arange(L + 1)[None, :] <= np.asarray(lengths)[:, None]
    return inputs, targets, tmask


def sequence_log_prob_batch(params: ModelParams, memory: Memory, labels, lengths) -> Tensor:
    """Per-utterance sum of log Pr(y_t | y_<t, b) including the EOS step, shape (B,)."""
    labels = np.asarray(labels, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if labels.ndim != 2 or np.any(lengths < 1):
        raise ValueError("sequence_log_prob needs non-empty label sequences")
    inputs, targets, tmask = teacher_forcing_io(labels, lengths)
    V = params.arch.vocab_size
    eye = np.eye(V)
    state = init_state(params, memory.batch)
    total = None
    for t in range(inputs.shape[1]):
        logp, state = decode_step(params, inputs[:, t], state, memory)
        pick = eye[targets[:, t]] * tmask[:, t : t + 1]
        term = (logp * pick).sum(axis=1)
        total = term if total is None else total + term
    return total


def sequence_log_prob(params: ModelParams, b: EmbeddingSequence | Tensor, y) -> Tensor:
    vectors = b.vectors if isinstance(b, EmbeddingSequence) else b
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("sequence_log_prob needs a non-empty label sequence")
    memory = make_memory(params, vectors)
    return sequence_log_prob_batch(params, memory, y[None], np.array([y.size]))[0]


def ctc_log_prob_batch(params: ModelParams, f_out: Tensor, f_mask: np.ndarray, labels, lengths,
                       utt_ids=None) -> Tensor:
    """Per-utterance CTC log-likelihood from front-end output, shape (B,)."""
    logp = (f_out @ params["ctc.w"] + params["ctc.b"]).log_softmax(axis=-1)
    frames = np.asarray(f_mask, dtype=bool).sum(axis=1)
    targets = [np.asarray(labels[i, :n]) for i, n in enumerate(lengths)]
    for i, (y, u) in enumerate(zip(targets, frames)):
        if ag.ctc_min_frames(y) > u:
            who = utt_ids[i] if utt_ids is not None else f"batch index {i}"
            raise ValueError(f"target unalignable for utterance {who}: "
                             f"{ag.ctc_min_frames(y)} frames needed, {u} available")
    return -ag.ctc_nll(logp, targets, frames, blank=BLANK)


def ctc_log_prob(params: ModelParams, f_out: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.int64)
    if f_out.ndim == 2:
        f_out = f_out.reshape(1, *f_out.shape)
    U = f_out.shape[1]
    return ctc_log_prob_batch(params, f_out, np.ones((1, U), bool), y[None], [y.size])[0]
