"""Single-layer GRU character language model used for shallow fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import teacher_forcing_io


@dataclass(frozen=True)
class LMArchitecture:
    vocab_size: int = 12
    embed_dim: int = 16
    hidden: int = 32

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        V, E, H = self.vocab_size, self.embed_dim, self.hidden
        return {
            "lm.embed": (V, E),
            "lm.gru.wx": (E, 3 * H),
            "lm.gru.wh": (H, 3 * H),
            "lm.gru.bx": (3 * H,),
            "lm.gru.bh": (3 * H,),
            "lm.out.w": (H, V),
            "lm.out.b": (V,),
        }


@dataclass
class LMParams:
    arch: LMArchitecture
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(cls, arch: LMArchitecture, seed: int = 0) -> "LMParams":
        # zero output layer: the untrained LM is exactly uniform
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in arch.param_shapes().items():
            if name.startswith("lm.out"):
                data = np.zeros(shape)
            elif name == "lm.embed":
                data = rng.normal(0.0, 1.0, size=shape)
            else:
                k = 1.0 / math.sqrt(arch.hidden)
                data = rng.uniform(-k, k, size=shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(arch, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return iter(self.tensors.items())

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def lm_step(lm: LMParams, prev_label, hidden: Tensor | None):
    """Next-character log-probabilities (B, V) and the new hidden state."""
    prev_label = np.asarray(prev_label, dtype=np.int64).reshape(-1)
    if hidden is None:
        hidden = Tensor(np.zeros((prev_label.size, lm.arch.hidden)))
    x = ag.embedding_lookup(lm["lm.embed"], prev_label)
    h = ag.gru_cell(x, hidden, lm["lm.gru.wx"], lm["lm.gru.wh"], lm["lm.gru.bx"], lm["lm.gru.bh"])
    logits = h @ lm["lm.out.w"] + lm["lm.out.b"]
    return logits.log_softmax(axis=-1), h


def lm_nll(lm: LMParams, labels, lengths) -> tuple[Tensor, int]:
    """Summed next-character NLL over the batch (EOS included) and the token count."""
    labels = np.asarray(labels, dtype=np.int64)
    inputs, targets, tmask = teacher_forcing_io(labels, np.asarray(lengths))
    B, T = inputs.shape
    x = ag.embedding_lookup(lm["lm.embed"], inputs)
    h = ag.gru(x, lm["lm.gru.wx"], lm["lm.gru.wh"], lm["lm.gru.bx"], lm["lm.gru.bh"], mask=tmask)
    logp = (h @ lm["lm.out.w"] + lm["lm.out.b"]).log_softmax(axis=-1)
    pick = np.eye(lm.arch.vocab_size)[targets] * tmask[:, :, None]
    return -(logp * pick).sum(), int(tmask.sum())
