"""Character vocabulary with fixed special symbols."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

SOS, EOS, BLANK, UNK = 0, 1, 2, 3
SPECIALS = ("<sos>", "<eos>", "<blank>", "<unk>")


@dataclass(frozen=True)
class Vocabulary:
    chars: tuple[str, ...]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        chars = sorted({c for t in texts for c in t})
        if not chars:
            raise ValueError("cannot build a vocabulary from an empty transcript set")
        return cls(tuple(chars))

    @property
    def symbols(self) -> tuple[str, ...]:
        return SPECIALS + self.chars

    def __len__(self) -> int:
        return len(SPECIALS) + len(self.chars)

    def index(self, ch: str) -> int:
        try:
            return len(SPECIALS) + self.chars.index(ch)
        except ValueError:
            return UNK

    def encode(self, text: str) -> list[int]:
        return [self.index(c) for c in text]

    def decode(self, labels: Iterable[int]) -> str:
        out = []
        for k in labels:
            k = int(k)
            if k == UNK:
                out.append("?")
            elif k >= len(SPECIALS):
                out.append(self.chars[k - len(SPECIALS)])
        return "".join(out)
