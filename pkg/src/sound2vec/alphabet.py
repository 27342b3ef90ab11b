"""The 30-symbol output alphabet and transcript encoding."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import EmptyLabelError

UNK = "<UNK>"
BLANK = "<blank>"


@dataclass(frozen=True)
class Alphabet:
    symbols: Tuple[str, ...]
    blank_index: int

    def __post_init__(self):
        if self.symbols.count(BLANK) != 1 or self.symbols[self.blank_index] != BLANK:
            raise ValueError("alphabet must contain exactly one blank, at blank_index")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")

    @classmethod
    def default(cls) -> "Alphabet":
        symbols = tuple(string.ascii_lowercase) + (" ", "'", UNK, BLANK)
        return cls(symbols, len(symbols) - 1)

    @classmethod
    def from_chars(cls, chars: str) -> "Alphabet":
        """Small alphabets for tests: the given characters followed by the blank."""
        symbols = tuple(chars) + (BLANK,)
        return cls(symbols, len(symbols) - 1)

    def __len__(self):
        return len(self.symbols)

    @property
    def index(self):
        return {s: i for i, s in enumerate(self.symbols)}

    @property
    def unk_index(self):
        return self.symbols.index(UNK) if UNK in self.symbols else None

    @property
    def characters(self) -> List[str]:
        """Every symbol except the blank, in index order."""
        return [s for i, s in enumerate(self.symbols) if i != self.blank_index]

    def tokenize(self, text: str) -> List[str]:
        """Casefold ``text`` and map characters outside the alphabet to ``<UNK>``."""
        index = self.index
        unk = UNK if UNK in index else None
        out = []
        for ch in text.lower():
            if ch in index and ch not in (UNK, BLANK):
                out.append(ch)
            elif unk is not None:
                out.append(unk)
            else:
                raise ValueError(f"character {ch!r} is not in the alphabet and there is no {UNK}")
        return out

    def decode(self, indices: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in indices if i != self.blank_index)


DEFAULT_ALPHABET = Alphabet.default()


def encode_transcript(text: str, alphabet: Alphabet = DEFAULT_ALPHABET) -> List[int]:
    index = alphabet.index
    labels = [index[tok] for tok in alphabet.tokenize(text)]
    if not labels:
        raise EmptyLabelError(f"transcript {text!r} encodes to an empty label sequence")
    return labels
