"""
Prompt vocabulary and tokenized prompt layout
"""
import json
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


BOS_ID = 0
PAD_ID = 1
BOS_TOKEN = "<bos>"
PAD_TOKEN = "<pad>"
RESERVED = {BOS_TOKEN: BOS_ID, PAD_TOKEN: PAD_ID}


class Vocabulary(BaseModel):
    """Word to id map; ids 0 and 1 are reserved for <bos> and <pad>"""
    model_config = ConfigDict(frozen=True)

    word_to_id: Dict[str, int]

    @model_validator(mode="after")
    def check_dense(self):
        ids = sorted(self.word_to_id.values())
        if ids != list(range(len(RESERVED), len(RESERVED) + len(ids))):
            raise ValueError("word ids must be dense starting at 2")
        if any(word in RESERVED for word in self.word_to_id):
            raise ValueError("reserved tokens cannot be assigned to words")
        return self

    @classmethod
    def from_words(cls, words: List[str]) -> "Vocabulary":
        unique = list(dict.fromkeys(words))
        return cls(word_to_id={w: i + len(RESERVED) for i, w in enumerate(unique)})

    @property
    def size(self) -> int:
        return len(self.word_to_id) + len(RESERVED)

    def id_to_word(self) -> Dict[int, str]:
        table = {i: w for w, i in self.word_to_id.items()}
        table.update({i: w for w, i in RESERVED.items()})
        return table

    def to_json(self) -> str:
        return json.dumps({**RESERVED, **self.word_to_id}, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        raw = json.loads(text)
        for token, expected in RESERVED.items():
            if token in raw and raw[token] != expected:
                raise ValueError(f"reserved token {token} must have id {expected}")
        return cls(word_to_id={w: i for w, i in raw.items() if w not in RESERVED})


class PromptPair(BaseModel):
    """Object description (inside) and background description (outside)"""
    model_config = ConfigDict(frozen=True)

    inside: Tuple[str, ...] = Field(default_factory=tuple)
    outside: Tuple[str, ...] = Field(default_factory=tuple)

    @classmethod
    def parse(cls, text: str) -> "PromptPair":
        inside, _, outside = text.partition("|")
        return cls(inside=tuple(inside.split()), outside=tuple(outside.split()))

    def format(self) -> str:
        return f"{' '.join(self.inside)}|{' '.join(self.outside)}"


class TokenizedPrompt(BaseModel):
    """
    Fixed-length token layout: [<bos>, B inside slots, B outside slots].
    Pad slots belong to the side they sit on.
    """
    model_config = ConfigDict(frozen=True)

    ids: Tuple[int, ...]
    budget: int
    bos_index: int = 0

    @model_validator(mode="after")
    def check_layout(self):
        if len(self.ids) != 1 + 2 * self.budget:
            raise ValueError(f"expected {1 + 2 * self.budget} ids, got {len(self.ids)}")
        if self.ids[self.bos_index] != BOS_ID:
            raise ValueError("position 0 must hold <bos>")
        return self

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def j_in(self) -> Tuple[int, ...]:
        return tuple(range(1, self.budget + 1))

    @property
    def j_out(self) -> Tuple[int, ...]:
        return tuple(range(self.budget + 1, 2 * self.budget + 1))

    @property
    def word_positions(self) -> List[int]:
        return [i for i, tid in enumerate(self.ids) if tid not in (BOS_ID, PAD_ID)]
