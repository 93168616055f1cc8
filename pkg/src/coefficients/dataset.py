"""
Token datasets.

A dataset file is JSON lines, one example per line:
    {"tokens": [int, ...], "answer_start": int, "answer_end": int}
with the answer span half-open.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from src.errors import EmptySelectionError, InputError
from src.model.config import ModelConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenExample:
    """Token ids plus a mask marking one contiguous run of answer tokens."""
    tokens: Tuple[int, ...]
    answer_mask: Tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "answer_mask", tuple(bool(b) for b in self.answer_mask))
        if len(self.tokens) != len(self.answer_mask):
            raise InputError(
                f"tokens ({len(self.tokens)}) and answer_mask ({len(self.answer_mask)}) differ in length"
            )
        if not self.tokens:
            raise InputError("example has no tokens")
        start, end = self.answer_span
        if sum(self.answer_mask) != end - start:
            raise InputError(f"answer mask must be one contiguous span, got {list(self.answer_mask)}")

    @classmethod
    def from_span(cls, tokens: Sequence[int], answer_start: int, answer_end: int) -> "TokenExample":
        if not 0 <= answer_start <= answer_end <= len(tokens):
            raise InputError(
                f"answer span [{answer_start}, {answer_end}) outside sequence of length {len(tokens)}"
            )
        mask = [answer_start <= i < answer_end for i in range(len(tokens))]
        return cls(tokens=tuple(tokens), answer_mask=tuple(mask))

    @property
    def answer_span(self) -> Tuple[int, int]:
        """Half-open span covering every answer token (empty span if none)."""
        indices = [i for i, flag in enumerate(self.answer_mask) if flag]
        if not indices:
            return (0, 0)
        return (indices[0], indices[-1] + 1)

    def selected_positions(self, ans_only: bool = True) -> np.ndarray:
        """
        Positions whose coefficients are extracted.

        With ``ans_only`` these are the positions whose logits emit an answer
        token (t - 1 for each answer index t); otherwise every position.
        """
        if not ans_only:
            return np.arange(len(self.tokens))
        if self.answer_mask[0]:
            raise InputError("answer span must start at index 1 or later")
        positions = [i - 1 for i, flag in enumerate(self.answer_mask) if flag]
        if not positions:
            raise EmptySelectionError("example has no answer tokens to select")
        return np.asarray(positions, dtype=np.int64)

    def validate(self, config: ModelConfig) -> None:
        if len(self.tokens) > config.max_seq_len:
            raise InputError(f"sequence length {len(self.tokens)} exceeds max_seq_len {config.max_seq_len}")
        bad = [t for t in self.tokens if not 0 <= t < config.vocab_size]
        if bad:
            raise InputError(f"token ids out of range [0, {config.vocab_size}): {bad}")

    def to_dict(self) -> Dict[str, Any]:
        start, end = self.answer_span
        return {"tokens": list(self.tokens), "answer_start": start, "answer_end": end}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TokenExample":
        try:
            return cls.from_span(data["tokens"], int(data["answer_start"]), int(data["answer_end"]))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed example {data!r}: {e}")


def load_dataset(path: Union[str, Path]) -> List[TokenExample]:
    """Read a JSON-lines dataset; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset not found: {path}")
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{line_number}: invalid JSON ({e})")
            examples.append(TokenExample.from_dict(data))
    logger.info(f"Loaded {len(examples)} examples from {path}")
    return examples


def save_dataset(examples: Iterable[TokenExample], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(json.dumps(example.to_dict(), sort_keys=True) + "\n")
    return path


def dataset_hash(examples: Sequence[TokenExample]) -> str:
    """sha256 of the ordered canonical JSON-lines encoding."""
    digest = hashlib.sha256()
    for example in examples:
        digest.update((json.dumps(example.to_dict(), sort_keys=True) + "\n").encode("utf-8"))
    return digest.hexdigest()
