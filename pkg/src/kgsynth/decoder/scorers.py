"""Scorer boundary for constrained search.

A scorer maps (input context, generated prefix) to finite log-probabilities
over the full vocabulary. The engine queries all live beams in one call per
step, so batch-capable scorers only need to override ``score_many``. The
``SubprocessScorer`` speaks a newline-delimited JSON protocol, which lets an
external model process in any ecosystem serve the probabilities.
"""
from __future__ import annotations

import json
import math
import subprocess
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np


class Scorer(ABC):
    vocab_size: int

    @abstractmethod
    def score_next(self, context: str, prefix: Sequence[int]) -> np.ndarray:
        """Finite log-probabilities, one per vocabulary token."""

    def score_many(self, context: str, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        return np.stack([self.score_next(context, p) for p in prefixes])


class UniformScorer(Scorer):
    """Equal mass on every token."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size))

    def score_next(self, context, prefix):
        return self._row

    def score_many(self, context, prefixes):
        return np.broadcast_to(self._row, (len(prefixes), self.vocab_size))


class AdversarialScorer(Scorer):
    """Puts almost all mass on one (typically out-of-catalog) token; the
    constraint layer must dominate it."""

    def __init__(self, vocab_size: int, favored_token: int, low: float = -30.0):
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, low)
        self._row[favored_token] = math.log1p(-1e-9)

    def score_next(self, context, prefix):
        return self._row


class OracleScorer(Scorer):
    """Scores one target sequence highly: the next target token gets log-prob
    ~0 while the prefix matches the target, everything else a flat penalty."""

    def __init__(self, vocab_size: int, target: Sequence[int], eos_id: int, off_score: float = -20.0):
        self.vocab_size = vocab_size
        self.target = tuple(target)
        self.eos_id = eos_id
        self.off_score = off_score

    def score_next(self, context, prefix):
        row = np.full(self.vocab_size, self.off_score)
        prefix = tuple(prefix)
        if prefix == self.target:
            row[self.eos_id] = 0.0
        elif len(prefix) < len(self.target) and prefix == self.target[: len(prefix)]:
            row[self.target[len(prefix)]] = 0.0
        return row


class SubprocessScorer(Scorer):
    """Bridge to an external scorer process over stdin/stdout.

    Protocol: one JSON request per line, ``{"context": ..., "prefix_tokens":
    [...]}``, answered by one JSON line ``{"logprobs": [...]}`` with exactly
    vocab_size finite values.
    """

    def __init__(self, command: Sequence[str] | str, vocab_size: int, shell: bool = False):
        self.vocab_size = vocab_size
        self._proc = subprocess.Popen(
            command,
            shell=shell,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def score_next(self, context, prefix):
        if self._proc.poll() is not None:
            raise RuntimeError("scorer process exited")
        request = json.dumps({"context": context, "prefix_tokens": list(map(int, prefix))})
        self._proc.stdin.write(request + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("scorer process closed its output")
        payload = json.loads(line)
        row = np.asarray(payload["logprobs"], dtype=float)
        if row.shape != (self.vocab_size,):
            raise RuntimeError(f"scorer returned {row.shape[0] if row.ndim else 0} values, expected {self.vocab_size}")
        if not np.all(np.isfinite(row)):
            raise RuntimeError("scorer returned non-finite log-probabilities")
        return row

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
