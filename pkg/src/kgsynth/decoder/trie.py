"""Prefix trie over tokenized catalog entries.

Root-to-terminal paths biject with the (deduplicated) tokenized catalog, so
trie membership defines token-level validity for entity and relation names.
"""
from __future__ import annotations

import logging
from typing import Iterable

from .tokenizers import Tokenizer

log = logging.getLogger(__name__)


class TrieNode:
    __slots__ = ("children", "terminal", "entry")

    def __init__(self):
        self.children: dict[int, TrieNode] = {}
        self.terminal = False
        self.entry: str | None = None  # catalog entry completed at this node


class CatalogTrie:
    def __init__(self):
        self.root = TrieNode()
        self.n_entries = 0
        self.collisions = 0

    def insert(self, token_ids: Iterable[int], entry: str) -> bool:
        node = self.root
        for tok in token_ids:
            node = node.children.setdefault(tok, TrieNode())
        if node.terminal:
            self.collisions += 1
            return False
        node.terminal = True
        node.entry = entry
        self.n_entries += 1
        return True

    def walk(self, token_ids: Iterable[int]) -> TrieNode | None:
        node = self.root
        for tok in token_ids:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def entries(self) -> list[str]:
        out: list[str] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.terminal:
                out.append(node.entry)
            stack.extend(node.children.values())
        return sorted(out)


def build_trie(catalog: Iterable[str], tokenizer: Tokenizer) -> CatalogTrie:
    """Deterministic trie construction; the catalog must already have passed
    tokenizability filtering. Duplicate tokenizations keep the first terminal
    and log the collision. An empty catalog is an error: a constraint level
    with no options is unusable."""
    trie = CatalogTrie()
    n_seen = 0
    for label in catalog:
        n_seen += 1
        ids = tokenizer.encode(label)
        if not ids:
            raise ValueError(f"catalog entry {label!r} tokenizes to nothing")
        if not trie.insert(ids, label):
            log.warning("duplicate tokenization for catalog entry %r", label)
    if n_seen == 0 or trie.n_entries == 0:
        raise ValueError("cannot build a trie over an empty catalog")
    return trie
