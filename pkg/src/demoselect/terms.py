"""Salient-aspect term bags and corpus IDF statistics.

Three term schemes: unigrams, contiguous n-grams up to a size cap, and
connected dependency-parse subtrees up to a node cap. Term keys are
canonical strings; multi-part keys join their parts with the ASCII unit
separator so surface tokens can never collide with composed keys.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .corpus import ParseRecord
from .errors import ConfigError, DataError

SEP = "\x1f"

SUBTREE_MAX_NODES = 4
SUBTREE_MAX_TOKENS = 512


@dataclass(frozen=True)
class TermScheme:
    """Term extraction scheme: unigram, ngram(n_max) or dep_subtree(s_max)."""

    kind: str
    size: int = 1

    _KINDS = ("unigram", "ngram", "dep_subtree")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown term scheme kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError(f"term scheme size must be >= 1, got {self.size}")
        if self.kind == "unigram" and self.size != 1:
            raise ConfigError("unigram scheme has no size parameter")
        if self.kind == "dep_subtree" and self.size > SUBTREE_MAX_NODES:
            raise ConfigError(
                f"dep_subtree size capped at {SUBTREE_MAX_NODES}, got {self.size}"
            )

    def __str__(self) -> str:
        if self.kind == "unigram":
            return "unigram"
        suffix = "gram" if self.kind == "ngram" else "depst"
        return f"{self.size}{suffix}"

    @classmethod
    def parse(cls, text: str) -> "TermScheme":
        """Parse "unigram", "4gram"/"ngram:4", or "4depst"/"dep_subtree:4"."""
        t = text.strip().lower()
        if t == "unigram":
            return cls("unigram")
        m = re.fullmatch(r"(\d+)(gram|depst)", t)
        if m:
            kind = "ngram" if m.group(2) == "gram" else "dep_subtree"
            return cls(kind, int(m.group(1)))
        for sep in ("[", ":"):
            if sep in t:
                kind, _, rest = t.partition(sep)
                rest = rest.rstrip("]")
                kind = {"depst": "dep_subtree"}.get(kind, kind)
                try:
                    return cls(kind, int(rest))
                except ValueError:
                    raise ConfigError(f"bad term scheme size in {text!r}") from None
        raise ConfigError(f"cannot parse term scheme {text!r}")


@dataclass(frozen=True)
class TermBag:
    """Multiset of term keys for one instance under one scheme."""

    scheme: TermScheme
    counts: dict[str, int]

    @property
    def total(self) -> int:
        """Total term count; the document length under this scheme."""
        return sum(self.counts.values())

    def __contains__(self, term: str) -> bool:
        return term in self.counts


def whitespace_tokens(text: str) -> list[str]:
    """Fallback tokenizer for instances without a parse record."""
    return text.split()


def unigram_bag(tokens: Sequence[str]) -> TermBag:
    """Multiset of lowercased tokens."""
    return TermBag(TermScheme("unigram"), dict(Counter(t.lower() for t in tokens)))


def ngram_bag(tokens: Sequence[str], n_max: int) -> TermBag:
    """All contiguous n-grams for 1 <= n <= n_max, lowercased."""
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    toks = [t.lower() for t in tokens]
    counts: Counter[str] = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(toks) - n + 1):
            counts[SEP.join(toks[i : i + n])] += 1
    return TermBag(TermScheme("ngram", n_max), dict(counts))


def _connected_subsets(top: int, budget: int, children: list[list[int]]) -> list[tuple[int, ...]]:
    """Connected node sets of size <= budget that contain `top` and lie in
    top's subtree. Every connected subgraph of a tree has a unique highest
    node, so taking the union over all tops enumerates each set once."""
    combos: list[tuple[int, ...]] = [(top,)]
    for child in children[top]:
        extended = []
        for combo in combos:
            room = budget - len(combo)
            if room < 1:
                continue
            for sub in _connected_subsets(child, room, children):
                if len(sub) <= room:
                    extended.append(combo + sub)
        combos.extend(extended)
    return combos


def subtree_key(parse: ParseRecord, nodes: Sequence[int]) -> str:
    """Canonical key for a connected subtree: nodes in token order rendered
    as lemma/dep_label, unit-separator joined, prefixed by the position of
    the subtree's head (the one node whose head lies outside) in that order."""
    ordered = sorted(nodes)
    inside = set(ordered)
    head_pos = [i for i, n in enumerate(ordered) if parse.heads[n] not in inside][0]
    parts = [f"{parse.lemmas[n]}/{parse.dep_labels[n]}" for n in ordered]
    return SEP.join([str(head_pos)] + parts)


def subtree_bag(parse: ParseRecord, s_max: int) -> TermBag:
    """One term per connected dependency subtree with <= s_max nodes."""
    if s_max < 1:
        raise ConfigError(f"s_max must be >= 1, got {s_max}")
    if s_max > SUBTREE_MAX_NODES:
        raise ConfigError(f"s_max capped at {SUBTREE_MAX_NODES}, got {s_max}")
    if len(parse.tokens) > SUBTREE_MAX_TOKENS:
        raise DataError(
            f"parse {parse.id!r} has {len(parse.tokens)} tokens,"
            f" over the {SUBTREE_MAX_TOKENS} subtree-enumeration cap"
        )
    children = parse.children()
    counts: Counter[str] = Counter()
    for top in range(len(parse.tokens)):
        for nodes in _connected_subsets(top, s_max, children):
            counts[subtree_key(parse, nodes)] += 1
    return TermBag(TermScheme("dep_subtree", s_max), dict(counts))


@dataclass(frozen=True)
class IdfTable:
    """Document-frequency statistics over one corpus of term bags."""

    n_docs: int
    df: dict[str, int]
    epsilon: float = 0.25
    floor: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        if self.n_docs < 1:
            raise DataError("idf table requires at least one document")
        positives = []
        for term, df in self.df.items():
            if not (1 <= df <= self.n_docs):
                raise DataError(f"df({term!r}) = {df} outside [1, {self.n_docs}]")
            raw = self._raw(df)
            if raw > 0:
                positives.append(raw)
        mean_pos = sum(positives) / len(positives) if positives else 0.0
        object.__setattr__(self, "floor", self.epsilon * mean_pos)

    def _raw(self, df: int) -> float:
        return math.log((self.n_docs - df + 0.5) / (df + 0.5))

    @property
    def max_idf(self) -> float:
        """Idf granted to terms never seen in the corpus: a query-side aspect
        absent from every candidate registers as uncovered, not unimportant."""
        return math.log((self.n_docs + 0.5) / 0.5)


def idf_stats(bags: Iterable[TermBag], epsilon: float = 0.25) -> IdfTable:
    """Document frequencies over a collection of same-scheme bags."""
    bags = list(bags)
    if not bags:
        raise DataError("cannot build idf statistics from an empty collection")
    scheme = bags[0].scheme
    for bag in bags[1:]:
        if bag.scheme != scheme:
            raise DataError(f"mixed term schemes: {scheme} vs {bag.scheme}")
    df: Counter[str] = Counter()
    for bag in bags:
        df.update(bag.counts.keys())
    return IdfTable(n_docs=len(bags), df=dict(df), epsilon=epsilon)


def okapi_idf(table: IdfTable, term: str) -> float:
    """Okapi idf with the epsilon floor replacing negative values."""
    df = table.df.get(term)
    if df is None:
        return table.max_idf
    raw = table._raw(df)
    return table.floor if raw < 0 else raw
