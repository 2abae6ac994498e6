"""Instance-level informativeness metrics and independent top-k selection.

Metrics: cosine similarity over unit-norm sentence embeddings, Okapi BM25
over term bags, and BERTScore recall/precision/F1 over contextual token
embeddings. A Scorer binds one metric configuration to a loaded bundle and
scores any query instance against the whole pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import CandidatePool, EmbeddingStore, Instance, ParseRecord
from .errors import ConfigError, DataError
from .terms import (
    IdfTable,
    TermBag,
    TermScheme,
    idf_stats,
    ngram_bag,
    okapi_idf,
    subtree_bag,
    unigram_bag,
    whitespace_tokens,
)

METRIC_KINDS = ("cosine", "bm25", "bsr", "bsp", "bsf1")


@dataclass(frozen=True)
class MetricConfig:
    """One relevance metric plus its knobs.

    candidate_text controls whether BM25 term bags for candidates are built
    from the input alone or from input + output; embedding-based metrics
    always use whatever text the exporter embedded.
    """

    kind: str
    scheme: TermScheme = TermScheme("unigram")
    bm25_k1: float = 1.5
    bm25_b: float = 0.75
    use_idf_weights: bool = False
    candidate_text: str = "input_only"

    def __post_init__(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise ConfigError(f"unknown metric kind {self.kind!r}")
        if self.bm25_k1 <= 0:
            raise ConfigError(f"bm25_k1 must be > 0, got {self.bm25_k1}")
        if not (0.0 <= self.bm25_b <= 1.0):
            raise ConfigError(f"bm25_b must be in [0, 1], got {self.bm25_b}")
        if self.candidate_text not in ("input_only", "input_plus_output"):
            raise ConfigError(f"unknown candidate_text {self.candidate_text!r}")
        if self.kind == "bm25" and self.scheme.kind == "dep_subtree" \
                and self.candidate_text == "input_plus_output":
            raise ConfigError("dep_subtree terms require candidate_text=input_only"
                              " (outputs carry no parse)")

    @property
    def name(self) -> str:
        base = f"bm25[{self.scheme}]" if self.kind == "bm25" else self.kind
        if self.use_idf_weights and self.kind in ("bsr", "bsp", "bsf1"):
            base += "+idf"
        if self.candidate_text == "input_plus_output":
            base += "+io"
        return base

    @property
    def needs_embeddings(self) -> bool:
        return self.kind in ("cosine", "bsr", "bsp", "bsf1")

    @property
    def needs_parses(self) -> bool:
        return self.kind == "bm25" and self.scheme.kind == "dep_subtree"


@dataclass(frozen=True)
class ScoredCandidate:
    id: str
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise DataError(f"non-finite score for candidate {self.id!r}")


def cosine_score(x_vec: np.ndarray, z_vec: np.ndarray) -> float:
    """Dot product of two unit-norm vectors."""
    x_vec = np.asarray(x_vec, dtype=np.float64)
    z_vec = np.asarray(z_vec, dtype=np.float64)
    if x_vec.shape != z_vec.shape:
        raise DataError(f"dimension mismatch: {x_vec.shape} vs {z_vec.shape}")
    return float(np.dot(x_vec, z_vec))


def bm25_score(
    query_bag: TermBag,
    doc_bag: TermBag,
    table: IdfTable,
    avg_doclen: float,
    k1: float = 1.5,
    b: float = 0.75,
) -> float:
    """Okapi BM25 of a document bag against a query bag.

    Each distinct query term contributes idf * saturated-tf, multiplied by
    its query-side count (the query is a multiset).
    """
    if query_bag.scheme != doc_bag.scheme:
        raise DataError(f"scheme mismatch: {query_bag.scheme} vs {doc_bag.scheme}")
    if avg_doclen <= 0:
        raise DataError(f"avg_doclen must be > 0, got {avg_doclen}")
    doclen = doc_bag.total
    denom_norm = k1 * (1.0 - b + b * doclen / avg_doclen)
    score = 0.0
    for term, q_count in query_bag.counts.items():
        tf = doc_bag.counts.get(term, 0)
        if tf == 0:
            continue
        score += q_count * okapi_idf(table, term) * tf * (k1 + 1.0) / (tf + denom_norm)
    return score


def _check_weights(weights: np.ndarray, n: int, side: str) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise DataError(f"{side} weights length {weights.shape} does not match {n} tokens")
    if np.any(weights < 0):
        raise DataError(f"{side} weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > 1e-6:
        raise DataError(f"{side} weights must sum to 1, got {float(weights.sum()):.8f}")
    return weights


def bert_score(
    x_tokens: np.ndarray,
    z_tokens: np.ndarray,
    x_weights: np.ndarray,
    z_weights: np.ndarray,
    variant: str = "R",
) -> float:
    """Greedy token-matching score over unit-norm embedding rows.

    R: weighted best-match of each query token among candidate tokens.
    P: weighted best-match of each candidate token among query tokens.
    F1: harmonic mean, defined as 0 when R + P = 0.
    """
    if variant not in ("R", "P", "F1"):
        raise ConfigError(f"unknown variant {variant!r}")
    x = np.asarray(x_tokens, dtype=np.float64)
    z = np.asarray(z_tokens, dtype=np.float64)
    if x.ndim != 2 or z.ndim != 2:
        raise DataError("token embeddings must be 2-d matrices")
    if x.shape[0] == 0 or z.shape[0] == 0:
        raise DataError("empty token list")
    if x.shape[1] != z.shape[1]:
        raise DataError(f"dimension mismatch: {x.shape[1]} vs {z.shape[1]}")
    wx = _check_weights(x_weights, x.shape[0], "query")
    wz = _check_weights(z_weights, z.shape[0], "candidate")
    sim = x @ z.T
    recall = float(wx @ sim.max(axis=1))
    if variant == "R":
        return recall
    precision = float(wz @ sim.max(axis=0))
    if variant == "P":
        return precision
    if recall + precision == 0.0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def token_weights(tokens: Sequence[str], table: Optional[IdfTable] = None) -> np.ndarray:
    """Simplex weights over tokens: uniform, or idf-normalized when a table
    is given (terms looked up lowercased, matching unigram bag keys)."""
    n = len(tokens)
    if n == 0:
        raise DataError("cannot weight an empty token list")
    if table is None:
        return np.full(n, 1.0 / n)
    raw = np.array([okapi_idf(table, t.lower()) for t in tokens], dtype=np.float64)
    mass = float(raw.sum())
    if mass <= 0:
        raise DataError("all-zero idf mass over token list")
    return raw / mass


@dataclass
class Query:
    """Query-side representation of one test instance under a metric."""

    id: str
    vec: Optional[np.ndarray] = None
    bag: Optional[TermBag] = None
    token_mat: Optional[np.ndarray] = None
    token_weights: Optional[np.ndarray] = None


class Scorer:
    """Binds a metric configuration to a loaded bundle.

    Immutable after construction; scoring calls are pure and safe to run
    concurrently over candidates and test instances.
    """

    def __init__(
        self,
        pool: CandidatePool,
        config: MetricConfig,
        store: Optional[EmbeddingStore] = None,
        parses: Optional[dict[str, ParseRecord]] = None,
    ):
        if len(pool) == 0:
            raise DataError("empty pool")
        self.pool = pool
        self.config = config
        self.store = store
        self.parses = parses

        if config.needs_embeddings and store is None:
            raise ConfigError(f"metric {config.name} requires an embedding store")
        if config.needs_parses and parses is None:
            raise ConfigError(f"metric {config.name} requires parse records")

        if config.kind == "cosine":
            assert store is not None
            self._sent = np.stack(
                [np.asarray(store.sentence(i), dtype=np.float64) for i in pool.ids]
            )
        elif config.kind == "bm25":
            self._doc_bags = [self._candidate_bag(inst) for inst in pool]
            self._idf = idf_stats(self._doc_bags)
            total = sum(bag.total for bag in self._doc_bags)
            if total == 0:
                raise DataError("every candidate has an empty term bag")
            self._avgdl = total / len(self._doc_bags)
        else:
            assert store is not None
            self._tok_cache: dict[str, np.ndarray] = {}
            self._idf_tokens: Optional[IdfTable] = None
            if config.use_idf_weights:
                bags = [unigram_bag(store.token_strings(i)) for i in pool.ids]
                self._idf_tokens = idf_stats(bags)

    # -- construction helpers -------------------------------------------

    def _tokens_for(self, inst: Instance) -> list[str]:
        """Parse tokens when a parse is available for the id, else
        whitespace tokens; candidate_text appends output tokens for bags."""
        if self.parses is not None and inst.id in self.parses:
            toks = list(self.parses[inst.id].tokens)
        else:
            toks = whitespace_tokens(inst.input)
        return toks

    def _candidate_bag(self, inst: Instance) -> TermBag:
        scheme = self.config.scheme
        if scheme.kind == "dep_subtree":
            assert self.parses is not None
            if inst.id not in self.parses:
                raise DataError(f"no parse record for candidate {inst.id!r}")
            return subtree_bag(self.parses[inst.id], scheme.size)
        toks = self._tokens_for(inst)
        if self.config.candidate_text == "input_plus_output":
            toks = toks + whitespace_tokens(inst.output)
        if scheme.kind == "unigram":
            return unigram_bag(toks)
        return ngram_bag(toks, scheme.size)

    def _query_bag(self, inst: Instance) -> TermBag:
        scheme = self.config.scheme
        if scheme.kind == "dep_subtree":
            assert self.parses is not None
            if inst.id not in self.parses:
                raise DataError(f"no parse record for query {inst.id!r}")
            return subtree_bag(self.parses[inst.id], scheme.size)
        toks = self._tokens_for(inst)
        if scheme.kind == "unigram":
            return unigram_bag(toks)
        return ngram_bag(toks, scheme.size)

    def _token_mat(self, id: str) -> np.ndarray:
        assert self.store is not None
        mat = self._tok_cache.get(id)
        if mat is None:
            mat = np.asarray(self.store.tokens(id), dtype=np.float64)
            self._tok_cache[id] = mat
        return mat

    def _weights_for(self, token_strings: Sequence[str]) -> np.ndarray:
        return token_weights(token_strings, self._idf_tokens)

    # -- queries ----------------------------------------------------------

    def make_query(self, inst: Instance) -> Query:
        kind = self.config.kind
        if kind == "cosine":
            assert self.store is not None
            if inst.id not in self.store:
                raise DataError(f"no sentence embedding for query {inst.id!r}")
            return Query(id=inst.id, vec=np.asarray(self.store.sentence(inst.id), dtype=np.float64))
        if kind == "bm25":
            return Query(id=inst.id, bag=self._query_bag(inst))
        assert self.store is not None
        if inst.id not in self.store:
            raise DataError(f"no token embeddings for query {inst.id!r}")
        mat = np.asarray(self.store.tokens(inst.id), dtype=np.float64)
        if mat.shape[0] == 0:
            raise DataError(f"query {inst.id!r} has no tokens")
        weights = self._weights_for(self.store.token_strings(inst.id))
        return Query(id=inst.id, token_mat=mat, token_weights=weights)

    # -- scoring ----------------------------------------------------------

    def score_one(self, query: Query, candidate_id: str) -> float:
        pos = self.pool.position(candidate_id)
        kind = self.config.kind
        if kind == "cosine":
            return cosine_score(query.vec, self._sent[pos])
        if kind == "bm25":
            return bm25_score(
                query.bag, self._doc_bags[pos], self._idf, self._avgdl,
                self.config.bm25_k1, self.config.bm25_b,
            )
        variant = {"bsr": "R", "bsp": "P", "bsf1": "F1"}[kind]
        z_mat = self._token_mat(candidate_id)
        assert self.store is not None
        z_weights = self._weights_for(self.store.token_strings(candidate_id))
        return bert_score(query.token_mat, z_mat, query.token_weights, z_weights, variant)

    def score_all(self, query: Query) -> np.ndarray:
        """Scores aligned with pool order."""
        if self.config.kind == "cosine":
            return self._sent @ query.vec
        return np.array([self.score_one(query, cid) for cid in self.pool.ids])

    # -- aspect decompositions (consumed by the set-cover module) ---------

    def supports_decomposition(self) -> bool:
        return self.config.kind in ("cosine", "bm25", "bsr")

    def aspect_keys(self, query: Query) -> list:
        """Salient aspects of the query: embedding dimensions for cosine,
        term keys for bm25, token indices for bsr."""
        kind = self.config.kind
        if kind == "cosine":
            return list(range(query.vec.shape[0]))
        if kind == "bm25":
            return list(query.bag.counts.keys())
        if kind == "bsr":
            return list(range(query.token_mat.shape[0]))
        raise ConfigError(
            f"metric {kind!r} has no recall decomposition; use bsr instead"
        )

    def contrib_column(self, query: Query, candidate_id: str) -> np.ndarray:
        """Per-aspect coverage of one candidate; sums to score_one."""
        kind = self.config.kind
        pos = self.pool.position(candidate_id)
        if kind == "cosine":
            return query.vec * self._sent[pos]
        if kind == "bm25":
            doc = self._doc_bags[pos]
            k1, b = self.config.bm25_k1, self.config.bm25_b
            denom_norm = k1 * (1.0 - b + b * doc.total / self._avgdl)
            out = np.zeros(len(query.bag.counts))
            for i, (term, q_count) in enumerate(query.bag.counts.items()):
                tf = doc.counts.get(term, 0)
                if tf:
                    out[i] = q_count * okapi_idf(self._idf, term) \
                        * tf * (k1 + 1.0) / (tf + denom_norm)
            return out
        if kind == "bsr":
            z_mat = self._token_mat(candidate_id)
            sim = query.token_mat @ z_mat.T
            return query.token_weights * sim.max(axis=1)
        raise ConfigError(
            f"metric {kind!r} has no recall decomposition; use bsr instead"
        )


def rank_independent(
    x: Instance,
    pool: CandidatePool,
    scorer: Scorer,
    k: int,
) -> list[ScoredCandidate]:
    """Top-k candidates by instance-level score, highest first.

    Ties break toward the earlier pool position; x itself is excluded when
    present in the pool. Returns min(k, candidates) entries.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(pool) == 0:
        raise DataError("empty pool")
    query = scorer.make_query(x)
    scores = scorer.score_all(query)
    order = sorted(
        (i for i in range(len(pool)) if pool.at(i).id != x.id),
        key=lambda i: (-scores[i], i),
    )
    return [ScoredCandidate(pool.at(i).id, float(scores[i])) for i in order[:k]]
