"""Set-level coverage over aspect decompositions and the greedy optimizer.

A decomposition holds the per-aspect coverage c(s, z) of every candidate
for one test instance. The set coverage of a demonstration set is the sum
over aspects of the best per-aspect coverage any member provides; that
function is monotone and submodular, so greedy selection with incremental
gain updates carries the usual constant-factor guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Instance, Selection
from .errors import ConfigError, DataError
from .relevance import Query, Scorer

DEFAULT_MEMORY_CAP_BYTES = 2 << 30


class AspectDecomposition:
    """Per-aspect contributions c(s, z) for one test instance.

    Columns are candidates, rows are the test input's salient aspects.
    Contributions are either precomputed into a dense matrix or computed
    per column on demand when the matrix would blow a memory cap. The
    read_counter tallies logical element reads for complexity checks.
    """

    def __init__(
        self,
        test_id: str,
        metric_name: str,
        aspects: list,
        candidate_ids: list[str],
        matrix: Optional[np.ndarray] = None,
        column_fn=None,
    ):
        if matrix is None and column_fn is None:
            raise ValueError("need a dense matrix or a column function")
        self.test_id = test_id
        self.metric_name = metric_name
        self.aspects = aspects
        self.candidate_ids = candidate_ids
        self._col_index = {cid: j for j, cid in enumerate(candidate_ids)}
        self._matrix = matrix
        self._column_fn = column_fn
        self._instance_scores: Optional[np.ndarray] = None
        self.read_counter = 0

    @property
    def n_aspects(self) -> int:
        return len(self.aspects)

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_ids)

    @property
    def is_dense(self) -> bool:
        return self._matrix is not None

    def col_index(self, candidate_id: str) -> int:
        try:
            return self._col_index[candidate_id]
        except KeyError:
            raise DataError(f"unknown candidate id {candidate_id!r}") from None

    def column(self, j: int) -> np.ndarray:
        self.read_counter += self.n_aspects
        if self._matrix is not None:
            return self._matrix[:, j]
        return self._column_fn(j)

    def matrix(self) -> Optional[np.ndarray]:
        """Dense matrix, or None in streaming mode. Counts a full read."""
        if self._matrix is None:
            return None
        self.read_counter += self._matrix.size
        return self._matrix

    def instance_scores(self) -> np.ndarray:
        """Column sums: each candidate's instance-level score. Cached."""
        if self._instance_scores is None:
            mat = self.matrix()
            if mat is not None:
                self._instance_scores = mat.sum(axis=0)
            else:
                self._instance_scores = np.array(
                    [float(self.column(j).sum()) for j in range(self.n_candidates)]
                )
        return self._instance_scores


def decompose(
    x: Instance,
    scorer: Scorer,
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES,
) -> AspectDecomposition:
    """Build the aspect decomposition of the pool for test instance x.

    Supported metrics: cosine (aspects = embedding dimensions, signed
    contributions), bm25 (aspects = query terms) and bsr (aspects = query
    token positions). x is excluded from the candidates when present.
    """
    if not scorer.supports_decomposition():
        raise ConfigError(
            f"metric {scorer.config.kind!r} has no recall decomposition; use bsr instead"
        )
    query = scorer.make_query(x)
    aspects = scorer.aspect_keys(query)
    candidate_ids = [cid for cid in scorer.pool.ids if cid != x.id]
    if not candidate_ids:
        raise DataError("no candidates besides the test instance itself")
    metric_name = scorer.config.name

    dense_bytes = len(aspects) * len(candidate_ids) * 8
    if dense_bytes > memory_cap_bytes:
        def column_fn(j: int, _q: Query = query) -> np.ndarray:
            return scorer.contrib_column(_q, candidate_ids[j])

        return AspectDecomposition(x.id, metric_name, aspects, candidate_ids,
                                   column_fn=column_fn)

    mat = np.empty((len(aspects), len(candidate_ids)))
    for j, cid in enumerate(candidate_ids):
        mat[:, j] = scorer.contrib_column(query, cid)
    return AspectDecomposition(x.id, metric_name, aspects, candidate_ids, matrix=mat)


@dataclass
class CoverState:
    """Running state of the greedy cover: per-aspect maxima over the
    current cover members, plus everything selected so far."""

    maxima: Optional[np.ndarray] = None
    selected: list[str] = field(default_factory=list)
    current_cover_members: set[str] = field(default_factory=set)

    def reset_cover(self) -> None:
        self.maxima = None
        self.current_cover_members = set()

    def admit(self, candidate_id: str, column: np.ndarray) -> None:
        if self.maxima is None:
            self.maxima = column.copy()
        else:
            np.maximum(self.maxima, column, out=self.maxima)
        self.selected.append(candidate_id)
        self.current_cover_members.add(candidate_id)


def setcov(decomp: AspectDecomposition, Z: Iterable[str]) -> float:
    """Sum over aspects of the best coverage any member of Z provides."""
    ids = list(Z)
    if not ids:
        raise DataError("setcov of an empty set")
    maxima = None
    for cid in ids:
        col = decomp.column(decomp.col_index(cid))
        maxima = col.copy() if maxima is None else np.maximum(maxima, col)
    return float(maxima.sum())


def incremental_gain(state: CoverState, z: str, decomp: AspectDecomposition) -> float:
    """Coverage gain of adding z to the current cover; equals the setcov
    difference without recomputing the set score from scratch."""
    if z in state.current_cover_members:
        raise DataError(f"candidate {z!r} already in the current cover")
    col = decomp.column(decomp.col_index(z))
    if state.maxima is None:
        return float(col.sum())
    return float(np.sum(np.maximum(state.maxima, col) - state.maxima))


def greedy_select(
    decomp: AspectDecomposition,
    k: int,
    seed: Optional[int] = None,
    events: Optional[list] = None,
) -> Selection:
    """Greedy maximization of set coverage.

    Each step admits the candidate with the largest coverage gain while the
    gain is strictly positive; otherwise the current cover resets (running
    maxima drop to the fresh state) and the next step admits the best
    remaining candidate outright. Already-selected candidates are never
    reconsidered, including after resets. Ties break by gain, then
    instance-level score, then earlier pool position.

    events, when given, receives ("pick", id, gain) and ("reset",) tuples.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n = decomp.n_candidates
    if n == 0:
        raise DataError("empty pool")
    target = min(k, n)

    inst_scores = decomp.instance_scores()
    state = CoverState()
    chosen_scores: list[float] = []
    remaining = np.ones(n, dtype=bool)

    while len(state.selected) < target:
        if state.maxima is None:
            gains = inst_scores
        else:
            mat = decomp.matrix()
            if mat is not None:
                gains = np.sum(
                    np.maximum(state.maxima[:, None], mat) - state.maxima[:, None],
                    axis=0,
                )
            else:
                gains = np.array([
                    float(np.sum(np.maximum(state.maxima, decomp.column(j)) - state.maxima))
                    if remaining[j] else -np.inf
                    for j in range(n)
                ])
        best = -1
        best_key: Optional[tuple] = None
        for j in range(n):
            if not remaining[j]:
                continue
            key = (float(gains[j]), float(inst_scores[j]), -j)
            if best_key is None or key > best_key:
                best, best_key = j, key
        assert best >= 0
        gain = float(gains[best])
        if state.maxima is not None and gain <= 0.0:
            state.reset_cover()
            if events is not None:
                events.append(("reset",))
            continue
        state.admit(decomp.candidate_ids[best], decomp.column(best))
        chosen_scores.append(float(inst_scores[best]))
        remaining[best] = False
        if events is not None:
            events.append(("pick", decomp.candidate_ids[best], gain))

    return Selection(
        test_id=decomp.test_id,
        demo_ids=tuple(state.selected),
        instance_scores=tuple(chosen_scores),
        metric_name=f"set-{decomp.metric_name}",
        set_score=setcov(decomp, state.selected),
        seed=seed,
    )
