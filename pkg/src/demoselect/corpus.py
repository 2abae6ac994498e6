"""Data model and file formats: pools, embedding containers, parses, selections.

File formats:
  pool.jsonl / test.jsonl   one {"id", "input", "output"} object per line, UTF-8
  embeddings dir            manifest.json + sentence.f32 + tokens.f32 (raw
                            row-major little-endian float32; offsets in the
                            manifest are element offsets, not bytes)
  parses.jsonl              one {"id", "tokens", "lemmas", "heads", "dep_labels"}
                            object per line
  selections.jsonl          one selection record per line (output)

All loaded structures are immutable after construction and safe to share
across concurrent readers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DataError

NORM_HARD_TOL = 1e-3
EMBEDDINGS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Instance:
    """One pool or test example: an input text and its reference output."""

    id: str
    input: str
    output: str

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("instance id must be non-empty")
        if not self.input:
            raise DataError(f"instance {self.id!r}: input must be non-empty")


class CandidatePool:
    """Ordered collection of instances with a stable id -> position index."""

    def __init__(self, instances: Sequence[Instance]):
        self._instances = list(instances)
        index: dict[str, int] = {}
        for pos, inst in enumerate(self._instances):
            if inst.id in index:
                raise DataError(f"duplicate id {inst.id!r}")
            index[inst.id] = pos
        self._index = index

    def __len__(self) -> int:
        return len(self._instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self._instances)

    def __contains__(self, id: str) -> bool:
        return id in self._index

    @property
    def instances(self) -> list[Instance]:
        return list(self._instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self._instances]

    def get(self, id: str) -> Instance:
        try:
            return self._instances[self._index[id]]
        except KeyError:
            raise DataError(f"unknown id {id!r}") from None

    def position(self, id: str) -> int:
        try:
            return self._index[id]
        except KeyError:
            raise DataError(f"unknown id {id!r}") from None

    def at(self, pos: int) -> Instance:
        return self._instances[pos]


@dataclass(frozen=True)
class ParseRecord:
    """Dependency parse of one instance's input.

    heads[i] is the token index of token i's head, -1 for the single root.
    """

    id: str
    tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    heads: tuple[int, ...]
    dep_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.tokens)
        for name in ("lemmas", "heads", "dep_labels"):
            if len(getattr(self, name)) != n:
                raise DataError(
                    f"parse {self.id!r}: {name} length {len(getattr(self, name))}"
                    f" != tokens length {n}"
                )
        for i, h in enumerate(self.heads):
            if h != -1 and not (0 <= h < n):
                raise DataError(f"parse {self.id!r}: head {h} of token {i} out of range")
        # Walking head links from any node must terminate at a root; a
        # revisited node means a cycle. Checked before root counting so a
        # rootless cyclic parse reports the cycle.
        for i in range(n):
            seen = set()
            j = i
            while j != -1:
                if j in seen:
                    raise DataError(f"parse {self.id!r}: cycle in heads involving token {j}")
                seen.add(j)
                j = self.heads[j]
        roots = [i for i, h in enumerate(self.heads) if h == -1]
        if len(roots) == 0:
            raise DataError(f"parse {self.id!r}: no root (no head equals -1)")
        if len(roots) > 1:
            raise DataError(f"parse {self.id!r}: multiple roots at {roots}")

    @property
    def root(self) -> int:
        return self.heads.index(-1)

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.tokens]
        for i, h in enumerate(self.heads):
            if h != -1:
                out[h].append(i)
        return out


@dataclass(frozen=True)
class Selection:
    """Chosen demonstrations for one test instance, with score provenance."""

    test_id: str
    demo_ids: tuple[str, ...]
    instance_scores: Optional[tuple[float, ...]]
    metric_name: str
    set_score: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if len(set(self.demo_ids)) != len(self.demo_ids):
            raise DataError(f"selection for {self.test_id!r}: demo_ids not distinct")
        if self.instance_scores is not None and len(self.instance_scores) != len(self.demo_ids):
            raise DataError(
                f"selection for {self.test_id!r}: instance_scores not parallel to demo_ids"
            )

    def to_json(self) -> str:
        rec: dict = {"test_id": self.test_id, "demo_ids": list(self.demo_ids)}
        if self.instance_scores is not None:
            rec["instance_scores"] = list(self.instance_scores)
        if self.set_score is not None:
            rec["set_score"] = self.set_score
        rec["metric_name"] = self.metric_name
        if self.seed is not None:
            rec["seed"] = self.seed
        return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Selection":
        scores = obj.get("instance_scores")
        return cls(
            test_id=obj["test_id"],
            demo_ids=tuple(obj["demo_ids"]),
            instance_scores=tuple(scores) if scores is not None else None,
            metric_name=obj.get("metric_name", ""),
            set_score=obj.get("set_score"),
            seed=obj.get("seed"),
        )


class EmbeddingStore:
    """Unit-norm sentence vectors and contextual token matrices, memory-mapped.

    Vectors are float32 little-endian on disk. Sentence vectors and every
    token row are expected to have L2 norm 1 (1e-4 from a well-behaved
    exporter); deviations beyond 1e-3 are rejected at load.
    """

    def __init__(
        self,
        dim_sentence: int,
        dim_token: int,
        records: dict[str, dict],
        order: list[str],
        sentence_data: np.ndarray,
        token_data: np.ndarray,
    ):
        self.dim_sentence = dim_sentence
        self.dim_token = dim_token
        self._records = records
        self._order = order
        self._sent = sentence_data
        self._tok = token_data

    def __contains__(self, id: str) -> bool:
        return id in self._records

    def __len__(self) -> int:
        return len(self._records)

    @property
    def ids(self) -> list[str]:
        return list(self._order)

    def _record(self, id: str) -> dict:
        try:
            return self._records[id]
        except KeyError:
            raise DataError(f"no embeddings for id {id!r}") from None

    def sentence(self, id: str) -> np.ndarray:
        rec = self._record(id)
        off = rec["sent_offset"]
        return self._sent[off : off + self.dim_sentence]

    def tokens(self, id: str) -> np.ndarray:
        rec = self._record(id)
        off = rec["tok_offset"]
        n = rec["n_tokens"]
        return self._tok[off : off + n * self.dim_token].reshape(n, self.dim_token)

    def token_strings(self, id: str) -> list[str]:
        return list(self._record(id)["tokens"])


@dataclass
class ValidationReport:
    """Cross-references a pool against loaded embeddings and parses."""

    missing_embeddings: list[str] = field(default_factory=list)
    orphaned_embeddings: list[str] = field(default_factory=list)
    missing_parses: list[str] = field(default_factory=list)
    orphaned_parses: list[str] = field(default_factory=list)

    @property
    def is_consistent(self) -> bool:
        return not (
            self.missing_embeddings
            or self.orphaned_embeddings
            or self.missing_parses
            or self.orphaned_parses
        )

    def summary(self) -> str:
        if self.is_consistent:
            return "bundle consistent"
        parts = []
        for name in ("missing_embeddings", "orphaned_embeddings", "missing_parses", "orphaned_parses"):
            vals = getattr(self, name)
            if vals:
                parts.append(f"{name}: {', '.join(vals)}")
        return "; ".join(parts)


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, parsed object) per non-blank line."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, obj


def load_pool(path: str | Path) -> CandidatePool:
    """Load a pool.jsonl file, preserving line order."""
    instances: list[Instance] = []
    seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        for key in ("id", "input", "output"):
            if key not in obj:
                raise DataError(f"{path}: line {lineno}: missing field {key!r}")
        try:
            inst = Instance(id=str(obj["id"]), input=obj["input"], output=obj["output"])
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        if inst.id in seen:
            raise DataError(
                f"{path}: line {lineno}: duplicate id {inst.id!r}"
                f" (first seen on line {seen[inst.id]})"
            )
        seen[inst.id] = lineno
        instances.append(inst)
    return CandidatePool(instances)


def _read_f32(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing array file {path}")
    if path.stat().st_size == 0:
        return np.empty(0, dtype="<f4")
    if path.stat().st_size % 4 != 0:
        raise DataError(f"{path}: size is not a multiple of 4 bytes")
    return np.memmap(path, dtype="<f4", mode="r")


def load_embeddings(dir: str | Path, norm_sample: Optional[int] = None) -> EmbeddingStore:
    """Load an embeddings directory (manifest.json + sentence.f32 + tokens.f32).

    norm_sample limits the norm check to the first N manifest records;
    None (the default) checks every record.
    """
    dirpath = Path(dir)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: malformed JSON: {exc.msg}") from None

    version = manifest.get("version")
    if version != EMBEDDINGS_FORMAT_VERSION:
        raise DataError(f"{manifest_path}: unknown format version {version!r}")
    dim_sentence = manifest.get("dim_sentence")
    dim_token = manifest.get("dim_token")
    if not isinstance(dim_sentence, int) or dim_sentence <= 0:
        raise DataError(f"{manifest_path}: dim_sentence must be a positive integer")
    if not isinstance(dim_token, int) or dim_token <= 0:
        raise DataError(f"{manifest_path}: dim_token must be a positive integer")

    records: dict[str, dict] = {}
    order: list[str] = []
    sent_extent = 0
    tok_extent = 0
    for i, rec in enumerate(manifest.get("records", [])):
        for key in ("id", "n_tokens", "sent_offset", "tok_offset", "tokens"):
            if key not in rec:
                raise DataError(f"{manifest_path}: record {i}: missing field {key!r}")
        rid = rec["id"]
        if rid in records:
            raise DataError(f"{manifest_path}: duplicate record id {rid!r}")
        if rec["n_tokens"] != len(rec["tokens"]):
            raise DataError(
                f"{manifest_path}: record {rid!r}: n_tokens {rec['n_tokens']}"
                f" != {len(rec['tokens'])} token strings"
            )
        records[rid] = rec
        order.append(rid)
        sent_extent = max(sent_extent, rec["sent_offset"] + dim_sentence)
        tok_extent = max(tok_extent, rec["tok_offset"] + rec["n_tokens"] * dim_token)

    sent = _read_f32(dirpath / "sentence.f32")
    tok = _read_f32(dirpath / "tokens.f32")
    if sent.size != sent_extent:
        raise DataError(
            f"{dirpath}: sentence.f32 holds {sent.size} elements,"
            f" manifest requires {sent_extent}"
        )
    if tok.size != tok_extent:
        raise DataError(
            f"{dirpath}: tokens.f32 holds {tok.size} elements,"
            f" manifest requires {tok_extent}"
        )

    store = EmbeddingStore(dim_sentence, dim_token, records, order, sent, tok)
    check_ids = order if norm_sample is None else order[:norm_sample]
    for rid in check_ids:
        norm = float(np.linalg.norm(store.sentence(rid)))
        if abs(norm - 1.0) > NORM_HARD_TOL:
            raise DataError(f"{dirpath}: sentence vector for {rid!r} has norm {norm:.6f}")
        mat = store.tokens(rid)
        if mat.shape[0]:
            norms = np.linalg.norm(mat, axis=1)
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(float(norms[worst]) - 1.0) > NORM_HARD_TOL:
                raise DataError(
                    f"{dirpath}: token row {worst} for {rid!r} has norm {float(norms[worst]):.6f}"
                )
    return store


def load_parses(path: str | Path) -> dict[str, ParseRecord]:
    """Load parses.jsonl into an id -> ParseRecord map."""
    out: dict[str, ParseRecord] = {}
    for lineno, obj in iter_jsonl(path):
        for key in ("id", "tokens", "lemmas", "heads", "dep_labels"):
            if key not in obj:
                raise DataError(f"{path}: line {lineno}: missing field {key!r}")
        try:
            rec = ParseRecord(
                id=str(obj["id"]),
                tokens=tuple(obj["tokens"]),
                lemmas=tuple(obj["lemmas"]),
                heads=tuple(obj["heads"]),
                dep_labels=tuple(obj["dep_labels"]),
            )
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        if rec.id in out:
            raise DataError(f"{path}: line {lineno}: duplicate parse id {rec.id!r}")
        out[rec.id] = rec
    return out


def validate_bundle(
    pool: CandidatePool,
    store: Optional[EmbeddingStore] = None,
    parses: Optional[dict[str, ParseRecord]] = None,
    extra: Optional[CandidatePool] = None,
) -> ValidationReport:
    """Report ids missing from / orphaned in the store and parses.

    extra widens the expected id set (e.g. a test split sharing the
    embeddings container with the pool).
    """
    expected = set(pool.ids)
    if extra is not None:
        expected |= set(extra.ids)
    report = ValidationReport()
    if store is not None:
        have = set(store.ids)
        report.missing_embeddings = sorted(expected - have)
        report.orphaned_embeddings = sorted(have - expected)
    if parses is not None:
        have = set(parses)
        report.missing_parses = sorted(expected - have)
        report.orphaned_parses = sorted(have - expected)
    return report


def write_selections(path: str | Path, selections: Iterable[Selection]) -> None:
    """Write selections.jsonl atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            for sel in selections:
                fh.write(sel.to_json())
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def load_selections(path: str | Path) -> list[Selection]:
    return [Selection.from_json_obj(obj) for _, obj in iter_jsonl(path)]
