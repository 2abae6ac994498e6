"""Shared fixture builders: embedding containers, chain parses, jsonl files."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from demoselect import Instance


def unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector")
    return v / n


def hash_unit(text: str, dim: int, salt: str = "") -> np.ndarray:
    """Deterministic unit vector for a string."""
    rng = random.Random(f"{salt}|{text}")
    return unit([rng.gauss(0.0, 1.0) for _ in range(dim)])


def write_jsonl(path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    return path


def write_pool(path, instances: Sequence[Instance]) -> Path:
    return write_jsonl(
        path, [{"id": i.id, "input": i.input, "output": i.output} for i in instances]
    )


def chain_parse_obj(id: str, tokens: Sequence[str]) -> dict:
    """Chain dependency tree: token 0 is the root, every other token hangs
    off its left neighbor."""
    tokens = list(tokens)
    return {
        "id": id,
        "tokens": tokens,
        "lemmas": [t.lower() for t in tokens],
        "heads": [-1] + list(range(len(tokens) - 1)),
        "dep_labels": ["root"] + ["dep"] * (len(tokens) - 1),
    }


def write_container(
    dir,
    records: Sequence[dict],
    dim_sentence: int,
    dim_token: int,
    extra_manifest: Optional[dict] = None,
) -> Path:
    """Write an embedding container from records of
    {id, sentence: 1-d array, tokens: 2-d array, token_strings: list[str]}.
    Offsets are element offsets into the packed little-endian float32 files.
    """
    dir = Path(dir)
    dir.mkdir(parents=True, exist_ok=True)
    manifest_records = []
    sent_parts: list[np.ndarray] = []
    tok_parts: list[np.ndarray] = []
    sent_off = 0
    tok_off = 0
    for rec in records:
        sent = np.asarray(rec["sentence"], dtype="<f4")
        toks = np.asarray(rec["tokens"], dtype="<f4").reshape(-1, dim_token) \
            if np.asarray(rec["tokens"]).size else np.empty((0, dim_token), dtype="<f4")
        assert sent.shape == (dim_sentence,), rec["id"]
        strings = list(rec["token_strings"])
        assert toks.shape[0] == len(strings), rec["id"]
        manifest_records.append({
            "id": rec["id"],
            "n_tokens": toks.shape[0],
            "sent_offset": sent_off,
            "tok_offset": tok_off,
            "tokens": strings,
        })
        sent_parts.append(sent)
        tok_parts.append(toks.reshape(-1))
        sent_off += dim_sentence
        tok_off += toks.size
    manifest = {
        "version": 1,
        "dim_sentence": dim_sentence,
        "dim_token": dim_token,
        "records": manifest_records,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    packed_sent = np.concatenate(sent_parts) if sent_parts else np.empty(0, dtype="<f4")
    packed_tok = np.concatenate(tok_parts) if tok_parts else np.empty(0, dtype="<f4")
    packed_sent.astype("<f4").tofile(dir / "sentence.f32")
    packed_tok.astype("<f4").tofile(dir / "tokens.f32")
    return dir


def container_records_for(
    instances: Sequence[Instance],
    dim_sentence: int,
    dim_token: int,
    salt: str = "emb",
) -> list[dict]:
    """Hash-derived embeddings: one unit token vector per whitespace token,
    sentence vector = normalized token sum (or a hash of the input when it
    has no tokens)."""
    records = []
    for inst in instances:
        tokens = inst.input.split()
        if tokens:
            mats = np.stack([hash_unit(t, dim_token, salt) for t in tokens])
            # sentence lives in its own space; derive from the full input
            sent = hash_unit(inst.input, dim_sentence, salt + "|sent")
        else:
            mats = np.empty((0, dim_token))
            sent = hash_unit(inst.input, dim_sentence, salt + "|sent")
        records.append({
            "id": inst.id,
            "sentence": sent,
            "tokens": mats,
            "token_strings": tokens,
        })
    return records


def make_bundle(
    tmp: Path,
    pool_instances: Sequence[Instance],
    test_instances: Sequence[Instance],
    dim_sentence: int = 8,
    dim_token: int = 8,
    with_embeddings: bool = True,
    with_parses: bool = True,
    salt: str = "emb",
) -> dict:
    """A complete on-disk bundle for harness/service/cli tests."""
    tmp = Path(tmp)
    paths = {
        "pool": str(write_pool(tmp / "pool.jsonl", pool_instances)),
        "test": str(write_pool(tmp / "test.jsonl", test_instances)),
    }
    everyone = list(pool_instances) + list(test_instances)
    if with_embeddings:
        records = container_records_for(everyone, dim_sentence, dim_token, salt)
        paths["embeddings"] = str(
            write_container(tmp / "embeddings", records, dim_sentence, dim_token)
        )
    if with_parses:
        rows = [chain_parse_obj(i.id, i.input.split()) for i in everyone]
        paths["parses"] = str(write_jsonl(tmp / "parses.jsonl", rows))
    return paths


def memory_store(records: Sequence[dict], dim_sentence: int, dim_token: int):
    """In-memory EmbeddingStore from the same record dicts write_container
    takes, skipping disk entirely (for high-volume fixture tests)."""
    from demoselect import EmbeddingStore

    recs: dict = {}
    order: list[str] = []
    sent_parts: list[np.ndarray] = []
    tok_parts: list[np.ndarray] = []
    sent_off = 0
    tok_off = 0
    for rec in records:
        sent = np.asarray(rec["sentence"], dtype=np.float32)
        toks = np.asarray(rec["tokens"], dtype=np.float32).reshape(-1, dim_token) \
            if np.asarray(rec["tokens"]).size else np.empty((0, dim_token), dtype=np.float32)
        strings = list(rec["token_strings"])
        recs[rec["id"]] = {
            "n_tokens": toks.shape[0],
            "sent_offset": sent_off,
            "tok_offset": tok_off,
            "tokens": strings,
        }
        order.append(rec["id"])
        sent_parts.append(sent)
        tok_parts.append(toks.reshape(-1))
        sent_off += dim_sentence
        tok_off += toks.size
    sent_data = np.concatenate(sent_parts) if sent_parts else np.empty(0, dtype=np.float32)
    tok_data = np.concatenate(tok_parts) if tok_parts else np.empty(0, dtype=np.float32)
    return EmbeddingStore(dim_sentence, dim_token, recs, order, sent_data, tok_data)
