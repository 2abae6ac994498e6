"""Experiment runner: end-to-end selection over splits, the random
baseline, exact-match scoring, substructure-coverage audits, and reports.

A run directory holds selections.jsonl + prompts.jsonl + run.json from
`run_selection`, optionally joined by eval.json (from predictions) and
coverage.json (substructure recall audit). Reports compare run dirs that
share a test split.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import random
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .corpus import (
    CandidatePool,
    EmbeddingStore,
    Instance,
    ParseRecord,
    Selection,
    iter_jsonl,
    load_embeddings,
    load_parses,
    load_pool,
    load_selections,
    validate_bundle,
    write_selections,
)
from .errors import ConfigError, DataError
from .promptkit import (
    BudgetPolicy,
    PromptTemplate,
    fit_budget,
    load_templates,
    order_for_prompt,
    render_prompt,
)
from .relevance import MetricConfig, Scorer, rank_independent
from .setcover import decompose, greedy_select
from .terms import TermBag, TermScheme, ngram_bag, subtree_bag, unigram_bag, whitespace_tokens

SELECTORS = ("independent", "set_greedy", "random")
RUN_FORMAT_VERSION = 1

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# ---------------------------------------------------------------------------
# configuration


def metric_from_obj(obj: Union[str, dict]) -> MetricConfig:
    """Build a MetricConfig from a config-file value: either a bare kind
    string ("cosine") or an object with kind/terms/k1/b/... fields."""
    if isinstance(obj, str):
        obj = {"kind": obj}
    if not isinstance(obj, dict):
        raise ConfigError(f"metric must be a string or object, got {type(obj).__name__}")
    known = {"kind", "terms", "scheme", "k1", "b", "idf_weights", "candidate_text"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"metric: unknown fields {sorted(unknown)}")
    if "kind" not in obj:
        raise ConfigError("metric: missing 'kind'")
    kwargs: dict = {"kind": obj["kind"]}
    terms = obj.get("terms", obj.get("scheme"))
    if terms is not None:
        kwargs["scheme"] = TermScheme.parse(terms) if isinstance(terms, str) else terms
    if "k1" in obj:
        kwargs["bm25_k1"] = float(obj["k1"])
    if "b" in obj:
        kwargs["bm25_b"] = float(obj["b"])
    if "idf_weights" in obj:
        kwargs["use_idf_weights"] = bool(obj["idf_weights"])
    if "candidate_text" in obj:
        kwargs["candidate_text"] = obj["candidate_text"]
    return MetricConfig(**kwargs)


def metric_to_obj(metric: MetricConfig) -> dict:
    return {
        "kind": metric.kind,
        "terms": str(metric.scheme),
        "k1": metric.bm25_k1,
        "b": metric.bm25_b,
        "idf_weights": metric.use_idf_weights,
        "candidate_text": metric.candidate_text,
    }


@dataclass
class ExperimentConfig:
    """Everything one selection run needs, loadable from TOML or JSON."""

    pool_path: str
    test_path: str
    output_dir: str
    metric: MetricConfig = field(default_factory=lambda: MetricConfig("bm25"))
    selector: str = "set_greedy"
    k: int = 8
    seed: int = 0
    ordering: Optional[str] = None
    embeddings_dir: Optional[str] = None
    parses_path: Optional[str] = None
    template: PromptTemplate = field(
        default_factory=lambda: PromptTemplate("Input: {input}", "Output: {output}")
    )
    budget: Optional[BudgetPolicy] = None
    subsample: Optional[int] = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.selector not in SELECTORS:
            raise ConfigError(f"unknown selector {self.selector!r}; use one of {SELECTORS}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.subsample is not None and self.subsample < 1:
            raise ConfigError(f"subsample must be >= 1, got {self.subsample}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @property
    def effective_ordering(self) -> str:
        if self.ordering is not None:
            return self.ordering
        return "selection_order" if self.selector == "random" else "by_instance_score"

    @property
    def method_name(self) -> str:
        if self.selector == "random":
            return "random"
        if self.selector == "set_greedy":
            return f"set-{self.metric.name}"
        return self.metric.name

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        known = {
            "pool_path", "test_path", "output_dir", "metric", "selector", "k",
            "seed", "ordering", "embeddings_dir", "parses_path", "template",
            "templates_path", "dataset", "budget", "subsample", "workers",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        for req in ("pool_path", "test_path", "output_dir"):
            if req not in raw:
                raise ConfigError(f"config: missing {req!r}")

        def path(value: Optional[str]) -> Optional[str]:
            if value is None or base_dir is None or os.path.isabs(value):
                return value
            return str(base_dir / value)

        template = cls.__dataclass_fields__["template"].default_factory()  # type: ignore[misc]
        if "template" in raw:
            if "templates_path" in raw or "dataset" in raw:
                raise ConfigError("config: give either template or templates_path+dataset")
            t = raw["template"]
            if not isinstance(t, dict):
                raise ConfigError("config: template must be an object")
            try:
                template = PromptTemplate(**t)
            except TypeError as exc:
                raise ConfigError(f"config: template: {exc}") from exc
        elif "templates_path" in raw or "dataset" in raw:
            if not ("templates_path" in raw and "dataset" in raw):
                raise ConfigError("config: templates_path and dataset go together")
            table = load_templates(path(raw["templates_path"]))
            if raw["dataset"] not in table:
                raise ConfigError(
                    f"config: dataset {raw['dataset']!r} not in templates file "
                    f"(has {sorted(table)})"
                )
            template = table[raw["dataset"]]

        budget = None
        if "budget" in raw:
            b = raw["budget"]
            if not isinstance(b, dict) or "max_units" not in b:
                raise ConfigError("config: budget must be an object with max_units")
            unknown_b = set(b) - {"max_units", "counter"}
            if unknown_b:
                raise ConfigError(f"config: budget: unknown fields {sorted(unknown_b)}")
            budget = BudgetPolicy(int(b["max_units"]), b.get("counter", "whitespace_tokens"))

        return cls(
            pool_path=path(raw["pool_path"]),
            test_path=path(raw["test_path"]),
            output_dir=path(raw["output_dir"]),
            metric=metric_from_obj(raw.get("metric", "bm25")),
            selector=raw.get("selector", "set_greedy"),
            k=int(raw.get("k", 8)),
            seed=int(raw.get("seed", 0)),
            ordering=raw.get("ordering"),
            embeddings_dir=path(raw.get("embeddings_dir")),
            parses_path=path(raw.get("parses_path")),
            template=template,
            budget=budget,
            subsample=raw.get("subsample"),
            workers=int(raw.get("workers", 1)),
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            if path.suffix == ".toml":
                with open(path, "rb") as fh:
                    raw = tomllib.load(fh)
            elif path.suffix == ".json":
                raw = json.loads(path.read_text(encoding="utf-8"))
            else:
                raise ConfigError(f"config file {path} must end in .toml or .json")
        except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold an object")
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self) -> dict:
        out: dict = {
            "pool_path": self.pool_path,
            "test_path": self.test_path,
            "output_dir": self.output_dir,
            "metric": metric_to_obj(self.metric),
            "selector": self.selector,
            "k": self.k,
            "seed": self.seed,
            "ordering": self.effective_ordering,
            "template": {
                "input_pattern": self.template.input_pattern,
                "output_pattern": self.template.output_pattern,
                "separator": self.template.separator,
            },
            "workers": self.workers,
        }
        if self.embeddings_dir is not None:
            out["embeddings_dir"] = self.embeddings_dir
        if self.parses_path is not None:
            out["parses_path"] = self.parses_path
        if self.budget is not None:
            counter = self.budget.counter
            out["budget"] = {
                "max_units": self.budget.max_units,
                "counter": counter if isinstance(counter, str) else "pluggable",
            }
        if self.subsample is not None:
            out["subsample"] = self.subsample
        return out


# ---------------------------------------------------------------------------
# primitive operations


def random_select(
    pool: CandidatePool,
    k: int,
    seed: Union[int, str],
    test_id: str = "",
    exclude: Optional[str] = None,
) -> Selection:
    """Uniform sample of k distinct demos, reproducible by seed."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    candidates = [cid for cid in pool.ids if cid != exclude]
    if k > len(candidates):
        raise DataError(f"k={k} exceeds the {len(candidates)} available candidates")
    rng = random.Random(seed)
    ids = rng.sample(candidates, k)
    return Selection(
        test_id=test_id,
        demo_ids=tuple(ids),
        instance_scores=None,
        metric_name="random",
        seed=seed if isinstance(seed, int) else None,
    )


def exact_match(prediction: str, reference: str) -> bool:
    """Equality after trimming outer whitespace and collapsing internal
    whitespace runs to single spaces."""
    return " ".join(prediction.split()) == " ".join(reference.split())


def substructure_recall(test_bag: TermBag, demo_bags: Sequence[TermBag]) -> float:
    """Fraction of the test bag's distinct terms present in the union of
    the demo bags."""
    for bag in demo_bags:
        if bag.scheme != test_bag.scheme:
            raise ConfigError(
                f"scheme mismatch: test {test_bag.scheme} vs demo {bag.scheme}"
            )
    test_terms = set(test_bag.counts)
    if not test_terms:
        raise DataError("empty test bag")
    covered = set()
    for bag in demo_bags:
        covered |= test_terms & set(bag.counts)
    return len(covered) / len(test_terms)


def bag_for(
    scheme: TermScheme,
    instance: Instance,
    parses: Optional[dict[str, ParseRecord]] = None,
) -> TermBag:
    """Term bag of an instance's input under a scheme (parse tokens when a
    parse exists, else whitespace tokens; subtree terms require a parse)."""
    if scheme.kind == "dep_subtree":
        if parses is None or instance.id not in parses:
            raise DataError(f"no parse record for {instance.id!r}")
        return subtree_bag(parses[instance.id], scheme.size)
    if parses is not None and instance.id in parses:
        tokens = list(parses[instance.id].tokens)
    else:
        tokens = whitespace_tokens(instance.input)
    if scheme.kind == "unigram":
        return unigram_bag(tokens)
    return ngram_bag(tokens, scheme.size)


def split_fingerprint(test_ids: Sequence[str]) -> str:
    """Order-sensitive digest identifying a test split."""
    h = hashlib.sha256()
    for tid in test_ids:
        h.update(tid.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# the end-to-end run


@dataclass
class RunReport:
    """Aggregates for one run directory; per-instance records carry
    prediction/correct fields once eval.json exists."""

    method: str
    n_test: int
    records: list[dict]
    test_fingerprint: str
    elapsed_s: float
    em_rate: Optional[float] = None
    set_score_mean: Optional[float] = None
    recalls: dict = field(default_factory=dict)


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _load_split(config: ExperimentConfig) -> tuple[CandidatePool, CandidatePool]:
    pool = load_pool(config.pool_path)
    test = load_pool(config.test_path)
    if config.subsample is not None and config.subsample < len(test):
        rng = random.Random(f"{config.seed}|subsample")
        keep = sorted(rng.sample(range(len(test)), config.subsample))
        test = CandidatePool([test.at(i) for i in keep])
    return pool, test


def _load_bundle(
    config: ExperimentConfig,
    pool: CandidatePool,
    test: CandidatePool,
) -> tuple[Optional[EmbeddingStore], Optional[dict[str, ParseRecord]]]:
    store = None
    parses = None
    if config.metric.needs_embeddings:
        if config.embeddings_dir is None:
            raise ConfigError(
                f"metric {config.metric.name} requires embeddings_dir"
            )
        store = load_embeddings(config.embeddings_dir)
    if config.metric.needs_parses:
        if config.parses_path is None:
            raise ConfigError(f"metric {config.metric.name} requires parses_path")
    if config.parses_path is not None:
        parses = load_parses(config.parses_path)
    report = validate_bundle(pool, store, parses, extra=test)
    if report.missing_embeddings or report.missing_parses:
        raise DataError(f"bundle inconsistent: {report.summary()}")
    return store, parses


def run_selection(config: ExperimentConfig) -> RunReport:
    """Select demos and render prompts for every test instance; write
    selections.jsonl, prompts.jsonl, and run.json into the output dir."""
    t0 = time.perf_counter()
    pool, test = _load_split(config)
    store, parses = _load_bundle(config, pool, test)
    scorer = None
    if config.selector != "random":
        scorer = Scorer(pool, config.metric, store=store, parses=parses)
    ordering = config.effective_ordering

    def one(x: Instance) -> tuple[Selection, dict]:
        if config.selector == "independent":
            assert scorer is not None
            ranked = rank_independent(x, pool, scorer, config.k)
            sel = Selection(
                test_id=x.id,
                demo_ids=tuple(sc.id for sc in ranked),
                instance_scores=tuple(sc.score for sc in ranked),
                metric_name=scorer.config.name,
                seed=config.seed,
            )
        elif config.selector == "set_greedy":
            assert scorer is not None
            decomp = decompose(x, scorer)
            sel = greedy_select(decomp, config.k, seed=config.seed)
        else:
            child_seed = f"{config.seed}|{x.id}"
            sel = random_select(pool, config.k, child_seed, test_id=x.id, exclude=x.id)
        ordered = order_for_prompt(sel, ordering)
        if config.budget is not None:
            ordered = fit_budget(ordered, pool, config.template, x.input, config.budget)
        prompt = render_prompt(ordered, pool, config.template, x.input)
        return sel, {"test_id": x.id, "prompt": prompt, "reference": x.output}

    instances = test.instances
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(one, instances))
    else:
        results = [one(x) for x in instances]

    selections = [sel for sel, _ in results]
    prompt_rows = [row for _, row in results]
    elapsed = time.perf_counter() - t0
    fingerprint = split_fingerprint(test.ids)
    set_scores = [s.set_score for s in selections if s.set_score is not None]
    run_obj = {
        "format_version": RUN_FORMAT_VERSION,
        "method": config.method_name,
        "config": config.to_dict(),
        "n_test": len(instances),
        "test_fingerprint": fingerprint,
        "set_score_mean": (sum(set_scores) / len(set_scores)) if set_scores else None,
        "elapsed_s": elapsed,
    }

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    placed: list[Path] = []
    try:
        write_selections(out_dir / "selections.jsonl", selections)
        placed.append(out_dir / "selections.jsonl")
        _write_text_atomic(
            out_dir / "prompts.jsonl",
            "".join(_json_line(row) + "\n" for row in prompt_rows),
        )
        placed.append(out_dir / "prompts.jsonl")
        _write_text_atomic(out_dir / "run.json", json.dumps(run_obj, indent=2) + "\n")
        placed.append(out_dir / "run.json")
    except BaseException:
        for p in placed:
            p.unlink(missing_ok=True)
        raise

    return RunReport(
        method=config.method_name,
        n_test=len(instances),
        records=[
            {"test_id": sel.test_id, "demo_ids": list(sel.demo_ids)}
            for sel in selections
        ],
        test_fingerprint=fingerprint,
        elapsed_s=elapsed,
        set_score_mean=run_obj["set_score_mean"],
    )


# ---------------------------------------------------------------------------
# post-run artifacts


def _read_run_json(run_dir: Path) -> dict:
    path = run_dir / "run.json"
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if obj.get("format_version") != RUN_FORMAT_VERSION:
        raise DataError(
            f"{path}: format_version {obj.get('format_version')!r} != {RUN_FORMAT_VERSION}"
        )
    return obj


def evaluate_predictions(run_dir: Union[str, Path], predictions_path: Union[str, Path]) -> dict:
    """Exact-match predictions (jsonl: test_id, prediction) against the
    run's prompt references; writes eval.json into the run dir."""
    run_dir = Path(run_dir)
    run_obj = _read_run_json(run_dir)
    references: dict[str, str] = {}
    order: list[str] = []
    for lineno, row in iter_jsonl(run_dir / "prompts.jsonl"):
        for key in ("test_id", "prompt", "reference"):
            if key not in row:
                raise DataError(f"prompts.jsonl line {lineno}: missing {key!r}")
        references[row["test_id"]] = row["reference"]
        order.append(row["test_id"])

    predictions: dict[str, str] = {}
    for lineno, row in iter_jsonl(predictions_path):
        if "test_id" not in row or "prediction" not in row:
            raise DataError(
                f"{predictions_path}: line {lineno}: need test_id and prediction"
            )
        if row["test_id"] in predictions:
            raise DataError(
                f"{predictions_path}: line {lineno}: duplicate prediction for "
                f"{row['test_id']!r}"
            )
        predictions[row["test_id"]] = row["prediction"]

    missing = [tid for tid in order if tid not in predictions]
    if missing:
        raise DataError(f"predictions missing for test ids: {', '.join(missing[:5])}")
    extra = sorted(set(predictions) - set(order))
    if extra:
        raise DataError(f"predictions for unknown test ids: {', '.join(extra[:5])}")

    per_instance = [
        {"test_id": tid, "correct": exact_match(predictions[tid], references[tid])}
        for tid in order
    ]
    n_correct = sum(1 for rec in per_instance if rec["correct"])
    result = {
        "test_fingerprint": run_obj["test_fingerprint"],
        "n": len(order),
        "n_correct": n_correct,
        "em_rate": n_correct / len(order) if order else 0.0,
        "per_instance": per_instance,
    }
    _write_text_atomic(run_dir / "eval.json", json.dumps(result, indent=2) + "\n")
    return result


def coverage_audit(run_dir: Union[str, Path], schemes: Sequence[TermScheme]) -> dict:
    """Substructure recall of each run's selections under the given term
    schemes; writes coverage.json into the run dir."""
    if not schemes:
        raise ConfigError("no term schemes given")
    run_dir = Path(run_dir)
    run_obj = _read_run_json(run_dir)
    # budget may echo a pluggable counter that cannot be reconstructed,
    # and the audit never renders prompts, so drop it.
    config = ExperimentConfig.from_dict(
        {k: v for k, v in run_obj["config"].items() if k != "budget"}
    )
    pool, test = _load_split(config)
    parses = None
    if config.parses_path is not None:
        parses = load_parses(config.parses_path)
    else:
        for scheme in schemes:
            if scheme.kind == "dep_subtree":
                raise ConfigError(
                    f"scheme {scheme} needs parse records but the run has no parses_path"
                )
    selections = load_selections(run_dir / "selections.jsonl")

    per_scheme: dict[str, list[dict]] = {str(s): [] for s in schemes}
    for sel in selections:
        x = test.get(sel.test_id)
        for scheme in schemes:
            test_bag = bag_for(scheme, x, parses)
            demo_bags = [bag_for(scheme, pool.get(d), parses) for d in sel.demo_ids]
            per_scheme[str(scheme)].append(
                {"test_id": x.id, "recall": substructure_recall(test_bag, demo_bags)}
            )

    result = {
        "test_fingerprint": run_obj["test_fingerprint"],
        "n": len(selections),
        "recalls": {
            name: sum(r["recall"] for r in rows) / len(rows) if rows else 0.0
            for name, rows in per_scheme.items()
        },
        "per_instance": per_scheme,
    }
    _write_text_atomic(run_dir / "coverage.json", json.dumps(result, indent=2) + "\n")
    return result


def load_report(run_dir: Union[str, Path]) -> RunReport:
    """Assemble a RunReport from a run dir's artifacts."""
    run_dir = Path(run_dir)
    run_obj = _read_run_json(run_dir)
    selections = load_selections(run_dir / "selections.jsonl")
    records = [
        {"test_id": sel.test_id, "demo_ids": list(sel.demo_ids)} for sel in selections
    ]
    em_rate = None
    eval_path = run_dir / "eval.json"
    if eval_path.exists():
        eval_obj = json.loads(eval_path.read_text(encoding="utf-8"))
        if eval_obj.get("test_fingerprint") != run_obj["test_fingerprint"]:
            raise DataError(f"{eval_path} was computed for a different test split")
        em_rate = eval_obj["em_rate"]
        correct = {rec["test_id"]: rec["correct"] for rec in eval_obj["per_instance"]}
        for rec in records:
            rec["correct"] = correct.get(rec["test_id"])
    recalls: dict = {}
    cov_path = run_dir / "coverage.json"
    if cov_path.exists():
        cov_obj = json.loads(cov_path.read_text(encoding="utf-8"))
        if cov_obj.get("test_fingerprint") != run_obj["test_fingerprint"]:
            raise DataError(f"{cov_path} was computed for a different test split")
        recalls = dict(cov_obj["recalls"])
    return RunReport(
        method=run_obj["method"],
        n_test=run_obj["n_test"],
        records=records,
        test_fingerprint=run_obj["test_fingerprint"],
        elapsed_s=run_obj["elapsed_s"],
        em_rate=em_rate,
        set_score_mean=run_obj.get("set_score_mean"),
        recalls=recalls,
    )


def compare_report(run_dirs: Sequence[Union[str, Path]]) -> tuple[str, str]:
    """Side-by-side table over run dirs sharing a test split.

    Returns (text table, CSV text); rows are sorted by method name.
    """
    if not run_dirs:
        raise ConfigError("no run directories given")
    reports = [(str(d), load_report(d)) for d in run_dirs]
    first_dir, first = reports[0]
    for d, rep in reports[1:]:
        if rep.test_fingerprint != first.test_fingerprint:
            raise DataError(
                f"run dirs cover different test splits: {first_dir} vs {d}"
            )
    reports.sort(key=lambda pair: (pair[1].method, pair[0]))

    scheme_names = sorted({name for _, rep in reports for name in rep.recalls})
    header = ["method", "n_test", "em_rate", "set_score_mean"] + [
        f"recall:{name}" for name in scheme_names
    ] + ["elapsed_s"]

    def fmt(value, places: int = 4) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.{places}f}"
        return str(value)

    rows = []
    for _, rep in reports:
        rows.append(
            [rep.method, str(rep.n_test), fmt(rep.em_rate), fmt(rep.set_score_mean)]
            + [fmt(rep.recalls.get(name)) for name in scheme_names]
            + [fmt(rep.elapsed_s, 2)]
        )

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(header))),
    ]
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(r))).rstrip())
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for r in rows:
        writer.writerow(r)
    return text, buf.getvalue()
