"""Operator commands: preprocess, map, eval.

Configuration lives in a single JSON document; flags override it and
secrets stay in environment variables. Exit codes: 0 success, 1 fatal
runtime error, 2 usage or configuration error. Per-relation mapping
failures are reported in outputs, never through the exit code.

Passing --seed selects the deterministic offline doubles wherever a
provider is configured as one, and pins run timestamps so repeated runs
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .clients import (
    DeterministicEmbedder,
    HttpChatProvider,
    HttpEmbeddingProvider,
    ProviderConfig,
    RuleChat,
    ScriptedChat,
)
from .errors import (
    ConfigError,
    EvalInputError,
    ParseError,
    PredmapError,
    ResumeError,
)
from .evaluation import compute_metrics, load_candidate_dump, read_gold
from .ontology import (
    OntologyKind,
    generate_negations,
    parse_catalog,
    save_catalog,
    write_skip_report,
)
from .pipeline import (
    CHECKPOINT_FILE,
    PipelineRuntime,
    digest_file,
    map_batch,
    write_outputs,
)
from .rerank import MappingResult, Outcome
from .retrieval import read_relations
from .store import StoreRole, build_store, load_store

# Pinned manifest/provenance timestamp for seeded (reproducible) runs.
DETERMINISTIC_TIMESTAMP = "1970-01-01T00:00:00+00:00"

AUGMENTED_CATALOG_FILE = "catalog_with_negatives.json"
SKIP_REPORT_FILE = "negation_skips.jsonl"
BASE_STORE_DIR = "store_base"
AUX_STORE_DIR = "store_auxiliary"
METRICS_FILE = "metrics.json"


@dataclass
class RunConfig:
    """Validated run configuration for the map command."""

    base_store_path: Path
    aux_store_path: Path | None
    embedding_spec: dict
    aux_embedding_spec: dict | None
    chat_spec: dict
    k: int
    concurrency: int
    output_dir: Path
    run_id: str
    seed: int | None

    @classmethod
    def from_document(cls, doc: dict, seed_override: int | None) -> "RunConfig":
        stores = doc.get("stores", {})
        if "base" not in stores:
            raise ConfigError("config must name a base store under stores.base")
        providers = doc.get("providers", {})
        if "embedding" not in providers or "chat" not in providers:
            raise ConfigError(
                "config must define providers.embedding and providers.chat"
            )
        aux_store = stores.get("auxiliary")
        aux_embedding = providers.get("auxiliary_embedding")
        if aux_store and not aux_embedding:
            raise ConfigError(
                "auxiliary store requires a providers.auxiliary_embedding entry"
            )
        k = int(doc.get("k", 10))
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        seed = seed_override if seed_override is not None else doc.get("seed")
        return cls(
            base_store_path=Path(stores["base"]),
            aux_store_path=Path(aux_store) if aux_store else None,
            embedding_spec=providers["embedding"],
            aux_embedding_spec=aux_embedding,
            chat_spec=providers["chat"],
            k=k,
            concurrency=int(doc.get("concurrency", 4)),
            output_dir=Path(doc.get("output_dir", "out")),
            run_id=str(doc.get("run_id", "run")),
            seed=int(seed) if seed is not None else None,
        )


def build_embedding_provider(spec: dict, seed: int | None):
    kind = spec.get("kind", "http")
    if kind == "deterministic":
        effective = seed if seed is not None else spec.get("seed", 0)
        if "dim" not in spec:
            raise ConfigError("deterministic embedding provider requires 'dim'")
        return DeterministicEmbedder(
            seed=int(effective), dim=int(spec["dim"]), model_id=spec.get("model_id")
        )
    if kind == "http":
        return HttpEmbeddingProvider(_provider_config(spec))
    raise ConfigError(f"unknown embedding provider kind {kind!r}")


def build_chat_provider(spec: dict, seed: int | None):
    kind = spec.get("kind", "http")
    if kind == "rules":
        rules = [(r["contains"], r["respond"]) for r in spec.get("rules", [])]
        return RuleChat(
            rules=rules,
            default=spec.get("default", ""),
            model_id=spec.get("model_id", "rule-chat"),
        )
    if kind == "scripted":
        responses = spec.get("responses")
        if responses is None:
            responses = Path(spec["responses_file"]).read_text(
                encoding="utf-8"
            ).splitlines()
        return ScriptedChat(responses, model_id=spec.get("model_id", "scripted-chat"))
    if kind == "http":
        return HttpChatProvider(_provider_config(spec))
    raise ConfigError(f"unknown chat provider kind {kind!r}")


def _provider_config(spec: dict) -> ProviderConfig:
    try:
        return ProviderConfig.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad provider config: {exc}") from exc


def _load_json(path: Path, flag: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"file given to {flag} does not exist: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{flag} file {path} is not valid JSON: {exc}") from exc


def cmd_preprocess(args: argparse.Namespace) -> int:
    catalog_path = Path(args.catalog)
    if not catalog_path.is_file():
        raise ConfigError(f"file given to --catalog does not exist: {catalog_path}")
    providers_doc = _load_json(Path(args.providers), "--providers")
    seed = args.seed if args.seed is not None else providers_doc.get("seed")
    seed = int(seed) if seed is not None else None
    timestamp = DETERMINISTIC_TIMESTAMP if seed is not None else None

    ontology = OntologyKind(args.ontology) if args.ontology else None
    catalog = parse_catalog(catalog_path, ontology)

    chat = build_chat_provider(providers_doc.get("chat", {}), seed)
    augmented, skips = generate_negations(catalog, chat)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_catalog(augmented, out_dir / AUGMENTED_CATALOG_FILE)
    write_skip_report(skips, out_dir / SKIP_REPORT_FILE)

    embedder = build_embedding_provider(providers_doc["embedding"], seed)
    base = build_store(augmented, embedder, StoreRole.BASE, created_at=timestamp)
    base.save(out_dir / BASE_STORE_DIR)
    print(
        f"preprocess: {len(augmented.descriptors)} descriptors "
        f"({len(skips)} negation skips), base store records={base.record_count}"
    )

    if "auxiliary_embedding" in providers_doc:
        aux_embedder = build_embedding_provider(
            providers_doc["auxiliary_embedding"], seed
        )
        aux = build_store(
            augmented, aux_embedder, StoreRole.AUXILIARY, created_at=timestamp
        )
        aux.save(out_dir / AUX_STORE_DIR)
        print(f"preprocess: auxiliary store records={aux.record_count}")
    return 0


def cmd_map(args: argparse.Namespace) -> int:
    config_doc = _load_json(Path(args.config), "--config")
    config = RunConfig.from_document(config_doc, args.seed)
    input_path = Path(args.input)
    if not input_path.is_file():
        raise ConfigError(f"file given to --input does not exist: {input_path}")
    if not config.base_store_path.is_dir():
        raise ConfigError(f"base store not found: {config.base_store_path}")

    base_store = load_store(config.base_store_path)
    aux_store = None
    aux_embedder = None
    if config.aux_store_path is not None:
        if not config.aux_store_path.is_dir():
            raise ConfigError(f"auxiliary store not found: {config.aux_store_path}")
        aux_store = load_store(config.aux_store_path)
        aux_embedder = build_embedding_provider(config.aux_embedding_spec, config.seed)

    runtime = PipelineRuntime(
        base_store=base_store,
        base_embedder=build_embedding_provider(config.embedding_spec, config.seed),
        chat=build_chat_provider(config.chat_spec, config.seed),
        aux_store=aux_store,
        aux_embedder=aux_embedder,
        k=config.k,
        concurrency=config.concurrency,
        run_id=config.run_id,
        **(
            {"timestamp": DETERMINISTIC_TIMESTAMP}
            if config.seed is not None
            else {}
        ),
    )

    relations = list(read_relations(input_path))
    out_dir = Path(args.out) if args.out else config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    output = map_batch(
        relations,
        runtime,
        checkpoint_path=out_dir / CHECKPOINT_FILE,
        input_digest=digest_file(input_path),
        resume=args.resume,
    )
    write_outputs(out_dir, relations, output)
    report = output.report
    print(
        f"map: total={report.total} mapped={report.mapped} "
        f"rejected_none={report.rejected_none} parse_failures={report.parse_failures} "
        f"invalid_selections={report.invalid_selections} "
        f"negated={report.negated_count}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    results_dir = Path(args.results)
    mappings_path = results_dir / "mappings.jsonl"
    candidates_path = results_dir / "candidates.jsonl"
    for path in (mappings_path, candidates_path):
        if not path.is_file():
            raise ConfigError(f"results dir {results_dir} lacks {path.name}")
    gold_path = Path(args.gold)
    if not gold_path.is_file():
        raise ConfigError(f"file given to --gold does not exist: {gold_path}")
    try:
        ks = sorted({int(part) for part in args.k.split(",") if part.strip()})
    except ValueError as exc:
        raise ConfigError(f"--k must be a comma-separated integer list: {exc}") from exc
    if not ks:
        raise ConfigError("--k must name at least one cutoff")

    results = _read_mapping_results(mappings_path)
    dumps = load_candidate_dump(candidates_path)
    gold = read_gold(gold_path)
    report = compute_metrics(results, dumps, gold, ks)

    doc = report.to_dict()
    out_path = Path(args.out) if args.out else results_dir / METRICS_FILE
    out_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"n={report.n}")
    print(f"exact_match={report.exact_match:.4f}")
    for k in ks:
        print(f"a@{k}={report.accuracy_at[k]:.4f}")
    print(f"mrr={report.mrr:.4f}")
    print(f"orderings_hold={report.orderings_hold()}")
    if report.negation_agreement is not None:
        print(f"negation_agreement={report.negation_agreement:.4f}")
    return 0


def _read_mapping_results(path: Path) -> list[MappingResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                results.append(
                    MappingResult(
                        relation_id=str(row["id"]),
                        mapped_predicate=row["mapped_predicate"],
                        negated=bool(row["negated"]),
                        outcome=Outcome(row["outcome"]),
                        candidate_count=int(row["candidates_offered"]),
                        raw_response="",
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predmap",
        description="Map free-text biomedical relations to ontology predicates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser(
        "preprocess",
        help="generate negated descriptors and build embedding stores",
    )
    pre.add_argument("--catalog", required=True, help="predicate catalog JSON file")
    pre.add_argument("--out", required=True, help="output directory")
    pre.add_argument("--providers", required=True, help="providers JSON file")
    pre.add_argument(
        "--ontology", choices=[k.value for k in OntologyKind], default=None
    )
    pre.add_argument("--seed", type=int, default=None)
    pre.set_defaults(func=cmd_preprocess)

    mp = sub.add_parser("map", help="map relation quadruples to predicates")
    mp.add_argument("--config", required=True, help="run configuration JSON file")
    mp.add_argument("--input", required=True, help="relation quadruples JSONL file")
    mp.add_argument("--out", default=None, help="output directory (overrides config)")
    mp.add_argument("--resume", action="store_true", help="resume from checkpoint")
    mp.add_argument("--seed", type=int, default=None)
    mp.set_defaults(func=cmd_map)

    ev = sub.add_parser("eval", help="score mapping outputs against gold labels")
    ev.add_argument("--results", required=True, help="directory written by map")
    ev.add_argument("--gold", required=True, help="gold JSONL file")
    ev.add_argument("--k", default="1,3,5,10", help="comma-separated cutoffs")
    ev.add_argument("--out", default=None, help="metrics output path")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ResumeError, ParseError, EvalInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PredmapError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
