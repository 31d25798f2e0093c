#!/usr/bin/env python3
"""Smoke-test the pipeline against real embedding and chat endpoints.

Needs a providers JSON file with HTTP provider entries (and API keys in
the environment), plus optionally a hand-labeled mini-gold JSONL of
relations {id, subject, object, relation, abstract, predicate}. The run
passes when at least 90% of relations avoid parse failures; no accuracy
threshold is asserted because that is model-dependent.
"""

import argparse
import json
import sys
from pathlib import Path

from predmap.cli import build_chat_provider, build_embedding_provider
from predmap.evaluation import GoldPair, exact_match
from predmap.ontology import generate_negations, parse_catalog
from predmap.pipeline import PipelineRuntime, map_batch
from predmap.rerank import Outcome
from predmap.retrieval import ExtractedRelation
from predmap.store import build_store

REPO = Path(__file__).resolve().parent.parent
DEFAULT_CATALOG = REPO / "tests" / "data" / "catalog_chemprot30.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--providers", type=Path, required=True)
    parser.add_argument("--catalog", type=Path, default=DEFAULT_CATALOG)
    parser.add_argument("--gold", type=Path, default=None)
    parser.add_argument("--limit", type=int, default=20)
    parser.add_argument("--k", type=int, default=10)
    args = parser.parse_args()

    providers = json.loads(args.providers.read_text(encoding="utf-8"))
    chat = build_chat_provider(providers["chat"], None)
    embedder = build_embedding_provider(providers["embedding"], None)

    catalog = parse_catalog(args.catalog)
    print(f"catalog: {len(catalog.predicates)} predicates")
    augmented, skips = generate_negations(catalog, chat)
    print(f"negations: {len(skips)} skipped")
    store = build_store(augmented, embedder)
    print(f"store: {store.record_count} records, dim {store.manifest.dim}")

    gold = []
    if args.gold:
        relations = []
        for line in args.gold.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            relations.append(
                ExtractedRelation(
                    relation_id=str(row["id"]),
                    subject=row["subject"],
                    object=row["object"],
                    relation_text=row["relation"],
                    abstract=row.get("abstract", ""),
                )
            )
            if "predicate" in row:
                gold.append(GoldPair(str(row["id"]), row["predicate"]))
        relations = relations[: args.limit]
    else:
        texts = ["activates", "inhibits", "is metabolized by", "binds to"]
        relations = [
            ExtractedRelation(
                relation_id=f"s{i}",
                subject=f"chem{i}",
                object=f"prot{i}",
                relation_text=texts[i % len(texts)],
                abstract="",
            )
            for i in range(args.limit)
        ]

    runtime = PipelineRuntime(
        base_store=store,
        base_embedder=embedder,
        chat=chat,
        k=args.k,
        run_id="live-smoke",
    )
    output = map_batch(relations, runtime)
    print(json.dumps(output.report.to_dict(), indent=2))

    ok = sum(1 for r in output.results if r.outcome is not Outcome.PARSE_FAILURE)
    rate = ok / len(output.results)
    print(f"non-parse-failure rate: {rate:.2%}")
    if gold:
        print(f"exact match vs mini-gold: {exact_match(output.results, gold):.3f}")
    if rate < 0.9:
        print("FAIL: parse-failure rate above 10%")
        return 1
    print("PASS")
    return 0


if __name__ == "__main__":
    sys.exit(main())
