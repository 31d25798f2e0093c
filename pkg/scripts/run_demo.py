#!/usr/bin/env python3
"""End-to-end demo on synthetic data with deterministic offline doubles.

Builds the descriptor stores from the bundled fixture catalog, maps a
small synthetic batch of relation quadruples, and scores the run against
a gold file derived from the batch itself. Everything is offline and
reproducible; pass --workdir to keep the artifacts.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from predmap.cli import main as predmap_main

REPO = Path(__file__).resolve().parent.parent
CATALOG = REPO / "tests" / "data" / "catalog_chemprot30.json"

RELATION_TEXTS = [
    "activates the receptor",
    "blocks the receptor",
    "is metabolized by",
    "increases expression of",
    "decreases expression of",
    "is a component of",
]

NEGATION_DEFAULT = (
    '{"negation_of_the_descriptor_text": "it is not the case that {input_text}"}'
)
PICK_FIRST = '{"mapped_predicate": "{first_candidate}", "negated": "False"}'


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def run(workdir: Path, n_relations: int, seed: int) -> int:
    workdir.mkdir(parents=True, exist_ok=True)
    providers = {
        "embedding": {"kind": "deterministic", "dim": 64},
        "auxiliary_embedding": {"kind": "deterministic", "dim": 24},
        "chat": {"kind": "rules", "default": NEGATION_DEFAULT},
    }
    write_json(workdir / "providers.json", providers)

    code = predmap_main(
        [
            "preprocess",
            "--catalog",
            str(CATALOG),
            "--out",
            str(workdir / "pre"),
            "--providers",
            str(workdir / "providers.json"),
            "--seed",
            str(seed),
        ]
    )
    if code:
        return code

    relations_path = workdir / "relations.jsonl"
    with open(relations_path, "w", encoding="utf-8") as fh:
        for i in range(n_relations):
            fh.write(
                json.dumps(
                    {
                        "id": f"r{i:04d}",
                        "subject": f"chem{i:04d}",
                        "object": f"prot{i:04d}",
                        "relation": RELATION_TEXTS[i % len(RELATION_TEXTS)],
                        "abstract": f"Synthetic abstract number {i}.",
                    }
                )
                + "\n"
            )

    config = {
        "run_id": "demo",
        "k": 10,
        "concurrency": 4,
        "stores": {
            "base": str(workdir / "pre" / "store_base"),
            "auxiliary": str(workdir / "pre" / "store_auxiliary"),
        },
        "providers": {
            "embedding": {"kind": "deterministic", "dim": 64},
            "auxiliary_embedding": {"kind": "deterministic", "dim": 24},
            "chat": {"kind": "rules", "default": PICK_FIRST},
        },
    }
    write_json(workdir / "config.json", config)

    code = predmap_main(
        [
            "map",
            "--config",
            str(workdir / "config.json"),
            "--input",
            str(relations_path),
            "--out",
            str(workdir / "mapped"),
            "--seed",
            str(seed),
        ]
    )
    if code:
        return code

    # Gold derived from the run itself: the demo scores the plumbing, not
    # any model. Swap in a hand-labeled file to measure something real.
    gold_path = workdir / "gold.jsonl"
    with open(gold_path, "w", encoding="utf-8") as fh:
        for line in (workdir / "mapped" / "mappings.jsonl").read_text().splitlines():
            row = json.loads(line)
            if row["mapped_predicate"]:
                fh.write(
                    json.dumps({"id": row["id"], "predicate": row["mapped_predicate"]})
                    + "\n"
                )

    return predmap_main(
        [
            "eval",
            "--results",
            str(workdir / "mapped"),
            "--gold",
            str(gold_path),
            "--k",
            "1,3,5,10",
        ]
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=None)
    parser.add_argument("--relations", type=int, default=24)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    if args.workdir is not None:
        return run(args.workdir, args.relations, args.seed)
    with tempfile.TemporaryDirectory(prefix="predmap-demo-") as tmp:
        return run(Path(tmp), args.relations, args.seed)


if __name__ == "__main__":
    sys.exit(main())
