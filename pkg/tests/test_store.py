import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_store, unit
from oracles import brute_knn
from predmap.clients import DeterministicEmbedder, EmbeddingVector, embed_texts
from predmap.errors import CorruptStore, QueryContractViolation
from predmap.ontology import Polarity, parse_catalog
from predmap.store import (
    EmbeddingRecord,
    EmbeddingStore,
    StoreManifest,
    StoreRole,
    build_store,
    load_store,
)


class TestBuildStore:
    def test_chemprot_fixture_has_30_records(self, chemprot_catalog, embedder):
        store = build_store(chemprot_catalog, embedder)
        assert store.record_count == 30
        assert store.manifest.record_count == 30
        assert store.manifest.model_id == embedder.model_id

    def test_positive_only_catalog_gives_positive_only_records(
        self, small_catalog, embedder
    ):
        store = build_store(small_catalog, embedder)
        assert all(r.polarity is Polarity.POSITIVE for r in store.records)

    def test_records_match_recomputed_embeddings_bitwise(
        self, small_catalog, embedder
    ):
        store = build_store(small_catalog, embedder)
        for record in store.records:
            fresh = embed_texts(embedder, [record.descriptor_text])[0]
            arr = np.asarray(fresh.values, dtype=np.float64)
            arr = arr / np.linalg.norm(arr)
            assert record.vector.values == tuple(float(v) for v in arr)

    def test_vectors_are_unit_norm(self, chemprot_catalog, embedder):
        store = build_store(chemprot_catalog, embedder)
        for record in store.records:
            norm = np.linalg.norm(record.vector.values)
            assert abs(norm - 1.0) <= 1e-9

    def test_zero_norm_embedding_skipped(self, small_catalog):
        class ZeroForOne:
            model_id = "zero-double"
            max_retries = 0

            def request(self, texts):
                return [
                    [0.0] * 8 if t == "has effect" else [1.0, 2.0] + [0.0] * 6
                    for t in texts
                ]

        store = build_store(small_catalog, ZeroForOne())
        assert store.record_count == len(small_catalog.descriptors) - 1
        assert all(r.descriptor_text != "has effect" for r in store.records)


class TestPersistence:
    def test_save_load_roundtrip_bitwise(self, chemprot_catalog, embedder, tmp_path):
        store = build_store(chemprot_catalog, embedder)
        store.save(tmp_path / "store")
        loaded = load_store(tmp_path / "store")
        assert loaded.manifest == store.manifest
        assert len(loaded.records) == len(store.records)
        for a, b in zip(loaded.records, store.records):
            assert a == b  # tuple equality on floats is bitwise here

    def test_truncated_records_file(self, small_catalog, embedder, tmp_path):
        store = build_store(small_catalog, embedder)
        store.save(tmp_path / "store")
        records = (tmp_path / "store" / "records.jsonl").read_text()
        (tmp_path / "store" / "records.jsonl").write_text(records[: len(records) // 2])
        with pytest.raises(CorruptStore):
            load_store(tmp_path / "store")

    def test_manifest_count_off_by_one(self, small_catalog, embedder, tmp_path):
        store = build_store(small_catalog, embedder)
        store.save(tmp_path / "store")
        manifest_path = tmp_path / "store" / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["record_count"] += 1
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(CorruptStore):
            load_store(tmp_path / "store")

    def test_manifest_dim_mismatch(self, small_catalog, embedder, tmp_path):
        store = build_store(small_catalog, embedder)
        store.save(tmp_path / "store")
        manifest_path = tmp_path / "store" / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["dim"] = 32
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(CorruptStore):
            load_store(tmp_path / "store")

    def test_missing_files(self, tmp_path):
        with pytest.raises(CorruptStore):
            load_store(tmp_path / "nothing")


class TestKnn:
    def test_self_retrieval_first_with_unit_score(self, chemprot_catalog, embedder):
        store = build_store(chemprot_catalog, embedder)
        target = store.records[7]
        hits = store.knn_descriptors(target.vector, 3)
        assert hits[0][0].descriptor_text == target.descriptor_text
        assert hits[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_k_larger_than_store_returns_everything(self, small_catalog, embedder):
        store = build_store(small_catalog, embedder)
        hits = store.knn_descriptors(store.records[0].vector, 999)
        assert len(hits) == store.record_count

    def test_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(42)
        store = random_store(rng, 20, dim=16, duplicate_every=4)
        query = unit(rng.normal(size=16), dim=16)
        hits = store.knn_descriptors(query, 5)
        oracle = brute_knn(
            [
                (r.predicate_label, r.descriptor_text, r.polarity.value, list(r.vector.values))
                for r in store.records
            ],
            list(query.values),
            5,
        )
        assert [(h[0].predicate_label, h[0].descriptor_text) for h in hits] == [
            (o[0], o[1]) for o in oracle
        ]
        for hit, o in zip(hits, oracle):
            assert hit[1] == pytest.approx(o[3], abs=1e-12)

    def test_scores_within_unit_interval(self):
        rng = np.random.default_rng(3)
        store = random_store(rng, 50, dim=16)
        query = unit(rng.normal(size=16), dim=16)
        for _, score in store.knn_descriptors(query, 50):
            assert -1.0 <= score <= 1.0

    def test_dim_mismatch_rejected(self, small_catalog, embedder):
        store = build_store(small_catalog, embedder)
        query = EmbeddingVector(tuple([1.0] * 8), 8, embedder.model_id)
        with pytest.raises(QueryContractViolation):
            store.knn_descriptors(query, 3)

    def test_k_must_be_positive(self, small_catalog, embedder):
        store = build_store(small_catalog, embedder)
        with pytest.raises(ValueError):
            store.knn_descriptors(store.records[0].vector, 0)

    def test_query_does_not_mutate_store(self, small_catalog, embedder):
        store = build_store(small_catalog, embedder)
        before = [r.vector.values for r in store.records]
        store.knn_descriptors(store.records[1].vector, 4)
        assert [r.vector.values for r in store.records] == before

    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    @settings(max_examples=30, deadline=None)
    def test_knn_equals_bruteforce_property(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 60))
        store = random_store(rng, n, dim=16, duplicate_every=5)
        query = unit(rng.normal(size=16), dim=16)
        hits = store.knn_descriptors(query, k)
        oracle = brute_knn(
            [
                (r.predicate_label, r.descriptor_text, r.polarity.value, list(r.vector.values))
                for r in store.records
            ],
            list(query.values),
            k,
        )
        assert len(hits) == min(k, n)
        assert [(h[0].predicate_label, h[0].descriptor_text) for h in hits] == [
            (o[0], o[1]) for o in oracle
        ]


class TestNormalization:
    def test_dot_equals_cosine_on_random_pairs(self):
        rng = np.random.default_rng(11)
        store = random_store(rng, 40, dim=32)
        for _ in range(50):
            i, j = rng.integers(0, 40, size=2)
            a = np.asarray(store.records[i].vector.values)
            b = np.asarray(store.records[j].vector.values)
            dot = float(a @ b)
            cos = dot / (np.linalg.norm(a) * np.linalg.norm(b))
            assert abs(dot - cos) <= 1e-9


class TestManifest:
    def test_digest_is_content_addressed(self):
        m1 = StoreManifest("m", 8, "v1", 3, "1970-01-01T00:00:00+00:00", StoreRole.BASE)
        m2 = StoreManifest("m", 8, "v1", 3, "1970-01-01T00:00:00+00:00", StoreRole.BASE)
        m3 = StoreManifest("m", 8, "v2", 3, "1970-01-01T00:00:00+00:00", StoreRole.BASE)
        assert m1.digest() == m2.digest()
        assert m1.digest() != m3.digest()

    def test_store_rejects_count_mismatch(self):
        manifest = StoreManifest(
            "m", 8, "v1", 2, "1970-01-01T00:00:00+00:00", StoreRole.BASE
        )
        record = EmbeddingRecord(
            "treats", "works", Polarity.POSITIVE, unit([1.0] * 8, model_id="m")
        )
        with pytest.raises(CorruptStore):
            EmbeddingStore(manifest, [record])


def test_scaling_before_normalization_preserves_order(data_dir):
    # Positive scaling of raw vectors must not change candidate order.
    catalog = parse_catalog(data_dir / "catalog_chemprot30.json")
    base = DeterministicEmbedder(seed=7, dim=64)

    class Scaled:
        model_id = base.model_id
        max_retries = 0

        def request(self, texts):
            return [[v * 37.5 for v in row] for row in base.request(texts)]

    store_a = build_store(catalog, base)
    store_b = build_store(catalog, Scaled())
    query = embed_texts(base, ["increases level of"])[0]
    hits_a = store_a.knn_descriptors(query, 10)
    hits_b = store_b.knn_descriptors(query, 10)
    assert [(h[0].predicate_label, h[0].descriptor_text) for h in hits_a] == [
        (h[0].predicate_label, h[0].descriptor_text) for h in hits_b
    ]
