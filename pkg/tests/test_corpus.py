import json

import numpy as np
import pytest

from shdp.corpus import (
    CorpusDocument,
    CorpusFormatError,
    GraphConnectivityError,
    build_similarity_matrix,
    load_corpus_json,
    similarity,
    spectral_embed,
    synthetic_corpus,
)

from conftest import make_rng


def doc(phase, *words):
    return CorpusDocument(phase, frozenset(words))


class TestSimilarity:
    def test_identical_documents_score_half(self):
        a = doc(0, "x", "y", "z")
        assert similarity(a, a) == 0.5

    def test_disjoint_documents(self):
        assert similarity(doc(0, "a", "b"), doc(0, "c")) == 0.0

    def test_subset(self):
        assert similarity(doc(0, "a"), doc(0, "a", "b", "c")) == 0.25

    def test_jaccard_mode(self):
        a = doc(0, "a", "b")
        b = doc(0, "b", "c")
        assert similarity(a, b, mode="jaccard") == pytest.approx(1.0 / 3.0)
        assert similarity(a, a, mode="jaccard") == 1.0

    def test_empty_keywords_rejected(self):
        with pytest.raises(ValueError):
            CorpusDocument(0, frozenset())

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            similarity(doc(0, "a"), doc(0, "a"), mode="cosine")


class TestSimilarityMatrix:
    def test_symmetric_zero_diagonal(self):
        docs = [doc(0, "a", "b"), doc(0, "b", "c"), doc(1, "c", "d")]
        W = build_similarity_matrix(docs)
        np.testing.assert_array_equal(W, W.T)
        np.testing.assert_array_equal(np.diag(W), 0.0)
        assert W[0, 1] == similarity(docs[0], docs[1])


def small_corpus(rng, n=60, phases=4):
    return synthetic_corpus(rng, n_docs=n, n_phases=phases, first_phase=0)


class TestSpectralEmbed:
    def test_laplacian_spectrum_within_bounds(self):
        docs = small_corpus(make_rng(60))
        W = build_similarity_matrix(docs)
        d = W.sum(axis=1)
        L = np.eye(len(docs)) - (W / np.sqrt(d)[:, None]) / np.sqrt(d)[None, :]
        vals = np.linalg.eigvalsh(0.5 * (L + L.T))
        assert vals.min() > -1e-10
        assert vals.max() < 2.0 + 1e-10

    def test_null_vector_is_sqrt_degree(self):
        docs = small_corpus(make_rng(61))
        W = build_similarity_matrix(docs)
        d = W.sum(axis=1)
        L = np.eye(len(docs)) - (W / np.sqrt(d)[:, None]) / np.sqrt(d)[None, :]
        v = np.sqrt(d)
        v /= np.linalg.norm(v)
        assert np.linalg.norm(L @ v) < 1e-10

    def test_unit_column_deviations(self):
        docs = small_corpus(make_rng(62))
        emb = spectral_embed(docs, dim=6)
        np.testing.assert_allclose(emb.features.std(axis=0), 1.0, atol=1e-9)
        assert emb.features.shape == (len(docs), 6)

    def test_disconnected_graph_reported_with_components(self):
        left = [doc(0, f"l{i}", "lshared") for i in range(8)]
        right = [doc(1, f"r{i}", "rshared") for i in range(8)]
        with pytest.raises(GraphConnectivityError, match="2 components"):
            spectral_embed(left + right, dim=3)

    def test_component_count_equals_null_space_dimension(self):
        left = [doc(0, f"l{i}", "lshared") for i in range(8)]
        right = [doc(1, f"r{i}", "rshared") for i in range(8)]
        docs = left + right
        W = build_similarity_matrix(docs)
        d = W.sum(axis=1)
        L = np.eye(len(docs)) - (W / np.sqrt(d)[:, None]) / np.sqrt(d)[None, :]
        vals = np.linalg.eigvalsh(0.5 * (L + L.T))
        assert np.sum(vals < 1e-10) == 2

    def test_isolated_document_named(self):
        docs = [doc(0, "a", "b"), doc(0, "b", "c"), doc(1, "zzz")]
        with pytest.raises(GraphConnectivityError, match="document 2"):
            spectral_embed(docs, dim=1)

    def test_too_few_documents(self):
        docs = [doc(0, "a"), doc(0, "a", "b")]
        with pytest.raises(ValueError, match="at least"):
            spectral_embed(docs, dim=12)

    def test_deterministic(self):
        docs = small_corpus(make_rng(63))
        a = spectral_embed(docs, dim=5)
        b = spectral_embed(docs, dim=5)
        np.testing.assert_array_equal(a.features, b.features)


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "corpus.json"
        payload = [
            {"phase": 1990, "keywords": ["a", "b"]},
            {"phase": 1991, "keywords": ["b"]},
        ]
        path.write_text(json.dumps(payload))
        docs = load_corpus_json(path)
        assert docs[0].phase == 1990
        assert docs[1].keywords == frozenset({"b"})

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[\n{"phase": 1990, "keywords": ["a"]},\n{"oops"\n]')
        with pytest.raises(CorpusFormatError, match="line"):
            load_corpus_json(path)

    def test_missing_field_reports_document_and_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"phase": 1990}]))
        with pytest.raises(CorpusFormatError, match="document 0.*keywords"):
            load_corpus_json(path)

    def test_bad_phase_type(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"phase": "1990", "keywords": ["a"]}]))
        with pytest.raises(CorpusFormatError, match="phase"):
            load_corpus_json(path)

    def test_empty_keywords_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"phase": 1, "keywords": []}]))
        with pytest.raises(CorpusFormatError, match="keywords"):
            load_corpus_json(path)


class TestSyntheticCorpus:
    def test_shape_and_phases(self):
        docs = synthetic_corpus(make_rng(64), n_docs=120, n_phases=10, first_phase=1990)
        assert len(docs) == 120
        phases = sorted({d.phase for d in docs})
        assert phases == list(range(1990, 2000))

    def test_embeddable(self):
        docs = synthetic_corpus(make_rng(65), n_docs=80, n_phases=5)
        emb = spectral_embed(docs, dim=6)
        assert emb.features.shape == (80, 6)

    def test_deterministic(self):
        a = synthetic_corpus(make_rng(66), n_docs=50, n_phases=5)
        b = synthetic_corpus(make_rng(66), n_docs=50, n_phases=5)
        assert a == b
