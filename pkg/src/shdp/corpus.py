"""Keyword corpora: similarity graph, spectral embedding, synthetic generator.

A corpus is a list of documents, each a non-empty keyword set tagged with an
integer phase (a year).  Documents embed into a fixed-dimension feature space
through the spectral map of their similarity graph: pairwise similarities
form an affinity matrix, the eigenvectors of its normalized Laplacian with
the smallest eigenvalues become the features, and each feature column is
rescaled to unit standard deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "CorpusDocument",
    "CorpusFormatError",
    "EmbeddedCorpus",
    "GraphConnectivityError",
    "build_similarity_matrix",
    "load_corpus_json",
    "similarity",
    "spectral_embed",
    "synthetic_corpus",
]

SIMILARITY_MODES = ("overlap-sum", "jaccard")


class CorpusFormatError(ValueError):
    """Corpus file violates the expected JSON schema."""


class GraphConnectivityError(ValueError):
    """Similarity graph is disconnected or contains an isolated document."""


@dataclass(frozen=True)
class CorpusDocument:
    phase: int
    keywords: frozenset[str]

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("document keyword set must be non-empty")


@dataclass
class EmbeddedCorpus:
    """Feature matrix (n, dim) plus the phase of each row."""

    features: np.ndarray
    phase_of_row: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.phase_of_row = np.asarray(self.phase_of_row, dtype=int)
        if self.features.shape[0] != self.phase_of_row.shape[0]:
            raise ValueError("one phase label per feature row required")


def similarity(a: CorpusDocument, b: CorpusDocument, mode: str = "overlap-sum") -> float:
    """Keyword overlap of two documents, in [0, 1].

    "overlap-sum" divides the shared-word count by the total word count of
    the two documents (identical documents score 0.5); "jaccard" divides by
    the union size instead.
    """
    if not a.keywords or not b.keywords:
        raise ValueError("documents must have non-empty keyword sets")
    shared = len(a.keywords & b.keywords)
    if mode == "overlap-sum":
        return shared / (len(a.keywords) + len(b.keywords))
    if mode == "jaccard":
        return shared / len(a.keywords | b.keywords)
    raise ValueError(f"unknown similarity mode {mode!r}; use one of {SIMILARITY_MODES}")


def build_similarity_matrix(documents: list[CorpusDocument], mode: str = "overlap-sum") -> np.ndarray:
    """Symmetric affinity matrix with zero diagonal."""
    n = len(documents)
    sets = [d.keywords for d in documents]
    sizes = np.array([len(s) for s in sets], dtype=float)
    W = np.zeros((n, n))
    for i in range(n):
        si = sets[i]
        for j in range(i + 1, n):
            shared = len(si & sets[j])
            if shared:
                if mode == "overlap-sum":
                    W[i, j] = shared / (sizes[i] + sizes[j])
                elif mode == "jaccard":
                    W[i, j] = shared / len(si | sets[j])
                else:
                    raise ValueError(f"unknown similarity mode {mode!r}")
    return W + W.T


def spectral_embed(
    documents: list[CorpusDocument],
    dim: int = 12,
    mode: str = "overlap-sum",
    *,
    check_connectivity: bool = True,
) -> EmbeddedCorpus:
    """Embed documents as the low eigenvectors of the normalized graph Laplacian.

    L = I - D^(-1/2) W D^(-1/2); the dim eigenvectors with the smallest
    eigenvalues are kept, sign-fixed (largest-magnitude entry positive), and
    each column is scaled to unit standard deviation.
    """
    n = len(documents)
    if n < dim + 1:
        raise ValueError(f"need at least {dim + 1} documents for a {dim}-dim embedding, got {n}")
    W = build_similarity_matrix(documents, mode)
    degrees = W.sum(axis=1)
    if np.any(degrees == 0):
        isolated = int(np.argmax(degrees == 0))
        raise GraphConnectivityError(
            f"document {isolated} shares no keyword with any other document"
        )
    if check_connectivity:
        n_comp, labels = connected_components(csr_matrix(W), directed=False)
        if n_comp > 1:
            groups = [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]
            raise GraphConnectivityError(f"similarity graph has {n_comp} components: {groups}")

    d_isqrt = 1.0 / np.sqrt(degrees)
    L = np.eye(n) - (d_isqrt[:, None] * W) * d_isqrt[None, :]
    L = 0.5 * (L + L.T)
    eigvals, eigvecs = np.linalg.eigh(L)
    vecs = eigvecs[:, :dim]
    # deterministic sign: largest-|entry| coordinate made positive
    flip = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(dim)] < 0
    vecs = vecs * np.where(flip, -1.0, 1.0)
    stds = vecs.std(axis=0)
    if np.any(stds < 1e-12):
        raise ValueError("an embedding column is constant; cannot standardize")
    feats = vecs / stds
    phases = np.array([d.phase for d in documents], dtype=int)
    return EmbeddedCorpus(feats, phases)


def load_corpus_json(path) -> list[CorpusDocument]:
    """Read a corpus file: a JSON array of {"phase": int, "keywords": [str, ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, list):
        raise CorpusFormatError(f"{path}: top level must be a JSON array of documents")
    docs = []
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict):
            raise CorpusFormatError(f"{path}: document {i} is not an object")
        if "phase" not in entry or "keywords" not in entry:
            missing = "phase" if "phase" not in entry else "keywords"
            raise CorpusFormatError(f"{path}: document {i} lacks field {missing!r}")
        phase = entry["phase"]
        kws = entry["keywords"]
        if not isinstance(phase, int) or isinstance(phase, bool):
            raise CorpusFormatError(f"{path}: document {i} field 'phase' must be an integer")
        if (
            not isinstance(kws, list)
            or not kws
            or not all(isinstance(k, str) and k for k in kws)
        ):
            raise CorpusFormatError(
                f"{path}: document {i} field 'keywords' must be a non-empty list of strings"
            )
        docs.append(CorpusDocument(phase=phase, keywords=frozenset(kws)))
    if not docs:
        raise CorpusFormatError(f"{path}: corpus is empty")
    return docs


def synthetic_corpus(
    rng: np.random.Generator,
    n_docs: int = 200,
    n_phases: int = 26,
    first_phase: int = 1990,
    n_topics: int = 6,
    vocab_per_topic: int = 40,
    words_per_doc: int = 8,
    n_shared_words: int = 12,
) -> list[CorpusDocument]:
    """Clustered keyword documents whose topic mixture drifts across phases.

    Each phase draws documents from topic-specific vocabularies under
    smoothly rotating topic weights; a couple of words from a small shared
    pool keep the similarity graph connected.
    """
    if n_docs < n_phases:
        raise ValueError("need at least one document per phase")
    vocab = [
        [f"kw{t:02d}_{v:03d}" for v in range(vocab_per_topic)] for t in range(n_topics)
    ]
    shared = [f"common_{v:03d}" for v in range(n_shared_words)]
    docs: list[CorpusDocument] = []
    per_phase = np.full(n_phases, n_docs // n_phases)
    per_phase[: n_docs % n_phases] += 1
    for j in range(n_phases):
        # topic weights rotate slowly with the phase index
        angles = 2.0 * np.pi * (np.arange(n_topics) / n_topics + j / (2.0 * n_phases))
        topic_w = 1.5 + np.cos(angles)
        topic_w = topic_w / topic_w.sum()
        for _ in range(per_phase[j]):
            t = int(rng.choice(n_topics, p=topic_w))
            k = min(words_per_doc, vocab_per_topic)
            words = set(rng.choice(vocab[t], size=k, replace=False).tolist())
            words.update(rng.choice(shared, size=2, replace=False).tolist())
            docs.append(CorpusDocument(phase=first_phase + j, keywords=frozenset(words)))
    return docs
