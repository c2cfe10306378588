"""Seeded synthetic topical collections and ready-to-run toy experiments."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as io
from .data import Corpus, Document, Qrels, QuerySet
from .encoder import EncoderConfig, init_encoder, make_domain_variant
from .experiment import ExperimentManifest, GridSearchConfig
from .tensor_store import save_archive

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]


@dataclass
class SyntheticCollection:
    corpus: Corpus
    dev_queries: QuerySet
    dev_qrels: Qrels
    test_queries: QuerySet
    test_qrels: Qrels


def _words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        syl = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_collection(
    n_docs: int = 500,
    n_dev: int = 50,
    n_test: int = 50,
    n_topics: int = 25,
    seed: int = 0,
    doc_len: int = 24,
    query_len: int = 4,
    topic_vocab: int = 8,
) -> SyntheticCollection:
    """Documents mix topic words with background words; each query is drawn
    from one target document (grade 2), and other same-topic documents that
    share at least two query words are graded 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    taken: set[str] = set()
    background = _words(rng, 200, taken)
    topic_words = [_words(rng, topic_vocab, taken) for _ in range(n_topics)]

    docs: dict[str, Document] = {}
    doc_topic: dict[str, int] = {}
    doc_terms: dict[str, set[str]] = {}
    width = len(str(n_docs - 1))
    for i in range(n_docs):
        z = int(rng.integers(n_topics))
        n_topic = int(round(doc_len * 0.6))
        toks = list(rng.choice(topic_words[z], n_topic)) + list(rng.choice(background, doc_len - n_topic))
        rng.shuffle(toks)
        title = " ".join(rng.choice(topic_words[z], 3))
        did = f"d{i:0{width}d}"
        docs[did] = Document(title, " ".join(toks))
        doc_topic[did] = z
        doc_terms[did] = set(title.split()) | set(toks)

    doc_ids = list(docs)

    def make_queries(prefix: str, n: int) -> tuple[QuerySet, Qrels]:
        queries, judgments = {}, {}
        for j in range(n):
            target = doc_ids[int(rng.integers(n_docs))]
            z = doc_topic[target]
            pool = sorted(doc_terms[target] & set(topic_words[z]))
            words = list(rng.choice(pool, min(query_len, len(pool)), replace=False))
            qid = f"{prefix}{j:03d}"
            queries[qid] = " ".join(words)
            judgments[(qid, target)] = 2
            for did in doc_ids:
                if did != target and doc_topic[did] == z and len(doc_terms[did] & set(words)) >= 2:
                    judgments[(qid, did)] = 1
        return QuerySet(queries), Qrels(judgments)

    dev_q, dev_r = make_queries("dev", n_dev)
    test_q, test_r = make_queries("test", n_test)
    return SyntheticCollection(Corpus(docs), dev_q, dev_r, test_q, test_r)


def write_experiment(
    out_dir,
    *,
    config: EncoderConfig = EncoderConfig(),
    domain_seed: int = 1,
    strength: float = 0.1,
    collection: SyntheticCollection | None = None,
    grid: GridSearchConfig = GridSearchConfig(),
    seed: int = 0,
) -> Path:
    """Write archives, encoder config, collection files and a manifest.

    Returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    coll = collection or make_collection(seed=seed)
    base = init_encoder(config)
    save_archive(base, out / "retrieval.mrg")
    save_archive(make_domain_variant(base, config, domain_seed, strength), out / "domain.mrg")
    config.save(out / "encoder.json")
    io.write_corpus(coll.corpus, out / "corpus.jsonl")
    io.write_queries(coll.dev_queries, out / "dev_queries.jsonl")
    io.write_qrels(coll.dev_qrels, out / "dev_qrels.txt")
    io.write_queries(coll.test_queries, out / "test_queries.jsonl")
    io.write_qrels(coll.test_qrels, out / "test_qrels.txt")
    manifest = ExperimentManifest(
        retrieval_archive=out / "retrieval.mrg",
        domain_archive=out / "domain.mrg",
        encoder_config=out / "encoder.json",
        corpus=out / "corpus.jsonl",
        dev_queries=out / "dev_queries.jsonl",
        dev_qrels=out / "dev_qrels.txt",
        test_queries=out / "test_queries.jsonl",
        test_qrels=out / "test_qrels.txt",
        grid=grid,
        output_dir=out / "results",
        seed=seed,
    )
    path = out / "manifest.json"
    manifest.save(path)
    return path
