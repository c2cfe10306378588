"""Corpus, queries, qrels and runs, plus their on-disk formats.

* corpus: JSON lines ``{"_id", "title"?, "text"}``
* queries: JSON lines ``{"_id", "text"}``
* qrels: TREC lines ``qid iter docid grade`` (iter ignored)
* runs: TREC lines ``qid Q0 docid rank score tag``
"""

from __future__ import annotations

import json
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    title: str
    text: str

    @property
    def full_text(self) -> str:
        return f"{self.title} {self.text}"


@dataclass
class Corpus:
    docs: dict[str, Document]

    def __post_init__(self) -> None:
        if not self.docs:
            raise FormatError("corpus must contain at least one document")

    def __len__(self) -> int:
        return len(self.docs)

    def ids(self) -> list[str]:
        return list(self.docs)


@dataclass
class QuerySet:
    queries: dict[str, str]

    def __len__(self) -> int:
        return len(self.queries)

    def subset(self, ids: Iterable[str]) -> QuerySet:
        return QuerySet({q: self.queries[q] for q in ids})


@dataclass
class Qrels:
    judgments: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, grade in self.judgments.items():
            if grade < 0:
                raise FormatError(f"negative grade {grade} for {key}")

    def by_query(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = defaultdict(dict)
        for (qid, did), grade in self.judgments.items():
            out[qid][did] = grade
        return dict(out)

    def query_ids(self) -> set[str]:
        return {q for q, _ in self.judgments}

    def restrict(self, query_ids: Iterable[str]) -> Qrels:
        keep = set(query_ids)
        return Qrels({k: g for k, g in self.judgments.items() if k[0] in keep})

    def __len__(self) -> int:
        return len(self.judgments)


def rank_key(item: tuple[str, float]):
    doc_id, score = item
    return (-score, doc_id)


@dataclass
class Run:
    """Per-query rankings, each sorted by score desc then doc_id asc."""

    rankings: dict[str, list[tuple[str, float]]]
    tag: str = "run"

    @classmethod
    def from_scores(cls, scores: Mapping[str, Mapping[str, float]], tag: str = "run", k: int | None = None) -> Run:
        rankings = {}
        for qid, doc_scores in scores.items():
            ranked = sorted(doc_scores.items(), key=rank_key)
            rankings[qid] = ranked if k is None else ranked[:k]
        return cls(rankings, tag)

    def check(self) -> None:
        """Raise FormatError unless every ranking obeys the ordering law."""
        for qid, ranked in self.rankings.items():
            ids = [d for d, _ in ranked]
            if len(set(ids)) != len(ids):
                raise FormatError(f"query {qid!r}: duplicate doc ids in ranking")
            if ranked != sorted(ranked, key=rank_key):
                raise FormatError(f"query {qid!r}: ranking violates (score desc, doc_id asc)")


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _get_str(obj: dict, key: str, path, lineno: int, default: str | None = None) -> str:
    value = obj.get(key, default)
    if not isinstance(value, str):
        raise FormatError(f"{path}:{lineno}: field {key!r} missing or not a string")
    return value


def load_corpus(path) -> Corpus:
    docs: dict[str, Document] = {}
    for lineno, obj in _read_jsonl(path):
        doc_id = _get_str(obj, "_id", path, lineno)
        if doc_id in docs:
            raise FormatError(f"{path}:{lineno}: duplicate doc id {doc_id!r}")
        docs[doc_id] = Document(
            title=_get_str(obj, "title", path, lineno, default=""),
            text=_get_str(obj, "text", path, lineno),
        )
    return Corpus(docs)


def load_queries(path) -> QuerySet:
    queries: dict[str, str] = {}
    for lineno, obj in _read_jsonl(path):
        qid = _get_str(obj, "_id", path, lineno)
        if qid in queries:
            raise FormatError(f"{path}:{lineno}: duplicate query id {qid!r}")
        queries[qid] = _get_str(obj, "text", path, lineno)
    return QuerySet(queries)


def load_qrels(path) -> Qrels:
    judgments: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 'qid iter docid grade', got {line.strip()!r}")
            qid, _, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: grade {grade_s!r} is not an integer") from None
            if grade < 0:
                raise FormatError(f"{path}:{lineno}: negative grade {grade}")
            if (qid, did) in judgments:
                raise FormatError(f"{path}:{lineno}: duplicate judgment for ({qid}, {did})")
            judgments[(qid, did)] = grade
    return Qrels(judgments)


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, doc in corpus.docs.items():
            fh.write(json.dumps({"_id": doc_id, "title": doc.title, "text": doc.text}, ensure_ascii=False) + "\n")


def write_queries(queries: QuerySet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, text in queries.queries.items():
            fh.write(json.dumps({"_id": qid, "text": text}, ensure_ascii=False) + "\n")


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (qid, did), grade in sorted(qrels.judgments.items()):
            fh.write(f"{qid} 0 {did} {grade}\n")


def format_run(run: Run) -> str:
    lines = []
    for qid in sorted(run.rankings):
        for rank, (did, score) in enumerate(run.rankings[qid], 1):
            lines.append(f"{qid} Q0 {did} {rank} {score:.6f} {run.tag}")
    return "".join(line + "\n" for line in lines)


def write_run(run: Run, path) -> None:
    Path(path).write_text(format_run(run), encoding="utf-8")


def load_run(path) -> Run:
    """Parse a TREC run. Rankings are re-sorted by the ordering law."""
    scores: dict[str, dict[str, float]] = defaultdict(dict)
    tag = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, did, rank_s, score_s, line_tag = parts
            try:
                int(rank_s)
                score = float(score_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
            if did in scores[qid]:
                raise FormatError(f"{path}:{lineno}: duplicate doc {did!r} for query {qid!r}")
            scores[qid][did] = score
            tag = tag or line_tag
    return Run.from_scores(scores, tag=tag or "run")
