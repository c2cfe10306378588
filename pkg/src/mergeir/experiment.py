"""Grid search over interpolation coefficients and the limited-data study."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as io
from .data import Corpus, Qrels, QuerySet, Run
from .encoder import EncoderConfig, TokenizerSpec, ToyEncoder, tokenizer_for
from .evaluation import AggregateStats, PerQueryScores, aggregate, mean_ndcg, ndcg_at_k, paired_t_test
from .merge import LayerPartition, MergeSpec, merge_archives
from .reporting import LimitedRow, MergedRow, render_limited_table, render_merged_table, render_selection_line
from .retrieval import Bm25Index, Bm25Params, DenseIndex, mine_hard_negatives
from .tensor_store import TensorArchive, load_archive, save_archive

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)

Pair = tuple[float, float]


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class GridSearchConfig:
    alpha_values: tuple[float, ...] = DEFAULT_ALPHAS
    excluded: frozenset[Pair] = frozenset({(0.0, 0.0), (1.0, 1.0)})
    k: int = 10

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alpha_values)
        excluded = frozenset((float(a), float(b)) for a, b in self.excluded)
        object.__setattr__(self, "alpha_values", alphas)
        object.__setattr__(self, "excluded", excluded)
        if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ExperimentError("alpha_values must be non-empty and lie in [0, 1]")
        grid = set(itertools.product(alphas, alphas))
        if not excluded <= grid:
            raise ExperimentError(f"excluded pairs not on the grid: {sorted(excluded - grid)}")
        if len(grid) - len(excluded) < 1:
            raise ExperimentError("every grid configuration is excluded")
        if self.k <= 0:
            raise ExperimentError("k must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> GridSearchConfig:
        return cls(
            alpha_values=tuple(d.get("alpha_values", DEFAULT_ALPHAS)),
            excluded=frozenset(tuple(p) for p in d.get("excluded", [(0.0, 0.0), (1.0, 1.0)])),
            k=int(d.get("k", 10)),
        )

    def to_dict(self) -> dict:
        return {
            "alpha_values": list(self.alpha_values),
            "excluded": [list(p) for p in sorted(self.excluded)],
            "k": self.k,
        }


def enumerate_grid(config: GridSearchConfig = GridSearchConfig()) -> list[Pair]:
    """Row-major (alpha_lower outer) product of ascending alphas, minus exclusions."""
    alphas = sorted(set(config.alpha_values))
    return [p for p in itertools.product(alphas, alphas) if p not in config.excluded]


_PATH_FIELDS = (
    "retrieval_archive",
    "domain_archive",
    "encoder_config",
    "corpus",
    "dev_queries",
    "dev_qrels",
    "test_queries",
    "test_qrels",
)


@dataclass(frozen=True)
class ExperimentManifest:
    retrieval_archive: Path
    domain_archive: Path
    encoder_config: Path
    corpus: Path
    dev_queries: Path
    dev_qrels: Path
    test_queries: Path
    test_qrels: Path
    grid: GridSearchConfig = GridSearchConfig()
    output_dir: Path = Path("out")
    seed: int = 0

    @classmethod
    def load(cls, path) -> ExperimentManifest:
        """Read a manifest; relative paths resolve against the manifest's directory."""
        path = Path(path)
        raw = json.loads(path.read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ExperimentError(f"unknown manifest fields: {sorted(unknown)}")
        missing = [f for f in _PATH_FIELDS if f not in raw]
        if missing:
            raise ExperimentError(f"manifest lacks fields: {missing}")
        base = path.parent
        kwargs = {f: base / raw[f] for f in _PATH_FIELDS}
        kwargs["output_dir"] = base / raw.get("output_dir", "out")
        kwargs["grid"] = GridSearchConfig.from_dict(raw.get("grid", {}))
        kwargs["seed"] = int(raw.get("seed", 0))
        return cls(**kwargs)

    def to_dict(self, relative_to=None) -> dict:
        def rel(p: Path) -> str:
            if relative_to is None:
                return str(p)
            try:
                return str(Path(p).relative_to(relative_to))
            except ValueError:
                return str(p)

        out = {f: rel(getattr(self, f)) for f in _PATH_FIELDS}
        out["output_dir"] = rel(self.output_dir)
        out["grid"] = self.grid.to_dict()
        out["seed"] = self.seed
        return out

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(relative_to=path.parent), indent=2) + "\n")

    def validate(self) -> None:
        missing = [str(getattr(self, f)) for f in _PATH_FIELDS if not Path(getattr(self, f)).exists()]
        if missing:
            raise ExperimentError(f"manifest paths do not exist: {missing}")


class ExperimentContext:
    """Inputs of one experiment, loaded once, with per-configuration caches.

    Document and query embeddings of each merged model are cached so repeated
    searches over dev samples do not re-encode anything.
    """

    def __init__(self, manifest: ExperimentManifest):
        manifest.validate()
        self.manifest = manifest
        self.retrieval = load_archive(manifest.retrieval_archive)
        self.domain = load_archive(manifest.domain_archive)
        self.config = EncoderConfig.load(manifest.encoder_config)
        self.tokenizer = tokenizer_for(self.retrieval, self.config)
        self.corpus = io.load_corpus(manifest.corpus)
        self.dev_queries = io.load_queries(manifest.dev_queries)
        self.dev_qrels = io.load_qrels(manifest.dev_qrels)
        self.test_queries = io.load_queries(manifest.test_queries)
        self.test_qrels = io.load_qrels(manifest.test_qrels)
        self.partition = LayerPartition.halves(self.config.n_layers)
        self._indexes: dict[object, DenseIndex] = {}
        self._query_vecs: dict[object, dict[str, np.ndarray]] = {}

    def merge_spec(self, pair: Pair) -> MergeSpec:
        return MergeSpec(pair[0], pair[1], self.partition)

    def merged_archive(self, pair: Pair) -> TensorArchive:
        return merge_archives(self.retrieval, self.domain, self.merge_spec(pair))

    def index(self, key) -> DenseIndex:
        """Dense index for ``"source"`` or ``("merged", pair)``, built on first use."""
        if key not in self._indexes:
            archive = self.retrieval if key == "source" else self.merged_archive(key[1])
            self._indexes[key] = DenseIndex(ToyEncoder(archive, self.config, self.tokenizer), self.corpus)
            self._query_vecs[key] = {}
        return self._indexes[key]

    def search(self, key, queries: QuerySet, k: int, tag: str) -> Run:
        index = self.index(key)
        cache = self._query_vecs[key]
        prefix = self.config.query_prefix
        vecs = {}
        for qid, text in queries.queries.items():
            if text not in cache:
                cache[text] = index.encoder.encode(prefix + text)
            vecs[qid] = cache[text]
        return index.search(vecs, k, tag)

    def evaluate(self, key, queries: QuerySet, qrels: Qrels, k: int, tag: str) -> tuple[Run, PerQueryScores]:
        run = self.search(key, queries, k, tag)
        return run, ndcg_at_k(run, qrels, k)


def pair_tag(pair: Pair) -> str:
    return f"merged-{pair[0]:.2f}-{pair[1]:.2f}"


def select_config(per_config: list[dict]) -> dict:
    """Argmax of dev nDCG; ties go to the larger alpha_upper, then alpha_lower."""
    if not per_config:
        raise ExperimentError("no configurations were scored")
    return max(per_config, key=lambda r: (r["dev_ndcg"], r["alpha_upper"], r["alpha_lower"]))


@dataclass
class GridSearchReport:
    per_config: list[dict]
    selected: Pair
    dev_ndcg_selected: float
    test_ndcg_selected: float | None = None
    source_test_ndcg: float | None = None
    significance: dict | None = None
    checkpoint: str | None = None
    n_dev_queries: int = 0
    excluded_dev_queries: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected"] = {"alpha_lower": self.selected[0], "alpha_upper": self.selected[1]}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self, dataset: str) -> str:
        if self.test_ndcg_selected is None or self.source_test_ndcg is None:
            return f"{dataset}: selected α_lower {self.selected[0]:.2f}, α_upper {self.selected[1]:.2f}\n"
        star = bool(self.significance and self.significance["significant_at_5pct"])
        row = MergedRow(dataset, self.source_test_ndcg, self.test_ndcg_selected, *self.selected, star)
        line = render_selection_line(dataset, row.source, row.merged, *self.selected, star)
        return render_merged_table([row]) + "\n" + line + "\n"


def score_grid(
    ctx: ExperimentContext, queries: QuerySet, qrels: Qrels, grid: GridSearchConfig
) -> tuple[list[dict], PerQueryScores | None]:
    rows = []
    last = None
    for pair in enumerate_grid(grid):
        _, scores = ctx.evaluate(("merged", pair), queries, qrels, grid.k, pair_tag(pair))
        if not scores.scores:
            raise ExperimentError("dev set has no query with a positive judgment")
        dev = mean_ndcg(scores)
        log.info("alpha_lower=%.2f alpha_upper=%.2f dev ndcg@%d=%.4f", *pair, grid.k, dev)
        rows.append({"alpha_lower": pair[0], "alpha_upper": pair[1], "dev_ndcg": dev})
        last = scores
    return rows, last


def run_grid_search(
    manifest: ExperimentManifest,
    *,
    out_dir=None,
    context: ExperimentContext | None = None,
    dev_queries: QuerySet | None = None,
    evaluate_test: bool = True,
    dataset: str | None = None,
) -> GridSearchReport:
    """Score every grid configuration on the dev set and keep the best.

    The selected merged checkpoint, the test runs and ``report.json`` /
    ``report.txt`` are written to ``out_dir`` (default: manifest output_dir).
    """
    ctx = context or ExperimentContext(manifest)
    out = Path(out_dir if out_dir is not None else manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    queries = dev_queries if dev_queries is not None else ctx.dev_queries
    qrels = ctx.dev_qrels.restrict(queries.queries)
    grid = manifest.grid

    rows, last_scores = score_grid(ctx, queries, qrels, grid)
    best = select_config(rows)
    selected = (best["alpha_lower"], best["alpha_upper"])
    report = GridSearchReport(
        per_config=rows,
        selected=selected,
        dev_ndcg_selected=best["dev_ndcg"],
        n_dev_queries=len(last_scores.scores),
        excluded_dev_queries=sorted(set(last_scores.excluded) & set(queries.queries)),
    )

    merged = ctx.merged_archive(selected)
    report.checkpoint = "selected.mrg"
    save_archive(merged, out / report.checkpoint)

    if evaluate_test:
        k = grid.k
        merged_run, merged_scores = ctx.evaluate(
            ("merged", selected), ctx.test_queries, ctx.test_qrels, k, pair_tag(selected)
        )
        source_run, source_scores = ctx.evaluate("source", ctx.test_queries, ctx.test_qrels, k, "source")
        io.write_run(merged_run, out / "test_selected.run")
        io.write_run(source_run, out / "test_source.run")
        report.test_ndcg_selected = mean_ndcg(merged_scores)
        report.source_test_ndcg = mean_ndcg(source_scores)
        report.significance = paired_t_test(merged_scores, source_scores).to_dict()

    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.render(dataset or manifest.corpus.stem))
    return report


def sample_dev_queries(full: QuerySet, qrels: Qrels, n: int, seed: int) -> tuple[QuerySet, Qrels]:
    """Seeded uniform sample of ``n`` queries without replacement.

    Asking for more queries than exist returns all of them. Sampled queries
    keep their original order; qrels are restricted to them.
    """
    if n <= 0:
        raise ExperimentError("n must be positive")
    ids = list(full.queries)
    if n < len(ids):
        rng = np.random.Generator(np.random.PCG64(seed))
        picked = set(rng.choice(len(ids), size=n, replace=False).tolist())
        ids = [q for i, q in enumerate(ids) if i in picked]
    sample = full.subset(ids)
    return sample, qrels.restrict(ids)


@dataclass
class LimitedDataReport:
    runs: list[dict]
    stats: AggregateStats
    n_queries: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "stats": asdict(self.stats),
            "n_queries": self.n_queries,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self, dataset: str) -> str:
        return render_limited_table([LimitedRow(dataset, self.stats)])


def run_limited_data(
    manifest: ExperimentManifest,
    n_queries: int = 50,
    n_runs: int = 10,
    *,
    seed: int | None = None,
    out_dir=None,
    context: ExperimentContext | None = None,
    dataset: str | None = None,
) -> LimitedDataReport:
    """Repeat coefficient selection on ``n_runs`` independent dev samples.

    Run ``r`` (1-based) samples with seed ``seed + r`` and evaluates its
    selected configuration on the full test set.
    """
    if n_runs <= 0:
        raise ExperimentError("n_runs must be positive")
    ctx = context or ExperimentContext(manifest)
    seed = manifest.seed if seed is None else seed
    out = Path(out_dir if out_dir is not None else manifest.output_dir) / "limited"
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for r in range(1, n_runs + 1):
        sample_seed = seed + r
        sample, _ = sample_dev_queries(ctx.dev_queries, ctx.dev_qrels, n_queries, sample_seed)
        report = run_grid_search(
            manifest, out_dir=out / f"run_{r:02d}", context=ctx, dev_queries=sample, dataset=dataset
        )
        runs.append(
            {
                "run": r,
                "sample_seed": sample_seed,
                "alpha_lower": report.selected[0],
                "alpha_upper": report.selected[1],
                "dev_ndcg": report.dev_ndcg_selected,
                "test_ndcg": report.test_ndcg_selected,
            }
        )
        log.info("limited run %d: selected %s test ndcg=%.4f", r, report.selected, report.test_ndcg_selected)
    result = LimitedDataReport(runs, aggregate([r["test_ndcg"] for r in runs]), n_queries, seed)
    (out / "report.json").write_text(result.to_json())
    (out / "report.txt").write_text(result.render(dataset or manifest.corpus.stem))
    return result


def compare_systems(run_a: Run, run_b: Run, qrels: Qrels, k: int = 10) -> dict:
    """Per-query nDCG@k of two runs and their paired t-test (a minus b)."""
    a = ndcg_at_k(run_a, qrels, k)
    b = ndcg_at_k(run_b, qrels, k)
    if not a.scores:
        raise ExperimentError("no query with a positive judgment to compare on")
    test = paired_t_test(a, b)
    return {
        "metric": a.metric,
        "mean_a": mean_ndcg(a),
        "mean_b": mean_ndcg(b),
        "ttest": test.to_dict(),
        "star": test.significant_at_5pct,
    }


@dataclass
class DevData:
    queries: QuerySet
    qrels: Qrels
    negatives: dict[str, list[str]]
    warnings: list[str]


def build_dev_data(
    train_queries: QuerySet,
    train_qrels: Qrels,
    corpus: Corpus,
    n_queries: int = 1000,
    seed: int = 0,
    n_negatives: int = 30,
    params: Bm25Params = Bm25Params(),
    spec=None,
) -> DevData:
    """Sample dev queries and mine BM25 hard negatives for each of them."""
    queries, qrels = sample_dev_queries(train_queries, train_qrels, n_queries, seed)
    index = Bm25Index(corpus, params, spec or TokenizerSpec())
    judged = qrels.by_query()
    depth = n_negatives + max((sum(g > 0 for g in v.values()) for v in judged.values()), default=0)
    run = index.retrieve(queries, depth)
    negatives, warnings = mine_hard_negatives(run, qrels, n_negatives)
    return DevData(queries, qrels, negatives, warnings)
