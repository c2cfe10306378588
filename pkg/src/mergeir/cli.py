"""Command-line entry point: ``mergeir <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as io
from .encoder import EncoderConfig, TokenizerSpec, init_encoder, make_domain_variant, tokenizer_for
from .evaluation import ndcg_at_k
from .experiment import (
    ExperimentManifest,
    build_dev_data,
    compare_systems,
    run_grid_search,
    run_limited_data,
)
from .merge import LayerPartition, MergeSpec, infer_total_layers, merge_archives
from .retrieval import Bm25Index, Bm25Params, dense_retrieve, mine_hard_negatives
from .tensor_store import load_archive, save_archive


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_merge(args) -> int:
    retrieval = load_archive(args.retrieval)
    domain = load_archive(args.domain)
    total = infer_total_layers(retrieval)
    spec = MergeSpec(args.alpha_lower, args.alpha_upper, LayerPartition(total, args.boundary))
    merged = merge_archives(retrieval, domain, spec, allow_missing_domain=args.allow_missing_domain)
    save_archive(merged, args.out)
    print(f"wrote {args.out} ({len(merged)} tensors, alpha_lower={args.alpha_lower}, alpha_upper={args.alpha_upper})")
    return 0


def cmd_grid_search(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    out_dir = Path(args.out_dir) if args.out_dir else manifest.output_dir
    report = run_grid_search(manifest, out_dir=out_dir, dataset=args.name)
    sys.stdout.write((out_dir / "report.txt").read_text())
    print(f"selected alpha_lower={report.selected[0]:.2f} alpha_upper={report.selected[1]:.2f}; report in {out_dir}")
    return 0


def cmd_limited_data(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    out_dir = Path(args.out_dir) if args.out_dir else manifest.output_dir
    report = run_limited_data(
        manifest, args.n_queries, args.n_runs, seed=args.seed, out_dir=out_dir, dataset=args.name
    )
    sys.stdout.write(report.render(args.name or manifest.corpus.stem))
    print(f"report in {out_dir / 'limited'}")
    return 0


def cmd_evaluate(args) -> int:
    scores = ndcg_at_k(io.load_run(args.run), io.load_qrels(args.qrels), args.k)
    _dump(scores.to_report())
    return 0


def cmd_ttest(args) -> int:
    report = compare_systems(io.load_run(args.run_a), io.load_run(args.run_b), io.load_qrels(args.qrels), args.k)
    _dump(report)
    return 0


def cmd_mine_negatives(args) -> int:
    corpus = io.load_corpus(args.corpus)
    queries = io.load_queries(args.queries)
    qrels = io.load_qrels(args.qrels)
    index = Bm25Index(corpus, Bm25Params(args.k1, args.b), TokenizerSpec(args.tokenizer_mode))
    judged = qrels.by_query()
    depth = args.n + max((sum(g > 0 for g in v.values()) for v in judged.values()), default=0)
    negatives, warnings = mine_hard_negatives(index.retrieve(queries, depth), qrels, args.n)
    for w in warnings:
        logging.warning(w)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for qid in queries.queries:
            out.write(json.dumps({"query_id": qid, "negatives": negatives[qid]}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_build_dev(args) -> int:
    dev = build_dev_data(
        io.load_queries(args.queries),
        io.load_qrels(args.qrels),
        io.load_corpus(args.corpus),
        n_queries=args.n_queries,
        seed=args.seed,
        n_negatives=args.n,
        spec=TokenizerSpec(args.tokenizer_mode),
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_queries(dev.queries, out / "dev_queries.jsonl")
    io.write_qrels(dev.qrels, out / "dev_qrels.txt")
    with open(out / "dev_negatives.jsonl", "w", encoding="utf-8") as fh:
        for qid in dev.queries.queries:
            fh.write(json.dumps({"query_id": qid, "negatives": dev.negatives[qid]}) + "\n")
    print(f"{len(dev.queries)} dev queries written to {out}")
    return 0


def cmd_retrieve(args) -> int:
    archive = load_archive(args.archive)
    config = EncoderConfig.load(args.config)
    run = dense_retrieve(
        archive, config, tokenizer_for(archive, config),
        io.load_corpus(args.corpus), io.load_queries(args.queries), args.k, tag=args.tag,
    )
    io.write_run(run, args.out)
    return 0


def cmd_init_encoder(args) -> int:
    config = EncoderConfig.load(args.config)
    save_archive(init_encoder(config, args.tokenizer_mode), args.out)
    return 0


def cmd_domain_variant(args) -> int:
    config = EncoderConfig.load(args.config)
    base = load_archive(args.base)
    save_archive(make_domain_variant(base, config, args.seed, args.strength), args.out)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_experiment

    path = write_experiment(args.out_dir, strength=args.strength, seed=args.seed)
    print(f"manifest: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mergeir", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="interpolate two checkpoints")
    p.add_argument("--retrieval", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--alpha-lower", type=float, required=True)
    p.add_argument("--alpha-upper", type=float, required=True)
    p.add_argument("--boundary", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-missing-domain", action="store_true",
                   help="copy tensors absent from the domain archive from the retrieval archive")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("grid-search", help="select interpolation coefficients on dev data")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--name", help="dataset label for the report table")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("limited-data", help="repeat selection on small dev samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-queries", type=int, default=50)
    p.add_argument("--n-runs", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--name")
    p.set_defaults(func=cmd_limited_data)

    p = sub.add_parser("evaluate", help="nDCG@k of a TREC run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ttest", help="paired t-test between two runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("mine-negatives", help="BM25 hard negatives per query")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--k1", type=float, default=0.9)
    p.add_argument("--b", type=float, default=0.4)
    p.add_argument("--tokenizer-mode", choices=["word", "char_bigram"], default="word")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mine_negatives)

    p = sub.add_parser("build-dev", help="sample dev queries and mine their negatives")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--n-queries", type=int, default=1000)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tokenizer-mode", choices=["word", "char_bigram"], default="word")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build_dev)

    p = sub.add_parser("retrieve", help="dense retrieval run with a toy encoder")
    p.add_argument("--archive", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--tag", default="dense")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("init-encoder", help="write a freshly initialised toy encoder")
    p.add_argument("--config", required=True)
    p.add_argument("--tokenizer-mode", choices=["word", "char_bigram"], default="word")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_encoder)

    p = sub.add_parser("domain-variant", help="perturb a toy encoder into a domain model")
    p.add_argument("--base", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--strength", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_domain_variant)

    p = sub.add_parser("synth", help="write a synthetic toy experiment with manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strength", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"mergeir {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
