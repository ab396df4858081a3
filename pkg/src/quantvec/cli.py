"""Command-line interface.

Exit codes: 0 success, 1 I/O or parse failure, 2 validation failure,
3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import EmbeddingMatrix, Kind, bytes_per_vector, dtype_parse, render_dtype
from .errors import ParseError, QuantVecError, StoreIOError, ValidationError
from .eval import eval_pairwise_rmse, eval_retrieval_overlap, eval_sts
from .io import (
    DatasetManifest,
    ingest,
    load_codebook,
    load_store,
    save_codebook,
    save_pq_codes,
    save_store,
)
from .pq import PQConfig, pq_encode, pq_fit
from .quantize import quantize_store
from .report import merge_reports, read_report, write_report
from .search import knn_quantized

logger = logging.getLogger("quantvec")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    """Validated arguments of one invocation, echoed into every report."""

    subcommand: str
    seed: int
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, "seed": self.seed, **self.options}


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("QUANTVEC_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"QUANTVEC_SEED must be an integer, got {env!r}") from None


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _load_matrix(path: str, fmt: str | None, dim: int | None) -> tuple[EmbeddingMatrix, DatasetManifest | None]:
    """Read an input matrix from a store file or a raw/jsonl/csv file."""
    if fmt is None:
        with open(path, "rb") as fh:
            is_store = fh.read(4) == b"QVST"
    else:
        is_store = fmt == "store"
    if is_store:
        store = load_store(path)
        if store.dt.kind != Kind.FP32:
            logger.warning("%s holds %s codes; using its dequantized image", path, store.dt)
        return store.dequantize(), None
    if fmt is None or dim is None:
        raise ValidationError(f"{path}: --format and --dim are required for non-store inputs")
    return ingest(path, fmt, dim)


def _add_input(p: argparse.ArgumentParser, flag: str = "--input", required: bool = True) -> None:
    p.add_argument(flag, required=required, help="store file (.qvst) or raw/jsonl/csv embeddings")
    p.add_argument("--format", choices=["raw", "jsonl", "csv", "store"], default=None,
                   help="input encoding (default: detect stores, otherwise required)")
    p.add_argument("--dim", type=int, default=None, help="vector dimension for raw/jsonl/csv inputs")


def _dtype_arg(text: str, group_size: str | None):
    if group_size is not None:
        if ":" in text:
            raise ValidationError("give the group size either in --dtype or via --group-size, not both")
        text = f"{text}:{group_size}"
    return dtype_parse(text)


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- subcommands --------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig) -> int:
    fmt = args.format or "raw"
    if fmt == "store":
        raise ValidationError("ingest reads raw/jsonl/csv inputs")
    m, manifest = ingest(args.input, fmt, args.dim)
    written = save_store(quantize_store(m, dtype_parse("fp32")), args.out)
    manifest_path = args.manifest or f"{args.out}.manifest.json"
    manifest.save(manifest_path)
    print(f"ingested {m.n} x {m.dim} vectors from {args.input} -> {args.out} ({written} bytes)")
    print(f"checksum {manifest.checksum}; manifest {manifest_path}")
    return EXIT_OK


def cmd_quantize(args, cfg: RunConfig) -> int:
    dt = _dtype_arg(args.dtype, args.group_size)
    m, _ = _load_matrix(args.input, args.format, args.dim)
    store = quantize_store(m, dt, args.scale_denominator)
    written = save_store(store, args.out)
    fp32_bytes = 4 * m.dim * m.n
    print(f"wrote {store.n} vectors as {render_dtype(dt)} to {args.out}: {written} bytes")
    print(f"payload {store.payload_nbytes} bytes (codes {store.codes.nbytes}, scales {store.scales.nbytes})")
    if store.n and m.dim:
        print(
            f"compression vs fp32: {fp32_bytes / store.payload_nbytes:.3f}x "
            f"({fp32_bytes / store.codes.nbytes:.3f}x excluding scales); "
            f"{bytes_per_vector(dt, m.dim)} bytes/vector"
        )
    return EXIT_OK


def cmd_search(args, cfg: RunConfig) -> int:
    store = load_store(args.store)
    queries, _ = _load_matrix(args.queries, args.query_format, args.dim)
    results = knn_quantized(
        queries,
        store,
        args.k,
        quantize_queries=args.quantize_queries == "on",
        threads=args.threads,
        scale_denominator=args.scale_denominator,
    )
    _write_json(
        {
            "run_config": cfg.to_dict(),
            "results": [
                {"query_id": r.query_id, "hits": [{"id": i, "score": s} for i, s in r.hits]}
                for r in results
            ],
        },
        args.output,
    )
    return EXIT_OK


def _finish_report(report, args, cfg: RunConfig) -> int:
    report.metadata["run_config"] = cfg.to_dict()
    csv_path, json_path = write_report(report, args.out)
    for r in report.rows:
        print(f"{r.label:>12} {r.group:>6}  {r.value:.6f}" + ("" if r.ratio is None else f"  ratio {r.ratio:.4f}"))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_eval_rmse(args, cfg: RunConfig) -> int:
    m, manifest = _load_matrix(args.input, args.format, args.dim)
    report = eval_pairwise_rmse(
        m, _csv_list(args.dtypes), args.sample_n, cfg.seed, args.scale_denominator, manifest
    )
    return _finish_report(report, args, cfg)


def cmd_eval_retrieval(args, cfg: RunConfig) -> int:
    m, manifest = _load_matrix(args.input, args.format, args.dim)
    sizes = tuple(int(x) for x in _csv_list(args.split))
    if len(sizes) != 2:
        raise ValidationError("--split takes two sizes, e.g. 900000,100000")
    methods = _csv_list(args.dtypes) + [f"pq:{p}" if not p.startswith("pq") else p for p in _csv_list(args.pq or "")]
    report = eval_retrieval_overlap(
        m,
        sizes,
        methods,
        k=args.k,
        n_queries=args.n_queries,
        seed=cfg.seed,
        max_abs_cos=args.max_abs_cos,
        quantize_queries=args.quantize_queries == "on",
        scale_denominator=args.scale_denominator,
        pq_iters=args.pq_iters,
        threads=args.threads,
        manifest=manifest,
        reference_hnsw_accuracy=args.reference_hnsw_accuracy,
    )
    return _finish_report(report, args, cfg)


def _read_gold(path: str) -> np.ndarray:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        try:
            values.append(float(cell))
        except ValueError:
            raise ParseError(f"bad gold score {cell!r}", lineno) from None
    return np.array(values)


def cmd_eval_sts(args, cfg: RunConfig) -> int:
    a, _ = _load_matrix(args.a, args.format, args.dim)
    b, _ = _load_matrix(args.b, args.format, args.dim)
    report = eval_sts(
        a,
        b,
        _read_gold(args.gold),
        _csv_list(args.methods),
        seed=cfg.seed,
        train_fraction=args.train_fraction,
        dataset=args.dataset,
        scale_denominator=args.scale_denominator,
        pq_iters=args.pq_iters,
        threads=args.threads,
    )
    return _finish_report(report, args, cfg)


def cmd_pq_train(args, cfg: RunConfig) -> int:
    m, _ = _load_matrix(args.input, args.format, args.dim)
    pqcfg = PQConfig(args.m, args.k, iters=args.iters, tol=args.tol, seed=cfg.seed)
    cb = pq_fit(m, pqcfg, threads=args.threads)
    written = save_codebook(cb, args.out)
    print(f"trained {pqcfg.label} on {m.n} vectors -> {args.out} ({written} bytes)")
    return EXIT_OK


def cmd_pq_encode(args, cfg: RunConfig) -> int:
    cb = load_codebook(args.codebook)
    m, _ = _load_matrix(args.input, args.format, args.dim)
    codes = pq_encode(m, cb)
    written = save_pq_codes(codes, cb.config.k, args.out)
    print(f"encoded {codes.n} vectors with {cb.config.label} -> {args.out} ({written} bytes)")
    return EXIT_OK


def cmd_report_merge(args, cfg: RunConfig) -> int:
    reports = [read_report(p) for p in args.inputs]
    csv_text, json_text = merge_reports(reports)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_name(out.name + ".csv").write_text(csv_text)
    out.with_name(out.name + ".json").write_text(json_text)
    print(f"merged {len(reports)} reports into {out}.csv and {out}.json")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _quant_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale-denominator", choices=["symmetric", "paper"], default="symmetric",
                   help="scale = max|x| / (2^(b-1)-1) (symmetric) or / (2^b-1) (paper)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantvec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"quantvec {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default: $QUANTVEC_SEED or 0)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read embeddings into an fp32 store plus manifest")
    _add_input(p)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("quantize", help="encode embeddings into a quantized store")
    _add_input(p)
    p.add_argument("--dtype", required=True, help="fp32 | bf16 | int8[:g] | int4:g | int4:whole")
    p.add_argument("--group-size", default=None, help="group size (integer or 'whole')")
    _quant_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("search", help="exact top-k cosine search over a store")
    p.add_argument("--store", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-format", choices=["raw", "jsonl", "csv", "store"], default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--quantize-queries", choices=["on", "off"], default="on")
    _quant_flags(p)
    p.add_argument("--output", default=None, help="JSON output path (default: stdout)")
    p.set_defaults(func=cmd_search)

    ev = sub.add_parser("eval", help="run an evaluation protocol").add_subparsers(dest="experiment", required=True)

    p = ev.add_parser("rmse", help="pairwise cosine RMSE per dtype")
    _add_input(p)
    p.add_argument("--dtypes", default="bf16,int8,int4:32,int4:64,int4:128,int4:256")
    p.add_argument("--sample-n", type=int, default=1000)
    _quant_flags(p)
    p.add_argument("--out", required=True, help="output prefix for .csv/.json")
    p.set_defaults(func=cmd_eval_rmse)

    p = ev.add_parser("retrieval", help="top-k overlap against the fp32 baseline")
    _add_input(p)
    p.add_argument("--split", default="900000,100000", help="query-side,search-side sizes")
    p.add_argument("--dtypes", default="bf16,int8,int4:32,int4:64,int4:128,int4:256")
    p.add_argument("--pq", default=None, help="PQ configs as M:K list, e.g. 32:256,8:16")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n-queries", type=int, default=10)
    p.add_argument("--max-abs-cos", type=float, default=0.1)
    p.add_argument("--quantize-queries", choices=["on", "off"], default="on")
    p.add_argument("--pq-iters", type=int, default=25)
    p.add_argument("--reference-hnsw-accuracy", type=float, default=None)
    _quant_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_retrieval)

    p = ev.add_parser("sts", help="Pearson correlation with gold similarity scores")
    p.add_argument("--a", required=True, help="embeddings of the first sentence of each pair")
    p.add_argument("--b", required=True, help="embeddings of the second sentence of each pair")
    p.add_argument("--format", choices=["raw", "jsonl", "csv", "store"], default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--gold", required=True, help="one gold score per line")
    p.add_argument("--methods", default="fp32,bf16,int8,int4:32,pq:32:256,pq:32:16")
    p.add_argument("--dataset", default="")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--pq-iters", type=int, default=25)
    _quant_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_sts)

    pq = sub.add_parser("pq", help="product-quantization baseline").add_subparsers(dest="pq_command", required=True)
    p = pq.add_parser("train", help="fit a PQ codebook")
    _add_input(p)
    p.add_argument("--m", type=int, required=True, help="number of sub-vectors")
    p.add_argument("--k", type=int, required=True, help="centroids per sub-space")
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pq_train)

    p = pq.add_parser("encode", help="encode vectors with a trained codebook")
    p.add_argument("--codebook", required=True)
    _add_input(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pq_encode)

    rp = sub.add_parser("report", help="report utilities").add_subparsers(dest="report_command", required=True)
    p = rp.add_parser("merge", help="merge report JSON files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output prefix for .csv/.json")
    p.set_defaults(func=cmd_report_merge)
    return parser


_NON_CONFIG = {"func", "verbose"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        seed = _resolve_seed(args.seed)
        name = " ".join(
            v for v in (args.command, getattr(args, "experiment", None),
                        getattr(args, "pq_command", None), getattr(args, "report_command", None)) if v
        )
        options = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and k != "seed"}
        cfg = RunConfig(name, seed, options)
        logger.info("run config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        return args.func(args, cfg)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (StoreIOError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AssertionError, QuantVecError) as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
