"""Command-line interface.

Every command that writes a report emits JSON with ``schema_version``, the
resolved configuration and the seed.  Floats are written with 17
significant digits so values round-trip exactly.

Exit codes: 0 success, 1 invalid input or configuration, 2 usage error,
3 malformed input file.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import io as dio
from .analysis import (compare_alignment_policies, empirical_error_report, heavy_tailed_rows,
                       pareto_sweep)
from .formats import BfpConfig, decode_tensor, encode_tensor
from .grouping import GroupingConfig, build_dbfp
from .kernels import (AttentionConfig, DividerConfig, attention_forward, matmul_dbfp,
                      softmax_dbfp, softmax_reference)
from .lut import LutConfig, build_dh_lut, build_dh_lut_bank
from .pipeline import PipelineConfig, compute_fom, sweep_sequence_lengths, published_records

SCHEMA_VERSION = 1

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# JSON with fixed-precision floats
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """Serialize with floats at 17 significant digits and sorted-free, stable order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _report(args, result, config: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "command": args.command,
           "seed": getattr(args, "seed", None), "config": config, "result": result}
    _emit(to_json(doc) + "\n", args.out)


def _csv(rows: list, header: list) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt_float(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _load_sections(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(doc) - {"bfp", "grouping", "lut", "divider", "pipeline", "seed"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _bfp(args, sections) -> BfpConfig:
    kw = dict(sections.get("bfp", {}))
    for flag, key in (("mantissa_bits", "mantissa_bits"), ("exponent_bits", "exponent_bits"),
                      ("policy", "pivot_policy")):
        if getattr(args, flag, None) is not None:
            kw[key] = getattr(args, flag)
    return BfpConfig(**kw)


def _grouping(args, sections) -> GroupingConfig:
    kw = dict(sections.get("grouping", {}))
    if getattr(args, "groups", None) is not None:
        kw["k"] = args.groups
    return GroupingConfig.from_dict(kw)


def _lut_config(args, sections, entry: Optional[BfpConfig] = None) -> LutConfig:
    kw = dict(sections.get("lut", {}))
    if "domain" in kw:
        kw["domain"] = tuple(kw["domain"])
    if getattr(args, "lut_bits", None) is not None:
        kw["index_bits"] = args.lut_bits
    if getattr(args, "table_size", None) is not None:
        kw["table_size"] = args.table_size
    if getattr(args, "domain", None) is not None:
        kw["domain"] = tuple(args.domain)
    if entry is not None:
        kw["entry_format"] = entry
    elif isinstance(kw.get("entry_format"), dict):
        kw["entry_format"] = BfpConfig(**kw["entry_format"])
    return LutConfig(**kw)


def _divider(args, sections) -> DividerConfig:
    kw = dict(sections.get("divider", {}))
    if getattr(args, "recip_bits", None) is not None:
        kw["recip_bits"] = args.recip_bits
    return DividerConfig(**kw)


def _pipeline(args, sections) -> PipelineConfig:
    kw = dict(sections.get("pipeline", {}))
    if "stage_depths" in kw:
        kw["stage_depths"] = tuple(kw["stage_depths"])
    if args.bandwidth is not None:
        kw["bandwidth"] = args.bandwidth
    if args.depths is not None:
        kw["stage_depths"] = tuple(args.depths)
    if args.swap_penalty is not None:
        kw["lut_swap_penalty"] = args.swap_penalty
    return PipelineConfig(**kw)


def _bfp_dict(c: BfpConfig) -> dict:
    return asdict(c)


def _lut_dict(c: LutConfig) -> dict:
    d = asdict(c)
    d["domain"] = [float(v) for v in c.domain]
    return d


def _div_dict(c: DividerConfig) -> dict:
    return {"recip_bits": c.recip_bits, "out_fraction_bits": c.out_fraction_bits}


def _grouping_dict(c: GroupingConfig) -> dict:
    d = asdict(c)
    if d["initial_centroids"] is not None:
        d["initial_centroids"] = list(d["initial_centroids"])
    return d


def _read_real_or_dbfp(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"DBF1":
        return dio.read_dbfp(path)
    return dio.read_tensor(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_encode(args, sections) -> int:
    data = dio.read_tensor(args.input)
    cfg = _bfp(args, sections)
    if args.adaptive:
        grouping = _grouping(args, sections)
        t = build_dbfp(data, cfg, grouping, block_size=args.block_size)
    else:
        t = encode_tensor(data, cfg, block_size=args.block_size)
    dio.write_dbfp(args.output, t)
    return EXIT_OK


def cmd_decode(args, sections) -> int:
    t = dio.read_dbfp(args.input)
    dio.write_tensor(args.output, decode_tensor(t))
    return EXIT_OK


def cmd_build_lut(args, sections) -> int:
    cfg = _lut_config(args, sections)
    lut = build_dh_lut(cfg)
    if args.output:
        dio.write_lut(args.output, lut)
    result = {"breakpoints": lut.partition.opp, "entries_per_interval": lut.counts,
              "interval_exponents": [b.shared_exponent for b in lut.intervals],
              "memory_bits": lut.memory_bits, "max_error": lut.max_error}
    if args.report or not args.output:
        args.out = args.report
        _report(args, result, {"lut": _lut_dict(cfg)})
    return EXIT_OK


def cmd_softmax(args, sections) -> int:
    x = np.atleast_2d(dio.read_tensor(args.input))
    x = x.reshape(-1, x.shape[-1])
    bfp = _bfp(args, sections)
    div = _divider(args, sections)
    grouping = _grouping(args, sections)
    if args.lut:
        lut = dio.read_lut(args.lut)
        lut_cfg = lut.config
    else:
        lut_cfg = _lut_config(args, sections)
        lut = build_dh_lut_bank(lut_cfg)
    rows = []
    for row in x:
        o = softmax_dbfp(row, lut, bfp, grouping, div)
        rows.append({"probabilities": o.probabilities,
                     "integer_numerators": o.integer_numerators,
                     "integer_denominator": o.integer_denominator,
                     "shared_exponent": o.shared_exponent,
                     "max_abs_error": float(np.max(np.abs(o.probabilities
                                                          - softmax_reference(row)))),
                     "swaps": o.swaps})
    result = {"rows": rows}
    if len(rows) == 1:
        result["probabilities"] = rows[0]["probabilities"]
    _report(args, result, {"bfp": _bfp_dict(bfp), "grouping": _grouping_dict(grouping),
                           "lut": _lut_dict(lut_cfg), "divider": _div_dict(div),
                           "lut_source": args.lut or "bank"})
    return EXIT_OK


def cmd_matmul(args, sections) -> int:
    cfg = _bfp(args, sections)
    a = _read_real_or_dbfp(args.a)
    b = _read_real_or_dbfp(args.b)
    if not hasattr(a, "groups"):
        a = encode_tensor(np.atleast_2d(a), cfg, block_size=args.block_size)
    if not hasattr(b, "groups"):
        b = encode_tensor(np.atleast_2d(b).T, cfg, block_size=args.block_size)
    out = matmul_dbfp(a, b, cfg, args.block_size)
    if args.output.endswith(".dbt"):
        dio.write_tensor(args.output, decode_tensor(out))
    else:
        dio.write_dbfp(args.output, out)
    return EXIT_OK


def cmd_attention(args, sections) -> int:
    q, k, v = (dio.read_tensor(p) for p in (args.q, args.k, args.v))
    bfp = _bfp(args, sections)
    grouping = _grouping(args, sections)
    lut_cfg = _lut_config(args, sections)
    div = _divider(args, sections)
    cfg = AttentionConfig(bfp, bfp, bfp, bfp, grouping, build_dh_lut_bank(lut_cfg), div,
                          args.block_size)
    out = attention_forward(q, k, v, cfg)
    dio.write_tensor(args.output, out)
    if args.report:
        args.out = args.report
        _report(args, {"shape": list(out.shape), "output": out},
                {"bfp": _bfp_dict(bfp), "grouping": _grouping_dict(grouping),
                 "lut": _lut_dict(lut_cfg), "divider": _div_dict(div),
                 "block_size": args.block_size})
    return EXIT_OK


def cmd_sweep_pareto(args, sections) -> int:
    lut_cfg = _lut_config(args, sections)
    pts = pareto_sweep(range(args.k_min, args.k_max + 1), lut_cfg.domain,
                       table_size=lut_cfg.table_size, entry_format=lut_cfg.entry_format,
                       n_rows=args.rows, seed=args.seed)
    if args.format == "csv":
        _emit(_csv([[p.index_bits, p.mae, p.memory_bits, p.softmax_max_err] for p in pts],
                   ["index_bits", "mae", "memory_bits", "softmax_max_err"]), args.out)
        return EXIT_OK
    _report(args, {"points": [asdict(p) for p in pts]},
            {"lut": _lut_dict(lut_cfg), "k_min": args.k_min, "k_max": args.k_max,
             "rows": args.rows, "row_distribution": "normal(0, std=2), length 128"})
    return EXIT_OK


def cmd_compare_alignment(args, sections) -> int:
    bfp = _bfp(args, sections)
    if args.input:
        rows = np.atleast_2d(dio.read_tensor(args.input))
        source = args.input
    else:
        rows = heavy_tailed_rows(args.rows, args.length, args.sigma, args.seed)
        source = (f"magnitudes 2**normal(0, sigma={args.sigma}), random signs, "
                  f"{args.rows} rows of length {args.length}")
    res = compare_alignment_policies(rows, config=bfp)
    if args.format == "csv":
        _emit(_csv([[i, float(a), float(b), float(r)] for i, (a, b, r) in
                    enumerate(zip(res.err_max, res.err_median, res.ratio))],
                   ["row", "err_max", "err_median", "ratio"]), args.out)
        return EXIT_OK
    _report(args, {"median_not_worse_fraction": res.median_not_worse,
                   "worst_ratio": res.worst_ratio,
                   "median_ratio": float(np.median(res.ratio)),
                   "err_max": res.err_max, "err_median": res.err_median},
            {"bfp": _bfp_dict(bfp), "rows": source})
    return EXIT_OK


def cmd_simulate(args, sections) -> int:
    cfg = _pipeline(args, sections)
    reps = sweep_sequence_lengths(args.seq_len, cfg)
    result = [r.to_json() for r in reps]
    _report(args, result[0] if len(result) == 1 else result, {"pipeline": cfg.to_dict()})
    return EXIT_OK


def cmd_fom(args, sections) -> int:
    if args.published:
        recs = published_records()
        if args.out:
            _report(args, [asdict(r) for r in recs], {})
        else:
            for r in recs:
                print(f"{r.name}\t{r.fom:.3f}")
        return EXIT_OK
    missing = [f for f in ("fmax", "n", "w", "lut", "ff") if getattr(args, f) is None]
    if missing:
        raise ValueError(f"missing --{', --'.join(missing)} (or use --published)")
    rec = compute_fom(args.fmax, args.n, args.w, args.lut, args.ff)
    if args.out:
        _report(args, asdict(rec), {})
    else:
        print(f"{rec.fom:.3f}")
    return EXIT_OK


def cmd_error_report(args, sections) -> int:
    bfp = _bfp(args, sections)
    if args.input:
        data = dio.read_tensor(args.input)
        source = args.input
    else:
        rng = np.random.default_rng(args.seed)
        data = rng.uniform(1.0, 2.0, size=(args.samples // 128 or 1, 128))
        source = f"uniform [1, 2), {data.size} samples"
    rep = empirical_error_report(data, bfp, block_size=args.block_size)
    _report(args, rep, {"bfp": _bfp_dict(bfp), "block_size": args.block_size,
                        "data": source})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_bfp(p) -> None:
    p.add_argument("--mantissa-bits", type=int)
    p.add_argument("--exponent-bits", type=int)
    p.add_argument("--policy", choices=("max", "median", "min"))


def _add_lut(p) -> None:
    p.add_argument("--lut-bits", type=int, help="index bits k (2**k entries)")
    p.add_argument("--table-size", type=int, help="number of breakpoints m")
    p.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbattn", description="DBFP format, kernels and models")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with bfp/grouping/lut/divider/pipeline sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="report path (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="real tensor (DBT1) to DBFP (DBF1)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--adaptive", action="store_true", help="group exponents by clustering")
    p.add_argument("--groups", type=int, help="clusters per block with --adaptive")
    _add_bfp(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="DBFP (DBF1) to real tensor (DBT1)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("build-lut", parents=[common], help="build a table and write DLT1")
    p.add_argument("--output", "-o")
    p.add_argument("--report")
    _add_lut(p)
    p.set_defaults(func=cmd_build_lut)

    p = sub.add_parser("softmax", parents=[common], help="DBFP softmax of each row")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--lut", help="DLT1 table used for every group (default: per-exponent bank)")
    p.add_argument("--groups", type=int)
    p.add_argument("--recip-bits", type=int)
    _add_lut(p)
    _add_bfp(p)
    p.set_defaults(func=cmd_softmax)

    p = sub.add_parser("matmul", parents=[common], help="A @ B in DBFP")
    p.add_argument("--a", required=True, help="DBT1 matrix or DBF1 tensor")
    p.add_argument("--b", required=True, help="DBT1 matrix, or DBF1 tensor holding B transposed")
    p.add_argument("--output", "-o", required=True, help=".dbt writes reals, else DBF1")
    p.add_argument("--block-size", type=int, default=128)
    _add_bfp(p)
    p.set_defaults(func=cmd_matmul)

    p = sub.add_parser("attention", parents=[common], help="single-head attention in DBFP")
    for name in ("q", "k", "v"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--report")
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--groups", type=int)
    p.add_argument("--recip-bits", type=int)
    _add_lut(p)
    _add_bfp(p)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("sweep-pareto", parents=[common], help="table error and memory versus k")
    p.add_argument("--k-min", type=int, default=4)
    p.add_argument("--k-max", type=int, default=9)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_lut(p)
    p.set_defaults(func=cmd_sweep_pareto)

    p = sub.add_parser("compare-alignment", parents=[common], help="max versus median pivot")
    p.add_argument("--in", dest="input", help="DBT1 rows (default: heavy-tailed generator)")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_bfp(p)
    p.set_defaults(func=cmd_compare_alignment)

    p = sub.add_parser("simulate", parents=[common], help="softmax pipeline cycle model")
    p.add_argument("--seq-len", type=int, nargs="+", required=True)
    p.add_argument("--bandwidth", type=int)
    p.add_argument("--depths", type=int, nargs=4, metavar=("MAX", "SE", "EXP", "DIV"))
    p.add_argument("--swap-penalty", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fom", parents=[common], help="figure of merit Fmax*N*W/(LUT+FF)")
    p.add_argument("--fmax", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--lut", type=int)
    p.add_argument("--ff", type=int)
    p.add_argument("--published", action="store_true", help="published designs")
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("error-report", parents=[common], help="measured versus predicted BFP error")
    p.add_argument("--in", dest="input")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--block-size", type=int, default=128)
    _add_bfp(p)
    p.set_defaults(func=cmd_error_report)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        sections = _load_sections(args.config)
        if "seed" in sections and "--seed" not in (argv if argv is not None else sys.argv):
            args.seed = int(sections["seed"])
        return args.func(args, sections)
    except dio.FormatError as exc:
        print(f"error: malformed file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
