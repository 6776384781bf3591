"""Command-line front end: encode, decode, eval, sweep.

Exit codes: 0 ok, 1 codec error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .bench import BD_COLUMNS, CODER_CHOICES, ExperimentConfig, bd_table, rows_to_csv, sweep, write_results
from .codec import PointCloudCodec
from .container import CorruptStreamError
from .metrics import evaluate
from .ply import PlyError, read_ply, write_ply

EXIT_OK, EXIT_CODEC, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


def _read_cloud(path):
    try:
        return read_ply(Path(path).read_bytes())
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except PlyError as exc:
        raise _UsageError(f"{path}: {exc}") from exc


def _write(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise _UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _add_coding_flags(p):
    p.add_argument("--geometry", choices=("octree", "trisoup", "vpcc"), default="octree")
    p.add_argument("--attribute", choices=("raht", "predict", "lifting"), default="raht")
    p.add_argument("--PQS", "--position-quantization-scale", dest="pqs", type=float, default=1.0)
    p.add_argument("--DBODL", "--trisoup-depth", dest="dbodl", type=int, default=2,
                   help="trisoup block depth d - l")
    p.add_argument("--LODC", "--lod-count", dest="lodc", type=int, default=8)
    p.add_argument("--RQS", "--raht-qstep", dest="rqs", type=float, default=None)
    p.add_argument("--PTQS", "--predict-qstep", dest="ptqs", type=float, default=None)
    p.add_argument("--LTQS", "--lifting-qstep", dest="ltqs", type=float, default=None)
    p.add_argument("--qstep", type=float, default=None,
                   help="color qstep for any coder (texture qstep under vpcc); 0 is lossless")
    p.add_argument("--k", type=int, default=3, help="predictor neighbors")
    p.add_argument("--no-dcm", dest="dcm", action="store_false")
    p.add_argument("--slices", choices=("longest-edge", "octree"), default=None)
    p.add_argument("--slice-param", type=float, default=None)


def _coder_qstep(args) -> float:
    specific = {"raht": args.rqs, "predict": args.ptqs, "lifting": args.ltqs}[args.attribute]
    for v in (specific, args.qstep):
        if v is not None:
            return v
    return 0.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointcodec", description="Point cloud compression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="PLY to compressed container")
    enc.add_argument("input")
    enc.add_argument("output")
    _add_coding_flags(enc)

    dec = sub.add_parser("decode", help="compressed container to PLY")
    dec.add_argument("input")
    dec.add_argument("output")
    dec.add_argument("--ascii", action="store_true")

    ev = sub.add_parser("eval", help="quality of a decoded PLY against the original, as CSV")
    ev.add_argument("original")
    ev.add_argument("decoded")
    ev.add_argument("--dataset", default=None)
    ev.add_argument("--case", type=int, default=0)
    ev.add_argument("--coder", default="")
    ev.add_argument("--bitstream", default=None, help="container file for the bpp columns")

    sw = sub.add_parser("sweep", help="rate-distortion sweep with BD summary")
    sw.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields")
    sw.add_argument("--case", type=int, default=None)
    sw.add_argument("--coders", nargs="+", choices=CODER_CHOICES, default=None)
    sw.add_argument("--geometry", choices=("octree", "trisoup"), default=None)
    sw.add_argument("--PQS", "--position-quantization-scale", dest="pqs", type=float, nargs="+")
    sw.add_argument("--DBODL", "--trisoup-depth", dest="dbodl", type=int, nargs="+")
    sw.add_argument("--qsteps", type=float, nargs="+")
    sw.add_argument("--benchmark", default=None)
    sw.add_argument("--jobs", type=int, default=None)
    sw.add_argument("--out", dest="output_dir", default=None)
    sw.add_argument("inputs", nargs="*")
    return parser


def cmd_encode(args) -> int:
    if args.geometry == "trisoup" and args.dbodl < 1:
        raise _UsageError("trisoup needs DBODL >= 1 (l must be < d)")
    cloud = _read_cloud(args.input)
    codec = PointCloudCodec(
        geometry=args.geometry, attribute=args.attribute, pqs=args.pqs, dbodl=args.dbodl,
        dcm=args.dcm, qstep=_coder_qstep(args), k=args.k, lodc=args.lodc,
        slice_method=args.slices, slice_param=args.slice_param,
    )
    data, report = codec.encode(cloud)
    _write(args.output, data)
    print(f"points={report.n_points} bpp_geom={report.bpp_geom:.4f} "
          f"bpp_color={report.bpp_color:.4f} bpp_total={report.bpp_total:.4f} "
          f"seconds={report.seconds:.3f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise _UsageError(f"cannot read {args.input}: {exc.strerror or exc}") from exc
    cloud = PointCloudCodec.decode(data)
    _write(args.output, write_ply(cloud, "ascii" if args.ascii else "binary-le"))
    print(f"points={len(cloud)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    orig, rec = _read_cloud(args.original), _read_cloud(args.decoded)
    ev = evaluate(orig, rec)
    nan = float("nan")
    row = {"dataset": args.dataset or Path(args.original).stem, "case": args.case, "coder": args.coder,
           "bpp_geom": nan, "bpp_color": nan, "bpp_total": nan, "psnr_g": ev.psnr_g,
           "psnr_y": ev.psnr_c.get("Y", nan), "psnr_u": ev.psnr_c.get("U", nan),
           "psnr_v": ev.psnr_c.get("V", nan)}
    if args.bitstream:
        try:
            size = Path(args.bitstream).stat().st_size
        except OSError as exc:
            raise _UsageError(f"cannot read {args.bitstream}: {exc.strerror or exc}") from exc
        row["bpp_total"] = 8 * size / len(orig)
    cols = ("dataset", "case", "coder", "bpp_geom", "bpp_color", "bpp_total",
            "psnr_g", "psnr_y", "psnr_u", "psnr_v")
    sys.stdout.write(rows_to_csv([row], cols))
    return EXIT_OK


def cmd_sweep(args) -> int:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise _UsageError(f"cannot load config {args.config}: {exc}") from exc
    for name in ("case", "coders", "geometry", "pqs", "dbodl", "qsteps", "benchmark", "jobs", "output_dir"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.inputs:
        fields["inputs"] = args.inputs
    try:
        config = ExperimentConfig(**fields)
        config.ladder()
    except (TypeError, ValueError) as exc:
        raise _UsageError(f"bad sweep config: {exc}") from exc
    if not config.inputs:
        raise _UsageError("sweep needs at least one input PLY")
    for p in config.inputs:
        if not Path(p).is_file():
            raise _UsageError(f"cannot read {p}")
    rows = sweep(config)
    bd = bd_table(rows, config.benchmark, config.bd_metric)
    if config.output_dir:
        rd_path, bd_path = write_results(rows, bd, config.output_dir)
        print(f"wrote {rd_path} and {bd_path}")
    else:
        sys.stdout.write(rows_to_csv(rows))
        if bd:
            sys.stdout.write("\n")
            sys.stdout.write(rows_to_csv(bd, BD_COLUMNS))
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptStreamError, ValueError, RuntimeError) as exc:
        print(f"codec error: {exc}", file=sys.stderr)
        return EXIT_CODEC


if __name__ == "__main__":
    sys.exit(main())
