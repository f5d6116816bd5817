"""``mcfloat`` command line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .eft import set_fma
from .linalg import set_default_plan

log = logging.getLogger("mcfloat")


def _nc_list(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty nc list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcfloat", description="Multi-component float experiments")
    p.add_argument("command", choices=ex.COMMANDS)
    p.add_argument("--precision", default=None, help="b16, b32 or b64")
    p.add_argument("--nc", type=_nc_list, default=None, help="component counts, e.g. 1,2,3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--data", default=None, help="CSV (logreg, mlp) or TSV edge list (embed)")
    p.add_argument("--out", default=None, help="report path (.json) or output directory")
    p.add_argument("--pairwise-reduction", action="store_true")
    p.add_argument("--fma", choices=("on", "off"), default=None)
    p.add_argument("--mc-state", action="store_true", help="keep optimizer buffers as 2-expansions")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# per-command defaults when a flag is omitted
_DEFAULTS = {
    "err-profile": ("b32", [1, 2, 3, 4]),
    "linreg": ("b16", [2, 3]),
    "logreg": ("b16", [2]),
    "mlp": ("b16", [2, 3]),
    "embed": ("b16", [1, 2]),
    "bench": ("b32", [1, 2, 3]),
}


def config_from_args(args) -> ex.RunConfig:
    prec, ncs = _DEFAULTS[args.command]
    return ex.RunConfig(
        command=args.command, precision=args.precision or prec, nc=args.nc or ncs,
        seed=args.seed, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        data=args.data, out=args.out, pairwise_reduction=args.pairwise_reduction,
        fma=args.fma, mc_state=args.mc_state,
    ).validate()


def _paths(out: str):
    path = Path(out)
    if path.suffix == ".json":
        return path, path.with_name(path.stem + "_curves.csv")
    return path / "report.json", path / "curves.csv"


def write_outputs(report: dict, out: str) -> Path:
    rpath, cpath = _paths(out)
    rpath.parent.mkdir(parents=True, exist_ok=True)
    rpath.write_text(json.dumps(report, indent=2, default=_jsonable))
    rows = ex.curves_rows(report)
    if rows:
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["precision", "nc", "epoch", "loss"])
            w.writerows(rows)
    return rpath


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def summarize(report: dict) -> str:
    lines = []
    for r in report.get("runs", []):
        bits = [f"{r['precision']} nc={r['nc']}"]
        for key in ("final_loss", "test_accuracy", "map", "mean_rank"):
            if key in r:
                bits.append(f"{key}={r[key]:.6g}")
        lines.append("  ".join(bits))
    for r in report.get("timings", []):
        label = "plain" if r["nc"] is None else f"nc={r['nc']}"
        lines.append(f"{r['op']:7s} {label:6s} {r['mean_s'] * 1e3:10.3f} ms +- {r['sd_s'] * 1e3:.3f}")
    if "table" in report:
        for row in report["table"]:
            if row["mode"] == "same":
                lines.append(f"{row['op']:5s} m={row['m']} nc={row['nc']}  {row['median_rel_error']:.3e}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its diagnostic
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if cfg.fma is not None:
            set_fma(cfg.fma == "on")
        set_default_plan("pairwise" if cfg.pairwise_reduction else "sequential")
        report = ex.RUNNERS[cfg.command](cfg)
    except (ex.ConfigError, ex.DataError, RuntimeError) as exc:
        print(f"mcfloat: error: {exc}", file=sys.stderr)
        return 2
    finally:
        set_default_plan("sequential")
    if cfg.out:
        path = write_outputs(report, cfg.out)
        print(f"report written to {path}")
    print(summarize(report))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
