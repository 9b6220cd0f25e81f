"""``msaconv`` command line: train, eval, bench, flops, erf, gradcheck.

Every command writes only under ``--out-dir``. Failures print one line
``error[E_CODE]: message`` on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import checks, costs, erf, train
from .checkpoint import CheckpointError
from .data import DataError
from .gradcheck import InvalidOracleError
from .mechanisms import ConfigError
from .model import ABLATIONS, NonFiniteActivationError, ablate, init_model, named_configs, tic_forward
from .optim import NonFiniteGradError
from .t4f import T4FError
from .tensor import DimensionError, TapeError
from .windows import WindowSpec

log = logging.getLogger("msaconv")

EXIT_FAIL = 1
EXIT_ERROR = 2


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_ERROR) -> None:
        super().__init__(message)
        self.code = code
        self.status = status


# Most specific first: several of these subclass ValueError.
_ERROR_CODES = (
    (DataError, "E_DATA"),
    (CheckpointError, "E_CHECKPOINT"),
    (T4FError, "E_T4F"),
    (DimensionError, "E_DIM"),
    (TapeError, "E_TAPE"),
    (InvalidOracleError, "E_ORACLE"),
    (train.TrainingError, "E_NONFINITE"),
    (NonFiniteActivationError, "E_NONFINITE"),
    (NonFiniteGradError, "E_NONFINITE"),
    (ConfigError, "E_CONFIG"),
    (KeyError, "E_CONFIG"),
    (ValueError, "E_CONFIG"),
    (OSError, "E_IO"),
)


def _error_code(exc: BaseException) -> str:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return "E_INTERNAL"


def _one_line(exc: BaseException) -> str:
    # KeyError's str() is the repr of its key; show the message itself.
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
    return " ".join(str(msg).split()) or type(exc).__name__


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401 - argparse hook
        raise CliError("E_USAGE", message)


def _resolutions(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list {text!r}") from None
    if not vals or any(v <= 0 or v % 4 for v in vals):
        raise argparse.ArgumentTypeError(f"resolutions must be positive multiples of 4, got {text!r}")
    return vals


def _common(p: argparse.ArgumentParser, dtype: str) -> None:
    p.add_argument("--config", help="JSON file whose keys are RunConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread cap (default 1)")
    p.add_argument("--dtype", choices=("f32", "f64"), default=None, help=f"element type (default {dtype})")
    p.add_argument("--out-dir", default=None, help="all outputs go here (default ./out)")
    p.add_argument("--resolutions", type=_resolutions, default=None, help="comma list, e.g. 224,448,896")
    p.add_argument("--without", action="append", choices=ABLATIONS, default=None,
                   help="switch a mechanism off (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="msaconv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="toy training run")
    _common(p, "f32")
    p.add_argument("--model", choices=sorted(named_configs()))
    p.add_argument("--data", help="'synthetic', a CIFAR .bin file/dir, or a T4F pair stem")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="top-1/top-5 accuracy of a checkpoint")
    _common(p, "f32")
    p.add_argument("--checkpoint")
    p.add_argument("--data")

    p = sub.add_parser("bench", help="FLOPs / activation sweep over resolutions")
    _common(p, "f32")
    p.add_argument("--model", choices=sorted(named_configs()), default="tic-b")
    p.add_argument("--time", action="store_true", help="also time one TiC forward per resolution")

    p = sub.add_parser("flops", help="per-layer FLOPs tables and the per-layer formulas")
    _common(p, "f32")
    p.add_argument("--model", choices=sorted(named_configs()), default="tic-b")

    p = sub.add_parser("erf", help="effective receptive field maps")
    _common(p, "f64")
    p.add_argument("--checkpoint", help="use trained weights instead of the probe config")
    p.add_argument("--layer", action="append", type=WindowSpec.parse,
                   help="single-layer mode: stack bare MSA-Conv layers with these windows, e.g. 3x3d4")
    p.add_argument("--grid", action="store_true", help="map every single-mechanism ablation and all-off")
    p.add_argument("--image-size", type=int, default=erf.PROBE_IMAGE)
    p.add_argument("--inputs", type=int, default=erf.PROBE_INPUTS)

    p = sub.add_parser("gradcheck", help="central-difference gradient checks")
    _common(p, "f64")
    p.add_argument("--scope", action="append",
                   help=f"op:<name>, block, model, or a group ({', '.join(checks.GROUPS)}); "
                        "repeatable, default 'attention'")
    p.add_argument("--samples", type=int, help="coordinates per sampled block")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return ap


# -- helpers ------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> train.RunConfig:
    cfg = train.RunConfig.from_file(args.config) if args.config else train.RunConfig()
    overrides = {
        "seed": args.seed, "dtype": args.dtype, "threads": args.threads,
        "out_dir": args.out_dir, "resolutions": args.resolutions, "without": args.without,
    }
    for name in ("model", "data", "steps", "lr", "batch_size", "resume", "checkpoint"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    return cfg.merged(overrides)


def _write(path: Path, text: str) -> None:
    path.write_text(text, newline="")


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    result = train.train(cfg, out)
    acc = result["train"]
    print(f"trained {cfg.model} for {cfg.steps} steps: train top1 {acc['top1']:.4f} top5 {acc['top5']:.4f} "
          f"(n={acc['n']}); outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    if not cfg.checkpoint:
        raise CliError("E_USAGE", "eval needs --checkpoint (or 'checkpoint' in the config)")
    out = _out_dir(args)
    res = train.evaluate(cfg, cfg.checkpoint, out)
    print(f"top1 {res['top1']:.4f} top5 {res['top5']:.4f} n {res['n']}")
    return 0


def _bench_configs(args):
    tic = ablate(named_configs()[args.model], args.without or ())
    return [("tic", tic), ("vit", costs.VIT_B16), ("swin", costs.SWIN_B)]


def _time_forward(config, res: int, dtype) -> float:
    model = init_model(config, 0, dtype)
    img = np.random.default_rng(0).standard_normal((1, config.in_chans, res, res)).astype(dtype)
    t0 = time.perf_counter()
    tic_forward(img, model)
    return (time.perf_counter() - t0) * 1e3


def cmd_bench(args) -> int:
    out = _out_dir(args)
    resolutions = args.resolutions or [224, 448, 896, 1024]
    dtype = train.DTYPES[args.dtype or "f32"]
    rows = []
    for arch, config in _bench_configs(args):
        for r in resolutions:
            rep = costs.model_flops(config, r, r)
            mem = costs.activation_memory(config, r, r)
            wall = f"{_time_forward(config, r, dtype):.1f}" if args.time and arch == "tic" else ""
            rows.append([arch, config.name, r, rep.macs, rep.flops, mem.peak, mem.peak_layer, wall])
    text = _csv(rows, ["arch", "config", "resolution", "macs", "flops", "activation_elements",
                       "peak_layer", "wall_ms"])
    _write(out / "bench.csv", text)
    by = {(row[0], row[2]): row for row in rows}
    for r in resolutions:
        t, v, s = by[("tic", r)], by[("vit", r)], by[("swin", r)]
        print(f"{r:5d}px  tic {t[3] / 1e9:8.2f} GMACs  vit {v[3] / 1e9:8.2f}  swin {s[3] / 1e9:8.2f}  "
              f"vit/tic {v[3] / t[3]:.2f}  act tic {t[5]:,} vit {v[5]:,}")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def cmd_flops(args) -> int:
    out = _out_dir(args)
    resolutions = args.resolutions or [224]
    formula_rows = []
    for arch, config in _bench_configs(args):
        for r in resolutions:
            rep = costs.model_flops(config, r, r)
            _write(out / f"flops_{arch}_{r}.csv", rep.to_csv())
            print(rep.summary())
    tic = ablate(named_configs()[args.model], args.without or ())
    for r in resolutions:
        h = w = r // tic.patch_size
        for i, st in enumerate(tic.stages):
            formula_rows.append([r, i, h, w, st.dim, st.kernel_size,
                                 costs.attention_flops("tic", h, w, st.dim, st.kernel_size),
                                 costs.attention_flops("vit", h, w, st.dim, 0),
                                 costs.attention_flops("swin", h, w, st.dim, costs.SWIN_B.window)])
            h, w = -(-h // 2), -(-w // 2)
    _write(out / "attention_formula.csv",
           _csv(formula_rows, ["resolution", "stage", "h", "w", "C", "K", "tic", "vit", "swin"]))
    print(f"wrote per-layer tables and attention_formula.csv to {out}")
    return 0


def cmd_erf(args) -> int:
    out = _out_dir(args)
    if (args.dtype or "f64") != "f64":
        raise CliError("E_CONFIG", "erf runs in f64; drop --dtype f32")
    seed = args.seed or 0
    rows = []
    if args.layer:
        probe = erf.LayerStackProbe.build(args.layer, seed=seed)
        grid = erf.erf_compute(probe, erf.random_inputs(args.inputs, args.image_size, seed=seed))
        tag = "layers-" + "_".join(str(s) for s in args.layer)
        grid.save(out / f"erf_{tag}")
        n = args.image_size // probe.patch
        fp = erf.analytic_footprint([[s] for s in args.layer], (n // 2, n // 2), (n, n))
        tok = grid.token_support(probe.patch)
        rows.append([tag, int(grid.support().sum()), int(tok.sum()), int(fp.sum()),
                     int(not (tok & ~fp).any()), int(grid.degenerate)])
        header = ["variant", "support_pixels", "support_tokens", "footprint_tokens", "within_footprint",
                  "degenerate"]
    else:
        if args.checkpoint:
            from . import checkpoint
            model, _, _ = checkpoint.load(args.checkpoint)
            config = model.config
        else:
            config = erf.PROBE_CONFIG
        full = None
        header = ["variant", "support_pixels", "support_tokens", "subset_of_full", "degenerate"]
        for without in erf.ablation_grid(args.without or (), args.grid):
            name = erf.variant_name(without)
            if args.checkpoint and not without:
                grid = erf.model_erf(model, image_size=args.image_size,
                                     n_inputs=args.inputs, seed=seed)
            elif args.checkpoint:
                raise CliError("E_CONFIG", "ablations need freshly initialized weights; drop --checkpoint")
            else:
                grid = erf.config_erf(config, without, seed=seed, image_size=args.image_size, n_inputs=args.inputs)
            grid.save(out / f"erf_{name}")
            if full is None:
                full = grid.support()
            sup = grid.support()
            rows.append([name, int(sup.sum()), int(grid.token_support(config.patch_size).sum()),
                         int(not (sup & ~full).any()), int(grid.degenerate)])
    _write(out / "erf.csv", _csv(rows, header))
    for r in rows:
        print("  ".join(f"{h}={v}" for h, v in zip(header, r)))
    print(f"wrote maps and erf.csv to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    if (args.dtype or "f64") != "f64":
        raise CliError("E_CONFIG", "gradcheck needs --dtype f64 (central differences are meaningless in f32)")
    names = [s[3:] if s.startswith("op:") else s for s in (args.scope or ["attention"])]
    scopes = checks.expand(names)
    seed = args.seed or 0
    rows, failed = [], []
    for name in scopes:
        scope = checks.build_scope(name, seed)
        if args.samples:
            scope = dataclasses.replace(scope, n_sample=args.samples, max_full=0)
        t0 = time.perf_counter()
        corrupt = args.corrupt if args.corrupt in scope.inputs else None
        report = scope.run(seed=seed, corrupt=corrupt)
        log.info("%s: %.1fs", name, time.perf_counter() - t0)
        _write(out / f"gradcheck_{name}.csv", report.to_csv())
        print(f"{name:22s} {report.summary()}")
        for b in report.blocks:
            rows.append([name, b.name, b.checked, f"{b.max_rel_err:.3e}", report.tol, int(b.max_rel_err < report.tol)])
        if not report.passed:
            failed.append((name, report))
    if args.corrupt and not any(args.corrupt in checks.build_scope(n, seed).inputs for n in scopes):
        raise CliError("E_USAGE", f"--corrupt {args.corrupt!r} names no block in the selected scopes")
    _write(out / "gradcheck.csv", _csv(rows, ["scope", "block", "checked", "max_rel_err", "tol", "pass"]))
    if failed:
        print("failing blocks:", file=sys.stderr)
        for name, report in failed:
            for b in report.failures():
                print(f"  {name}/{b.name} rel_err={b.max_rel_err:.3e} at {list(b.argmax)} "
                      f"analytic={b.analytic:.6e} numeric={b.numeric:.6e}", file=sys.stderr)
        worst_scope, worst = max(failed, key=lambda t: t[1].max_rel_err)
        raise CliError("E_GRADCHECK", f"{sum(len(r.failures()) for _, r in failed)} block(s) over tolerance; "
                                      f"worst {worst_scope}/{worst.worst.name} rel_err {worst.max_rel_err:.3e}",
                       status=EXIT_FAIL)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "flops": cmd_flops,
            "erf": cmd_erf, "gradcheck": cmd_gradcheck}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise CliError("E_USAGE", "--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except CliError as e:
        print(f"error[{e.code}]: {_one_line(e)}", file=sys.stderr)
        return e.status
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - every failure becomes one coded line
        print(f"error[{_error_code(e)}]: {_one_line(e)}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
