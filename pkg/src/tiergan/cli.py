"""Command-line entry point: ``tiergan {prepare,train,generate,gradcheck}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, ImageFormatError, PreconditionError, TierGANError
from .imageio import denormalize, load_pgm_ppm, normalize, preprocess, save_pgm
from .tiers import (DIVERGED, TRAINED, build_tier_datasets, cascade_status, generate_cascade, read_tiers,
                    tier_names, train_stage, write_tiers)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
RUN_CFG = "run.cfg"
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")

log = logging.getLogger("tiergan")


class UsageError(Exception):
    pass


def _parse_factors(text: str):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"factors must be comma-separated integers, got {text!r}") from None


def _workdir_config(workdir: Path) -> RunConfig:
    path = workdir / RUN_CFG
    return load_config(path) if path.exists() else RunConfig()


def _write_run_cfg(workdir: Path, cfg: RunConfig) -> None:
    (workdir / RUN_CFG).write_text(cfg.to_text())


def cmd_prepare(args) -> int:
    src, out = Path(args.input), Path(args.output)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if src.is_dir() else []
    if not files:
        raise UsageError(f"no images found in {src}")
    images = []
    for f in files:
        try:
            img = load_pgm_ppm(f)
        except (OSError, ImageFormatError) as exc:
            raise UsageError(f"cannot read {f}: {exc}") from None
        images.append(normalize(preprocess(img, args.size)))
    dataset = build_tier_datasets(np.stack(images), args.factors, [f.name for f in files])
    out.mkdir(parents=True, exist_ok=True)
    write_tiers(dataset, out)
    cfg = _workdir_config(out).with_overrides(
        {"size": str(args.size), "factors": ",".join(map(str, args.factors)), "input_dir": str(src)})
    _write_run_cfg(out, cfg)
    print(" ".join(f"{name}:{len(dataset.tiers[name])}" for name in reversed(dataset.names)))
    return EXIT_OK


def _train_config(args, workdir: Path) -> RunConfig:
    cfg = _workdir_config(workdir)
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    return cfg.with_overrides(overrides)


def cmd_train(args) -> int:
    workdir = Path(args.workdir)
    cfg = _train_config(args, workdir)
    print(cfg.to_text(), end="")
    dataset = read_tiers(workdir, cfg.factors)
    _write_run_cfg(workdir, cfg)
    cascade, tcfg = cfg.cascade_config(), cfg.train_config()
    stages = [args.stage] if args.stage else list(range(1, cascade.n_stages + 1))
    for k in stages:
        status = train_stage(dataset, k, tcfg, workdir, cascade, stop_after=args.stop_after)
        print(f"stage {k}: {status}")
        if status == DIVERGED:
            print(f"stage {k} diverged", file=sys.stderr)
            return EXIT_DIVERGED
        if status != TRAINED:
            break
    return EXIT_OK


def cmd_generate(args) -> int:
    workdir = Path(args.workdir)
    cfg = _workdir_config(workdir)
    cascade = cfg.cascade_config()
    state = cascade_status(workdir, cascade, (cfg.size, cfg.size))
    for k in range(1, cascade.n_stages + 1):
        if state.status[k] != TRAINED:
            raise PreconditionError(f"stage {k} is {state.status[k]}; train it before generating")
    out = Path(args.out) if args.out else workdir / "out"
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_cascade(state, args.n, args.seed, intermediates=True)
    suffixes = [name.lower() for name in tier_names(cascade.factors)[:-1]] + ["final"]
    written = 0
    for i, stages in enumerate(samples):
        keep = zip(suffixes, stages) if args.emit_intermediates else [("final", stages[-1])]
        for suffix, img in keep:
            save_pgm(denormalize(img), out / f"{i:04d}_{suffix}.pgm")
            written += 1
    print(f"wrote {written} images to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_report, run_suite

    results = run_suite(args.seed)
    print(format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        for r in failed:
            print(f"gradient check failed: {r.kind} (max relative error {r.worst:.3e})", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="tiergan", description="Cascaded multi-tier GAN training engine.",
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build tier datasets from P5/P6 images", formatter_class=fmt)
    p.add_argument("--input", required=True, help="directory of binary PGM/PPM images")
    p.add_argument("--output", required=True, help="workdir to write tiers/ and manifest.tsv into")
    p.add_argument("--size", type=int, default=128, help="output edge length in pixels")
    p.add_argument("--factors", type=_parse_factors, default=(8, 4, 2), help="tier factors, coarsest first")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the cascade or a single stage", formatter_class=fmt)
    p.add_argument("--config", default=None, help="key=value config file (overrides workdir run.cfg)")
    p.add_argument("--workdir", required=True, help="prepared workdir")
    p.add_argument("--stage", type=int, default=None, help="train only this stage (1-based)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=None,
                   help="override one config value; repeatable")
    p.add_argument("--stop-after", type=int, default=None,
                   help="stop after this many epochs in this invocation; rerun to resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="run noise through the trained cascade", formatter_class=fmt)
    p.add_argument("--workdir", required=True, help="trained workdir")
    p.add_argument("--n", type=int, default=1, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--emit-intermediates", action="store_true", help="also write each stage's output")
    p.add_argument("--out", default=None, help="output directory (default: WORKDIR/out)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="seed for inputs and parameters")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _limit_threads():
    n = os.environ.get("TIERGAN_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return args.func(args)
    except (UsageError, ConfigError, PreconditionError, TierGANError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
