"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver did not converge,
4 any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, direct
from .body_operator import OperatorCache
from .config import ConfigError, load_config
from .geometry import GeometryError

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("axiscatter")


def default_cache_dir() -> Path:
    env = os.environ.get("AXISCATTER_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "axiscatter"


def _set_threads(n: int) -> None:
    direct.set_threads(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(verification={"seed": args.seed})
    return cfg


def _cache(args) -> OperatorCache:
    return OperatorCache(None if args.no_cache else default_cache_dir())


def _summary(r) -> str:
    err = "n/a" if r.rel_inf_error is None else f"{r.rel_inf_error:.3e}"
    extra = "" if r.N_compressed is None else f" N_compressed={r.N_compressed}"
    return (f"{r.label}: N={r.N} m={r.m}{extra} I={r.iterations} converged={r.converged} "
            f"T_pre={r.t_pre:.2f}s T_solve={r.t_solve:.2f}s E_rel_inf={err}")


def cmd_solve(args) -> int:
    from .report import write_csv
    from .runner import run_solve
    cfg = _load(args)
    out = Path(args.out)
    label = Path(cfg.output["report"]).stem
    r = run_solve(cfg, _cache(args), label, out)
    write_csv(out / cfg.output["csv"], [r])
    print(_summary(r))
    return EXIT_OK if r.converged else EXIT_NOCONV


def cmd_study(args) -> int:
    from .runner import run_study
    cfg = _load(args)
    reports = run_study(cfg, _cache(args), Path(args.out))
    for r in reports:
        print(_summary(r))
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOCONV


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(json.dumps(cfg.data, indent=2))
    return EXIT_OK


def cmd_cache(args) -> int:
    directory = default_cache_dir()
    cache = OperatorCache(directory)
    if args.action == "clear":
        n = len(list(directory.glob("*.axop"))) if directory.exists() else 0
        cache.clear()
        print(f"removed {n} cached operator(s) from {directory}")
    else:
        entries = cache.entries()
        print(f"{len(entries)} cached operator(s) in {directory}")
        for e in entries:
            print(f"  {e['file']}  {e.get('bytes', '-')} bytes  {e.get('key', e.get('error'))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--config", required=True, type=Path, help="scene config (JSON)")
    run.add_argument("--out", type=Path, default=Path("."), help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override verification seed")
    run.add_argument("--no-cache", action="store_true", help="do not read or write the operator cache")

    parser = argparse.ArgumentParser(prog="axiscatter", description="Multibody scattering from "
                                     "axisymmetric bodies: solve, studies and reports.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("solve", parents=[run], help="solve one scene").set_defaults(func=cmd_solve)
    sub.add_parser("study", parents=[run], help="run the study in the config").set_defaults(func=cmd_study)
    v = sub.add_parser("validate-config", parents=[common], help="check a config and print it with defaults")
    v.add_argument("--config", required=True, type=Path)
    v.add_argument("--seed", type=int, default=None)
    v.set_defaults(func=cmd_validate)
    c = sub.add_parser("cache", parents=[common], help="inspect or clear the operator cache")
    c.add_argument("action", choices=["list", "clear"], nargs="?", default="list")
    c.set_defaults(func=cmd_cache)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        mod = getattr(type(exc), "__module__", "?")
        print(f"error ({mod}.{type(exc).__name__}): {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
