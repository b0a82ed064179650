"""Command line entry point: ``vemstab {pspan,sequence,interp,selfcheck,cache}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import cache
from .errors import ConfigError, VemError
from .harness import ExperimentConfig, PartialRun, format_rows, run_fem_selfcheck, run_interp_rates, run_pspan, run_sequence

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _refine(text):
    return text if text == "auto" else int(text)


def build_parser():
    ap = argparse.ArgumentParser(prog="vemstab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file mirroring the experiment options; flags override it")
        sp.add_argument("--element", help="family:index or polygon JSON file")
        sp.add_argument("--family", choices=["hanging_node", "flatten"])
        sp.add_argument("--index", type=int)
        sp.add_argument("--p", type=int)
        sp.add_argument("--p-max", type=int, dest="p_max")
        sp.add_argument("--stab", choices=["projection", "dofi", "both"])
        sp.add_argument("--boundary-term", dest="boundary_term", choices=["integral", "dofsum"])
        sp.add_argument("--refine", type=_refine, help="FEM refinement level or 'auto'")
        sp.add_argument("--auto-refine-tol", type=float, dest="auto_refine_tol")
        sp.add_argument("--allow-high-p", action="store_true", default=None, dest="allow_high_p")
        sp.add_argument("--format", choices=["csv", "markdown"])
        sp.add_argument("--out")
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--jobs", type=int)
        return sp

    experiment("pspan", "eigenvalues on one element for a range of p")
    experiment("sequence", "eigenvalues along a degenerating element family")
    experiment("interp", "interpolation-error rates on shrinking squares and pentagons")
    experiment("selfcheck", "Taylor-Hood manufactured-solution rates")
    c = sub.add_parser("cache", help="inspect or clear the exact-basis cache")
    c.add_argument("action", choices=["list", "clear", "verify"])
    c.add_argument("--cache-dir", dest="cache_dir")
    return ap


def config_from_args(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    if args.family is not None and args.index is not None and args.element is None:
        cfg.element = f"{args.family}:{args.index}"
    return cfg.validate()


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cache_cmd(args):
    d = Path(args.cache_dir) if args.cache_dir else cache.default_cache_dir()
    cache.require_dir(d)
    if args.action == "list":
        for e in cache.list_entries(d):
            print(json.dumps(e, sort_keys=True))
    elif args.action == "clear":
        print(f"removed {cache.clear(d)} files")
    else:
        bad = 0
        for name, status in cache.verify(d):
            print(f"{name} {status}")
            bad += status != "ok"
        if bad:
            print(f"{bad} corrupted entries skipped", file=sys.stderr)
    return EXIT_OK


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "cache":
            return _cache_cmd(args)
        cfg = config_from_args(args)
        if args.command == "pspan":
            rows = run_pspan(cfg)
        elif args.command == "sequence":
            if cfg.family is None:
                raise ConfigError("sequence needs --family")
            rows = run_sequence(cfg)
        elif args.command == "interp":
            rows = run_interp_rates(cfg)
        else:
            rows = run_fem_selfcheck()
        _emit(format_rows(rows, cfg.format), cfg.out)
        return EXIT_OK
    except PartialRun as exc:
        if exc.rows:
            _emit(format_rows(exc.rows, cfg.format), cfg.out)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VemError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
