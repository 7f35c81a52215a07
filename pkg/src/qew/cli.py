"""Command-line entry point: ``qew <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .neb import NebError, RelaxConfig, load_surface, path_from_csv, path_to_csv, relax_path, run_neb, window_path
from .neb import extract_barrier, saddle_character
from .workflow import (
    STAGES,
    ConfigError,
    RunConfig,
    StageError,
    apply_env_overrides,
    config_from_dict,
    format_report,
    run_all_species,
    run_reaction,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("qew")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--species", nargs="+", help="restrict to these species tags")
    p.add_argument("--resume", action="store_true", help="reuse a persisted ansatz when present")
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=int, help="shots per measurement group")
    p.add_argument("--batches", type=int, help="bootstrap batches")
    p.add_argument("--backend", choices=("statevector", "shots"))
    p.add_argument("--threshold", type=float, help="AVAS overlap threshold")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int, help="species run in parallel")
    pt2 = p.add_mutually_exclusive_group()
    pt2.add_argument("--pt2", dest="pt2", action="store_true", default=None)
    pt2.add_argument("--no-pt2", dest="pt2", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qew", description="Embedded ADAPT-VQE + PT2 workflow and NEB tools")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _add_run_flags(sub.add_parser(stage, help=f"run species up to the {stage} stage"))
    _add_run_flags(sub.add_parser("reaction", help="all species plus activation/dissociation tables"))

    rep = sub.add_parser("report", help="print a finished reaction report")
    rep.add_argument("--run-dir", required=True)
    rep.add_argument("--json", action="store_true", help="print the raw JSON instead of tables")

    neb = sub.add_parser("neb", help="climbing-image NEB on a model surface")
    neb.add_argument("--surface", default="muller_brown", help="bundled surface name or JSON file")
    neb.add_argument("--images", type=int, default=10)
    neb.add_argument("--max-steps", type=int, default=200)
    neb.add_argument("--force-tol", type=float, default=1e-4)
    neb.add_argument("--method", choices=("lbfgs", "fire", "quickmin"), default="lbfgs")
    neb.add_argument("--spring", type=float, help="spring constant (default: the surface's hint)")
    neb.add_argument("--no-climb", action="store_true")
    neb.add_argument("--workers", type=int, default=1)
    neb.add_argument("--path", help="existing path CSV (needed with --window)")
    neb.add_argument("--window", nargs=2, type=int, metavar=("START", "END"), help="re-run over a sub-path")
    neb.add_argument("--out", default="neb-out")
    return parser


def _load(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = apply_env_overrides(raw, os.environ)
    backend = raw.setdefault("backend", {})
    for flag, key in (("seed", "seed"), ("shots", "shots"), ("batches", "batches"), ("backend", "kind")):
        if getattr(args, flag) is not None:
            backend[key] = getattr(args, flag)
    if args.threshold is not None:
        raw.setdefault("active_space", {})["threshold"] = args.threshold
    if args.output_dir is not None:
        raw["output_dir"] = str(Path(args.output_dir).resolve())
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.pt2 is not None:
        raw["pt2"] = args.pt2
    return config_from_dict(raw, path.parent)


def _print_failures(failures) -> None:
    for tag, exc in failures.items():
        print(f"FAILED {tag} at {exc.stage}: {exc.message}", file=sys.stderr)


def _cmd_stage(args) -> int:
    config = _load(args)
    results, failures = run_all_species(config, args.command, args.resume, args.species)
    for tag in args.species or config.species_tags():
        if tag in failures:
            continue
        line = f"{tag}: {args.command} done -> {config.output_dir / tag}"
        if tag in results:
            r = results[tag]
            line += f"  E_HF={r.e_hf:.10f} E_VQE={r.e_vqe:.10f} E_VQE+PT2={r.e_vqe_pt2:.10f}"
        print(line)
    _print_failures(failures)
    return EXIT_STAGE if failures else EXIT_OK


def _cmd_reaction(args) -> int:
    config = _load(args)
    if args.species:
        raise ConfigError("reaction runs every configured species; drop --species")
    outcome = run_reaction(config, args.resume)
    if outcome.failures:
        _print_failures(outcome.failures)
        return EXIT_STAGE
    print(format_report(outcome.report), end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.run_dir) / "reaction.json"
    if not path.is_file():
        raise ConfigError(f"no reaction report at {path}")
    report = json.loads(path.read_text())
    print(json.dumps(report, indent=2, sort_keys=True) if args.json else format_report(report), end="\n" if args.json else "")
    return EXIT_OK


def _cmd_neb(args) -> int:
    try:
        surface = load_surface(args.surface)
    except NebError as exc:
        raise ConfigError(str(exc)) from None
    try:
        config = RelaxConfig(
            max_steps=args.max_steps,
            force_tol=args.force_tol,
            climbing=not args.no_climb,
            method=args.method,
            workers=args.workers,
        )
    except NebError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.window:
        if not args.path:
            raise ConfigError("--window needs --path")
        spring = surface.spring if args.spring is None else args.spring
        base = path_from_csv(Path(args.path).read_text(), spring)
        try:
            start = window_path(base, args.window[0], args.window[1], args.images, surface)
        except NebError as exc:
            raise ConfigError(str(exc)) from None
        path = relax_path(start, surface, config)
        e_a, e_d, ts = extract_barrier(path)
        e_a += float(path.energies[0] - base.energies[0])
        e_d = float(base.energies[-1] - base.energies[0])
        _, eig = saddle_character(surface, path.images[ts])
        report = {
            "surface": surface.name,
            "window": list(args.window),
            "E_a": e_a,
            "E_d": e_d,
            "ts_index": ts,
            "ts_point": path.images[ts].tolist(),
            "converged": path.converged,
            "steps": path.steps,
            "final_max_force": path.force_history[-1],
            "ts_hessian_eigenvalues": eig.tolist(),
        }
    else:
        path, rep = run_neb(surface, args.images, config, args.spring)
        report = rep.to_json()
    (out / "path.csv").write_text(path_to_csv(path))
    (out / "neb.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "force_history.csv").write_text(
        "step,max_force\n" + "".join(f"{i},{f!r}\n" for i, f in enumerate(path.force_history))
    )
    print(f"{surface.name}: E_a={report['E_a']:.6f} E_d={report['E_d']:.6f} steps={report['steps']} converged={report['converged']}")
    return EXIT_OK if path.converged else EXIT_STAGE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    handlers = {"reaction": _cmd_reaction, "report": _cmd_report, "neb": _cmd_neb}
    handler = handlers.get(args.command, _cmd_stage)
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, NebError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
