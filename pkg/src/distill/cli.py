"""Command line interface: ``distill run | compare | schedule dump | render | selftest``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import sds
from .config import ConfigError, SDSConfig, dump_config, load_config, paper_scale
from .renderer import BACKEND, CameraView, render
from .renderer.io import GridFormatError, load_grid, save_grid, save_ppm

log = logging.getLogger("distill")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
SCHEDULE_HEADER = ("iter", "t", "b1", "s1", "b2", "s2", "cfg_w", "t_min", "t_max", "res")


def output_dir(path: str) -> Path:
    """Resolve an output directory; relative paths live under ``$DISTILL_OUT`` when it is set."""
    p = Path(path)
    root = os.environ.get("DISTILL_OUT")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = val
    return out


def resolve_config(args) -> SDSConfig:
    cfg = load_config(args.config)
    if getattr(args, "paper_scale", False):
        cfg = paper_scale(cfg)
    overrides = _parse_sets(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["run.out_dir"] = args.out
    return cfg.with_overrides(overrides)


def fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def snapshot_name(it: int, azimuth: float) -> str:
    return f"snap_{it:06}_{azimuth:g}.ppm"


def execute_run(cfg: SDSConfig, out: Path, progress: bool = False) -> sds.RunResult:
    """Run ``optimize`` and write metrics, snapshots, final grid and the resolved config into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.ini").write_text(dump_config(cfg))
    cb = None
    if progress:
        def cb(row):
            log.info("iter %d t=%d w=%.2f size=%.4f rough=%.4f gnorm=%.3g",
                     row.iter, row.t, row.cfg_w, row.size, row.rough, row.gnorm)
    result = sds.optimize(cfg, progress=cb)
    (out / "metrics.csv").write_text(sds.format_metrics_csv(result.metrics))
    for (it, az), img in sorted(result.snapshots.items()):
        save_ppm(out / snapshot_name(it, az), img)
    save_grid(out / "grid.voxg", result.grid)
    return result


def cmd_run(args) -> int:
    try:
        cfg = resolve_config(args)
        out = output_dir(cfg.run.out_dir)
        sds.mixture_from_config(cfg)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        execute_run(cfg, out, progress=args.verbose)
    except sds.NumericalAbort as exc:
        out.mkdir(parents=True, exist_ok=True)
        lines = [str(exc)] + [f"{k} = {v}" for k, v in exc.diagnostics.items()]
        (out / "diagnostics.txt").write_text("\n".join(lines) + "\n")
        print(f"numerical abort: {exc} (see {out / 'diagnostics.txt'})", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"run complete: {out}")
    return EXIT_OK


# -- compare ------------------------------------------------------------------

POLICIES = {
    "baseline": {"guidance.schedule": "static", "freeu.mode": "off"},
    "dynamic_freeu": {"guidance.schedule": "static", "freeu.mode": "dynamic"},
    "dynamic_cfg": {"guidance.schedule": "dynamic", "freeu.mode": "off"},
    "dynamic_both": {"guidance.schedule": "dynamic", "freeu.mode": "dynamic"},
}


def policy_overrides(name: str) -> dict[str, str]:
    if name in POLICIES:
        return dict(POLICIES[name])
    if name.startswith("static_w"):
        weight = name[len("static_w"):].lstrip("=")
        try:
            float(weight)
        except ValueError:
            raise ConfigError(f"bad guidance weight in policy {name!r}") from None
        return {"guidance.schedule": "static", "guidance.weight": weight, "freeu.mode": "off"}
    raise ConfigError(f"unknown policy {name!r}; expected one of {sorted(POLICIES)} or static_w<weight>")


def order_policies(names: list[str], base: SDSConfig) -> list[str]:
    """Named policies keep their order; static-weight policies follow, sorted by weight."""
    named = [n for n in names if not n.startswith("static_w")]
    static = [n for n in names if n.startswith("static_w")]
    static.sort(key=lambda n: base.with_overrides(policy_overrides(n)).guidance.weight)
    return named + static


def _sub_run(job):
    cfg, out = job
    result = execute_run(cfg, out)
    last = result.metrics[-1] if result.metrics else None
    g = result.grid
    return {
        "size": sds.size_proxy(g),
        "rough": sds.roughness_proxy(g),
        "detail": sds.detail_proxy(list(sds.snapshot_views(cfg, g).values()), cfg.freeu.r_threshold),
        "final_cfg_w": last.cfg_w if last else float("nan"),
    }


def cmd_compare(args) -> int:
    try:
        base = resolve_config(args)
        names = [p.strip() for p in args.policies.split(",") if p.strip()]
        if not names:
            raise ConfigError("no policies given")
        names = order_policies(names, base)
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.run.seed]
        root = output_dir(base.run.out_dir)
        jobs, keys = [], []
        for name in names:
            for seed in seeds:
                sub = root / name / f"seed{seed}"
                cfg = base.with_overrides({**policy_overrides(name), "run.seed": str(seed), "run.out_dir": str(sub)})
                jobs.append((cfg, sub))
                keys.append((name, seed, cfg.guidance.weight if cfg.guidance.schedule == "static" else None))
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_sub_run, jobs))
        else:
            results = [_sub_run(j) for j in jobs]
    except sds.NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "seed", "weight", "size", "rough", "detail"])
    for (name, seed, weight), res in zip(keys, results):
        w.writerow([name, seed, "dynamic" if weight is None else fmt(weight),
                    fmt(res["size"]), fmt(res["rough"]), fmt(res["detail"])])
    root.mkdir(parents=True, exist_ok=True)
    (root / "compare.csv").write_text(buf.getvalue())

    lines = [f"{'policy':<16} {'seeds':>5} {'size':>10} {'rough':>10} {'detail':>10}"]
    for name in names:
        rows = [r for (n, _, _), r in zip(keys, results) if n == name]
        med = {k: statistics.median(r[k] for r in rows) for k in ("size", "rough", "detail")}
        lines.append(f"{name:<16} {len(rows):>5} {med['size']:>10.4f} {med['rough']:>10.4f} {med['detail']:>10.4f}")
    table = "\n".join(lines) + "\n"
    (root / "compare.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# -- schedule dump ------------------------------------------------------------


def schedule_rows(cfg: SDSConfig):
    """Per-iteration schedule values, with t drawn from the same stream a run would use."""
    streams = sds.Streams.from_seed(cfg.run.seed)
    for it in range(1, cfg.run.total_iters + 1):
        rng_range = sds.anneal_range(cfg, it)
        t = sds.draw_timestep(cfg, it, streams.timestep)
        fu = sds.freeu_params(cfg, t)
        yield (it, t, *fu.as_tuple(), sds.guidance_weight(cfg, it), rng_range.t_min, rng_range.t_max,
               sds.render_size(cfg, it))


def cmd_schedule_dump(args) -> int:
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEDULE_HEADER)
    for row in schedule_rows(cfg):
        w.writerow([fmt(v) for v in row])
    if args.output:
        path = output_dir(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# -- render -------------------------------------------------------------------


def cmd_render(args) -> int:
    try:
        grid = load_grid(args.grid)
    except GridFormatError as exc:
        print(f"malformed grid file {args.grid}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read grid file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for az in args.azimuth:
        img = render(grid, CameraView(az, args.elevation), args.size, args.samples, args.background)
        save_ppm(out / f"render_{az:g}.ppm", img)
    print(f"wrote {len(args.azimuth)} image(s) to {out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    return EXIT_OK if run_all(verbose=True) else 1


# -- parser -------------------------------------------------------------------


def _add_config_args(p):
    p.add_argument("config", help="path to a run config (.ini)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--paper-scale", action="store_true",
                   help="use full-scale iteration counts and render sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one distillation experiment")
    _add_config_args(p)
    p.add_argument("--out", help="override run.out_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several policies with shared seeds")
    _add_config_args(p)
    p.add_argument("--out", help="override run.out_dir")
    p.add_argument("--policies", default="baseline,dynamic_freeu,dynamic_cfg,dynamic_both",
                   help="comma-separated: baseline, dynamic_freeu, dynamic_cfg, dynamic_both, static_w<W>")
    p.add_argument("--seeds", help="comma-separated seeds (default: run.seed)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("schedule", help="schedule utilities")
    ssub = p.add_subparsers(dest="schedule_command", required=True)
    d = ssub.add_parser("dump", help="write the per-iteration schedule CSV")
    _add_config_args(d)
    d.add_argument("-o", "--output", help="CSV path (default: stdout)")
    d.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("render", help="render a saved VOXG grid to PPM")
    p.add_argument("grid")
    p.add_argument("--azimuth", type=float, nargs="+", default=[0.0, 120.0, 240.0])
    p.add_argument("--elevation", type=float, default=10.0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--background", type=float, default=0.5)
    p.add_argument("--out", default="renders")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("render backend: %s", BACKEND)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
