"""``dpsim`` command line: table, selfenergy, simulate, estimate, sweep."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import (
    angstrom_threshold,
    benchmark_csv,
    benchmark_table,
    format_benchmark_table,
    summarize_campaign,
)
from .apparatus import COMPONENT_COLLAPSE_TIMES, ConfigError, run_campaign
from .config import (
    KNOWN_KEYS,
    SCHEMA_VERSION,
    RunConfig,
    from_resolved_dict,
    parse_config,
    parse_overrides,
    resolved_dict,
)
from .selfenergy import (
    PENROSE_GAMMA,
    MassBody,
    OverlapCoefficientVariant,
    SuperpositionGeometry,
    collapse_time,
    self_energy,
)
from .traceio import read_campaign, write_campaign

RESOLVED_FILE = "resolved_config.json"
SUMMARY_FILE = "summary.json"
SWEEP_FILE = "sweep.csv"


class CliError(Exception):
    pass


def _json_value(x):
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
    if isinstance(x, list):
        return [_json_value(v) for v in x]
    return x


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def _overrides_from_args(args) -> dict[str, str]:
    out = parse_overrides(getattr(args, "set", None))
    for key in ("n_trials", "master_seed", "output_dir", "mode", "parallelism", "variant",
                "precollapse_readout"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "debug", False):
        out["debug"] = "true"
    return out


def _resolve(args) -> RunConfig:
    return parse_config(args.config, _overrides_from_args(args))


def _simulate(run: RunConfig, out_dir: Path):
    a = run.apparatus
    records = []
    if run.mode in ("superposed", "both"):
        records += run_campaign(a, run.n_trials, run.master_seed, run.workers)
    if run.mode in ("control", "both"):
        first = run.n_trials if run.mode == "both" else 0
        records += run_campaign(replace(a, photon_rate=0.0), run.n_trials, run.master_seed,
                                run.workers, first_trial_id=first)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(out_dir / RESOLVED_FILE, _json_value_dict(resolved_dict(run)))
    write_campaign(out_dir, records, debug=run.debug)
    return records


def _json_value_dict(d):
    return {k: (_json_value_dict(v) if isinstance(v, dict) else _json_value(v)) for k, v in d.items()}


def _estimate(campaign_dir: Path, debug: bool, threshold: float | None, n_boot: int):
    resolved = campaign_dir / RESOLVED_FILE
    if not resolved.is_file():
        raise CliError(f"{campaign_dir} has no {RESOLVED_FILE}; not a campaign directory")
    run = from_resolved_dict(json.loads(resolved.read_text(encoding="utf-8")))
    trials = read_campaign(campaign_dir, debug=debug)
    summary = summarize_campaign(trials, run.apparatus, threshold=threshold, n_boot=n_boot,
                                 seed=run.master_seed)
    payload = {k: _json_value(v) for k, v in dataclasses.asdict(summary).items()}
    _dump_json(campaign_dir / SUMMARY_FILE, payload)
    return summary


def cmd_table(args) -> int:
    rows = benchmark_table(variant=OverlapCoefficientVariant.parse(args.variant))
    sys.stdout.write(format_benchmark_table(rows, COMPONENT_COLLAPSE_TIMES))
    if args.csv:
        Path(args.csv).write_text(benchmark_csv(rows), encoding="utf-8")
    return 0


def cmd_selfenergy(args) -> int:
    body = MassBody(args.mass, args.radius, "body")
    geom = SuperpositionGeometry(body, args.displacement)
    E = self_energy(geom, OverlapCoefficientVariant.parse(args.variant))
    print(f"lambda        {geom.lam:.6e}")
    print(f"E_g_J         {E:.6e}")
    print(f"t_gamma1_s    {collapse_time(E, 1.0):.6e}")
    print(f"t_gamma_8pi_s {collapse_time(E, PENROSE_GAMMA):.6e}")
    return 0


def cmd_simulate(args) -> int:
    run = _resolve(args)
    out = Path(run.output_dir)
    records = _simulate(run, out)
    n_photon = sum(1 for r in records if r.trigger_source.value == "Photon")
    print(f"wrote {len(records)} trials ({n_photon} photon-triggered) to {out}")
    return 0


def cmd_estimate(args) -> int:
    campaign = Path(args.campaign_dir)
    if not campaign.is_dir():
        raise CliError(f"campaign directory {campaign} does not exist")
    s = _estimate(campaign, args.debug, args.threshold, args.n_boot)
    print(f"superposed trials     {s.n_superposed}")
    print(f"control trials        {s.n_control}")
    print(f"mean excess delay_s   {s.mean_excess_delay:.6e}")
    print(f"predicted delay_s     {s.predicted_mean_delay:.6e}")
    print(f"ks D / p              {s.ks_statistic:.4g} / {s.ks_p_value:.4g}")
    print(f"gamma estimate        {s.gamma_estimate:.6g} "
          f"[{s.gamma_ci_low:.6g}, {s.gamma_ci_high:.6g}]"
          + (" (degenerate)" if s.gamma_degenerate else ""))
    return 0


SWEEP_HEADER = ("param", "value", "n_superposed", "n_control", "mean_excess_delay_s",
                "predicted_mean_delay_s", "ks_statistic", "ks_p_value", "gamma_estimate",
                "gamma_ci_low", "gamma_ci_high")


def cmd_sweep(args) -> int:
    if args.param not in KNOWN_KEYS:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values is empty")
    base = _overrides_from_args(args)
    root = Path(parse_config(args.config, base).output_dir)
    rows = []
    for value in values:
        point_dir = root / f"{args.param}={value}"
        run = parse_config(args.config, {**base, args.param: value, "output_dir": str(point_dir)})
        _simulate(run, point_dir)
        s = _estimate(point_dir, run.debug, None, args.n_boot)
        rows.append((args.param, value, s.n_superposed, s.n_control, repr(s.mean_excess_delay),
                     repr(s.predicted_mean_delay), repr(s.ks_statistic), repr(s.ks_p_value),
                     repr(s.gamma_estimate), repr(s.gamma_ci_low), repr(s.gamma_ci_high)))
    root.mkdir(parents=True, exist_ok=True)
    with open(root / SWEEP_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    for row in rows:
        print(",".join(str(x) for x in row))
    return 0


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (INI-style key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--n-trials", type=int, dest="n_trials")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--mode", choices=("superposed", "control", "both"))
    p.add_argument("--parallelism", type=int, help="worker processes (default: all cores)")
    p.add_argument("--variant", choices=[v.value for v in OverlapCoefficientVariant])
    p.add_argument("--precollapse-readout", dest="precollapse_readout", choices=("baseline", "mixture"))
    p.add_argument("--debug", action="store_true", help="write/read which-SPAD and branch fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpsim", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"dpsim {__version__} (config schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table", help="benchmark collapse-time table")
    p.add_argument("--variant", default=OverlapCoefficientVariant.ContinuityCorrected.value,
                   choices=[v.value for v in OverlapCoefficientVariant])
    p.add_argument("--csv", help="also write the table as CSV to this file")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("selfenergy", help="self-energy and collapse times of one displaced sphere")
    p.add_argument("--mass", type=float, required=True, help="kg")
    p.add_argument("--radius", type=float, required=True, help="m")
    p.add_argument("--displacement", type=float, required=True, help="m")
    p.add_argument("--variant", default=OverlapCoefficientVariant.ContinuityCorrected.value,
                   choices=[v.value for v in OverlapCoefficientVariant])
    p.set_defaults(func=cmd_selfenergy)

    p = sub.add_parser("simulate", help="run a trial campaign and write traces")
    _add_run_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="analyse an existing campaign directory")
    p.add_argument("campaign_dir")
    p.add_argument("--debug", action="store_true")
    p.add_argument("--threshold", type=float, help="onset threshold in intensity units")
    p.add_argument("--n-boot", type=int, default=1000, dest="n_boot")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="simulate + estimate over a parameter grid")
    _add_run_options(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--n-boot", type=int, default=1000, dest="n_boot")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"dpsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
