"""Command-line entry point: ``nmsmc <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .analysis import summarize
from .fom import PARAM_NAMES, THETA_STAR, BatteryTheta, impedance
from .pmmh import Chain, battery_builder, select_num_particles, table_prior

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _scenario_from_args(args) -> sc.Scenario:
    scenario = sc.get_scenario(args.scenario)
    changes = {}
    if getattr(args, "paper_scale", False):
        changes.update(iterations=sc.PAPER_ITERATIONS, n_chains=sc.PAPER_CHAINS)
    for attr, name in (("iterations", "iterations"), ("chains", "n_chains"),
                       ("particles", "n_particles"), ("pilot", "pilot_iterations")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[name] = value
    return scenario.replace(**changes) if changes else scenario


def cmd_simulate(args):
    scenario = _scenario_from_args(args)
    seed = sc.effective_seed(scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = sc.make_dataset(scenario, seed)
    data.to_csv(out / "dataset.csv")
    print(out / "dataset.csv")


def cmd_infer(args):
    scenario = _scenario_from_args(args)
    written = sc.run_scenario(scenario, args.out, seed=args.seed, jobs=args.jobs,
                              burn_in=args.burn_in)
    summary = written["summary_data"]
    for name in summary.names:
        row = summary[name]
        print(f"{name:>7s}  mean {row['mean']:.5g}  sd {row['sd']:.3g}  overlap {row['overlap']:.3f}")
    print(written["summary"])


def cmd_select_n(args):
    scenario = _scenario_from_args(args)
    seed = sc.effective_seed(scenario, args.seed)
    data = sc.make_dataset(scenario, seed)
    builder = battery_builder(scenario.ts, scenario.T, scenario.sigma_x, scenario.sigma_y)
    candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    chosen, report = select_num_particles(
        table_prior(scenario.prior_kind), builder, data, n_reps=args.reps,
        candidate_Ns=candidates, threshold=args.threshold, n_theta=args.n_theta,
        seed=seed, proposal=scenario.proposal)
    for N, row in report["candidates"].items():
        print(f"N={N:5d}  conditional acceptance {row['mean']:.3f}")
    print(f"chosen N: {chosen}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, default=str))


def cmd_summarize(args):
    chain_dir = Path(args.chains)
    paths = sorted(chain_dir.glob("chain_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no chain_*.csv files in {chain_dir}")
    chains = [Chain.from_csv(p) for p in paths]
    prior = table_prior(args.prior) if tuple(chains[0].names) == PARAM_NAMES else None
    summary = summarize(chains, burn_in=args.burn_in, prior=prior)
    text = summary.to_json(args.out)
    if not args.out:
        print(text)


def cmd_impedance(args):
    theta = THETA_STAR
    if args.theta:
        raw = json.loads(Path(args.theta).read_text())
        if isinstance(raw, dict):
            raw = [raw[n] for n in PARAM_NAMES]
        theta = BatteryTheta.from_array(raw)
    if not (0 < args.fmin < args.fmax):
        raise ValueError("need 0 < fmin < fmax")
    f = np.logspace(np.log10(args.fmin), np.log10(args.fmax), args.points)
    z = impedance(theta, 2 * np.pi * f)
    lines = ["f,re,im,mag,phase"]
    lines += [f"{float(fi)!r},{float(zi.real)!r},{float(zi.imag)!r},{float(abs(zi))!r},{float(np.degrees(np.angle(zi)))!r}"
              for fi, zi in zip(f, z)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_list(args):
    for name, desc in sc.list_scenarios().items():
        print(f"{name:12s} {desc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmsmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, budget=True):
        p.add_argument("--scenario", default="base", help="builtin name or JSON file")
        p.add_argument("--seed", type=int, default=None)
        if budget:
            p.add_argument("--iterations", type=int, default=None)
            p.add_argument("--chains", type=int, default=None)
            p.add_argument("--particles", type=int, default=None)
            p.add_argument("--pilot", type=int, default=None, help="pilot run length")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    scenario_args(p, budget=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="tuned PMMH chains for a scenario")
    scenario_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--paper-scale", action="store_true",
                   help=f"{sc.PAPER_ITERATIONS} iterations, {sc.PAPER_CHAINS} chains")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--burn-in", type=float, default=0.25)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("select-n", help="choose the particle count by conditional acceptance")
    scenario_args(p, budget=False)
    p.add_argument("--candidates", default="16,64,128")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n-theta", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_select_n)

    p = sub.add_parser("summarize", help="pooled posterior summary of chain CSVs")
    p.add_argument("--chains", required=True, help="directory holding chain_*.csv")
    p.add_argument("--burn-in", type=float, default=0.25)
    p.add_argument("--prior", default="uniform", choices=["uniform", "truncated_gaussian"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("impedance", help="frequency response of the circuit as CSV")
    p.add_argument("--theta", default=None, help="JSON file with the six parameters")
    p.add_argument("--fmin", type=float, default=1e-4)
    p.add_argument("--fmax", type=float, default=2e3)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_impedance)

    p = sub.add_parser("list-scenarios", help="show builtin scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (OSError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
