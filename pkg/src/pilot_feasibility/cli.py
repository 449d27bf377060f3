"""Command line interface.

    pilot-feasibility <command> --config design.json [--seed N] [--out DIR] [--threads N]

Commands: boundary, ocs, compare, sweep, scenarios, decide, mc-check.
Every command writes CSV files whose first line is a ``#`` comment with
the config hash and seed, followed by a header row.
"""

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

import numpy as np

from .comparator import ThresholdTriple, go_probability, pc_frontier
from .config import ConfigError, load_config_file
from .errors import InfeasibleHypothesisError, NumericGuardError, UnattainableTargetError
from .hypotheses import boundary_grid
from .model import Rates, definitive_power, x_to_power
from .ocs import characteristics, pareto_frontier, solve_c_for_beta, sweep_p0
from .pilot import INDEPENDENT, PilotDesign, PilotOutcome, decide, pilot_power
from .simulate import SimSettings, simulate_definitive, simulate_pilot
from .variance import VarianceConfig, pilot_power_unknown_sigma

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class CsvOut:
    def __init__(self, cfg, seed, command, out_dir):
        self.cfg = cfg
        self.seed = seed
        self.command = command
        self.out_dir = out_dir

    def text(self, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.cfg.sha256} seed={self.seed} "
                  f"command={self.command}\r\n")
        w = csv.writer(buf)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write(self, name, header, rows):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.text(header, rows))
        return path


def _oc_kwargs(cfg):
    kw = {"grid_step": cfg.grid_step}
    if cfg.sigma_mode == "estimate":
        kw["s_quantile"] = cfg.s_quantile
    else:
        kw["model"] = cfg.model
    return kw


def _witness_cols(w, with_sigma):
    cols = [w.phi_r, w.phi_f, w.phi_a]
    if with_sigma:
        cols.append(w.sigma)
    return cols


def cmd_boundary(cfg, out, threads):
    sigma = cfg.sigma_floor if cfg.sigma_mode == "estimate" else cfg.design.sigma0
    paths = []
    for which, name in (("null", "boundary_null.csv"), ("alternative", "boundary_alt.csv")):
        rows = []
        for p0 in cfg.p0_values:
            hyp = cfg.hypotheses(p0)
            x_i = hyp.x0 if which == "null" else hyp.x1
            g = boundary_grid(cfg.design, x_i, cfg.grid_step, sigma)
            for r, a, f in zip(g.phi_r, g.phi_a, g.phi_f):
                rows.append((p0, cfg.p1, r, f, a, sigma))
        paths.append(out.write(name, ["p0", "p1", "phi_r", "phi_f", "phi_a", "sigma"], rows))
    return paths


def _ocs_rows(cfg, design, hyp, n_p, threads):
    est = cfg.sigma_mode == "estimate"
    front = pareto_frontier(design, hyp, n_p, cfg.moo, threads=threads, **_oc_kwargs(cfg))
    rows = []
    for p in front:
        rows.append([n_p, p.c, p.alpha, p.beta]
                    + _witness_cols(p.phi0_witness, est) + _witness_cols(p.phi1_witness, est))
    return rows


def _ocs_header(cfg):
    est = cfg.sigma_mode == "estimate"
    h = ["n_p", "c", "alpha", "beta", "phi0_r", "phi0_f", "phi0_a"]
    h += ["sigma0"] if est else []
    h += ["phi1_r", "phi1_f", "phi1_a"]
    h += ["sigma1"] if est else []
    return h


def cmd_ocs(cfg, out, threads):
    hyp = cfg.hypotheses()
    rows = []
    for n_p in cfg.pilot_sizes:
        rows += _ocs_rows(cfg, cfg.design, hyp, n_p, threads)
    return [out.write("ocs.csv", _ocs_header(cfg), rows)]


def cmd_compare(cfg, out, threads):
    hyp = cfg.hypotheses()
    rows = []
    for n_p in cfg.pilot_sizes:
        for p in pc_frontier(cfg.design, hyp, n_p, cfg.grid_step, threads=threads):
            t = p.thresholds
            rows.append((n_p, t.c_f, t.c_a, t.c_r, p.alpha, p.beta))
    return [out.write("compare.csv", ["n_p", "c_f", "c_a", "c_r", "alpha", "beta"], rows)]


def cmd_sweep(cfg, out, threads):
    rows = []
    kw = _oc_kwargs(cfg)
    # beta only involves the alternative, so any valid p0 serves for the solve
    hyp = cfg.hypotheses(min(cfg.p0_grid))
    for n_p in cfg.pilot_sizes:
        c = solve_c_for_beta(cfg.design, hyp, n_p, cfg.beta_target, **kw)
        beta = characteristics(cfg.design, hyp, n_p, **kw).beta(c)
        for p0, alpha in sweep_p0(cfg.design, cfg.p1, n_p, c, cfg.p0_grid, **kw):
            rows.append((n_p, c, beta, p0, alpha))
    return [out.write("sweep.csv", ["n_p", "c", "beta", "p0", "alpha"], rows)]


def cmd_scenarios(cfg, out, threads):
    rows = []
    for n_t in cfg.scenario_n_t:
        design = replace(cfg.design, n_t=n_t)
        for p0 in cfg.scenario_p0:
            hyp = cfg.hypotheses(p0, design)
            for n_p in cfg.scenario_n_p:
                for r in _ocs_rows(cfg, design, hyp, n_p, threads):
                    rows.append((n_t, p0, n_p, "statistic", r[1], None, None, None, r[2], r[3]))
                for p in pc_frontier(design, hyp, n_p, cfg.grid_step, threads=threads):
                    t = p.thresholds
                    rows.append((n_t, p0, n_p, "thresholds", None, t.c_f, t.c_a, t.c_r,
                                 p.alpha, p.beta))
    header = ["n_t", "p0", "n_p", "method", "c", "c_f", "c_a", "c_r", "alpha", "beta"]
    return [out.write("scenarios.csv", header, rows)]


def cmd_decide(cfg, out, threads, counts, c, sigma_hat):
    s, f0, n11, n01, n00, n10 = counts
    outcome = PilotOutcome(s, f0, n11, n01, n00, n10, sigma_hat)
    pilot = PilotDesign(outcome.n_p, c, cfg.model.correlation_mode,
                        cfg.model.adherence_estimator)
    d = decide(cfg.design, pilot, outcome)
    est = d.estimates
    header = ["decision", "statistic", "predicted_power", "c", "power_threshold",
              "phi_r_hat", "phi_f_hat", "phi_a_hat"]
    row = ("go" if d.go else "stop", d.statistic, d.predicted_power, c,
           x_to_power(cfg.design, c), est.phi_r_hat, est.phi_f_hat, est.phi_a_hat)
    sys.stdout.write(out.text(header, [row]))
    return [out.write("decide.csv", header, [row])]


def _random_rates(rng):
    return Rates(float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.5, 1.0)),
                 float(rng.uniform(0.5, 1.0)))


def cmd_mc_check(cfg, out, threads):
    rng = np.random.default_rng(cfg.moo.seed)
    sims = np.random.SeedSequence(cfg.moo.seed).spawn(4 * cfg.mc_cases * len(cfg.pilot_sizes))
    seeds = iter(int(s.generate_state(1, np.uint64)[0]) for s in sims)
    reps = cfg.mc_replicates
    design = cfg.design
    rows = []

    def add(name, analytic, res):
        rows.append((name, analytic, res.estimate, res.se, res.z_score(analytic)))

    for n_p in cfg.pilot_sizes:
        for _ in range(cfg.mc_cases):
            rates = _random_rates(rng)
            c = float(rng.uniform(1.0, 3.0))
            if cfg.model.correlation_mode == INDEPENDENT:
                pr = rates
            else:
                pr = Rates(rates.phi_r, rates.phi_f, rates.phi_a, cfg.model.phi_or)
            pilot = PilotDesign(n_p, c, cfg.model.correlation_mode, cfg.model.adherence_estimator)
            sim = SimSettings(reps, next(seeds), threads)
            label = f"pilot_power n_p={n_p} c={c:.4f} phi=({pr.phi_r:.4f},{pr.phi_f:.4f},{pr.phi_a:.4f})"
            add(label, pilot_power(design, pilot, pr), simulate_pilot(design, pilot, pr, sim))

            t = ThresholdTriple(*(float(v) for v in rng.uniform(0.2, 0.9, 3)))
            sim = SimSettings(reps, next(seeds), threads)
            label = f"go_probability n_p={n_p} thresholds=({t.c_f:.4f},{t.c_a:.4f},{t.c_r:.4f})"
            add(label, go_probability(design, n_p, t, rates),
                simulate_pilot(design, PilotDesign(n_p, 0.0), rates, sim, thresholds=t))

            sim = SimSettings(reps, next(seeds), threads)
            label = f"definitive_power phi=({pr.phi_r:.4f},{pr.phi_f:.4f},{pr.phi_a:.4f})"
            add(label, definitive_power(design, pr), simulate_definitive(design, pr, sim))

            seed = next(seeds)
            if cfg.sigma_mode == "estimate":
                sig = float(rng.uniform(cfg.sigma_floor, 2.0 * cfg.sigma_floor))
                rs = rates.with_sigma(sig)
                # a near-complete decliner range keeps truncation out of the comparison
                vcfg = VarianceConfig(cfg.sigma_floor, 1.0 - 1e-9)
                sim = SimSettings(reps, seed, threads)
                label = f"pilot_power_unknown_sigma n_p={n_p} c={c:.4f} sigma={sig:.4f}"
                add(label, pilot_power_unknown_sigma(design, PilotDesign(n_p, c), rs, vcfg),
                    simulate_pilot(design, PilotDesign(n_p, c), rs, sim, estimate_sigma=True))
    return [out.write("mc_check.csv", ["quantity", "analytic", "empirical", "se", "z"], rows)]


COMMANDS = {
    "boundary": cmd_boundary,
    "ocs": cmd_ocs,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "scenarios": cmd_scenarios,
    "decide": cmd_decide,
    "mc-check": cmd_mc_check,
}


def _counts(text):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected six comma-separated counts s,f0,n11,n01,n00,n10")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _seed(text):
    v = int(text)
    if not (0 <= v < 2 ** 64):
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON design config")
    common.add_argument("--seed", type=_seed, help="override the RNG seed")
    common.add_argument("--out", help="output directory (default: config 'output')")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")
    parser = argparse.ArgumentParser(prog="pilot-feasibility", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "decide":
            p.add_argument("--counts", type=_counts, required=True,
                           help="s,f0,n11,n01,n00,n10")
            p.add_argument("--c", type=float, required=True, help="critical value")
            p.add_argument("--sigma-hat", type=float, default=None,
                           help="pooled pilot SD (estimated-SD mode)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config_file(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    threads = max(1, args.threads)
    out = CsvOut(cfg, cfg.moo.seed, args.command, args.out or cfg.output)
    try:
        if args.command == "decide":
            paths = cmd_decide(cfg, out, threads, args.counts, args.c, args.sigma_hat)
        else:
            paths = COMMANDS[args.command](cfg, out, threads)
    except InfeasibleHypothesisError as exc:
        print(f"infeasible hypotheses: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericGuardError, UnattainableTargetError) as exc:
        print(f"numeric guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
