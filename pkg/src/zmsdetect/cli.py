"""Command-line front end.

Every command writes into ``<out-dir>/<command>/`` and prints one summary
line.  Exit status: 0 on success, 2 for usage errors, 3 when a module
reports that the instance is outside its capabilities, 1 for any other
package error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys

import numpy as np

from . import adversary, crypto, exponents, scenario
from .detection import diameter_decide, diameter_statistic
from .errors import CapabilityError, ZMSError
from .protocol import ProtocolConfig, run_on_types
from .ring import RingParams
from .typestat import EmpiricalType

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CAPABILITY = 0, 1, 2, 3


def _run_dir(args) -> str:
    path = os.path.join(args.out_dir, args.command)
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_protocol_demo(args) -> str:
    out = _run_dir(args)
    cfg = ProtocolConfig.default(args.K, args.alphabet, m=args.m, scheme=args.scheme, security_n=args.n)
    rng = np.random.default_rng(args.seed)
    probs = rng.dirichlet(np.ones(args.alphabet))
    types = [EmpiricalType(tuple(int(c) for c in rng.multinomial(args.t, probs))) for _ in range(args.K)]
    res = run_on_types(cfg, types, args.gamma, seed=args.seed)
    plain = int(diameter_decide(types, args.gamma))
    plain_stat = diameter_statistic(types)
    res.transcript.write(os.path.join(out, "transcript.jsonl"))
    summary = {
        "K": args.K, "alphabet_size": args.alphabet, "t": args.t, "m": args.m,
        "scheme": args.scheme, "n": args.n, "gamma": args.gamma, "seed": args.seed,
        "types": [tp.to_row() for tp in types],
        "decision": res.decision, "statistic": res.statistic,
        "statistic_exact": str(res.statistic_exact),
        "plaintext_statistic": plain_stat, "plaintext_decision": plain,
        "band": cfg.band(), "messages": len(res.transcript),
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    return (f"protocol-demo: decision={res.decision} statistic={res.statistic:.6f} "
            f"plaintext={plain_stat:.6f} messages={len(res.transcript)} -> {out}")


def _study_config(args) -> scenario.ScenarioConfig:
    cfg = scenario.load_config(args.config) if args.config else scenario.ScenarioConfig()
    over = {} if args.seed is None else {"seed": args.seed}
    if args.trials is not None:
        over["trials"] = args.trials
    if args.configs is not None:
        over["configs"] = args.configs
    if args.t_values is not None:
        over["t_values"] = _ints(args.t_values)
    if args.statistic_path is not None:
        over["statistic_path"] = args.statistic_path
    return cfg.replace(**over)


def cmd_study(args) -> str:
    out = _run_dir(args)
    cfg = _study_config(args)
    res = scenario.run_study(cfg, workers=args.workers)
    res.write(out)
    with open(os.path.join(out, "scenario.cfg"), "w") as fh:
        fh.write(scenario.format_config(cfg))
    lam = cfg.lambda_targets[0]
    series = res.exponent_series(lam)
    trend = scenario.exponent_trend_ok(series)
    exps = " ".join(f"{r.exponent:.4f}" for r in series)
    return f"study: seed={cfg.seed} lambda={lam} exponents=[{exps}] trend_ok={trend} -> {out}"


def cmd_exponents(args) -> str:
    out = _run_dir(args)
    problem = exponents.ExponentProblem(2, 2, args.d0, args.d1, family=args.family)
    problem.check_capability()
    grid = np.linspace(0.0, args.d1, args.points + 1)[1:]
    top = exponents.alpha_star(args.d1, problem, args.step)
    alphas = [top * i / (args.points + 1) for i in range(1, args.points + 1)]
    written = []
    for name, arguments in (("alpha_star", grid), ("gamma_star", alphas),
                            ("beta_star_lower", alphas), ("beta_star_upper", alphas)):
        curve = exponents.ExponentCurve.compute(name, arguments, problem, args.step)
        path = os.path.join(out, f"{name}.csv")
        curve.to_csv(path)
        written.append(f"{name}:{'monotone' if curve.is_monotone() else 'NOT-monotone'}")
    return f"exponents: d0={args.d0} d1={args.d1} step={args.step} {' '.join(written)} -> {out}"


def cmd_gap(args) -> str:
    out = _run_dir(args)
    problem = exponents.ExponentProblem(2, 2, args.d0, args.d1)
    table = exponents.verify_gap(problem, step=args.step, count=args.alphas)
    table.to_csv(os.path.join(out, "gap.csv"))
    verdicts = [r.verdict for r in table.rows]
    margin = min(r.margin for r in table.rows)
    return (f"gap: d1={args.d1} alphas={len(verdicts)} gap_at_all={table.all_gap} "
            f"min_margin={margin:.6f} -> {out}")


def _game_params(args) -> adversary.GameParams:
    return adversary.GameParams(K=args.K, L=args.L, alphabet_size=args.alphabet, m=args.m, t=args.t,
                                scheme=args.scheme, n=args.n, tau=args.tau, budget_s=args.budget)


def cmd_privacy_games(args) -> str:
    out = _run_dir(args)
    params = _game_params(args)
    results = []
    if args.game in ("tea", "both"):
        results += adversary.run_tea_suite(params, [a() for a in adversary.TEA_SUITE], args.trials, seed=args.seed,
                                           workers=args.workers)
    if args.game in ("tda", "both"):
        q_L, q0, q1 = adversary.default_tda_triple(params)
        results += adversary.run_tda_suite(params, [a() for a in adversary.TDA_SUITE], q_L, q0, q1, args.trials,
                                           seed=args.seed, workers=args.workers)
    uniformity = None
    if not args.skip_uniformity:
        uniformity = adversary.check_mask_uniformity(params.K, params.L, params.m, params.alphabet_size,
                                                     samples=args.uniformity_samples, seed=args.seed)
    _write_json(os.path.join(out, "games.json"), {
        "seed": args.seed, "games": [r.to_dict() for r in results],
        "uniformity": uniformity.to_dict() if uniformity else None})
    worst = max(results, key=lambda r: (r.win_rate - r.baseline_rate) / r.band)
    verdicts = sorted({r.verdict for r in results})
    return (f"privacy-games: scheme={args.scheme} trials={args.trials} verdicts={','.join(verdicts)} "
            f"max_excess={worst.attacker}:{worst.win_rate - worst.baseline_rate:+.4f} -> {out}")


def cmd_cpa_check(args) -> str:
    out = _run_dir(args)
    scheme = crypto.get_scheme(args.scheme)
    params = RingParams(args.ring_N, args.m)
    results = []
    for i, cls in enumerate(crypto.CPA_SUITE):
        rng = random.Random(args.seed * 1009 + i)
        results.append(crypto.run_cpa_experiment(scheme, args.n, cls(), args.trials, params, rng))
    _write_json(os.path.join(out, "cpa.json"), {"seed": args.seed, "results": [r.to_dict() for r in results]})
    best = max(results, key=lambda r: r.advantage)
    return (f"cpa-check: scheme={scheme.name} n={args.n} trials={args.trials} "
            f"advantage={best.advantage:.4f} ({best.attacker}) band={best.band:.4f} -> {out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config file (key = value lines)")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (default: the config file's seed, else 0)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--out-dir", default="runs", help="outputs go to OUT_DIR/<command>/")

    p = argparse.ArgumentParser(prog="zmsdetect", description="Private distributed K-sample testing experiments",
                                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("protocol-demo", parents=[common], formatter_class=fmt,
                       help="one end-to-end protocol run with a transcript")
    d.add_argument("--K", type=int, default=4)
    d.add_argument("--alphabet", type=int, default=8, help="alphabet size |X|")
    d.add_argument("--t", type=int, default=100, help="sequence length")
    d.add_argument("--m", type=int, default=13, help="fractional bits")
    d.add_argument("--scheme", default="elgamal", choices=sorted(crypto.SCHEMES))
    d.add_argument("--n", type=int, default=2048, help="security parameter in bits")
    d.add_argument("--gamma", type=float, default=0.5, help="decision threshold")
    d.set_defaults(func=cmd_protocol_demo)

    defaults = scenario.ScenarioConfig()
    s = sub.add_parser("study", parents=[common], formatter_class=fmt,
                       help="spectrum-sensing Monte Carlo study")
    s.add_argument("--trials", type=int, default=None, help=f"trials per (t, config, hypothesis) [{defaults.trials}]")
    s.add_argument("--configs", type=int, default=None, help=f"sensor placements [{defaults.configs}]")
    s.add_argument("--t-values", default=None,
                   help=f"comma-separated sequence lengths [{','.join(map(str, defaults.t_values))}]")
    s.add_argument("--statistic-path", default=None, choices=("plaintext", "masked", "protocol"),
                   help=f"how the statistic is computed [{defaults.statistic_path}]")
    s.set_defaults(func=cmd_study)

    e = sub.add_parser("exponents", parents=[common], formatter_class=fmt,
                       help="binary two-sensor exponent curves as CSV")
    e.add_argument("--d0", type=float, default=0.0)
    e.add_argument("--d1", type=float, default=0.5)
    e.add_argument("--step", type=float, default=1e-3, help="grid step")
    e.add_argument("--points", type=int, default=20, help="curve points")
    e.add_argument("--family", default="product", choices=("product", "joint"))
    e.set_defaults(func=cmd_exponents)

    g = sub.add_parser("gap", parents=[common], formatter_class=fmt,
                       help="compare the two miss exponents at interior alphas")
    g.add_argument("--d0", type=float, default=0.0)
    g.add_argument("--d1", type=float, default=0.5)
    g.add_argument("--alphas", type=int, default=5, help="interior alpha count")
    g.add_argument("--step", type=float, default=1e-3, help="grid step")
    g.set_defaults(func=cmd_gap)

    gp = adversary.GameParams()
    a = sub.add_parser("privacy-games", parents=[common], formatter_class=fmt,
                       help="type estimation and discrimination games")
    a.add_argument("--game", default="both", choices=("tea", "tda", "both"))
    a.add_argument("--trials", type=int, default=10_000)
    a.add_argument("--scheme", default=gp.scheme, choices=sorted(crypto.SCHEMES))
    a.add_argument("--n", type=int, default=gp.n, help="security parameter in bits")
    a.add_argument("--K", type=int, default=gp.K)
    a.add_argument("--L", type=int, default=gp.L, help="colluding sensors")
    a.add_argument("--alphabet", type=int, default=gp.alphabet_size)
    a.add_argument("--m", type=int, default=gp.m)
    a.add_argument("--t", type=int, default=gp.t)
    a.add_argument("--tau", type=float, default=gp.tau, help="estimation neighborhood radius")
    a.add_argument("--budget", type=float, default=gp.budget_s, help="seconds per attacker hook call")
    a.add_argument("--uniformity-samples", type=int, default=10**6)
    a.add_argument("--skip-uniformity", action="store_true")
    a.set_defaults(func=cmd_privacy_games)

    c = sub.add_parser("cpa-check", parents=[common], formatter_class=fmt,
                       help="CPA game against the attacker suite")
    c.add_argument("--scheme", default="elgamal", choices=sorted(crypto.SCHEMES))
    c.add_argument("--n", type=int, default=256, help="security parameter in bits")
    c.add_argument("--trials", type=int, default=10_000)
    c.add_argument("--ring-N", type=int, default=3, help="ring modulus N of the plaintext space")
    c.add_argument("--m", type=int, default=13)
    c.set_defaults(func=cmd_cpa_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "study" and args.seed is None:
        args.seed = 0
    try:
        print(args.func(args))
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (ZMSError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
