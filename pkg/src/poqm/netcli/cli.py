"""``poqm`` command line: experiments, bound sweeps, networked sessions and report re-emission.

Every experiment writes a report (stdout or ``--out``) and exits 0 iff all of
its gates pass, 1 if any gate fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

from ..adversary import (
    Bb84Adversary,
    brute_force_best,
    breidbart_strategy,
    keep_subset_strategy,
    parse_strategy,
    zoo,
)
from ..bb84 import n_from_m2
from ..core import HoldSpec, HonestProver, ProtocolParams, as_rng, run_poqm
from ..derived import EVES, STATEPUZZ_ATTACKERS, ke_agreement, ke_eve_eval, reduction_check, statepuzz_attack_eval
from ..games import (
    SLACK_SE,
    Estimate,
    HybridGame,
    LoccGame,
    amplification_bound,
    amplification_report,
    check_bz,
    estimate_acceptance,
    jensen_report,
    keep_subset_family,
    locc_bound,
    puzzle_bound,
    random_bz_case,
    tight_bz_case,
)
from ..puzzle import (
    ToyPuzzle,
    exact_random_answer_acceptance,
    guess_block_adversary,
    honest_information_adversary,
    keep_all_adversary,
    measure_all_adversary,
    random_answer_adversary,
)
from ..qsim import BREIDBART, HADAMARD
from .report import Report, report_emit
from .session import PROTOCOLS, SessionConfig, make_protocol, run_prover, serve_verifier

GAMES = ("locc", "soundness", "bz", "amplification", "jensen", "brute-force")
LEMMAS = ("locc", "puzzle", "hybrid")

PUZZLE_ADVERSARIES = {
    "measure-all": lambda n: measure_all_adversary(0.0),
    "measure-all-hadamard": lambda n: measure_all_adversary(HADAMARD),
    "random-answer": lambda n: random_answer_adversary(),
    "guess-block": lambda n: guess_block_adversary(),
    "breidbart": lambda n: honest_information_adversary(),
    "keep-all": keep_all_adversary,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, *, trials: int | None = None):
    p.add_argument("--protocol", choices=PROTOCOLS, default="bb84-it")
    p.add_argument("--n", type=int, default=None, help="register size")
    p.add_argument("--k", type=int, default=None, help="puzzle challenge length")
    p.add_argument("--m2", type=int, default=None, help="adversary quantum memory; sets n for bb84-rsp")
    p.add_argument("--strategy", default=None, help="adversary descriptor")
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--seed", type=int, default=None, help="defaults to $POQM_SEED, then 0")
    p.add_argument("--hold-ms", type=int, default=0)
    p.add_argument("--depolarize", type=float, default=0.0)
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--config", default=None, help="JSON or YAML file with flag defaults")


def _network(p: argparse.ArgumentParser):
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--port-file", default=None, help="verifier writes its bound port here")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--session-index", type=int, default=0)
    p.add_argument("--transcript", default=None, help="write the raw frame log here")
    p.add_argument("--timeout", type=float, default=30.0)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="poqm", description="Proofs of quantum memory: experiments and audits.")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["run"] = sub.add_parser("run", help="run a protocol against the honest prover or an adversary")
    _common(p, trials=1000)

    p = subs["game"] = sub.add_parser("game", help="run a security game or oracle check")
    p.add_argument("game", choices=GAMES)
    _common(p, trials=None)
    p.add_argument("--grid", type=int, default=64, help="brute-force grid points per qubit")

    p = subs["bounds"] = sub.add_parser("bounds", help="evaluate closed-form bounds over a range")
    p.add_argument("--lemma", choices=LEMMAS, required=False, default="locc")
    _common(p)
    p.set_defaults(n="1..16")
    for a in p._actions:
        if a.dest == "n":
            a.type = str

    p = subs["hybrid"] = sub.add_parser("hybrid", help="estimate one hybrid of the soundness argument")
    p.add_argument("--which", type=int, choices=(0, 1, 2, 3), default=3)
    p.add_argument("--fail-prob", type=float, default=0.0)
    _common(p, trials=100_000)

    p = subs["ke"] = sub.add_parser("ke", help="key exchange: agreement and eavesdropper scores")
    _common(p, trials=10_000)

    p = subs["statepuzz"] = sub.add_parser("statepuzz", help="state puzzle: honest fidelity and attacker scores")
    _common(p, trials=10_000)

    p = subs["verifier"] = sub.add_parser("verifier", help="serve networked verifier sessions")
    _common(p)
    _network(p)

    p = subs["prover"] = sub.add_parser("prover", help="connect to a verifier as the honest prover")
    _common(p)
    _network(p)

    p = subs["report"] = sub.add_parser("report", help="re-emit a saved JSON report")
    p.add_argument("path")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--config", default=None)
    return parser, subs


def load_config(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        try:
            import yaml
        except ImportError:
            raise UsageError("YAML configs need pyyaml (pip install poqm[yaml])") from None
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError("config must be a mapping of flag names to values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv):
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in subs:
        try:
            cfg = load_config(known.config)
        except (OSError, ValueError, UsageError) as exc:
            parser.error(f"cannot read config: {exc}")
        sp = subs[known.command]
        dests = {a.dest for a in sp._actions} - {"help", "config"}
        unknown = sorted(set(cfg) - dests)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        if isinstance(cfg.get("strategy"), dict):
            cfg["strategy"] = json.dumps(cfg["strategy"])
        sp.set_defaults(**cfg)
    args = parser.parse_args(argv)
    if getattr(args, "seed", 0) is None:
        env = os.environ.get("POQM_SEED")
        try:
            args.seed = int(env) if env else 0
        except ValueError:
            parser.error("POQM_SEED must be an integer")
    return parser, args


# --------------------------------------------------------------------------
# helpers


def _size(args, default: int = 8) -> int:
    """Resolve n; ``--m2`` fixes it for bb84-rsp."""
    n = args.n
    if args.m2 is not None and args.protocol == "bb84-rsp":
        if args.m2 < 1:
            raise UsageError("--m2 must be at least 1 to size bb84-rsp")
        forced = n_from_m2(args.m2)
        if n is not None and n != forced:
            raise UsageError(f"--n {n} conflicts with --m2 {args.m2} (which sets n={forced})")
        return forced
    return default if n is None else n


def _strategy(text, n):
    if text is None:
        return None
    if text.lstrip().startswith("{"):
        text = json.loads(text)
    try:
        return parse_strategy(text, n)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None


def _range(text: str) -> list[int]:
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
    else:
        lo = hi = int(text)
    if lo < 1 or hi < lo:
        raise UsageError(f"bad range {text!r}")
    return list(range(lo, hi + 1))


def _trials(args, default: int) -> int:
    t = default if args.trials is None else args.trials
    if t < 100:
        raise UsageError("--trials must be at least 100")
    return t


def _report(name, args, **kw) -> Report:
    return Report(experiment=name, seed=args.seed, **kw)


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> Report:
    n = _size(args)
    k = args.k if args.protocol == "puzzle" else None
    if args.protocol == "puzzle" and k is None:
        k = 1
    proto = make_protocol(args.protocol, n, k)
    hold = HoldSpec(0, args.depolarize) if args.depolarize else None
    params = ProtocolParams(n, k, hold)
    if args.strategy is None:
        prover, label = HonestProver(), "honest"
    elif args.protocol == "puzzle":
        if args.strategy not in PUZZLE_ADVERSARIES:
            raise UsageError(f"puzzle adversaries: {', '.join(PUZZLE_ADVERSARIES)}")
        prover, label = PUZZLE_ADVERSARIES[args.strategy](n), args.strategy
    else:
        strat = _strategy(args.strategy, n)
        prover, label = Bb84Adversary(strat), strat.descriptor()
    trials = _trials(args, 1000)
    rng = as_rng(args.seed)
    t0 = time.perf_counter()
    hits = sum(run_poqm(proto, prover, params, rng)[0].accepted for _ in range(trials))
    dt = time.perf_counter() - t0
    gates, bounds = {}, {}
    if label == "honest":
        est = Estimate.from_counts(hits, trials)
        if not args.depolarize:
            gates["complete"] = hits == trials
    elif args.protocol == "puzzle":
        est = Estimate.from_counts(hits, trials)
        gates["below_honest"] = est.p_hat < 1.0
    else:
        m2 = prover.m2
        bound = amplification_bound(locc_bound(n)[0], m2)
        bounds["soundness"] = {"value": bound, "vacuous": bound >= 1.0, "m2": m2}
        est = Estimate.from_counts(hits, trials, bound)
        gates["within_bound"] = est.within_bound()
    return _report(
        "run", args,
        params={"protocol": args.protocol, "n": n, "k": k, "m2": args.m2, "prover": label, "depolarize": args.depolarize},
        estimates={"acceptance": est}, bounds=bounds, gates=gates, timings={"run_s": round(dt, 4)},
    )


def game_locc(args) -> Report:
    n = _size(args)
    strategies = [_strategy(args.strategy, n)] if args.strategy else zoo(n, 0)
    trials = _trials(args, 100_000)
    bound, vacuous = locc_bound(n)
    rows, gates, ests = [], {}, {}
    t0 = time.perf_counter()
    for i, s in enumerate(strategies):
        e = estimate_acceptance(LoccGame(s, n), trials, [args.seed, i], bound)
        key = s.descriptor()
        ests[key] = e
        gates[key] = e.within_bound()
        rows.append({"strategy": key, "p_hat": e.p_hat, "ci_low": e.ci_low, "ci_high": e.ci_high, "se": e.se,
                     "trials": trials, "bound": bound, "pass": gates[key]})
    return _report("game-locc", args, params={"n": n, "trials": trials}, estimates=ests,
                   bounds={"locc": {"value": bound, "vacuous": vacuous}}, gates=gates, rows=rows,
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def game_soundness(args) -> Report:
    if args.protocol == "puzzle":
        raise UsageError("soundness game covers the bb84 protocols; puzzles use 'game jensen'")
    m2 = 0 if args.m2 is None else args.m2
    n = _size(args, default=n_from_m2(max(m2, 1)))
    strategies = [_strategy(args.strategy, n)] if args.strategy else zoo(n, m2)
    trials = _trials(args, 100_000)
    raw, _ = locc_bound(n)
    rows, gates, ests = [], {}, {}
    t0 = time.perf_counter()
    for i, s in enumerate(strategies):
        bound = amplification_bound(raw, s.m2)
        e = estimate_acceptance(HybridGame(2, n, s), trials, [args.seed, i], bound)
        key = s.descriptor()
        ests[key] = e
        gates[key] = e.within_bound()
        rows.append({"strategy": key, "m2": s.m2, "p_hat": e.p_hat, "se": e.se, "bound": bound, "pass": gates[key]})
    return _report("game-soundness", args, params={"protocol": args.protocol, "n": n, "m2": m2, "trials": trials},
                   estimates=ests, bounds={"locc": raw}, gates=gates, rows=rows,
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def game_bz(args) -> Report:
    cases = 100 if args.trials is None else args.trials
    rng = as_rng(args.seed)
    rows, violations, tight = [], 0, 0
    tight_case = tight_bz_case()
    t0 = time.perf_counter()
    for i in range(cases + 1):
        circ, ins = tight_case if i == 0 else random_bz_case(rng)
        r = check_bz(circ, ins)
        violations += not r.ok
        tight += r.tight
        rows.append({"case": i, "k": r.k, "ok": r.ok, "tight": r.tight, "worst_ratio": r.worst_ratio})
    first = rows[0]
    return _report("game-bz", args, params={"cases": cases},
                   estimates={"violations": violations, "tight_cases": tight},
                   gates={"no_violations": violations == 0, "tight_case": bool(first["ok"] and first["tight"])},
                   rows=rows, timings={"run_s": round(time.perf_counter() - t0, 4)})


def game_amplification(args) -> Report:
    n = 4 if args.n is None else args.n
    rows, violations = [], 0
    t0 = time.perf_counter()
    if args.strategy:
        family = [(n, _strategy(args.strategy, n))]
    else:
        family = keep_subset_family(n, 2 if args.m2 is None else args.m2)
    for size, s in family:
        r = amplification_report(size, s, "exact")
        violations += not r.ok
        rows.append({"n": size, "strategy": s.descriptor(), "m2": r.m2, "acc_m2": r.acc_m2,
                     "acc_measured": r.acc_measured, "ratio": r.ratio, "ok": r.ok})
    base = amplification_report(1, keep_subset_strategy([0]), "exact")
    anchor = math.isclose(base.acc_m2, 1.0, abs_tol=1e-12) and math.isclose(base.acc_measured, 0.75, abs_tol=1e-12)
    return _report("game-amplification", args, params={"max_n": n, "mode": "exact", "strategies": len(family)},
                   estimates={"violations": violations, "n1_case": [base.acc_m2, base.acc_measured]},
                   gates={"no_violations": violations == 0, "n1_case": anchor}, rows=rows,
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def game_jensen(args) -> Report:
    n = 8 if args.n is None else args.n
    k = 2 if args.k is None else args.k
    trials = _trials(args, 100_000)
    pairs = [("measure-all", measure_all_adversary(0.0), ToyPuzzle(n, k)),
             ("guess-block", guess_block_adversary(), ToyPuzzle(n, k)),
             ("random-answer", random_answer_adversary(), ToyPuzzle(4, 1))]
    if args.strategy:
        if args.strategy not in PUZZLE_ADVERSARIES:
            raise UsageError(f"puzzle adversaries: {', '.join(PUZZLE_ADVERSARIES)}")
        pairs = [(args.strategy, PUZZLE_ADVERSARIES[args.strategy](n), ToyPuzzle(n, k))]
    rows, gates, ests = [], {}, {}
    t0 = time.perf_counter()
    for i, (name, adv, puzzle) in enumerate(pairs):
        r = jensen_report(puzzle, adv, trials, [args.seed, i])
        gates[name] = r.ok
        if adv.deterministic_answer:
            gates[f"{name}:exact"] = r.identical_answers and r.both.successes == r.single.successes
        ests[f"{name}:single"], ests[f"{name}:both"] = r.single, r.both
        rows.append({"pair": name, "n": puzzle.n, "k": puzzle.k, "single": r.single.p_hat, "both": r.both.p_hat,
                     "single_sq": r.single.p_hat ** 2, "slack": r.slack, "ok": r.ok})
    return _report("game-jensen", args, params={"n": n, "k": k, "trials": trials}, estimates=ests,
                   bounds={"puzzle_2^-k": puzzle_bound(k), "random_answer_exact": exact_random_answer_acceptance(4, 1)},
                   gates=gates, rows=rows, timings={"run_s": round(time.perf_counter() - t0, 4)},
                   notes={"bound_note": "computational slack omitted"})


def game_brute_force(args) -> Report:
    n = 1 if args.n is None else args.n
    trials = _trials(args, 100_000)
    t0 = time.perf_counter()
    best, value = brute_force_best(n, grid=args.grid)
    step = math.pi / args.grid
    gates = {}
    est = estimate_acceptance(LoccGame(breidbart_strategy(), n), trials, args.seed)
    notes = {"search_family": getattr(best, "family", "product projective measurements")}
    if n == 1:
        target = math.cos(math.pi / 8) ** 2
        gates["value"] = abs(value - target) <= 0.01
        gates["argmax"] = abs(best.angles_for(1)[0] - BREIDBART) <= step + 1e-12
        gates["breidbart_mc_agrees"] = est.ci_low - SLACK_SE * est.se <= value <= est.ci_high + SLACK_SE * est.se
    else:
        gates["breidbart_not_better"] = est.p_hat <= value + SLACK_SE * est.se
    return _report("game-brute-force", args, params={"n": n, "grid": args.grid, "trials": trials},
                   estimates={"oracle": value, "breidbart_mc": est, "argmax": list(map(float, best.angles_for(n)))},
                   bounds={"cos2_pi_8": math.cos(math.pi / 8) ** 2}, gates=gates, notes=notes,
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def cmd_game(args) -> Report:
    return {
        "locc": game_locc, "soundness": game_soundness, "bz": game_bz, "amplification": game_amplification,
        "jensen": game_jensen, "brute-force": game_brute_force,
    }[args.game](args)


def cmd_bounds(args) -> Report:
    values = _range(args.n)
    rows = []
    for v in values:
        if args.lemma == "locc":
            b, vac = locc_bound(v)
            rows.append({"n": v, "bound": b, "vacuous": vac})
        elif args.lemma == "puzzle":
            rows.append({"k": v, "bound": puzzle_bound(v), "note": "computational slack omitted"})
        else:
            n = n_from_m2(v)
            b, _ = locc_bound(n)
            amp = amplification_bound(b, v)
            rows.append({"m2": v, "n": n, "locc": b, "soundness": amp, "vacuous": amp >= 1.0})
    if args.format is None:
        args.format = "csv"
    return _report(f"bounds-{args.lemma}", args, params={"lemma": args.lemma, "range": str(args.n)}, rows=rows)


def cmd_hybrid(args) -> Report:
    n = _size(args)
    m2 = args.m2 if args.m2 is not None else 0
    strategies = [_strategy(args.strategy, n)] if args.strategy else zoo(n, m2)
    trials = _trials(args, 100_000)
    raw, vac = locc_bound(n)
    rows, gates, ests = [], {}, {}
    t0 = time.perf_counter()
    for i, s in enumerate(strategies):
        bound = raw if args.which == 3 else amplification_bound(raw, s.m2)
        e = estimate_acceptance(HybridGame(args.which, n, s, args.fail_prob), trials, [args.seed, i], bound)
        key = s.descriptor()
        ests[key], gates[key] = e, e.within_bound()
        rows.append({"strategy": key, "m2": s.m2, "p_hat": e.p_hat, "se": e.se, "bound": bound, "pass": gates[key]})
    return _report(f"hybrid-{args.which}", args,
                   params={"which": args.which, "n": n, "m2": m2, "trials": trials, "fail_prob": args.fail_prob},
                   estimates=ests, bounds={"locc": {"value": raw, "vacuous": vac}}, gates=gates, rows=rows,
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def cmd_ke(args) -> Report:
    n = _size(args)
    trials = _trials(args, 10_000)
    t0 = time.perf_counter()
    agree = ke_agreement(n, trials, args.seed)
    gates = {"agreement": agree.successes == trials}
    ests = {"agreement": agree}
    rows = []
    for i, (name, eve) in enumerate(EVES.items()):
        e = ke_eve_eval(eve, n, trials, [args.seed, i])
        ests[f"eve:{name}"] = e
        gates[f"eve:{name}"] = e.within_bound()
        rows.append({"eve": name, "p_hat": e.p_hat, "se": e.se, "bound": e.bound, "pass": gates[f"eve:{name}"]})
    noise = args.depolarize or 0.05
    noisy = ke_agreement(n, trials, [args.seed, 99], noise)
    ests["agreement_noisy"] = noisy
    return _report("ke", args, params={"n": n, "trials": trials, "depolarize": noise}, estimates=ests,
                   bounds={"eve": 2.0 ** -n}, gates=gates, rows=rows,
                   notes={"agreement_drop": agree.p_hat - noisy.p_hat},
                   timings={"run_s": round(time.perf_counter() - t0, 4)})


def cmd_statepuzz(args) -> Report:
    n = _size(args)
    trials = _trials(args, 10_000)
    t0 = time.perf_counter()
    honest = reduction_check(lambda inst: inst.register, n, min(trials, 1000), args.seed)
    gates = {"honest_fidelity": honest.fidelity.p_hat == 1.0, "reduction": honest.ok}
    ests = {"honest_fidelity": honest.fidelity, "honest_acceptance": honest.acceptance}
    rows = []
    bound = 2.0 ** -n
    for i, (name, att) in enumerate(STATEPUZZ_ATTACKERS.items()):
        e = statepuzz_attack_eval(att, n, trials, [args.seed, i]).with_bound(bound)
        ests[f"attacker:{name}"] = e
        gates[f"attacker:{name}"] = e.within_bound()
        rows.append({"attacker": name, "fidelity": e.p_hat, "se": e.se, "bound": bound, "pass": gates[f"attacker:{name}"]})
    return _report("statepuzz", args, params={"n": n, "trials": trials}, estimates=ests, bounds={"attacker": bound},
                   gates=gates, rows=rows, timings={"run_s": round(time.perf_counter() - t0, 4)})


def _session_config(args) -> SessionConfig:
    n = _size(args)
    k = (args.k or 1) if args.protocol == "puzzle" else None
    return SessionConfig(
        protocol=args.protocol, n=n, k=k, seed=args.seed, hold_ms=args.hold_ms, depolarize=args.depolarize,
        host=args.host, port=args.port, port_file=args.port_file, sessions=args.sessions,
        session_index=args.session_index, transcript=args.transcript, timeout=args.timeout,
    )


def cmd_verifier(args) -> Report:
    return serve_verifier(_session_config(args))


def cmd_prover(args) -> Report:
    if not args.port:
        raise UsageError("--port is required for the prover")
    return run_prover(_session_config(args))


def cmd_report(args) -> Report:
    try:
        data = json.loads(Path(args.path).read_text())
        return Report.from_dict(data)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read report: {exc}") from None


COMMANDS = {
    "run": cmd_run, "game": cmd_game, "bounds": cmd_bounds, "hybrid": cmd_hybrid, "ke": cmd_ke,
    "statepuzz": cmd_statepuzz, "verifier": cmd_verifier, "prover": cmd_prover, "report": cmd_report,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, args = parse_args(argv)
    try:
        report = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    data = report_emit(report, args.format or "json")
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
