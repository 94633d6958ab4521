"""Command-line experiment runner and theorem-check battery.

Subcommands: run, verify, enumerate-beliefs, build-belief-mdp, gaps.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io
import json
import math
from pathlib import Path
import sys

import numpy as np

from . import analysis as an
from .belief import BeliefSet, reachable_belief_set
from .envs import PRESETS, make_env
from .feedback import FeedbackKind
from .policy import batch_scores, grad_log_policy, init_policy, load_policy
from .pomdp_core import load_model, sample_batch
from .reg_pg import TrainConfig, train

AGGREGATE_HEADER = ("iter", "metric", "mean", "ci95_low", "ci95_high")
METRICS = ("true_entropy", "proxy_value", "regularizer")
Z95 = 1.96
# large enough that the regularizer visibly shapes RegMBE gradients
GRADIENT_CHECK_RHO = 0.3

# flag defaults; a config file may override these and explicit flags override both
RUN_DEFAULTS = {
    "env": "single-room-5x5",
    "sigma2": 0.1,
    "stochastic": False,
    "size": None,
    "feedback": "mse",
    "policy": "ba",
    "alpha": 0.3,
    "batch": 10,
    "episodes": 1000,
    "rho": 0.02,
    "belief_noise": 0.0,
    "seed": 0,
    "runs": 16,
    "eval_every": 1,
    "baseline": True,
    "out": "results",
    "workers": 1,
}


@dataclass
class ExperimentSpec:
    env: str = "single-room-5x5"
    sigma2: float = 0.1
    stochastic: bool = False
    size: int = None
    train: TrainConfig = field(default_factory=TrainConfig)
    runs: int = 16
    out: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.env not in PRESETS:
            raise ValueError(f"unknown env preset {self.env!r}; choose from {PRESETS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def build_model(self):
        return make_env(self.env, self.sigma2, self.stochastic, self.size)


def spec_from_options(opts):
    feedback = FeedbackKind.parse(opts["feedback"], rho=opts["rho"])
    config = TrainConfig(
        learning_rate=opts["alpha"], batch_size=opts["batch"], episodes=opts["episodes"],
        feedback=feedback, policy_class=opts["policy"].upper(), belief_noise=opts["belief_noise"],
        eval_every=opts["eval_every"], master_seed=opts["seed"], baseline=opts["baseline"],
    )
    return ExperimentSpec(opts["env"], opts["sigma2"], opts["stochastic"], opts["size"],
                          config, opts["runs"], opts["out"], opts["workers"])


def aggregate_curves(curves):
    """Per-iteration mean and normal-approximation 95% CI across runs."""
    iters = [p.iteration for p in curves[0].points]
    rows = []
    for metric in METRICS:
        values = np.array([c.column(metric) for c in curves])
        mean = values.mean(axis=0)
        if len(curves) > 1:
            half = Z95 * values.std(axis=0, ddof=1) / math.sqrt(len(curves))
        else:
            half = np.zeros_like(mean)
        for i, it in enumerate(iters):
            rows.append((it, metric, float(mean[i]), float(mean[i] - half[i]), float(mean[i] + half[i])))
    rows.sort(key=lambda r: (r[0], METRICS.index(r[1])))
    return rows


def aggregate_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for it, metric, mean, lo, hi in rows:
        writer.writerow([it, metric, repr(mean), repr(lo), repr(hi)])
    return buf.getvalue()


def aggregate_from_csv(text):
    return [(int(r["iter"]), r["metric"], float(r["mean"]), float(r["ci95_low"]), float(r["ci95_high"]))
            for r in csv.DictReader(io.StringIO(text))]


def _one_run(args):
    spec, r = args
    config = replace(spec.train, master_seed=spec.train.master_seed + r)
    model = spec.build_model()
    belief_set = reachable_belief_set(model) if config.policy_class == "B" else None
    _, curve = train(model, config, belief_set)
    return curve


def run_curves(spec):
    """Train ``spec.runs`` independent seeds; results are ordered by run index."""
    jobs = [(spec, r) for r in range(spec.runs)]
    if spec.workers == 1:
        return [_one_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        return list(pool.map(_one_run, jobs))


def run_experiment(spec):
    """Write run_<seed>.csv per run plus aggregate.csv and spec.json under ``spec.out``."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = run_curves(spec)
    for r, curve in enumerate(curves):
        (out / f"run_{spec.train.master_seed + r}.csv").write_text(curve.to_csv())
    rows = aggregate_curves(curves)
    (out / "aggregate.csv").write_text(aggregate_to_csv(rows))
    meta = {
        "env": spec.env, "sigma2": spec.sigma2, "stochastic": spec.stochastic, "size": spec.size,
        "feedback": spec.train.feedback.label, "rho": spec.train.feedback.rho,
        "policy": spec.train.policy_class, "alpha": spec.train.learning_rate,
        "batch": spec.train.batch_size, "episodes": spec.train.episodes,
        "belief_noise": spec.train.belief_noise, "seed": spec.train.master_seed,
        "runs": spec.runs, "eval_every": spec.train.eval_every, "baseline": spec.train.baseline,
    }
    (out / "spec.json").write_text(json.dumps(meta, indent=1) + "\n")
    return curves, rows


# --------------------------------------------------------------------------
# verify battery


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _micro_instances(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        dims = rng.integers(2, 4, size=3)
        horizon = 3 if dims.prod() > 8 else 4
        out.append(an.random_pomdp(rng, int(dims[0]), int(dims[1]), int(dims[2]), horizon))
    return out, rng


def small_belief_set(model, rng, extra=2):
    """Uniform belief plus a few random ones; enough rows to exercise class B."""
    bset = BeliefSet(model.num_states)
    bset.add(np.full(model.num_states, 1.0 / model.num_states))
    for b in rng.dirichlet(np.ones(model.num_states), size=extra):
        bset.add(b)
    return bset


def check_gradients(instances, rng, tol=1e-6):
    results = []
    for idx, model in enumerate(instances):
        for tag in ("O", "BA", "S", "B"):
            bset = small_belief_set(model, rng) if tag == "B" else None
            params = an.random_policy(rng, tag, model, bset)
            for name in ("MSE", "MOE", "MBE", "RegMBE"):
                kind = FeedbackKind.parse(name, rho=GRADIENT_CHECK_RHO)
                fd = an.finite_difference_gradient(model, params, kind)
                err_dp = an.relative_error(an.exact_gradient(model, params, kind), fd)
                err_score = an.relative_error(an.expected_update_direction(model, params, kind), fd)
                err = max(err_dp, err_score)
                results.append(CheckResult(f"gradient[{idx}] {tag} {name}", err <= tol,
                                           f"max relative error {err:.2e}"))
    return results


def check_batch_scores(instances, rng, tol=1e-9):
    """Vectorised scores used in training agree with the per-step score function."""
    results = []
    for idx, model in enumerate(instances):
        for tag in ("O", "BA", "S", "B"):
            bset = small_belief_set(model, rng) if tag == "B" else None
            params = an.random_policy(rng, tag, model, bset)
            batch = sample_batch(model, params, int(rng.integers(1 << 31)), 0, 8)
            fast = batch_scores(params, batch.infos, batch.actions)
            err = 0.0
            for n in range(batch.size):
                slow = np.zeros_like(params.theta)
                for t, a in enumerate(batch.actions[n]):
                    slow += grad_log_policy(params, batch.info_state(n, t, tag), a)
                err = max(err, float(np.abs(slow - fast[n]).max()))
            results.append(CheckResult(f"scores[{idx}] {tag}", err <= tol, f"max abs error {err:.2e}"))
    return results


def check_gaps(instances, rng):
    results = []
    for idx, model in enumerate(instances):
        params = an.random_policy(rng, "BA", model)
        report = an.proxy_gap_bounds(model, params)
        holds = report.sandwich_holds()
        failed = [k for k, v in holds.items() if not v]
        results.append(CheckResult(f"gaps[{idx}]", not failed,
                                   f"excluded {report.excluded}" + (f"; failed {failed}" if failed else "")))
    return results


def check_lipschitz(instances, rng, pairs=10):
    results = []
    for idx, model in enumerate(instances):
        worst = -math.inf
        for name in ("MSE", "MOE", "MBE"):
            for tag in ("O", "BA", "S"):
                for _ in range(pairs):
                    p1 = an.random_policy(rng, tag, model)
                    p2 = an.random_policy(rng, tag, model)
                    res = an.lipschitz_check(model, p1, p2, FeedbackKind(name))
                    worst = max(worst, res.lhs - res.bound)
        results.append(CheckResult(f"lipschitz[{idx}]", worst <= 1e-12, f"max lhs - bound {worst:.2e}"))
    return results


def verify(gradients=True, gaps=True, lipschitz=True, instances=3, seed=0, out=sys.stdout):
    models, rng = _micro_instances(instances, seed)
    results = []
    if gradients:
        results += check_batch_scores(models, rng)
        results += check_gradients(models, rng)
    if gaps:
        results += check_gaps(models, rng)
    if lipschitz:
        results += check_lipschitz(models, rng)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}", file=out)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return results


# --------------------------------------------------------------------------
# argument parsing


def _add_env_flags(p):
    p.add_argument("--env", choices=PRESETS, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--stochastic", action="store_true", default=None)
    p.add_argument("--size", type=int, default=None, help="side length override for single-room")
    p.add_argument("--model", help="JSON model file (overrides --env)")


def _model_from_args(args):
    if getattr(args, "model", None):
        return load_model(args.model)
    return make_env(args.env or RUN_DEFAULTS["env"],
                    RUN_DEFAULTS["sigma2"] if args.sigma2 is None else args.sigma2,
                    bool(args.stochastic), args.size)


def build_parser():
    parser = argparse.ArgumentParser(prog="maxent-pomdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train Reg-PG over several seeds and write CSV curves")
    _add_env_flags(run)
    run.add_argument("--feedback", choices=("mse", "moe", "mbe", "reg-mbe"), default=None)
    run.add_argument("--policy", choices=("o", "ba", "s", "b"), default=None)
    run.add_argument("--alpha", type=float, default=None, help="learning rate")
    run.add_argument("--batch", type=int, default=None)
    run.add_argument("--episodes", type=int, default=None, help="number of iterations K")
    run.add_argument("--rho", type=float, default=None)
    run.add_argument("--belief-noise", type=float, default=None, help="oracle noise variance s2")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--runs", type=int, default=None)
    run.add_argument("--eval-every", type=int, default=None)
    run.add_argument("--baseline", dest="baseline", action="store_true", default=None)
    run.add_argument("--no-baseline", dest="baseline", action="store_false")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--config", help="JSON file with any of the flag values")

    ver = sub.add_parser("verify", help="gradient, gap and Lipschitz checks on micro-instances")
    ver.add_argument("--gradients", action="store_true")
    ver.add_argument("--gaps", action="store_true")
    ver.add_argument("--lipschitz", action="store_true")
    ver.add_argument("--instances", type=int, default=3)
    ver.add_argument("--seed", type=int, default=0)

    enum = sub.add_parser("enumerate-beliefs", help="enumerate reachable beliefs")
    _add_env_flags(enum)
    enum.add_argument("--horizon", type=int, default=None)
    enum.add_argument("--dedup-tol", type=float, default=1e-9)
    enum.add_argument("--max-size", type=int, default=10**6)
    enum.add_argument("--out", help="write the belief set as text")

    mdp = sub.add_parser("build-belief-mdp", help="belief-MDP transition tensor (.npy)")
    _add_env_flags(mdp)
    mdp.add_argument("--beliefs", help="belief-set text file; enumerated if omitted")
    mdp.add_argument("--horizon", type=int, default=None)
    mdp.add_argument("--out", required=True)

    gaps = sub.add_parser("gaps", help="proxy-gap bounds by exact enumeration")
    gaps.add_argument("--model", help="JSON model file; a random instance if omitted")
    gaps.add_argument("--states", type=int, default=2)
    gaps.add_argument("--actions", type=int, default=2)
    gaps.add_argument("--observations", type=int, default=2)
    gaps.add_argument("--horizon", type=int, default=3)
    gaps.add_argument("--policy-file", help="JSON policy checkpoint; uniform BA policy if omitted")
    gaps.add_argument("--instances", type=int, default=1)
    gaps.add_argument("--seed", type=int, default=0)
    gaps.add_argument("--band", action="store_true", help="print the MBE band table instead")
    gaps.add_argument("--out", help="directory for CSV output")
    return parser


def resolve_run_options(args):
    opts = dict(RUN_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(opts)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        opts.update(loaded)
    for key in RUN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _cmd_run(args):
    if args.model:
        raise ValueError("run uses the named env presets; --model is not supported here")
    spec = spec_from_options(resolve_run_options(args))
    _, rows = run_experiment(spec)
    final = [r for r in rows if r[0] == rows[-1][0] and r[1] == "true_entropy"][0]
    print(f"wrote {spec.runs} runs to {spec.out}; final true entropy {final[2]:.4f} "
          f"[{final[3]:.4f}, {final[4]:.4f}]")
    return 0


def _cmd_verify(args):
    chosen = args.gradients or args.gaps or args.lipschitz
    results = verify(args.gradients or not chosen, args.gaps or not chosen,
                     args.lipschitz or not chosen, args.instances, args.seed)
    return 0 if all(r.passed for r in results) else 1


def _cmd_enumerate(args):
    model = _model_from_args(args)
    bset = reachable_belief_set(model, args.horizon, args.dedup_tol, args.max_size)
    if args.out:
        Path(args.out).write_text(bset.to_text())
    print(f"{len(bset)} beliefs")
    return 0


def _cmd_belief_mdp(args):
    model = _model_from_args(args)
    if args.beliefs:
        bset = BeliefSet.from_text(Path(args.beliefs).read_text())
        # ids in a text file carry no depths; treat them as interior
        bset.depths = [1] * len(bset)
    else:
        bset = reachable_belief_set(model, args.horizon)
    tensor = an.build_belief_mdp(model, bset, args.horizon)
    np.save(args.out, tensor)
    print(f"belief MDP with {len(bset)} beliefs written to {args.out}")
    return 0


def _cmd_gaps(args):
    if args.band:
        text = an.band_csv(an.gap_band_table())
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "band.csv").write_text(text)
        else:
            print(text, end="")
        return 0
    rng = np.random.default_rng(args.seed)
    ok = True
    for i in range(args.instances):
        if args.model:
            model = load_model(args.model)
        else:
            model = an.random_pomdp(rng, args.states, args.actions, args.observations, args.horizon)
        params = load_policy(args.policy_file) if args.policy_file else init_policy("BA", model)
        report = an.proxy_gap_bounds(model, params)
        holds = report.sandwich_holds()
        ok &= all(holds.values())
        print(f"instance {i}: J_S={report.J_S:.6f} J_O={report.J_O:.6f} J_tilde={report.J_tilde:.6f} "
              f"moe=[{report.moe_lower:.6f}, {report.moe_upper:.6f}] "
              f"mbe=[{report.mbe_lower:.6f}, {report.mbe_upper:.6f}] "
              f"{'PASS' if all(holds.values()) else 'FAIL'} excluded={report.excluded}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"gaps_{i}.csv").write_text(an.gap_summary_csv(report))
            (out / f"hallucination_{i}.csv").write_text(an.hallucination_csv(report))
    return 0 if ok else 1


COMMANDS = {
    "run": _cmd_run,
    "verify": _cmd_verify,
    "enumerate-beliefs": _cmd_enumerate,
    "build-belief-mdp": _cmd_belief_mdp,
    "gaps": _cmd_gaps,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
