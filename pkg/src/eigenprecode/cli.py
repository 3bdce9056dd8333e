"""Command-line pipeline: scenarios -> dataset -> training -> evaluation/bench.

One JSON config document drives every command; all randomness flows
from a single seed through named sub-streams, so each command is
byte-deterministic given (config, seed) apart from wall-clock columns.
Exit codes: 0 success, 2 usage/validation, 3 numerical failure, 4 IO.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import dataset, evaluation, iterative, neural
from .channel import (
    JakesBeta,
    child_config,
    config_from_dict,
    covariance,
    read_scenarios,
    synth_scenario,
    write_scenarios,
)
from .errors import (
    EigenprecodeError,
    NumericalError,
    ValidationError,
)
from .rng import substream

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_TOP_KEYS = {"version", "seed", "scenario", "synth", "dataset", "iterative",
             "train", "eval"}


def _check_keys(d, allowed, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {where} fields: {sorted(unknown)}")


def load_config(path):
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    if cfg.get("version") != 1:
        raise ValidationError("config field 'version' must be 1")
    if "seed" not in cfg or not isinstance(cfg["seed"], int):
        raise ValidationError("config field 'seed' (integer) is mandatory")
    if "scenario" not in cfg:
        raise ValidationError("config section 'scenario' is mandatory")
    return cfg


def scenario_from_config(cfg):
    sc = dict(cfg["scenario"])
    sc.setdefault("seed", cfg["seed"])
    return config_from_dict(sc)


def synth_from_config(cfg):
    d = dict(cfg.get("synth", {}))
    _check_keys(d, {"sparsity", "beta", "beta_speed_kmph"}, "synth")
    sparsity = float(d.get("sparsity", 0.25))
    if "beta_speed_kmph" in d:
        beta_model = JakesBeta(speed_kmph=float(d["beta_speed_kmph"]))
    else:
        beta_model = float(d.get("beta", 0.6))
    return sparsity, beta_model


def ranges_from_config(cfg):
    d = dict(cfg.get("dataset", {}))
    _check_keys(d, {"snr_db", "beta", "sparsity"}, "dataset")
    base = dataset.default_ranges()
    return dataset.DatasetRanges(
        snr_db=[float(s) for s in d.get("snr_db", base.snr_db)],
        beta=[float(b) for b in d.get("beta", base.beta)],
        sparsity=float(d.get("sparsity", base.sparsity)),
    )


def iterative_from_config(cfg):
    d = dict(cfg.get("iterative", {}))
    _check_keys(d, {"max_iters", "n_starts", "weights", "tol"}, "iterative")
    kwargs = {}
    if "max_iters" in d:
        kwargs["max_iters"] = int(d["max_iters"])
    if "n_starts" in d:
        kwargs["n_starts"] = int(d["n_starts"])
    if "tol" in d:
        kwargs["tol"] = float(d["tol"])
    if d.get("weights") is not None:
        kwargs["weights"] = np.asarray(d["weights"], dtype=np.float64)
    return iterative.IterativeOptions(**kwargs)


def train_from_config(cfg, seed):
    d = dict(cfg.get("train", {}))
    _check_keys(d, {"steps", "batch", "lr", "val_fraction", "eval_every"}, "train")
    opts = neural.TrainOptions(
        steps=int(d.get("steps", 10000)),
        batch=int(d.get("batch", 1024)),
        lr=float(d.get("lr", 0.001)),
        seed=seed,
        eval_every=int(d.get("eval_every", 500)),
    )
    return opts, float(d.get("val_fraction", 0.1))


def eval_from_config(cfg):
    d = dict(cfg.get("eval", {}))
    _check_keys(d, {"mc_samples", "methods"}, "eval")
    return int(d.get("mc_samples", 2000)), list(d.get("methods", ["rzf", "slnr"]))


def _require_file(path, what):
    if not os.path.exists(path):
        raise ValidationError(f"{what} not found: {path}")


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("EIGENPRECODE_THREADS")
    return int(env) if env else 1


def _load_nets(args):
    nets = {}
    if getattr(args, "weights_lmnn", None):
        _require_file(args.weights_lmnn, "LMNN weights file")
        nets["lmnn"] = neural.load_weights(args.weights_lmnn)
    if getattr(args, "weights_slmnn", None):
        _require_file(args.weights_slmnn, "SLMNN weights file")
        nets["slmnn"] = neural.load_weights(args.weights_slmnn)
    return nets


def _scenario_beta(state):
    return float(state.beta[0])


def _scenario_snr_db(cfg):
    return float(10.0 * np.log10(cfg.p / cfg.sigma2))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenarios(args):
    cfg = load_config(args.config)
    base = scenario_from_config(cfg)
    sparsity, beta_model = synth_from_config(cfg)
    seed = args.seed if args.seed is not None else cfg["seed"]
    items = []
    for i in range(args.n):
        child = child_config(base, seed, i)
        items.append((child, synth_scenario(child, sparsity, beta_model)))
    write_scenarios(args.out, items)
    print(f"wrote {args.n} scenarios to {args.out}")
    return EXIT_OK


def cmd_gen_dataset(args):
    cfg = load_config(args.config)
    base = scenario_from_config(cfg)
    ranges = ranges_from_config(cfg)
    opts = iterative_from_config(cfg)
    seed = args.seed if args.seed is not None else cfg["seed"]
    start = 0
    if args.resume and os.path.exists(args.out):
        with open(args.out, "r", encoding="utf-8") as fh:
            start = sum(1 for line in fh if line.strip())
        start = min(start, args.n)
    records, stats = dataset.generate(
        args.n, base, ranges, opts, seed=seed,
        progress=args.progress, threads=_threads(args), start=start,
    )
    dataset.write_records(args.out, records, mode="a" if start else "w")
    meta_path = args.out + ".meta.json" if not args.out.endswith(".jsonl") \
        else args.out[: -len(".jsonl")] + ".meta.json"
    dataset.write_meta(meta_path, ranges, stats, seed)
    rate = stats["rejections"] / max(1, stats["attempts"])
    print(f"wrote {len(records)} records to {args.out} "
          f"(resumed at {start}, rejection rate {rate:.4f})")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    _require_file(args.dataset, "dataset file")
    records = dataset.read_records(args.dataset)
    seed = args.seed if args.seed is not None else cfg["seed"]
    opts, val_fraction = train_from_config(cfg, seed)
    if args.steps is not None:
        opts.steps = args.steps
    if args.batch is not None:
        opts.batch = args.batch
    if not records:
        raise ValidationError("dataset is empty")
    spec = {"lmnn": neural.lmnn_spec, "slmnn": neural.slmnn_spec}[args.net](records[0].cfg)
    samples = dataset.to_training_samples(records, args.net)
    if val_fraction > 0 and len(samples) > 1:
        train_s, val_s = dataset.split(samples, (1 - val_fraction, val_fraction), seed=seed)
    else:
        train_s, val_s = samples, []
    net, history = neural.train(spec, train_s, val_s, opts)
    neural.save_weights(args.out, net)
    # deterministic (dropout-free) loss of the final weights on the train set
    x_all = np.stack([s.x for s in train_s]) / net.x_rms
    nu_all = np.array([s.nu for s in train_s])
    y_all = np.stack([s.mu_label for s in train_s])
    final_train = neural.mse_loss(neural.raw_output(spec, net.params, x_all, nu_all), y_all)
    loss_path = args.out + ".loss.csv"
    with open(loss_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss"])
        for step, tl, vl in history:
            writer.writerow([step, repr(tl), "" if np.isnan(vl) else repr(vl)])
        writer.writerow(["final", repr(final_train), ""])
    final_val = next((vl for _, _, vl in reversed(history) if not np.isnan(vl)), float("nan"))
    print(f"trained {args.net} on {len(train_s)} samples "
          f"({len(val_s)} validation); final train loss {final_train:.6g}, "
          f"val loss {final_val:.6g}; weights -> {args.out}")
    return EXIT_OK


def _parse_methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    for m in methods:
        if m not in evaluation.METHODS:
            raise ValidationError(
                f"unknown method {m!r}; valid methods: {', '.join(evaluation.METHODS)}"
            )
    if not methods:
        raise ValidationError("no methods requested")
    return methods


def cmd_eval(args):
    cfg = load_config(args.config)
    _require_file(args.scenarios, "scenarios file")
    methods = _parse_methods(args.methods)
    nets = _load_nets(args)
    for m in methods:
        if m == "lmnn" and "lmnn" not in nets:
            raise ValidationError("method 'lmnn' requires --weights-lmnn")
        if m == "lowcx" and "slmnn" not in nets:
            raise ValidationError("method 'lowcx' requires --weights-slmnn")
    seed = args.seed if args.seed is not None else cfg["seed"]
    opts = iterative_from_config(cfg)
    mc_default, _ = eval_from_config(cfg)
    n_samples = args.mc if args.mc is not None else mc_default

    scenarios = read_scenarios(args.scenarios)
    rows = []
    detail = []
    cells = {}
    for idx, (scfg, state) in enumerate(scenarios):
        mc_seed = int(substream(seed, "eval", idx).integers(2**63))
        reports = evaluation.compare(state, scfg, methods, nets=nets,
                                     n_samples=n_samples, seed=mc_seed, opts=opts)
        snr_db = _scenario_snr_db(scfg)
        beta = _scenario_beta(state)
        for rep in reports:
            rows.append([str(idx), rep.method, repr(snr_db), repr(beta),
                         repr(rep.sum_rate_mc), repr(rep.stderr),
                         repr(rep.sum_rate_ub), repr(rep.wall_clock_us),
                         str(rep.mc_samples)])
            cells.setdefault((snr_db, beta, rep.method), []).append(rep)
            detail.append({
                "scenario": idx, "method": rep.method, "snr_db": snr_db,
                "beta": beta, "sum_rate_mc": rep.sum_rate_mc,
                "stderr": rep.stderr, "sum_rate_ub": rep.sum_rate_ub,
                "per_user_rates": rep.per_user_rates.tolist(),
                "per_user_stderr": rep.per_user_stderr.tolist(),
                "wall_clock_us": rep.wall_clock_us,
                "mc_samples": rep.mc_samples,
            })
    for (snr_db, beta, method), reps in sorted(cells.items(),
                                               key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        n_cell = len(reps)
        rows.append([
            "all", method, repr(snr_db), repr(beta),
            repr(float(np.mean([r.sum_rate_mc for r in reps]))),
            repr(float(np.sqrt(sum(r.stderr**2 for r in reps)) / n_cell)),
            repr(float(np.mean([r.sum_rate_ub for r in reps]))),
            repr(float(np.median([r.wall_clock_us for r in reps]))),
            str(sum(r.mc_samples for r in reps)),
        ])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "method", "snr_db", "beta", "sum_rate_mc",
                         "stderr", "sum_rate_ub", "wall_clock_us", "mc_samples"])
        writer.writerows(rows)
    json_path = os.path.splitext(args.out)[0] + ".json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(detail, fh, indent=1)
        fh.write("\n")
    print(f"evaluated {len(methods)} methods on {len(scenarios)} scenarios "
          f"-> {args.out}")
    return EXIT_OK


def cmd_bench(args):
    cfg = load_config(args.config)
    _require_file(args.scenarios, "scenarios file")
    methods = _parse_methods(args.methods)
    nets = _load_nets(args)
    opts = iterative_from_config(cfg)
    scenarios = read_scenarios(args.scenarios)
    rows = []
    for idx, (scfg, state) in enumerate(scenarios):
        covs = covariance(state, scfg)
        snr_db = _scenario_snr_db(scfg)
        beta = _scenario_beta(state)
        for method in methods:
            times = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                evaluation.build_precoder(method, state, scfg, covs,
                                          nets=nets, opts=opts)
                times.append((time.perf_counter() - t0) * 1e6)
            rows.append([str(idx), method, repr(snr_db), repr(beta),
                         repr(float(np.median(times))),
                         repr(float(np.percentile(times, 95))),
                         str(args.repeats)])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "method", "snr_db", "beta",
                         "wall_clock_us", "wall_clock_us_p95", "repeats"])
        writer.writerows(rows)
    print(f"benchmarked {len(methods)} methods on {len(scenarios)} scenarios "
          f"-> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eigenprecode",
        description="Robust precoding pipeline: scenario synthesis, oracle "
                    "labeling, multiplier-net training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenarios", help="synthesize scenarios to JSON-lines")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("gen-dataset", help="generate oracle-labeled records")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true",
                   help="continue after the last complete record in --out")
    p.add_argument("--threads", type=int)
    p.add_argument("--progress", type=int, default=500)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a multiplier network")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--net", choices=("lmnn", "slmnn"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte-Carlo method comparison to CSV/JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--methods", required=True)
    p.add_argument("--weights-lmnn")
    p.add_argument("--weights-slmnn")
    p.add_argument("--out", required=True)
    p.add_argument("--mc", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="wall-clock benchmark of precoder computation")
    p.add_argument("--config", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--methods", required=True)
    p.add_argument("--weights-lmnn")
    p.add_argument("--weights-slmnn")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=50)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EigenprecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
