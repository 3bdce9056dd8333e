"""Labeled-scenario generation: oracle solve, multiplier extraction, serialization.

Each record pairs a synthetic scenario with the Lagrange multipliers
recovered from the best-of-starts iterative solution and the oracle's
weighted sum of rate upper bounds.  Records whose multiplier recovery
fails (not KKT-consistent, negative entries, budget violation) are
regenerated with a fresh seed and counted; a high rejection rate aborts
generation.  Output is JSON-lines plus a sidecar with the ranges and
rejection statistics.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import iterative, neural, structure
from .channel import (
    ChannelState,
    ScenarioConfig,
    covariance,
    scenario_from_dict,
    scenario_to_dict,
    synth_scenario,
)
from .errors import (
    BadFractions,
    NegativeMultiplier,
    NegativePower,
    SingularT,
    TooManyRejections,
    ValidationError,
)
from .rng import substream

MAX_REJECT_RATE = 0.05
MIN_ATTEMPTS_FOR_RATE_CHECK = 200


@dataclass
class DatasetRanges:
    snr_db: list
    beta: list
    sparsity: float = 0.25

    def grid(self):
        return [(s, b) for s in self.snr_db for b in self.beta]


@dataclass
class DatasetRecord:
    cfg: ScenarioConfig
    state: ChannelState
    nu: float
    mu: np.ndarray
    oracle_rate: float
    meta: dict


def default_ranges():
    return DatasetRanges(snr_db=[-10.0, 0.0, 10.0, 20.0],
                         beta=[0.0, 0.3, 0.6, 0.9, 1.0])


def make_record(base_cfg, ranges, opts, seed, index, attempt=0):
    """One labeled record for the index-th grid cell; raises on non-KKT labels."""
    grid = ranges.grid()
    snr_db, beta = grid[index % len(grid)]
    child_seed = int(substream(seed, "dataset", index, attempt).integers(2**63))
    p = base_cfg.sigma2 * 10.0 ** (snr_db / 10.0)
    cfg = replace(base_cfg, p=p, seed=child_seed)
    state = synth_scenario(cfg, sparsity=ranges.sparsity, beta_model=beta)
    covs = covariance(state, cfg)
    opts = opts or iterative.IterativeOptions()
    prec = iterative.solve(state, cfg, opts, covs=covs)
    mu = structure.mu_from_precoder(prec, covs, cfg)
    structure.check_multipliers(mu, cfg.p)
    weights = np.ones(cfg.k) if opts.weights is None else opts.weights
    oracle_rate = float(weights @ iterative.upper_bound_rates(prec, covs, cfg))
    meta = {"seed": child_seed, "n_starts": opts.n_starts, "iters": opts.max_iters,
            "index": index, "attempt": attempt}
    return DatasetRecord(cfg=cfg, state=state, nu=float(snr_db), mu=mu,
                         oracle_rate=oracle_rate, meta=meta)


def _gen_one(args):
    """Worker: one record with its retry loop. Module-level for pickling."""
    base_cfg, ranges, opts, seed, index = args
    attempt = 0
    while True:
        try:
            rec = make_record(base_cfg, ranges, opts, seed, index, attempt)
            return rec, attempt + 1, attempt
        except (NegativeMultiplier, NegativePower, SingularT, ValidationError):
            attempt += 1
            if attempt > 50:
                raise TooManyRejections(
                    f"record {index} rejected {attempt} times in a row",
                    attempts=attempt, rejections=attempt)


def generate(n, base_cfg, ranges=None, opts=None, seed=0, progress=None,
             threads=1, start=0):
    """Labeled records for indices [start, n), stratified round-robin over
    the (snr, beta) grid.

    Returns (records, stats) where stats counts attempts and rejections.
    Deterministic given (base_cfg, ranges, opts, seed) regardless of the
    rejection pattern or worker count, because retries draw from
    per-(index, attempt) seed streams.
    """
    if n < 0:
        raise ValidationError("n must be nonnegative")
    ranges = ranges or default_ranges()
    jobs = [(base_cfg, ranges, opts, seed, i) for i in range(start, n)]
    records = []
    attempts = 0
    rejections = 0

    def account(result, done):
        nonlocal attempts, rejections
        rec, att, rej = result
        records.append(rec)
        attempts += att
        rejections += rej
        if attempts >= MIN_ATTEMPTS_FOR_RATE_CHECK and \
                rejections > MAX_REJECT_RATE * attempts:
            raise TooManyRejections(
                f"rejection rate {rejections}/{attempts} exceeds "
                f"{MAX_REJECT_RATE:.0%}",
                attempts=attempts, rejections=rejections)
        if progress is not None and done % progress == 0:
            print(f"  generated {done}/{len(jobs)} records "
                  f"({rejections} rejections)", flush=True)

    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            for done, result in enumerate(pool.map(_gen_one, jobs, chunksize=16), 1):
                account(result, done)
    else:
        for done, job in enumerate(jobs, 1):
            account(_gen_one(job), done)
    stats = {"attempts": attempts, "rejections": rejections, "emitted": len(records)}
    return records, stats


def split(records, fractions, seed=0):
    """Disjoint seed-deterministic shuffled split; fractions must sum to 1."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(records)
    counts = [int(np.floor(f * n)) for f in fractions]
    leftover = n - sum(counts)
    for i in range(leftover):
        counts[i % len(counts)] += 1
    order = substream(seed, "split").permutation(n)
    parts = []
    start = 0
    for c in counts:
        parts.append([records[j] for j in order[start : start + c]])
        start += c
    return tuple(parts)


def to_training_samples(records, kind):
    """TrainingSamples for the requested net ("lmnn" or "slmnn")."""
    build = {"lmnn": neural.lmnn_input, "slmnn": neural.slmnn_input}.get(kind)
    if build is None:
        raise ValidationError(f"unknown net kind {kind!r}")
    samples = []
    for rec in records:
        samples.append(
            neural.TrainingSample(
                x=build(rec.state, rec.cfg),
                nu=rec.nu,
                mu_label=np.asarray(rec.mu, dtype=np.float64),
                p=rec.cfg.p,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# serialization

def record_to_dict(rec):
    d = scenario_to_dict(rec.cfg, rec.state)
    d["nu"] = rec.nu
    d["mu"] = np.asarray(rec.mu).tolist()
    d["oracle_rate"] = rec.oracle_rate
    d["meta"] = rec.meta
    return d


def record_from_dict(d):
    cfg, state = scenario_from_dict(d)
    return DatasetRecord(
        cfg=cfg,
        state=state,
        nu=float(d["nu"]),
        mu=np.asarray(d["mu"], dtype=np.float64),
        oracle_rate=float(d["oracle_rate"]),
        meta=dict(d.get("meta", {})),
    )


def write_records(path, records, mode="w"):
    with open(path, mode, encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec)) + "\n")


def read_records(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def write_meta(path, ranges, stats, seed):
    meta = {
        "snr_db": list(ranges.snr_db),
        "beta": list(ranges.beta),
        "sparsity": ranges.sparsity,
        "seed": seed,
        "attempts": stats["attempts"],
        "rejections": stats["rejections"],
        "emitted": stats["emitted"],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
