"""Experiment harness: ASR metric, OOD scenarios, runtime benchmarking.

ASR (average sum ratio) is the mean over samples of achieved WSR divided by
the oracle label.  OOD scenarios shift the channel strength or the power
budget and re-label with the oracle so the ratio is always taken against
the true optimum of the shifted problem.
"""

from __future__ import annotations

import dataclasses
import gc
import re
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datagen import DatasetFile, DatasetRecord, label_dataset
from .model import dbm_to_watts
from .pgd import SolverOptions, solve_fp_oracle
from .unfold import NetworkParams, _traced_forward, network_forward


@dataclass
class Metrics:
    asr: float
    per_sample_ratio: np.ndarray
    n_samples: int


def asr(wsr_hat_final: np.ndarray, wsr_star: np.ndarray) -> Metrics:
    """Mean of per-sample hat/star ratios (final-layer WSR per sample)."""
    hat = np.asarray(wsr_hat_final, dtype=np.float64)
    star = np.asarray(wsr_star, dtype=np.float64)
    if hat.shape != star.shape or hat.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if hat.size == 0:
        raise ValueError("empty metric input")
    if np.any(star <= 0):
        raise ValueError("labels must be strictly positive")
    ratio = hat / star
    return Metrics(float(ratio.mean()), ratio, int(hat.size))


def _eval_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence((seed, 0xE7A1, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def evaluate(ds: DatasetFile, params: NetworkParams, seed: int):
    """Run the network on every record.

    Returns (Metrics over the final layer, per-layer mean ASR vector) —
    the latter is what layer-count sweeps plot.
    """
    if not ds.labeled():
        raise ValueError("dataset must be labeled before evaluation")
    if params.num_users != ds.config.num_users:
        raise ValueError(
            "params expect U=%d but dataset has U=%d"
            % (params.num_users, ds.config.num_users)
        )
    q = ds.count
    hat = np.empty((q, params.num_layers))
    star = np.empty(q)
    params.validate()
    arrs = params.as_arrays()
    for i, rec in enumerate(ds.records):
        trace = _traced_forward(rec.instance, params, arrs, _eval_seed(seed, i))
        hat[i] = trace.wsr_hat
        star[i] = rec.wsr_star
    metrics = asr(hat[:, -1], star)
    per_layer = (hat / star[:, None]).mean(axis=0)
    return metrics, per_layer


_SCENARIO_RE = re.compile(r"^(snr|pmax)([+-]\d+(?:\.\d+)?)$")


def parse_scenario(text: str):
    """'snr+5' → ('snr', 5.0); 'pmax-1' → ('pmax', -1.0)."""
    m = _SCENARIO_RE.match(text.strip())
    if not m:
        raise ValueError(
            "scenario must look like snr+5, snr-5, pmax+1 or pmax-1"
        )
    return m.group(1), float(m.group(2))


def shift_dataset(ds: DatasetFile, scenario: str) -> DatasetFile:
    """Apply the scenario transform without re-labeling.

    snr shift: every channel entry scaled by 10^(delta/20) (so channel
    variance scales by 10^(delta/10)); pmax shift: the power budget is
    recomputed from the shifted p_max_dbm.  Labels and oracle metadata are
    dropped because they refer to the old problems.
    """
    kind, delta = parse_scenario(scenario)
    if kind == "snr":
        amp = 10.0 ** (delta / 20.0)
        config = dataclasses.replace(
            ds.config,
            channel_variance=ds.config.channel_variance * 10.0 ** (delta / 10.0),
        )
        records = [
            DatasetRecord(rec.instance.with_channels(rec.instance.channels * amp))
            for rec in ds.records
        ]
    else:
        new_pmax = ds.config.p_max_dbm + delta
        budget = dbm_to_watts(new_pmax) - dbm_to_watts(ds.config.p_c_dbm)
        records = []
        for i, rec in enumerate(ds.records):
            inst = rec.instance
            if budget <= (inst.num_users + 1) * inst.p0:
                raise ValueError(
                    "record %d: shifted budget %.6g cannot cover (U+1) p0"
                    % (i, budget)
                )
            records.append(
                DatasetRecord(dataclasses.replace(inst, power_budget=budget))
            )
        # the header's sampling bound must stay consistent with the smaller
        # budget even though no record is resampled
        cap = budget / (ds.config.num_users + 1)
        config = dataclasses.replace(
            ds.config,
            p_max_dbm=new_pmax,
            p0_upper=min(ds.config.p0_upper, 0.999999 * cap),
        )
    for rec in records:
        rec.instance.validate()
    return DatasetFile(config, ds.seed, records, scenario)


def ood_transform(
    ds: DatasetFile,
    scenario: str,
    oracle_opts: Optional[SolverOptions] = None,
    restarts: int = 3,
) -> DatasetFile:
    """Scenario shift followed by oracle re-labeling.

    ASR on the result compares against the shifted problems' own optima;
    stale labels would make the ratio meaningless.
    """
    if not ds.labeled():
        raise ValueError("ood_transform expects a labeled dataset")
    if oracle_opts is None:
        oracle_opts = SolverOptions.oracle_defaults(seed=ds.seed)
    return label_dataset(shift_dataset(ds, scenario), oracle_opts, restarts)


@dataclass
class TimingStats:
    """Pooled per-run wall times for the two solvers."""

    du_times: np.ndarray
    oracle_times: np.ndarray

    def summary(self) -> dict:
        out = {}
        for name, t in (("du", self.du_times), ("oracle", self.oracle_times)):
            out[name] = {
                "mean": float(t.mean()),
                "median": float(np.median(t)),
                "p95": float(np.quantile(t, 0.95)),
            }
        return out


def cdf_points(times: np.ndarray):
    """(sorted times, cumulative fraction) — a valid CDF ending at 1."""
    t = np.sort(np.asarray(times, dtype=np.float64))
    frac = np.arange(1, t.size + 1, dtype=np.float64) / t.size
    return t, frac


def cdf_csv(times: np.ndarray) -> str:
    t, frac = cdf_points(times)
    lines = ["time_s,cum_fraction"]
    lines += ["%r,%r" % (float(a), float(b)) for a, b in zip(t, frac)]
    return "\n".join(lines) + "\n"


def bench(
    ds: DatasetFile,
    params: NetworkParams,
    oracle_opts: SolverOptions,
    repetitions: int = 1,
    warmup: int = 1,
    seed: int = 0,
    out_prefix: Optional[str] = None,
) -> TimingStats:
    """Wall-time the DU forward pass and the FP oracle on every record.

    Per record: ``warmup`` untimed runs, then ``repetitions`` timed runs of
    each solver; all timed runs are pooled.  With ``out_prefix`` the two
    CDF tables land in <prefix>_du_cdf.csv / <prefix>_oracle_cdf.csv.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    du_times = []
    oracle_times = []
    params.validate()
    arrs = params.as_arrays()
    # collector pauses would otherwise land on random sub-ms samples
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        for i, rec in enumerate(ds.records):
            inst = rec.instance
            sd = _eval_seed(seed, i)
            opts_i = dataclasses.replace(oracle_opts, seed=_eval_seed(seed + 1, i))
            for _ in range(warmup):
                _traced_forward(inst, params, arrs, sd)
                solve_fp_oracle(inst, opts_i)
            for _ in range(repetitions):
                t0 = time.perf_counter()
                _traced_forward(inst, params, arrs, sd)
                du_times.append(time.perf_counter() - t0)
            for _ in range(repetitions):
                t0 = time.perf_counter()
                solve_fp_oracle(inst, opts_i)
                oracle_times.append(time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    stats = TimingStats(np.asarray(du_times), np.asarray(oracle_times))
    if out_prefix is not None:
        with open(f"{out_prefix}_du_cdf.csv", "w", encoding="utf-8") as fh:
            fh.write(cdf_csv(stats.du_times))
        with open(f"{out_prefix}_oracle_cdf.csv", "w", encoding="utf-8") as fh:
            fh.write(cdf_csv(stats.oracle_times))
    return stats
