"""Dataset generation: instance sampling, oracle labeling, JSONL storage.

A dataset is one header line (config snapshot, format version, seed, count)
followed by one JSON object per record.  Complex entries serialize as
[re, im] pairs; floats keep full round-trip precision.  Every record is
reproducible from (config, seed, record index) alone — each record draws
from its own RNG substream so generation order (or parallelism) cannot
change the data.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ProblemInstance, SystemConfig, make_instance, wsr
from .pgd import SolverOptions, solve_fp_oracle

DATASET_FORMAT = "rsma-du-dataset"
DATASET_VERSION = "1"


@dataclass
class OracleMeta:
    iterations_used: int
    converged: bool
    seed: int


@dataclass
class DatasetRecord:
    instance: ProblemInstance
    wsr_star: Optional[float] = None
    oracle_meta: Optional[OracleMeta] = None


@dataclass
class DatasetFile:
    config: SystemConfig
    seed: int
    records: list[DatasetRecord]
    scenario: str = "base"

    @property
    def count(self) -> int:
        return len(self.records)

    def labeled(self) -> bool:
        return all(r.wsr_star is not None for r in self.records)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for one record; mixing is order-free."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def sample_instance(config: SystemConfig, rng: np.random.Generator) -> ProblemInstance:
    """One random instance: CSCG channels with per-entry variance
    channel_variance, normalized-uniform weights, p0 ~ U(0, p0_upper)."""
    u, m = config.num_users, config.num_antennas
    sd = np.sqrt(config.channel_variance / 2.0)
    h = sd * (rng.standard_normal((u, m)) + 1j * rng.standard_normal((u, m)))
    raw = rng.random(u)
    weights = raw / raw.sum()
    p0 = rng.uniform(0.0, config.p0_upper)
    noise = np.full(u, config.noise_variance)
    return make_instance(h, weights, noise, p0, config.power_budget())


def generate_dataset(config: SystemConfig, count: int, seed: int) -> DatasetFile:
    """Unlabeled dataset of ``count`` records."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    records = [
        DatasetRecord(sample_instance(config, record_rng(seed, i)))
        for i in range(count)
    ]
    return DatasetFile(config, seed, records)


def _restart_seed(base: int, restart: int) -> int:
    ss = np.random.SeedSequence((base, 0xA11, restart))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def label_instance(
    inst: ProblemInstance, oracle_opts: SolverOptions, restarts: int = 3
) -> DatasetRecord:
    """Best-of-``restarts`` oracle label for one instance.

    Each restart reruns the FP oracle from an independent random init; the
    highest converged WSR becomes the label.  A restart that errors out is
    skipped unless every one fails.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    failures = []
    for r in range(restarts):
        seed_r = _restart_seed(oracle_opts.seed, r)
        opts_r = dataclasses.replace(oracle_opts, seed=seed_r)
        try:
            beams, alloc, trace = solve_fp_oracle(inst, opts_r)
        except Exception as exc:  # keep labeling alive across bad restarts
            failures.append(exc)
            continue
        value = wsr(inst, beams, alloc)
        if best is None or value > best[0]:
            best = (value, trace, seed_r)
    if best is None:
        raise RuntimeError(
            "oracle failed on all %d restarts: %r" % (restarts, failures[-1])
        )
    value, trace, seed_r = best
    meta = OracleMeta(trace.iterations_used, trace.converged, seed_r)
    return DatasetRecord(inst, value, meta)


def label_dataset(
    ds: DatasetFile, oracle_opts: SolverOptions, restarts: int = 3
) -> DatasetFile:
    """Label every record; per-record oracle seeds derive from the record
    index so labels do not depend on processing order."""
    out = []
    for i, rec in enumerate(ds.records):
        base = int(
            np.random.SeedSequence((oracle_opts.seed, 0x1ABE1, i)).generate_state(
                1, dtype=np.uint64
            )[0]
        )
        opts_i = dataclasses.replace(oracle_opts, seed=base)
        out.append(label_instance(rec.instance, opts_i, restarts))
    return DatasetFile(ds.config, ds.seed, out, ds.scenario)


def _complex_to_pairs(arr: np.ndarray):
    return [[[float(x.real), float(x.imag)] for x in row] for row in arr]


def _pairs_to_complex(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValueError("channel entries must be [re, im] pairs")
    return a[:, :, 0] + 1j * a[:, :, 1]


def _record_to_obj(index: int, rec: DatasetRecord) -> dict:
    inst = rec.instance
    obj = {
        "index": index,
        "channels": _complex_to_pairs(inst.channels),
        "weights": inst.weights.tolist(),
        "noise_var": inst.noise_var.tolist(),
        "p0": inst.p0,
        "power_budget": inst.power_budget,
        "ref_user": inst.ref_user,
        "wsr_star": rec.wsr_star,
    }
    if rec.oracle_meta is not None:
        obj["oracle"] = {
            "iterations": rec.oracle_meta.iterations_used,
            "converged": rec.oracle_meta.converged,
            "seed": rec.oracle_meta.seed,
        }
    return obj


def _record_from_obj(obj: dict) -> DatasetRecord:
    inst = ProblemInstance(
        _pairs_to_complex(obj["channels"]),
        np.asarray(obj["weights"], dtype=np.float64),
        np.asarray(obj["noise_var"], dtype=np.float64),
        float(obj["p0"]),
        float(obj["power_budget"]),
        int(obj["ref_user"]),
    )
    inst.validate()
    meta = None
    if "oracle" in obj:
        om = obj["oracle"]
        meta = OracleMeta(int(om["iterations"]), bool(om["converged"]), int(om["seed"]))
    star = obj.get("wsr_star")
    return DatasetRecord(inst, None if star is None else float(star), meta)


def write_dataset(path, ds: DatasetFile) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": ds.config.to_dict(),
        "seed": ds.seed,
        "count": ds.count,
        "scenario": ds.scenario,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, rec in enumerate(ds.records):
            fh.write(json.dumps(_record_to_obj(i, rec)) + "\n")


def read_dataset(path) -> DatasetFile:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed header at line 1: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise ValueError("not a dataset file (format tag missing)")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(
            "unsupported dataset version %r" % (header.get("version"),)
        )
    config = SystemConfig.from_dict(header["config"])
    declared = int(header["count"])
    records = []
    for ln, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
            records.append(_record_from_obj(obj))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"malformed record at line {ln}: {exc}") from exc
    if len(records) != declared:
        raise ValueError(
            "truncated dataset: header declares %d records, found %d"
            % (declared, len(records))
        )
    return DatasetFile(
        config, int(header["seed"]), records, header.get("scenario", "base")
    )
