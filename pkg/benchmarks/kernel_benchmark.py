"""Micro-benchmark: compiled vs pure-python kernels on one random instance.

Times the four backend kernels (pgd_run, inner_pga, du_forward,
du_forward+du_backward) with identical inputs on every available backend
and prints median wall times plus the speedup over the python reference.

Usage:
    python3 benchmarks/kernel_benchmark.py [--reps 50] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from rsma_du import backends
from rsma_du.backends import python_ref


def build_inputs(u, m, layers, seed):
    rng = np.random.default_rng(seed)
    h = np.sqrt(5.0) * (
        rng.standard_normal((u, m)) + 1j * rng.standard_normal((u, m))
    )
    raw = rng.uniform(0.1, 1.0, u)
    f = raw / raw.sum()
    nv = np.ones(u)
    ref = int(np.argmin(np.linalg.norm(h, axis=1)))
    p0, budget = 0.05, 1.0
    v0 = rng.standard_normal((u + 1, m)) + 1j * rng.standard_normal((u + 1, m))
    v0 = python_ref._project(v0, p0, budget)
    ne = u + 2
    w0 = rng.normal(scale=0.05, size=(layers, ne))
    w = rng.normal(scale=0.05, size=(layers, u, ne))
    eta = rng.normal(scale=0.05, size=(layers, u, u + 1))
    phi = rng.uniform(0.5, 1.5, ne)
    t = h.conj() @ v0.T
    z, z0, _, _, _, _ = python_ref._tight_aux(t, nv, ref)
    return {
        "h": h, "f": f, "nv": nv, "ref": ref, "p0": p0, "budget": budget,
        "v0": v0, "w0": w0, "w": w, "eta": eta, "phi": phi, "z": z, "z0": z0,
    }


def median_time(fn, reps):
    times = []
    fn()  # warmup
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def kernel_calls(mod, x, pgd_iters, layers):
    u = x["f"].shape[0]
    zeros = np.zeros(u)
    a1 = np.full(u, 0.05)
    a3 = np.full(u, 0.08)
    common = (x["h"], x["f"], x["nv"], x["ref"], x["p0"], x["budget"])

    def run_pgd():
        mod.pgd_run(
            *common, x["v0"].copy(), zeros.copy(), 1.0, a1, 0.1, a3,
            0.995, 0, pgd_iters, 0.0,
        )

    def run_inner():
        mod.inner_pga(
            *common, x["v0"].copy(), x["z"], x["z0"], 0.6, 0.05, pgd_iters
        )

    def run_forward():
        mod.du_forward(
            *common, 1.0, x["v0"], x["w0"], x["w"], x["eta"], x["phi"]
        )

    sbar = -np.log2(np.arange(layers) + 2.0) / layers

    def run_both():
        fw = mod.du_forward(
            *common, 1.0, x["v0"], x["w0"], x["w"], x["eta"], x["phi"]
        )
        mod.du_backward(
            *common, 1.0, x["w0"], x["w"], x["eta"], x["phi"],
            fw[0], fw[1], fw[2], fw[5], sbar, 1,
        )

    return [
        ("pgd_run[%d it]" % pgd_iters, run_pgd),
        ("inner_pga[%d it]" % pgd_iters, run_inner),
        ("du_forward[N=%d]" % layers, run_forward),
        ("du_fwd+bwd[N=%d]" % layers, run_both),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=3)
    ap.add_argument("--antennas", type=int, default=12)
    ap.add_argument("--layers", type=int, default=8)
    ap.add_argument("--pgd-iters", type=int, default=200)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", default=None, help="optional CSV output path")
    args = ap.parse_args(argv)

    x = build_inputs(args.users, args.antennas, args.layers, args.seed)
    names = backends.available_backends()
    mods = {
        name: backends.set_backend(name) for name in names
    }
    backends.set_backend("auto")

    rows = []
    for kname, _ in kernel_calls(python_ref, x, args.pgd_iters, args.layers):
        rows.append({"kernel": kname})
    for bname, mod in mods.items():
        for row, (_, fn) in zip(
            rows, kernel_calls(mod, x, args.pgd_iters, args.layers)
        ):
            row[bname] = median_time(fn, args.reps)

    print(
        "U=%d M=%d N=%d reps=%d"
        % (args.users, args.antennas, args.layers, args.reps)
    )
    header = "%-22s" % "kernel" + "".join("%14s" % n for n in names)
    if "compiled" in names:
        header += "%10s" % "speedup"
    print(header)
    for row in rows:
        line = "%-22s" % row["kernel"]
        for n in names:
            line += "%14s" % ("%.3e s" % row[n])
        if "compiled" in names:
            line += "%9.1fx" % (row["python"] / row["compiled"])
        print(line)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["kernel"] + names)
            writer.writeheader()
            writer.writerows(
                {k: row[k] for k in ["kernel"] + names} for row in rows
            )
        print("wrote %s" % args.csv)
    return 0


if __name__ == "__main__":
    sys.exit(main())
