"""Command-line front end.

Subcommands cover the full experiment pipeline: gen-data, label, solve,
train, eval, ood, bench, export-params.  Every run is reproducible from its
flags — all randomness hangs off the required --seed.  Exit codes: 0 on
success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .datagen import (
    DatasetFile,
    generate_dataset,
    label_dataset,
    read_dataset,
    write_dataset,
)
from .metrics import bench, evaluate, ood_transform
from .model import SystemConfig, wsr
from .pgd import SolverOptions, solve_fp_oracle, solve_pgd
from .unfold import (
    NetworkParams,
    TrainConfig,
    history_to_csv,
    init_params,
    params_from_json,
    params_to_json,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(f"{self.prog}: {message}")


def _add_oracle_flags(sp):
    sp.add_argument("--tol", type=float, default=1e-2, help="|dWSR| stop precision")
    sp.add_argument("--max-iters", type=int, default=100, help="outer FP iterations")
    sp.add_argument("--inner-iters", type=int, default=500)
    sp.add_argument("--inner-step", type=float, default=1e-3)
    sp.add_argument("--lam", type=float, default=1.0)


def _oracle_opts(args, seed: int) -> SolverOptions:
    return SolverOptions(
        lam=args.lam,
        max_iters=args.max_iters,
        tol=args.tol,
        inner_iters=args.inner_iters,
        inner_step=args.inner_step,
        seed=seed,
    )


def build_parser() -> _Parser:
    p = _Parser(prog="rsma-du", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("gen-data", help="sample an unlabeled dataset")
    sp.add_argument("--config", help="JSON file mirroring SystemConfig")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("label", help="attach oracle WSR labels")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--restarts", type=int, default=3)
    _add_oracle_flags(sp)
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("solve", help="run a solver on dataset records")
    sp.add_argument("--data", required=True)
    sp.add_argument("--solver", choices=["fp", "pgd"], required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--index", type=int, help="single record; default all")
    sp.add_argument("--out", help="CSV of per-record results")
    sp.add_argument("--trace-out", help="CSV WSR trace (single record only)")
    sp.add_argument("--step", type=float, default=1e-3, help="pgd step size")
    sp.add_argument("--pgd-iters", type=int, default=2000)
    sp.add_argument("--pgd-tol", type=float, default=1e-8)
    _add_oracle_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("train", help="train the unfolded network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="trained params JSON")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--layers", type=int, default=8)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.003)
    sp.add_argument(
        "--init", choices=["random_small", "pgd_mimic"], default="random_small"
    )
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--history-out", help="per-epoch CSV")
    sp.add_argument("--no-z-backprop", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="ASR of params on a labeled dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", help="metrics CSV")
    sp.add_argument("--per-layer-out", help="per-layer mean ASR CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ood", help="shift, re-label, evaluate")
    sp.add_argument("--data", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--scenario", required=True, help="snr+5 | snr-5 | pmax+1 | ...")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--restarts", type=int, default=3)
    sp.add_argument("--out", help="metrics CSV row")
    sp.add_argument("--shifted-out", help="write the re-labeled dataset")
    _add_oracle_flags(sp)
    sp.set_defaults(func=cmd_ood)

    sp = sub.add_parser("bench", help="wall-time DU forward vs FP oracle")
    sp.add_argument("--data", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--limit", type=int, help="use only the first L records")
    sp.add_argument("--out-prefix", required=True)
    _add_oracle_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("export-params", help="write an initial params file")
    sp.add_argument("--num-users", type=int, required=True)
    sp.add_argument("--layers", type=int, required=True)
    sp.add_argument(
        "--scheme", choices=["random_small", "pgd_mimic"], default="pgd_mimic"
    )
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--step", type=float, default=1e-3, help="pgd_mimic step size")
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_params)

    return p


def _load_params(path: str) -> NetworkParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_json(fh.read())


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_gen_data(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = SystemConfig.from_dict(json.load(fh))
    else:
        config = SystemConfig()
    ds = generate_dataset(config, args.n, args.seed)
    write_dataset(args.out, ds)
    print(f"wrote {ds.count} records to {args.out}")
    return 0


def cmd_label(args) -> int:
    ds = read_dataset(args.data)
    labeled = label_dataset(ds, _oracle_opts(args, args.seed), args.restarts)
    write_dataset(args.out, labeled)
    stars = np.array([r.wsr_star for r in labeled.records])
    print(
        "labeled %d records (mean WSR* %.4f) -> %s"
        % (labeled.count, stars.mean(), args.out)
    )
    return 0


def cmd_solve(args) -> int:
    ds = read_dataset(args.data)
    if args.index is not None:
        if not 0 <= args.index < ds.count:
            raise ValueError(f"--index {args.index} out of range (0..{ds.count - 1})")
        picked = [(args.index, ds.records[args.index])]
    else:
        picked = list(enumerate(ds.records))
    if args.trace_out and len(picked) != 1:
        raise ValueError("--trace-out needs --index")
    rows = ["index,wsr,iterations,converged"]
    for idx, rec in picked:
        if args.solver == "fp":
            opts = _oracle_opts(args, args.seed + idx)
            beams, alloc, trace = solve_fp_oracle(rec.instance, opts)
        else:
            opts = SolverOptions(
                lam=args.lam,
                max_iters=args.pgd_iters,
                tol=args.pgd_tol,
                seed=args.seed + idx,
            )
            from .pgd import StepSizes

            opts.steps = StepSizes.uniform(rec.instance.num_users, args.step)
            beams, alloc, trace = solve_pgd(rec.instance, opts)
        value = wsr(rec.instance, beams, alloc)
        rows.append(
            "%d,%r,%d,%s" % (idx, value, trace.iterations_used, trace.converged)
        )
        print(
            "record %d: %s WSR %.6f (%d iters, converged=%s)"
            % (idx, args.solver, value, trace.iterations_used, trace.converged)
        )
        if args.trace_out:
            lines = ["iter,wsr,feasible"]
            lines += ["%d,%r,%s" % row for row in trace.rows()]
            _write(args.trace_out, "\n".join(lines) + "\n")
    if args.out:
        _write(args.out, "\n".join(rows) + "\n")
    return 0


def cmd_train(args) -> int:
    ds = read_dataset(args.data)
    if not ds.labeled():
        raise ValueError("training needs a labeled dataset (run `label` first)")
    params0 = init_params(
        ds.config.num_users,
        args.layers,
        args.seed,
        scheme=args.init,
        lam=args.lam,
    )
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        z_backprop=not args.no_z_backprop,
    )
    params, history = train(ds.records, params0, config)
    _write(args.out, params_to_json(params))
    if args.history_out:
        _write(args.history_out, history_to_csv(history))
    if history:
        last = history[-1]
        print(
            "epoch %d: loss %.5f train ASR %.4f -> %s"
            % (last["epoch"], last["mean_loss"], last["train_asr"], args.out)
        )
    else:
        print(f"no epochs run; initial params written to {args.out}")
    return 0


def _metrics_csv(scenario: str, metrics) -> str:
    return "scenario,asr,n_samples\n%s,%r,%d\n" % (
        scenario,
        metrics.asr,
        metrics.n_samples,
    )


def cmd_eval(args) -> int:
    ds = read_dataset(args.data)
    params = _load_params(args.params)
    metrics, per_layer = evaluate(ds, params, args.seed)
    print("ASR %.4f over %d samples" % (metrics.asr, metrics.n_samples))
    if args.out:
        _write(args.out, _metrics_csv(ds.scenario, metrics))
    if args.per_layer_out:
        lines = ["layer,mean_asr"]
        lines += ["%d,%r" % (n + 1, v) for n, v in enumerate(per_layer)]
        _write(args.per_layer_out, "\n".join(lines) + "\n")
    return 0


def cmd_ood(args) -> int:
    ds = read_dataset(args.data)
    params = _load_params(args.params)
    shifted = ood_transform(
        ds, args.scenario, _oracle_opts(args, args.seed), args.restarts
    )
    if args.shifted_out:
        write_dataset(args.shifted_out, shifted)
    metrics, _ = evaluate(shifted, params, args.seed)
    print(
        "scenario %s: ASR %.4f over %d samples"
        % (args.scenario, metrics.asr, metrics.n_samples)
    )
    if args.out:
        _write(args.out, _metrics_csv(args.scenario, metrics))
    return 0


def cmd_bench(args) -> int:
    ds = read_dataset(args.data)
    if args.limit is not None:
        ds = DatasetFile(ds.config, ds.seed, ds.records[: args.limit], ds.scenario)
    params = _load_params(args.params)
    stats = bench(
        ds,
        params,
        _oracle_opts(args, args.seed),
        repetitions=args.reps,
        warmup=args.warmup,
        seed=args.seed,
        out_prefix=args.out_prefix,
    )
    summary = stats.summary()
    for name in ("du", "oracle"):
        s = summary[name]
        print(
            "%-6s mean %.6fs median %.6fs p95 %.6fs"
            % (name, s["mean"], s["median"], s["p95"])
        )
    return 0


def cmd_export_params(args) -> int:
    from .pgd import StepSizes

    steps = StepSizes.uniform(args.num_users, args.step)
    params = init_params(
        args.num_users,
        args.layers,
        args.seed,
        scheme=args.scheme,
        steps=steps,
        lam=args.lam,
    )
    _write(args.out, params_to_json(params))
    print(f"wrote {args.scheme} params (U={args.num_users}, N={args.layers}) to {args.out}")
    return 0


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
