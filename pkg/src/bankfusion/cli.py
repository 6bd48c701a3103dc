"""Command line entry point: ``bankfusion <command> [flags]``.

Exit codes: 0 success, 1 runtime failure (bad file, failed information check),
2 usage error (unknown flag, invalid value).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from . import bankio, infotheory
from .attention import ConfigError
from .fusion import Architecture, FusionModel, ablation_architectures
from .training import TrainConfig, evaluate, format_metrics, loss_trend_ok, train

log = logging.getLogger("bankfusion")


class UsageFailure(Exception):
    pass


def _config(args) -> TrainConfig:
    config = bankio.load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "label_fraction", None) is not None:
        overrides["label_fraction"] = args.label_fraction
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        return dataclasses.replace(config, **overrides)
    except ValueError as exc:
        raise UsageFailure(str(exc)) from None


def _architecture(text: str) -> Architecture:
    try:
        return Architecture.parse(text)
    except ConfigError as exc:
        raise UsageFailure(str(exc)) from None


def _write(path: str | Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_train(args) -> int:
    arch = _architecture(args.arch)
    config = _config(args)
    data = bankio.load_bank(args.bank)
    test = bankio.load_bank(args.test) if args.test else None
    try:
        model = FusionModel(arch, data.n_branches, data.dim, data.classes, heads=args.heads, seed=config.seed)
    except ConfigError as exc:
        raise UsageFailure(str(exc)) from None
    t0 = time.perf_counter()
    metrics = train(model, data, config)
    accuracy = evaluate(model, test).accuracy if test is not None else metrics.accuracy
    bankio.save_checkpoint(model, args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    _write(metrics_path, format_metrics(metrics, accuracy))
    which = "test" if test is not None else "train"
    print(f"{arch.name}: trained on {metrics.n_samples} samples for {config.epochs} epochs "
          f"in {time.perf_counter() - t0:.1f}s; {which} accuracy {accuracy:.4f}")
    print(f"checkpoint -> {args.out}; metrics -> {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model = bankio.load_checkpoint(args.ckpt)
    data = bankio.load_bank(args.bank)
    accuracy = evaluate(model, data).accuracy
    if args.out:
        _write(args.out, f"final,{accuracy!r}\n")
    print(f"{model.arch.name}: accuracy {accuracy:.4f} on {len(data)} samples")
    return 0


def run_ablation(data, test, config: TrainConfig, heads: int = 1) -> list[tuple[str, float, float, bool]]:
    """Train every ablation variant from the same seed; (name, accuracy, final loss, trend ok)."""
    results = []
    for arch in ablation_architectures(data.n_branches):
        model = FusionModel(arch, data.n_branches, data.dim, data.classes, heads=heads, seed=config.seed)
        metrics = train(model, data, config)
        acc = evaluate(model, test).accuracy if test is not None else metrics.accuracy
        final = metrics.epoch_losses[-1] if metrics.epoch_losses else float("nan")
        results.append((arch.name, acc, final, loss_trend_ok(metrics.epoch_losses)))
        log.info("%s accuracy %.4f", arch.name, acc)
    return results


def format_ablation(results) -> str:
    lines = ["variant,accuracy,final_loss,loss_trend_ok"]
    lines += [f"{name},{acc!r},{loss!r},{str(ok).lower()}" for name, acc, loss, ok in results]
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    config = _config(args)
    data = bankio.load_bank(args.bank)
    test = bankio.load_bank(args.test) if args.test else None
    if data.dim % args.heads:
        raise UsageFailure(f"feature dim {data.dim} is not divisible by {args.heads} heads")
    results = run_ablation(data, test, config, heads=args.heads)
    _write(args.out, format_ablation(results))
    width = max(len(r[0]) for r in results)
    for name, acc, loss, ok in results:
        print(f"{name:<{width}}  accuracy {acc:.4f}  final loss {loss:.4f}{'' if ok else '  (loss trend not monotone)'}")
    return 0


def cmd_verify_theory(args) -> int:
    if args.instances < 1:
        raise UsageFailure("--instances must be at least 1")
    if args.max_arity < 2:
        raise UsageFailure("--max-arity must be at least 2")
    t0 = time.perf_counter()
    rows = infotheory.canonical_rows() if args.canonical else []
    dpi = infotheory.dpi_sweep(args.instances, args.seed, args.max_arity)
    chain = infotheory.chain_rule_sweep(args.instances, args.seed, args.max_arity)
    thm, rejected = infotheory.fusion_gain_sweep(args.instances, args.seed, args.max_arity)
    rows += dpi + chain + thm
    _write(args.out, infotheory.format_rows(rows))

    failed = False
    if args.canonical:
        for r in rows[: len(infotheory.CANONICAL)]:
            print(f"canonical {r.instance}: I(y;B)={r.lhs:.6f} max_i I(y;b_i)={r.rhs:.6f} "
                  f"margin={r.margin:.6f} -> {r.status}")
            failed |= r.status == "FAIL"
    for name, suite in (("DPI", dpi), ("chain rule", chain), ("fusion gain", thm)):
        passed = sum(r.passed for r in suite)
        extra = ""
        if suite is thm:
            extra = f" ({rejected} draws rejected by the complementarity precheck)"
            if suite:
                extra += f"; min margin {min(r.margin for r in suite):.3e} bits"
        print(f"{name}: {passed}/{len(suite)} pass{extra}")
        failed |= passed != len(suite)
    if len(thm) < args.instances:
        print(f"fusion gain: only {len(thm)} of {args.instances} requested instances qualified")
        failed = True
    print(f"report -> {args.out} ({time.perf_counter() - t0:.2f}s)")
    return 1 if failed else 0


def cmd_gen_synthetic(args) -> int:
    try:
        spec = bankio.SyntheticTaskSpec(
            kind=args.kind, dim=args.dim, n_branches=args.n_banks, classes=args.classes,
            train_samples=args.train_samples, test_samples=args.test_samples,
            noise=args.noise, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageFailure(str(exc)) from None
    train_ds, test_ds = bankio.gen_synthetic(spec)
    prefix = args.out
    paths = (f"{prefix}.train.csv", f"{prefix}.test.csv")
    bankio.save_bank(train_ds, paths[0])
    bankio.save_bank(test_ds, paths[1])
    print(f"{spec.kind}: {len(train_ds)} train -> {paths[0]}, {len(test_ds)} test -> {paths[1]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bankfusion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one architecture on a bank file")
    t.add_argument("--bank", required=True)
    t.add_argument("--arch", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--test", help="held-out bank for the final accuracy")
    t.add_argument("--metrics", help="metrics CSV path (default <out>.metrics.csv)")
    t.add_argument("--label-fraction", type=float)
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a bank file")
    e.add_argument("--bank", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train every architecture variant with one seed")
    a.add_argument("--bank", required=True)
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--test")
    a.add_argument("--heads", type=int, default=1)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify-theory", help="exact randomized checks of the information-theory claims")
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-arity", type=int, default=4)
    v.add_argument("--out", required=True)
    v.add_argument("--canonical", action="store_true", help="also report the XOR, pair-copy and redundant instances")
    v.set_defaults(func=cmd_verify_theory)

    g = sub.add_parser("gen-synthetic", help="write <out>.train.csv and <out>.test.csv")
    g.add_argument("--kind", choices=bankio.SYNTHETIC_KINDS, default="complementary-xor")
    g.add_argument("--dim", type=int, default=8)
    g.add_argument("--n-banks", type=int, default=2)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--train-samples", type=int, default=2000)
    g.add_argument("--test-samples", type=int, default=1000)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output path prefix")
    g.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "heads", 1) < 1:
        parser.error("--heads must be at least 1")
    try:
        return args.func(args)
    except UsageFailure as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
