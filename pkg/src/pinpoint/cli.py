"""Command-line entry point: ``pinpoint <subcommand> ...``.

Exit codes: 0 success, 1 input/config error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("pinpoint")


class InputError(Exception):
    pass


def _resolve_config(args):
    from .training import TrainConfig

    cfg = TrainConfig.from_file(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {}
    for item in getattr(args, "override", None) or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg = cfg.replace(**overrides)
    print("# resolved config")
    print("".join(f"#   {line}\n" for line in cfg.to_text().splitlines()), end="")
    return cfg


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"input not found: {p}")
    return p


def _load_data(path):
    from .synthetic import load_dataset

    p = _need(path)
    try:
        return load_dataset(p)
    except Exception as exc:
        raise InputError(f"cannot read dataset {p}: {exc}") from exc


def _load_model(path):
    from .alignment import AlignmentModel

    p = _need(path)
    try:
        return AlignmentModel.load(p)
    except Exception as exc:
        raise InputError(f"cannot read checkpoint {p}: {exc}") from exc


def _selector(cfg, model=None):
    from .estimator import PinPointSelector

    if cfg.window_w != cfg.window_h:
        raise ConfigError("the estimator front end uses square windows")
    sel = PinPointSelector(n_queries=cfg.K, window=cfg.window_w, stride=cfg.stride, r=cfg.r, lr=cfg.lr,
                           epochs=cfg.epochs, batch_size=cfg.batch, lam=cfg.lam, tau=cfg.tau,
                           max_steps=cfg.max_steps, include_positive=cfg.include_positive_in_denominator,
                           sim_mode=cfg.sim_mode, activation=cfg.activation, text_seed=cfg.text_seed,
                           random_state=cfg.seed)
    return sel.set_model(model) if model is not None else sel


def cmd_synth_gen(args) -> int:
    from .synthetic import World, gen_synthetic, save_dataset

    world = World(d=args.d, seed=args.world_seed)
    samples = gen_synthetic(args.n, (args.grid, args.grid), seed=args.seed, world=world)
    save_dataset(samples, args.out, world)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import write_history

    cfg = _resolve_config(args)
    samples, _ = _load_data(args.data)
    sel = _selector(cfg)
    sel.fit(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sel.model_.save(out / "model.json")
    write_history(sel.history_, out / "history.csv")
    (out / "config.txt").write_text(cfg.to_text())
    last = sel.history_[-1] if sel.history_ else None
    print(f"trained {len(sel.history_)} steps; final L_total={last.L_total:.6f}" if last else "no steps run")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _resolve_config(args)
    samples, _ = _load_data(args.data)
    sel = _selector(cfg, _load_model(args.model))
    results = sel.predict(samples)
    with open(args.out, "w") as fh:
        for res in results:
            fh.write(res.to_json() + "\n")
    print(f"wrote {len(results)} selections to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .estimator import evaluate

    cfg = _resolve_config(args)
    samples, world = _load_data(args.data)
    sel = _selector(cfg, _load_model(args.model))
    report, _, _ = evaluate(sel, samples, world, budget=args.budget, refine_crops=not args.no_refine)
    print(report.summary_line())
    if args.out:
        Path(args.out).write_text(report.to_json())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_bench_flops(args) -> int:
    from .flops import CostModel, pinpoint_flops, vanilla_flops

    cfg = _resolve_config(args)
    cm = CostModel(p_llm=args.p_llm, p_vit=args.p_vit, embed_dim=args.embed_dim, n_queries=cfg.K)
    if args.vanilla:
        report = vanilla_flops(args.grid_h, args.grid_w, args.text_tokens, cm)
        report.vanilla_total_flops = report.total_flops
    else:
        budget = cfg.r if args.budget is None else args.budget
        report = pinpoint_flops(args.grid_h, args.grid_w, args.text_tokens, budget,
                                (cfg.window_w, cfg.window_h), cfg.stride, cm)
    print(f"total={report.total_tflops:.3f} TFLOPs ratio={report.ratio:.4f} "
          f"module_share={report.module_share:.4f} alignment_share={report.alignment_share:.6f}")
    if args.out:
        Path(args.out).write_text(report.to_json())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_annotate(args) -> int:
    from .annotate import read_documents, read_records, run_pipeline
    from .clients import HttpClients, MockClients

    records = read_records(_need(args.records))
    docs = read_documents(_need(args.docs)) if args.docs else {}
    if args.mock_script:
        clients = MockClients.from_file(_need(args.mock_script))
    elif args.http_base:
        clients = HttpClients(args.http_base)
    else:
        raise ConfigError("annotate needs --mock-script or --http-base")
    result = run_pipeline(records, docs, clients, args.variant, args.parallelism)
    Path(args.out).write_text(result.to_jsonl())
    if args.errors:
        with open(args.errors, "w") as fh:
            for i, qid, msg in result.errors:
                fh.write(json.dumps({"index": i, "question_id": qid, "error": msg}) + "\n")
    print(f"wrote {len(result.outcomes)} outcomes ({len(result.errors)} errors) to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .annotate import pipeline_stats, read_outcomes, write_stats_csv

    per_split = {}
    for item in args.inputs:
        split, _, path = item.rpartition("=")
        split = split or Path(path).stem
        per_split[split] = pipeline_stats(read_outcomes(_need(path)))
    write_stats_csv(per_split, args.out)
    for split, st in per_split.items():
        print(split, json.dumps(st))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .alignment import AlignmentModel
    from .autodiff import gradcheck
    from .grid import BoxPx, GtAnnotation, TokenGrid
    from .training import BatchSample, TrainConfig, total_loss

    rng = np.random.default_rng(args.seed)
    d, K = args.d, args.K
    cfg = TrainConfig(window_w=3, window_h=3, stride=2, K=K, seed=args.seed)
    model = AlignmentModel.init(d, K, args.seed)
    batch = []
    for i in range(3):
        grid = TokenGrid(rng.uniform(-1, 1, (7, 7, d)))
        box = BoxPx(0, 0, 2, 2) if i % 2 == 0 else BoxPx(4, 4, 7, 7)
        batch.append(BatchSample.build(grid, f"question {i} about item{i}", GtAnnotation("q", box, [box]), cfg))
    params = list(model.parameters().values())
    worst = gradcheck(lambda: total_loss(batch, model, 0.5, 0.5).total, params, h=1e-5)
    print(f"max rel err {worst:.3e}")
    return EXIT_OK if worst < 1e-5 else EXIT_NUMERIC


def cmd_relevance(args) -> int:
    from .synthetic import relevance_experiment

    samples, _ = _load_data(args.data)
    rows = relevance_experiment(samples, seed=args.seed or 0)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "accuracy"])
        w.writerows(rows)
    for cond, acc in rows:
        print(f"{cond}: {acc:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinpoint", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key = value config file")
            sp.add_argument("--override", action="append", metavar="K=V", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("synth-gen", help="generate a synthetic dataset (.npz)"), config=False)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--grid", type=int, default=24)
    sp.add_argument("--d", type=int, default=32)
    sp.add_argument("--world-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_gen, seed=0)

    sp = common(sub.add_parser("train", help="train the alignment module"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("select", help="rank and select regions"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_select)

    sp = common(sub.add_parser("eval", help="ANLS / region accuracy / coverage"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--budget", type=float, default=0.6)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("bench-flops", help="FLOPs cost model report"))
    sp.add_argument("--grid-h", type=int, default=48)
    sp.add_argument("--grid-w", type=int, default=60)
    sp.add_argument("--text-tokens", type=int, default=64)
    sp.add_argument("--budget", type=float)
    sp.add_argument("--vanilla", action="store_true")
    sp.add_argument("--p-llm", type=float, default=7e9)
    sp.add_argument("--p-vit", type=float, default=3e8)
    sp.add_argument("--embed-dim", type=int, default=4096)
    sp.add_argument("--out")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_bench_flops)

    sp = common(sub.add_parser("annotate", help="run the annotation pipeline"), config=False)
    sp.add_argument("--records", required=True)
    sp.add_argument("--docs")
    sp.add_argument("--mock-script")
    sp.add_argument("--http-base")
    sp.add_argument("--variant", choices=["plain", "rationale"], default="plain")
    sp.add_argument("--parallelism", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--errors")
    sp.set_defaults(func=cmd_annotate)

    sp = common(sub.add_parser("stats", help="annotation statistics per split"), config=False)
    sp.add_argument("inputs", nargs="+", metavar="SPLIT=PATH")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_stats)

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of the full loss"), config=False)
    sp.add_argument("--d", type=int, default=6)
    sp.add_argument("--K", type=int, default=3)
    sp.set_defaults(func=cmd_gradcheck, seed=0)

    sp = common(sub.add_parser("relevance", help="oracle accuracy per token-relevance condition"), config=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_relevance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
