"""Command-line entry point: synth, train, eval, ablate, export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .embedding import task_context
from .environment import corpus_stats, episode_to_record, generate_synthetic, write_records
from .metrics import export_heatmap
from .pipeline import (CONFIG_FILE, GRAPH_FILE, RunConfig, apply_variant, evaluate_split,
                       load_config, run_pipeline, VARIANTS)
from .tool_graph import ToolGraph
from .trainer import dumps, load_checkpoint


def cmd_synth(args) -> int:
    graph, episodes = generate_synthetic(
        n_tools=args.tools, n_categories=args.categories, patterns_per_tool=args.patterns,
        n_episodes=args.episodes, horizon=args.horizon, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "corpus.jsonl", [episode_to_record(ep, graph) for ep in episodes])
    (out / GRAPH_FILE).write_text(dumps(graph.to_dict()) + "\n")
    print(json.dumps(corpus_stats(graph, episodes), indent=2))
    return 0


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "threads", None):
        cfg.trainer.threads = args.threads
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.output_dir)
    arts = run_pipeline(cfg, out, resume=args.resume)
    print(f"trained {arts.state.epoch} epochs; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    state = load_checkpoint(args.checkpoint)
    report = evaluate_split(cfg, state, args.split)
    text = dumps(report.to_dict())
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    base = _config(args)
    names = args.variant or sorted(VARIANTS)
    cfgs = [(name, apply_variant(base, name)) for name in names]  # validate all names first
    root = Path(args.out or base.output_dir)
    for name, cfg in cfgs:
        arts = run_pipeline(cfg, root / name)
        last = arts.metrics[-1] if arts.metrics else {}
        print(f"{name}: match_ratio={last.get('match_ratio')} beta={last.get('beta')}")
    return 0


def cmd_export(args) -> int:
    ckpt = Path(args.checkpoint)
    state = load_checkpoint(ckpt)
    graph_path = Path(args.graph) if args.graph else ckpt.parent / GRAPH_FILE
    graph = ToolGraph.from_dict(json.loads(graph_path.read_text()))
    cfg_path = ckpt.parent / CONFIG_FILE
    cfg = RunConfig.from_dict(json.loads(cfg_path.read_text())) if cfg_path.exists() else RunConfig()
    names = [n.strip() for n in args.heatmap_tools.split(",") if n.strip()]
    if not names:
        raise ValueError("--heatmap-tools must name at least one tool")
    tools = [graph.tool_id(n) for n in names]
    chain = [graph.tool_id(n.strip()) for n in args.chain.split(",") if n.strip()] if args.chain else []
    e_x, _ = task_context(args.task, cfg.trainer.embed_dim, cfg.trainer.n_buckets)
    w = args.w if args.w is not None else cfg.trainer.w_max
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_heatmap(state.store, e_x, w, tools, graph.tools, chain, out / "heatmap.csv",
                   out / "heatmap_edges.csv")
    print(f"wrote {out / 'heatmap.csv'} and {out / 'heatmap_edges.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phgpo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--tools", type=int, default=50)
    s.add_argument("--categories", type=int, default=8)
    s.add_argument("--patterns", type=int, default=3)
    s.add_argument("--episodes", type=int, default=200)
    s.add_argument("--horizon", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def with_config(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--threads", type=int, default=None, help="cap on rollout worker threads")

    s = sub.add_parser("train", help="run the training pipeline")
    with_config(s)
    s.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    s.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    with_config(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train ablation variants")
    with_config(s)
    s.add_argument("--variant", action="append", help=f"one of: {', '.join(sorted(VARIANTS))}")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("export", help="export a pheromone heatmap")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--heatmap-tools", required=True, help="comma-separated tool names")
    s.add_argument("--task", required=True, help="task text used for task-dependent fusion")
    s.add_argument("--chain", default=None, help="comma-separated reference chain to flag")
    s.add_argument("--graph", default=None, help="graph JSON (default: next to the checkpoint)")
    s.add_argument("--w", type=float, default=None, help="fusion weight (default: config w_max)")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
