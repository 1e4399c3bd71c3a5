"""Command-line front end: train, eval, cost, and plot subcommands.

Exit codes: 0 success, 2 configuration error, 3 connected-graph assumption
violation, 4 checkpoint error. All outputs (CSV, SVG, JSON) are deterministic
functions of (config, seed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import commcost as cc
from . import config as cfgmod
from . import svgchart
from . import trainer as tr
from .errors import ConfigError, DgmarlError


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DgmarlError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgmarl",
                                description="distributed multi-agent PPO with "
                                            "graph-attention message passing")
    sub = p.add_subparsers(required=True)

    pt = sub.add_parser("train", help="run training from a TOML config")
    pt.add_argument("--config", required=True, help="TOML config path")
    pt.add_argument("--override", action="append", default=[],
                    metavar="KEY=VALUE", help="dotted-path config override")
    pt.add_argument("--out", default=None, help="output directory "
                    "(default runs/<config stem>)")
    pt.add_argument("--threads", type=int, default=None,
                    help="cap worker threads (no effect on results)")
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="evaluate a checkpoint")
    pe.add_argument("--ckpt", required=True, help="checkpoint directory")
    pe.add_argument("--episodes", type=int, default=100)
    pe.add_argument("--seed", default=None,
                    help="comma-separated eval seeds (default DGMARL_SEED or 0)")
    pe.add_argument("--json", action="store_true", help="machine-readable output")
    pe.set_defaults(func=cmd_eval)

    pc = sub.add_parser("cost", help="communication-cost scaling sweep")
    pc.add_argument("--preset", default="figure", choices=["figure"])
    pc.add_argument("--n-min", type=int, default=8)
    pc.add_argument("--n-max", type=int, default=128)
    pc.add_argument("--out", default="cost_out")
    pc.set_defaults(func=cmd_cost)

    pp = sub.add_parser("plot", help="render metrics CSV columns to SVG")
    pp.add_argument("--metrics", required=True, help="metrics CSV path")
    pp.add_argument("--columns", required=True,
                    help="comma-separated column names to plot against step")
    pp.add_argument("--out", required=True, help="output SVG path")
    pp.add_argument("--smooth", type=int, default=0, metavar="W",
                    help="trailing moving-average window")
    pp.add_argument("--log-y", action="store_true")
    pp.set_defaults(func=cmd_plot)
    return p


# ----------------------------------------------------------------- train

def cmd_train(args) -> int:
    sections = cfgmod.load_config_file(args.config)
    for spec in args.override:
        cfgmod.apply_override(sections, spec)
    cfg = cfgmod.to_train_config(sections)
    stem = os.path.splitext(os.path.basename(args.config))[0]
    out_dir = args.out or os.path.join("runs", stem)
    cfgmod.write_manifest(out_dir, args.config, sections)
    trainer = tr.Trainer(cfg)
    report = trainer.run(out_dir)
    print(f"done: steps={trainer.env_steps} iterations={trainer.iteration} "
          f"eval_success={report.success_rate:.3f} eval_return={report.mean_return:.3f}")
    return 0


# ------------------------------------------------------------------ eval

def _parse_seeds(text: str | None) -> list[int]:
    if text is None:
        text = os.environ.get("DGMARL_SEED", "0")
    try:
        return [int(s) for s in str(text).split(",") if s.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad seed list {text!r}: {e}") from e


EVAL_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema", "episodes_per_seed", "seeds", "success_rate",
                 "success_std", "mean_return", "mean_node_degree", "per_seed"],
    "properties": {
        "schema": {"const": "dgmarl.eval/1"},
        "episodes_per_seed": {"type": "integer", "minimum": 0},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "success_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "success_std": {"type": "number", "minimum": 0},
        "mean_return": {"type": "number"},
        "mean_node_degree": {"type": "number", "minimum": 0},
        "per_seed": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "success_rate", "mean_return", "mean_node_degree"],
                "properties": {
                    "seed": {"type": "integer"},
                    "success_rate": {"type": "number"},
                    "mean_return": {"type": "number"},
                    "mean_node_degree": {"type": "number"},
                },
            },
        },
    },
}


def cmd_eval(args) -> int:
    cfg, agents = tr.load_checkpoint(args.ckpt)
    seeds = _parse_seeds(args.seed)
    per_seed = []
    for seed in seeds:
        rep = tr.evaluate(agents, cfg, args.episodes, seed)
        per_seed.append({"seed": seed, "success_rate": rep.success_rate,
                         "mean_return": rep.mean_return,
                         "mean_node_degree": rep.mean_node_degree})
    rates = [r["success_rate"] for r in per_seed]
    doc = {
        "schema": "dgmarl.eval/1",
        "episodes_per_seed": args.episodes,
        "seeds": seeds,
        "success_rate": float(np.mean(rates)) if per_seed and args.episodes > 0 else 0.0,
        "success_std": float(np.std(rates)) if per_seed and args.episodes > 0 else 0.0,
        "mean_return": (float(np.mean([r["mean_return"] for r in per_seed]))
                        if per_seed and args.episodes > 0 else 0.0),
        "mean_node_degree": (float(np.mean([r["mean_node_degree"] for r in per_seed]))
                             if per_seed and args.episodes > 0 else 0.0),
        "per_seed": per_seed if args.episodes > 0 else [],
    }
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    elif args.episodes <= 0:
        print("eval: 0 episodes requested, empty report")
    else:
        print(f"success rate: {doc['success_rate']:.3f} +/- {doc['success_std']:.3f} "
              f"over seeds {seeds}")
        print(f"mean return: {doc['mean_return']:.3f}")
        print(f"mean node degree: {doc['mean_node_degree']:.3f}")
    return 0


# ------------------------------------------------------------------ cost

def cmd_cost(args) -> int:
    if args.n_min < 2 or args.n_max < args.n_min:
        raise ConfigError(f"invalid N range [{args.n_min}, {args.n_max}]")
    n_values = list(range(args.n_min, args.n_max + 1))
    rows = cc.cost_sweep(n_values)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(cc.sweep_to_csv(rows))
    by = {}
    for r in rows:
        by.setdefault(r.method, []).append(r)
    slopes = {m: cc.loglog_slope([r.n for r in rs], [r.cost for r in rs])
              for m, rs in by.items()}
    footer = "log-log cost slopes: " + " ".join(
        f"{m}={slopes[m]:.3f}" for m in sorted(slopes))
    svg = svgchart.line_chart(
        [(m, [r.n for r in by[m]], [r.cost for r in by[m]]) for m in sorted(by)],
        title="training communication cost vs team size",
        x_label="team size N", y_label="scalars per step",
        log_x=True, log_y=True, footer=footer)
    with open(os.path.join(args.out, "cost.svg"), "w", encoding="utf-8") as f:
        f.write(svg)
    print(footer)
    return 0


# ------------------------------------------------------------------ plot

def cmd_plot(args) -> int:
    if not os.path.exists(args.metrics):
        raise ConfigError(f"metrics file not found: {args.metrics}")
    with open(args.metrics, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ConfigError(f"metrics file {args.metrics} is empty")
    header = lines[0].split(",")
    wanted = [c.strip() for c in args.columns.split(",") if c.strip()]
    for col in wanted + ["step"]:
        if col not in header:
            raise ConfigError(f"unknown column {col!r}; available: {', '.join(header)}")
    idx = {c: header.index(c) for c in header}
    rows = [ln.split(",") for ln in lines[1:]]
    if not rows:
        raise ConfigError(f"metrics file {args.metrics} has no data rows")
    steps = [float(r[idx["step"]]) for r in rows]
    series = []
    for col in wanted:
        ys = [float(r[idx[col]]) for r in rows]
        if args.smooth and args.smooth > 1:
            ys = svgchart.moving_average(ys, args.smooth)
        series.append((col, steps, ys))
    svg = svgchart.line_chart(series, title=os.path.basename(args.metrics),
                              x_label="step", y_label=", ".join(wanted),
                              log_y=args.log_y)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(svg)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
