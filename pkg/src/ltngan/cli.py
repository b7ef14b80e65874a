"""Command-line front end: ``ltn-gan {train,evaluate,ablate,compare,export-plots}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import training as T
from .datasets import read_points_csv
from .neural import load_checkpoint

TABLE_COLUMNS = {
    "gaussian": ["adherence_proxy", "statistical_quality", "combined_quality", "mean_error", "std_error"],
    "grid": ["grid_cluster", "coverage", "quality", "overall", "in_targets"],
    "ring": ["ring_adherence", "inner_count", "outer_count", "balance", "dead_zone_avoidance"],
    "mnist": ["quality", "coverage", "digit_recognition", "template_dependence"],
}
PLOT_LIMITS = {"gaussian": 4.0, "grid": 1.5, "ring": 3.0}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltn-gan", description="GAN training with a fuzzy-logic knowledge base")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, variant=True):
        p.add_argument("--dataset", default="gaussian")
        if variant:
            p.add_argument("--variant", default="full_ltn_gan")
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--out-dir", type=Path, default=Path("runs"))
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--quiet", action="store_true")

    run_flags(sub.add_parser("train", help="train one configuration"))
    run_flags(sub.add_parser("ablate", help="train every variant of a dataset and tabulate"), variant=False)

    p = sub.add_parser("evaluate", help="score a trained run's generator")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("compare", help="tabulate final metrics of several runs")
    p.add_argument("run_dirs", type=Path, nargs="+")

    p = sub.add_parser("export-plots", help="write SVG scatter/curve plots (PGM montage for MNIST)")
    p.add_argument("run_dir", type=Path)
    return parser


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def resolve_config(args, variant: str | None = None) -> T.TrainConfig:
    try:
        if args.config is not None:
            data = json.loads(args.config.read_text())
            dataset = data.get("dataset", args.dataset)
            name = variant or data.get("variant", getattr(args, "variant", "full_ltn_gan"))
            base = T.default_config(dataset, name).to_dict()
            base.update(data)
            base["variant"] = T.resolve_variant(dataset, name)
            cfg = T.TrainConfig.from_dict(base)
        else:
            cfg = T.default_config(args.dataset, variant or args.variant)
        updates = {}
        preset = None
        for item in args.overrides:
            if "=" not in item:
                raise T.ConfigError(f"override {item!r} is not KEY=VALUE")
            key, value = item.split("=", 1)
            if key == "lambda_preset":
                preset = value
                continue
            updates[key] = T.coerce_value(key, value)
        if args.epochs is not None:
            updates["epochs"] = args.epochs
        if args.seed is not None:
            updates["seed"] = args.seed
        cfg = T.TrainConfig.from_dict({**cfg.to_dict(), **updates})
        if preset is not None:
            cfg = T.apply_lambda_preset(cfg, preset)
        return cfg.validate()
    except (T.ConfigError, json.JSONDecodeError, OSError) as err:
        raise CliError(f"invalid config: {err}", 2) from None


def _final_row(rows: list[dict[str, float]]) -> dict[str, float]:
    return rows[-1] if rows else {}


def format_table(dataset: str, rows: list[tuple[str, dict[str, float]]]) -> str:
    cols = TABLE_COLUMNS[dataset] + ["logic_satisfaction"]
    width = max([len("variant")] + [len(n) for n, _ in rows])
    lines = [f"{'variant':<{width}}  " + "  ".join(f"{c:>19}" for c in cols)]
    for name, vals in rows:
        cells = []
        for c in cols:
            v = vals.get("s_logic" if c == "logic_satisfaction" else c, float("nan"))
            cells.append(f"{v:>19.0f}" if c.endswith("count") or c == "in_targets" else f"{v:>19.3f}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(lines)


def write_table_csv(path: Path, dataset: str, rows: list[tuple[str, dict[str, float]]]) -> None:
    cols = TABLE_COLUMNS[dataset] + ["logic_satisfaction"]
    with open(path, "w") as fh:
        fh.write("variant," + ",".join(cols) + "\n")
        for name, vals in rows:
            cells = [repr(float(vals.get("s_logic" if c == "logic_satisfaction" else c, float("nan")))) for c in cols]
            fh.write(name + "," + ",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _progress(quiet: bool):
    if quiet:
        return None

    def show(rec: T.EpochRecord) -> None:
        print(
            f"epoch {rec.epoch:4d}  L_G {rec.loss_g:.4f}  L_D {rec.loss_d:.4f}  "
            f"acc_D {rec.d_accuracy:.3f}  S_logic {rec.s_logic:.4f}  lambda {rec.lam:.4f}",
            flush=True,
        )

    return show


def _run(cfg: T.TrainConfig, out_dir: Path, quiet: bool) -> T.RunResult:
    try:
        return T.train(cfg, out_dir, progress=_progress(quiet))
    except T.TrainingError as err:
        raise CliError(f"training failed: {err}", 1) from None
    except FileNotFoundError as err:
        raise CliError(f"missing input: {err}", 1) from None


def run_train(args) -> int:
    cfg = resolve_config(args)
    result = _run(cfg, args.out_dir, args.quiet)
    final = _final_row(result.evaluations)
    print(format_table(cfg.dataset, [(cfg.variant, final)]))
    print(f"outputs written to {args.out_dir}")
    return 0


def run_ablate(args) -> int:
    try:
        names = list(T.VARIANTS[args.dataset])
    except KeyError:
        raise CliError(f"invalid config: unknown dataset {args.dataset!r}; choose from {list(T.DATASETS)}", 2) from None
    configs = [(name, resolve_config(args, name)) for name in names]
    rows = []
    for name, cfg in configs:
        if not args.quiet:
            print(f"== {name}", flush=True)
        result = _run(cfg, args.out_dir / name, quiet=True)
        rows.append((name, _final_row(result.evaluations)))
    table = format_table(args.dataset, rows)
    print(table)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_table_csv(args.out_dir / "ablation.csv", args.dataset, rows)
    (args.out_dir / "ablation.txt").write_text(table + "\n")
    return 0


def load_run(run_dir: Path) -> tuple[T.TrainConfig, T.Generator]:
    manifest = run_dir / "manifest.json"
    if not manifest.exists():
        raise CliError(f"{run_dir} has no manifest.json", 1)
    cfg = T.TrainConfig.from_dict(json.loads(manifest.read_text())["config"])
    header, arrays = load_checkpoint(run_dir / "generator.ckpt")
    templates = None
    if cfg.dataset == "mnist" and cfg.use_templates:
        from .datasets import class_templates, load_mnist

        templates = class_templates(load_mnist("train", cfg.data_dir or None))
    gen = T.Generator(cfg, np.random.default_rng(0), templates)
    gen.load_state(arrays)
    return cfg, gen


def run_evaluate(args) -> int:
    cfg, gen = load_run(args.run_dir)
    seed = cfg.seed if args.seed is None else args.seed
    rngs = T.make_streams(seed)
    classifier = None
    if cfg.dataset == "mnist":
        from .neural import Mlp

        header, arrays = load_checkpoint(args.run_dir / "classifier.ckpt")
        classifier = Mlp(header["specs"]["net"], np.random.default_rng(0))
        classifier.load_state(arrays)
    logic = None
    if cfg.use_logic:
        ring_state = T.P.RingState(cfg.ring_geometry())
        logic = T.build_logic(cfg, rngs["predicate"], ring_state, classifier)
        pred_path = args.run_dir / "predicates.ckpt"
        if logic is not None and logic.bank.learned and pred_path.exists():
            _, arrays = load_checkpoint(pred_path)
            for name, pred in logic.bank.learned.items():
                pred.net.load_state({k[len(name) + 1 :]: v for k, v in arrays.items() if k.startswith(name + "/")})
    templates = gen.templates
    row, _, _ = T.evaluate_generator(cfg, gen, logic, rngs["eval"], cfg.epochs, classifier, templates)
    print(format_table(cfg.dataset, [(cfg.variant, row)]))
    with open(args.run_dir / "evaluation.json", "w") as fh:
        json.dump(row, fh, indent=2, sort_keys=True)
    return 0


def _last_metrics(run_dir: Path) -> tuple[str, dict[str, float]]:
    path = run_dir / "metrics.csv"
    if not path.exists():
        raise CliError(f"{run_dir} has no metrics.csv", 1)
    rows = T.read_runlog(path)
    cfg = json.loads((run_dir / "manifest.json").read_text())["config"]
    return cfg["dataset"], {k: float(v) if v else float("nan") for k, v in rows[-1].items()}


def run_compare(args) -> int:
    found = [(d, *_last_metrics(d)) for d in args.run_dirs]
    datasets = {ds for _, ds, _ in found}
    if len(datasets) != 1:
        raise CliError(f"runs mix datasets {sorted(datasets)}", 2)
    print(format_table(datasets.pop(), [(d.name, vals) for d, _, vals in found]))
    return 0


def export_plots(run_dir: Path) -> list[Path]:
    """Scatter (or PGM montage) of the latest samples plus loss/satisfaction curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise CliError(f"{run_dir} is not a directory", 1)
    log_path = run_dir / "runlog.csv"
    dumps = sorted(run_dir.glob("samples_epoch*.*"), key=lambda p: int(p.stem.removeprefix("samples_epoch")))
    if not log_path.exists() or not dumps:
        raise CliError(f"{run_dir} has no runlog.csv or sample dumps", 1)
    cfg = json.loads((run_dir / "manifest.json").read_text())["config"]
    written = []

    latest = dumps[-1]
    if latest.suffix == ".csv":
        pts = read_points_csv(latest)
        lim = PLOT_LIMITS[cfg["dataset"]]
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.scatter(pts[:, 0], pts[:, 1], s=4, alpha=0.6, gid="samples")
        ax.set_xlim(-lim, lim)
        ax.set_ylim(-lim, lim)
        ax.set_aspect("equal")
        ax.set_title(f"{cfg['dataset']} / {cfg['variant']} ({latest.stem})")
        path = run_dir / "scatter.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    else:
        written.append(latest)

    rows = T.read_runlog(log_path)
    epochs = [int(r["epoch"]) for r in rows]
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key, label in (("loss_g", "L_G"), ("loss_g_adv", "L_G adv"), ("loss_d", "L_D")):
        axes[0].plot(epochs, [float(r[key]) for r in rows], label=label)
    axes[0].legend()
    axes[0].set_ylabel("loss")
    axes[1].plot(epochs, [float(r["s_logic"]) for r in rows], label="S_logic")
    axes[1].plot(epochs, [float(r["lambda"]) for r in rows], label="lambda(e)")
    axes[1].legend()
    axes[1].set_xlabel("epoch")
    path = run_dir / "curves.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)
    return written


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": run_train,
        "ablate": run_ablate,
        "evaluate": run_evaluate,
        "compare": run_compare,
        "export-plots": lambda a: print("\n".join(str(p) for p in export_plots(a.run_dir))) or 0,
    }
    try:
        return handlers[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
