"""
Command-line entrypoint for the HEI toolkit.
Subcommands: synth, patterns, split, train, experiment, sweep, report.
"""
import functools
import json
import os
import sys
from typing import Any, Dict

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from app.config import Config
from app.env_validator import validate_or_raise
from app.errors import ConfigError, format_error_payload
from app.logger import get_logger
from hei.graph import SPLIT_FILE, load_graph, load_graph_dir, load_split
from hei.harness import (
    GROUPS,
    ExperimentResult,
    SweepResult,
    deep_merge,
    load_config_file,
    load_experiment_config,
    parse_config,
    run_experiment,
    sweep,
)
from hei.report import report as build_report
from hei.similarity import (
    IsolatedNodePolicy,
    SimilarityConfig,
    SimilarityMetric,
    estimate_patterns,
    pattern_summary,
    save_patterns,
)
from hei.splits import SettingKind, build_setting, save_setting
from hei.synthgen import SynthConfig, generate, save_synth, shift_report

logger = get_logger(__name__)
console = Console()


# ============================================================================
# ERROR HANDLING
# ============================================================================

def cli_errors(func):
    """Exit 0 on success, 2 on ConfigError, 1 otherwise; error JSON is the last stderr line."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except ValidationError as e:
            error = ConfigError(str(e))
        except Exception as e:  # noqa: BLE001
            error = e
        logger.error(f"{type(error).__name__}: {error}")
        click.echo(json.dumps(format_error_payload(error), sort_keys=True), err=True)
        ctx.exit(2 if isinstance(error, ConfigError) else 1)
    return wrapper


# ============================================================================
# SHARED OPTIONS
# ============================================================================

def graph_options(func):
    func = click.option("--graph-dir", type=click.Path(), help="Directory with edges.tsv, features.csv, labels.txt")(func)
    func = click.option("--edges", type=click.Path(), help="Edge file (src<TAB>dst)")(func)
    func = click.option("--features", type=click.Path(), help="Feature CSV")(func)
    func = click.option("--labels", type=click.Path(), help="Label file")(func)
    return func


def _load_graph_from(graph_dir, edges, features, labels):
    if graph_dir:
        return load_graph_dir(graph_dir)
    if not (edges and features and labels):
        raise ConfigError("give --graph-dir or all of --edges/--features/--labels")
    return load_graph(edges, features, labels)


def experiment_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(), help="YAML config; its values override flags"),
        click.option("--name", help="Method label used in reports"),
        click.option("--trainer", type=click.Choice(["ERM", "VREX", "EERM_LITE", "HEI"])),
        click.option("--setting", type=click.Choice([k.value for k in SettingKind])),
        click.option("--backbone", type=click.Choice(["LinkxLite", "SgcLite"])),
        click.option("--hidden", type=int, help="Encoder hidden dim"),
        click.option("--layers", type=int, help="Encoder layers"),
        click.option("--epochs", type=int),
        click.option("--warmup", type=int, help="HEI warm-up epochs"),
        click.option("-K", "--K", "num_envs", type=int, help="Environment count"),
        click.option("--lambda", "lam", type=float, help="Penalty weight"),
        click.option("--lr", type=float),
        click.option("--lr-rho", type=float),
        click.option("--weight-decay", type=float),
        click.option("--seed", type=int, help="Base training seed"),
        click.option("--metric", "metrics", multiple=True,
                     type=click.Choice([m.value for m in SimilarityMetric]), help="z metric(s) for HEI"),
        click.option("--trials", type=int),
        click.option("--output-dir", type=click.Path()),
        click.option("--graph-dir", type=click.Path(), help="Use file data from this directory"),
        click.option("--num-nodes", type=int, help="Synthetic graph size"),
        click.option("--synth-seed", type=int, help="Base synthetic data seed"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _flags_to_config(flags: Dict[str, Any]) -> Dict[str, Any]:
    """Nested config dict from the flags that were actually given."""
    out: Dict[str, Any] = {}

    def put(path: str, value):
        if value is None or (isinstance(value, (list, tuple)) and not value):
            return
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value

    put("name", flags.get("name"))
    put("setting", flags.get("setting"))
    put("trials", flags.get("trials"))
    put("output_dir", flags.get("output_dir"))
    put("backbone.kind", flags.get("backbone"))
    put("backbone.hidden_dim", flags.get("hidden"))
    put("backbone.num_layers", flags.get("layers"))
    put("train.trainer", flags.get("trainer"))
    put("train.epochs", flags.get("epochs"))
    put("train.warmup_epochs", flags.get("warmup"))
    put("train.K", flags.get("num_envs"))
    put("train.lambda", flags.get("lam"))
    put("train.lr", flags.get("lr"))
    put("train.lr_rho", flags.get("lr_rho"))
    put("train.weight_decay", flags.get("weight_decay"))
    put("train.seed", flags.get("seed"))
    metrics = flags.get("metrics")
    put("train.z_metrics", list(metrics) if metrics else None)
    if flags.get("graph_dir"):
        put("data.source", "files")
        put("data.graph_dir", flags.get("graph_dir"))
    put("data.synth.num_nodes", flags.get("num_nodes"))
    put("data.synth.seed", flags.get("synth_seed"))
    return out


def _build_config(flags: Dict[str, Any]):
    base = _flags_to_config(flags)
    config_path = flags.get("config_path")
    cfg = load_experiment_config(config_path, base) if config_path else parse_config(base)
    validate_or_raise(cfg)
    return cfg


# ============================================================================
# OUTPUT
# ============================================================================

def _print_result(result: ExperimentResult):
    table = Table(title=f"{result.method} / {result.setting}")
    table.add_column("trial")
    for group in GROUPS:
        table.add_column(group, justify="right")
    for row in result.trials:
        table.add_row(str(row["trial"]), *[f"{row[g]:.2f}" for g in GROUPS])
    agg = result.aggregate
    table.add_row("mean ± std", *[f"{agg[g]['mean']:.2f} ± {agg[g]['std']:.2f}" for g in GROUPS])
    console.print(table)


def _print_sweep(result: SweepResult):
    frame = result.to_frame()
    table = Table(title=f"sweep over {result.param}")
    table.add_column(result.param)
    for group in GROUPS:
        table.add_column(group, justify="right")
    for _, row in frame.iterrows():
        table.add_row(str(row["value"]),
                      *[f"{row[f'{g}_mean']:.2f} ± {row[f'{g}_std']:.2f}" for g in GROUPS])
    console.print(table)


# ============================================================================
# COMMANDS
# ============================================================================

@click.group()
@click.version_option(Config.TOOL_VERSION, prog_name=Config.TOOL_NAME)
def cli():
    """Heterophily-guided environment inference toolkit."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML with SynthConfig fields (or data.synth)")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory")
@click.option("--num-nodes", type=int)
@click.option("--num-classes", type=int)
@click.option("--mean-degree", type=float)
@click.option("--seed", type=int)
@click.option("--wiring", type=click.Choice(["stub_matching", "stub_sampling"]))
@click.option("--structural-spurious/--no-structural-spurious", default=None)
@cli_errors
def synth(config_path, out_dir, **flags):
    """Generate a synthetic dataset with a homophily shift."""
    payload = {k: v for k, v in flags.items() if v is not None}
    if config_path:
        file_values = load_config_file(config_path)
        file_values = file_values.get("data", {}).get("synth", file_values)
        payload = deep_merge(payload, file_values)
    cfg = SynthConfig.model_validate(payload)
    g, split, truth = generate(cfg)
    save_synth(out_dir, g, split, truth, cfg)

    shift = shift_report(g, split, truth)
    table = Table(title=f"shift report (L1 train/test = {shift['train_test_l1']:.3f})")
    for column in ("region", "nodes", "target h", "realized h", "spurious agree", "sp nearest-mean", "inv probe"):
        table.add_column(column, justify="right")
    fmt = lambda v: "-" if v is None else f"{v:.3f}"
    for name, stats in shift["regions"].items():
        table.add_row(name, str(stats["nodes"]), fmt(stats["mean_target_homophily"]),
                      fmt(stats["mean_realized_homophily"]), fmt(stats["spurious_agreement"]),
                      fmt(stats["spurious_nearest_mean_acc"]), fmt(stats["invariant_probe_acc"]))
    console.print(table)
    click.echo(f"Wrote dataset to {out_dir}")


@cli.command()
@graph_options
@click.option("--metric", type=click.Choice([m.value for m in SimilarityMetric]), default="SimRank")
@click.option("--decay-c", type=float, default=Config.SIMRANK_DECAY)
@click.option("--policy", type=click.Choice([p.value for p in IsolatedNodePolicy]), default="ZeroPattern")
@click.option("--split", "split_path", type=click.Path(), help="Print a summary per split part")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output CSV")
@cli_errors
def patterns(graph_dir, edges, features, labels, metric, decay_c, policy, split_path, out_path):
    """Estimate neighbor patterns and write them as CSV."""
    g = _load_graph_from(graph_dir, edges, features, labels)
    cfg = SimilarityConfig(metric=metric, decay_c=decay_c, isolated_node_policy=policy)
    p = estimate_patterns(g, cfg)
    save_patterns(p, out_path)

    split_path = split_path or (os.path.join(graph_dir, SPLIT_FILE) if graph_dir else None)
    if split_path and os.path.exists(split_path):
        split = load_split(split_path)
        table = Table(title=f"{metric} neighbor patterns")
        for column in ("part", "count", "mean", "std", "q25", "median", "q75"):
            table.add_column(column, justify="right")
        for name, idx in (("train", split.train), ("val", split.val), ("test", split.test)):
            if idx.size == 0:
                continue
            s = pattern_summary(p, idx)
            table.add_row(name, str(s["count"]), *[f"{s[k]:.4f}" for k in ("mean", "std", "q25", "median", "q75")])
        console.print(table)
    click.echo(f"Wrote patterns to {out_path}")


@cli.command()
@graph_options
@click.option("--split", "split_path", type=click.Path(), help="Split JSON (default: <graph-dir>/split.json)")
@click.option("--setting", type=click.Choice([k.value for k in SettingKind]), default="standard")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output EvalSetting JSON")
@cli_errors
def split(graph_dir, edges, features, labels, split_path, setting, out_path):
    """Build a homophily-stratified evaluation setting."""
    g = _load_graph_from(graph_dir, edges, features, labels)
    split_path = split_path or (os.path.join(graph_dir, SPLIT_FILE) if graph_dir else None)
    if not split_path:
        raise ConfigError("give --split or --graph-dir containing split.json")
    ev = build_setting(g, load_split(split_path), SettingKind(setting))
    save_setting(ev, out_path)
    click.echo(
        f"{ev.kind.value}: train={ev.train_idx.size} high_hom_test={ev.high_hom_test.size} "
        f"low_hom_test={ev.low_hom_test.size} -> {out_path}"
    )


@cli.command("train")
@experiment_options
@click.option("--checkpoint/--no-checkpoint", default=True, help="Save the selected model")
@cli_errors
def train_cmd(checkpoint, **flags):
    """Single training run (one trial)."""
    cfg = _build_config(flags)
    cfg = cfg.model_copy(update={"trials": 1, "save_checkpoints": checkpoint})
    _print_result(run_experiment(cfg))


@cli.command()
@experiment_options
@cli_errors
def experiment(**flags):
    """Multi-trial experiment."""
    cfg = _build_config(flags)
    _print_result(run_experiment(cfg))


@cli.command("sweep")
@experiment_options
@click.option("--param", required=True, type=click.Choice(["K", "lambda", "metric"]))
@click.option("--values", "values_csv", required=True, help="Comma-separated values")
@cli_errors
def sweep_cmd(param, values_csv, **flags):
    """Grid sweep over K, lambda or the similarity metric."""
    cfg = _build_config(flags)
    raw = [v.strip() for v in values_csv.split(",") if v.strip()]
    try:
        values = [int(v) for v in raw] if param == "K" else [float(v) for v in raw] if param == "lambda" else raw
    except ValueError as e:
        raise ConfigError(f"bad --values for {param}: {e}") from e
    _print_sweep(sweep(cfg, param, values))


@cli.command("report")
@click.argument("results", nargs=-1, type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), help="Write report.md and report.csv here")
@cli_errors
def report_cmd(results, out_dir):
    """Comparison table over result.json files (first one is the baseline)."""
    markdown, _ = build_report(list(results), out_dir)
    click.echo(markdown)


if __name__ == "__main__":
    cli()
