"""``ranrc`` command line: single runs, (epsilon, loss) sweeps, checks and the oracle.

Config files are flat ``key = value`` text.  A section header is optional;
every key belongs to one flat namespace.  Command-line flags override the file.

    ranrc run --config fig2.ini --out results/fig2
    ranrc run --config fig3.ini --loss 0.1,0.5,0.8,0.9
    ranrc oracle --config fig2.ini
    ranrc check
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checks import run_invariant_suite
from .costs import DescentVariant
from .graph import write_edgelist
from .ingest import resolve_dataset_path
from .sim import SimConfig, SimulationDiverged, Trace, build_problem, run_simulation

log = logging.getLogger("ranrc")

__all__ = ["ConfigError", "ExperimentSpec", "CellResult", "parse_config", "run_experiment", "main"]

SUMMARY_COLUMNS = (
    "epsilon", "loss_p", "status", "iterations", "final_mse", "tail_slope",
    "tau_hat", "L_hat", "max_mass_residual_y", "max_mass_residual_z",
    "seed", "trace_file", "error",
)


class ConfigError(ValueError):
    """Unknown key, badly typed value or inconsistent experiment description."""


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _float_list(text: str) -> list[float]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    return [float(t) for t in items]


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _x0(text: str):
    vals = _float_list(text)
    return vals[0] if len(vals) == 1 else tuple(vals)


# SimConfig fields settable from a config file, with their parsers
_SIM_KEYS = {
    "n_nodes": int, "radius": float, "graph_file": _optional(str),
    "cost": str, "dim": int, "cond": float, "gamma": float,
    "dataset": _optional(str), "features": _int_tuple,
    "balanced": _bool, "standardize": _bool,
    "c": float, "variant": DescentVariant.parse, "x0": _x0,
    "activation": str, "loss_model": str, "burst_length": int, "max_iters": int,
    "seed": int, "graph_seed": _optional(int), "cost_seed": _optional(int),
    "partition_seed": _optional(int), "activation_seed": _optional(int), "loss_seed": _optional(int),
    "record_residuals": _bool, "record_consensus": _bool, "snapshot_stride": int,
    "stop_mse": _optional(float), "freeze_after": _optional(int), "divergence_threshold": float,
}
# sweep axes and output options
_SPEC_KEYS = {"epsilon": _float_list, "loss_p": _float_list, "out": str, "plot": _bool, "jobs": int}
_ALIASES = {"eps": "epsilon", "loss": "loss_p", "p": "loss_p", "output": "out", "nodes": "n_nodes"}


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimConfig
    epsilons: tuple[float, ...]
    losses: tuple[float, ...]
    out_dir: Path = Path("ranrc-out")
    plot: bool = False
    jobs: int = 1

    def cells(self) -> list[SimConfig]:
        return [self.base.replace(epsilon=e, loss_p=p) for e in self.epsilons for p in self.losses]

    def echo(self) -> str:
        """Resolved configuration as a config file that reproduces this spec."""
        lines = ["[experiment]"]
        for f in dataclasses.fields(SimConfig):
            if f.name in ("epsilon", "loss_p"):
                continue
            value = getattr(self.base, f.name)
            if isinstance(value, DescentVariant):
                value = value.value
            elif isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{f.name} = {value}")
        lines.append(f"epsilon = {', '.join(repr(e) for e in self.epsilons)}")
        lines.append(f"loss_p = {', '.join(repr(p) for p in self.losses)}")
        lines.append(f"plot = {self.plot}")
        return "\n".join(lines) + "\n"


def _read_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    raw: dict[str, str] = {}
    for section in parser.sections():
        raw.update(parser.items(section))
    return raw


def parse_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from a config file plus string overrides."""
    raw = _read_file(Path(path)) if path else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    sim_kwargs, spec_kwargs = {}, {}
    for key, text in raw.items():
        name = _ALIASES.get(key.strip().lower().replace("-", "_"), key.strip().lower().replace("-", "_"))
        if name in _SIM_KEYS:
            target, conv = sim_kwargs, _SIM_KEYS[name]
        elif name in _SPEC_KEYS:
            target, conv = spec_kwargs, _SPEC_KEYS[name]
        else:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            target[name] = conv(str(text))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None

    epsilons = tuple(spec_kwargs.pop("epsilon", [SimConfig.epsilon]))
    losses = tuple(spec_kwargs.pop("loss_p", [SimConfig.loss_p]))
    if not epsilons or not losses:
        raise ConfigError("sweep lists for epsilon and loss_p must be non-empty")
    try:
        base = SimConfig(epsilon=epsilons[0], loss_p=losses[0], **sim_kwargs)
        for e in epsilons:
            for p in losses:
                base.replace(epsilon=e, loss_p=p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    if base.cost == "binomial":
        data_path = resolve_dataset_path(base.dataset)
        if not data_path.is_file():
            raise ConfigError(f"dataset not found: {data_path} (set 'dataset' or RANRC_DATA)")
    if base.graph_file and not Path(base.graph_file).is_file():
        raise ConfigError(f"graph file not found: {base.graph_file}")

    out = Path(spec_kwargs.pop("out", "ranrc-out"))
    jobs = spec_kwargs.pop("jobs", 1)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return ExperimentSpec(base, epsilons, losses, out, spec_kwargs.pop("plot", False), jobs)


@dataclass
class CellResult:
    config: SimConfig
    trace: Trace | None
    error: str = ""
    trace_file: str = ""

    def row(self) -> dict:
        cfg = self.config
        if self.trace is None:
            return {"epsilon": cfg.epsilon, "loss_p": cfg.loss_p, "status": "error",
                    "iterations": 0, "seed": cfg.seed, "error": self.error,
                    **{k: math.nan for k in ("final_mse", "tail_slope", "tau_hat", "L_hat",
                                               "max_mass_residual_y", "max_mass_residual_z")},
                    "trace_file": ""}
        s = self.trace.summary()
        row = {k: s.get(k, "") for k in SUMMARY_COLUMNS}
        row.update(trace_file=self.trace_file, error=self.error)
        return row


def cell_name(cfg: SimConfig) -> str:
    return f"eps{cfg.epsilon!r}_loss{cfg.loss_p!r}"


def _run_cell(cfg: SimConfig) -> tuple[Trace | None, str]:
    try:
        return run_simulation(cfg), ""
    except SimulationDiverged as exc:
        return exc.trace, str(exc)
    except Exception as exc:  # recorded per cell, the sweep carries on
        log.error("cell %s failed: %s", cell_name(cfg), exc)
        return None, f"{type(exc).__name__}: {exc}"


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def run_experiment(spec: ExperimentSpec) -> tuple[int, list[CellResult]]:
    """Run every sweep cell, write traces, summaries and an optional plot.

    Returns exit status 0 when every cell finished without error (divergence
    is a legitimate experimental outcome and does not count as an error), 1
    otherwise.
    """
    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(spec.echo())
    cells = spec.cells()

    if spec.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(cfg) for cfg in cells]

    results = []
    for cfg, (trace, err) in zip(cells, outcomes):
        res = CellResult(cfg, trace, err)
        if trace is not None:
            res.trace_file = f"trace_{cell_name(cfg)}.csv"
            trace.to_csv(out / res.trace_file)
        results.append(res)

    graph = next((r.trace.graph for r in results if r.trace is not None), None)
    if graph is not None:
        write_edgelist(graph, out / "graph.txt")

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in results:
            writer.writerow({k: _fmt(v) for k, v in r.row().items()})

    blocks = []
    for r in results:
        body = r.trace.summary_text() if r.trace is not None else "status = error\n"
        if r.error:
            body += f"error = {r.error}\n"
        blocks.append(f"[{cell_name(r.config)}]\n{body}")
    (out / "summary.txt").write_text("\n".join(blocks))

    if spec.plot:
        plot_traces([r for r in results if r.trace is not None], out / "mse.svg")

    for r in results:
        row = r.row()
        log.info("%s: %s after %s iterations, final MSE %s", cell_name(r.config),
                 row["status"], row["iterations"], _fmt(row["final_mse"]))
    return (0 if all(r.trace is not None for r in results) else 1), results


def plot_traces(results: Sequence[CellResult], path: Path) -> bool:
    """Overlay of log10 MSE against k.  Returns False when matplotlib is missing."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in results:
        t = r.trace
        ax.plot(t.iteration, np.log10(np.maximum(t.mse, 1e-300)),
                label=f"eps={r.config.epsilon:g}, p={r.config.loss_p:g}", linewidth=1)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("log10 MSE")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ranrc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration or an (epsilon, loss) sweep")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--epsilon", help="step size, or comma-separated sweep")
    run.add_argument("--loss", help="packet-loss probability, or comma-separated sweep")
    run.add_argument("--seed", help="master seed")
    run.add_argument("--max-iters", dest="max_iters")
    run.add_argument("--out", help="output directory")
    run.add_argument("--plot", action="store_const", const="true", help="write mse.svg")
    run.add_argument("--jobs", help="parallel worker processes for sweep cells")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key (repeatable)")

    oracle = sub.add_parser("oracle", help="print x* from centralized Newton")
    oracle.add_argument("--config")
    oracle.add_argument("--seed")
    oracle.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    check = sub.add_parser("check", help="run the invariant suite on a small random instance")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--rounds", type=int, default=300)
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for key in ("epsilon", "loss", "seed", "max_iters", "out", "plot", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "check":
            results = run_invariant_suite(seed=args.seed, rounds=args.rounds)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1

        spec = parse_config(args.config, _overrides(args))
        if args.command == "oracle":
            problem = build_problem(spec.base)
            print(" ".join(repr(v) for v in problem.x_star.tolist()))
            return 0

        sys.stderr.write(spec.echo())
        status, _ = run_experiment(spec)
        return status
    except ConfigError as exc:
        print(f"ranrc: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
