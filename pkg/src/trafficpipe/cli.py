"""Command-line entry point: ``trafficpipe <subcommand> [options]``.

Exit codes: 0 on success, 1 when the configuration is invalid (nothing is
written), 2 when a stage fails while running.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from pathlib import Path

from .config import RunConfig, load_config, vehicle_params
from .errors import ConfigError, PipelineError

log = logging.getLogger("trafficpipe")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra={"fields": {...}}`` is merged in."""

    def format(self, record):
        out = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        out.update(getattr(record, "fields", None) or {})
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, default=str)


def setup_logging(level: str = "info", stream=None) -> None:
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


@contextlib.contextmanager
def stage(name: str, timings: dict):
    t0 = time.perf_counter()
    log.info("stage started", extra={"fields": {"stage": name}})
    yield
    seconds = time.perf_counter() - t0
    timings[name] = seconds
    log.info("stage finished", extra={"fields": {"stage": name, "seconds": round(seconds, 6)}})


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- commands


def cmd_network(cfg: RunConfig) -> dict:
    from .attributes import compute_bpr_coefficients, enriched_columns, impute_lanes
    from .graph import filter_by_road_type, largest_scc, load_graph, simplify_topology, write_graph, write_graphml

    timings: dict = {}
    counts: dict = {}

    def record(name, g):
        counts[name] = {"nodes": g.n_nodes, "edges": g.n_edges, "total_km": g.total_length() / 1000.0}

    with stage("load", timings):
        g = load_graph(cfg.nodes, cfg.edges)
    record("load", g)
    with stage("filter", timings):
        g = filter_by_road_type(g)
    record("filter", g)
    with stage("scc", timings):
        g = largest_scc(g)
    record("scc", g)
    with stage("simplify", timings):
        g = simplify_topology(g)
    record("simplify", g)
    with stage("attributes", timings):
        g = compute_bpr_coefficients(impute_lanes(g), cfg.alpha, cfg.beta)
    imputed = sum(e.attrs.lanes_imputed for e in g.edges.values())
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    with stage("write", timings):
        write_graph(g, out / "nodes.csv", out / "edges.csv", enriched_columns())
        if cfg.graphml:
            write_graphml(g, out / "network.graphml")
        stats = {
            "stages": counts,
            "nodes": g.n_nodes,
            "edges": g.n_edges,
            "total_km": g.total_length() / 1000.0,
            "lanes_imputed": imputed,
        }
        _write_json(out / "network_stats.json", stats)
    return {"timings": timings, **stats}


def _demand_from_zones(cfg: RunConfig, g, timings):
    from .demand import link_demand, read_trips, read_zones

    with stage("link_demand", timings):
        linked = link_demand(read_trips(cfg.trips), read_zones(cfg.zones), g, cfg.workers)
    return linked


def cmd_link_demand(cfg: RunConfig) -> dict:
    from .demand import write_node_demand
    from .graph import load_graph

    timings: dict = {}
    with stage("load", timings):
        g = load_graph(cfg.nodes, cfg.edges)
    linked = _demand_from_zones(cfg, g, timings)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_node_demand(linked.records, cfg.out_dir / "node_demand.csv")
    summary = {
        "records": len(linked.records),
        "trips": sum(r.trips for r in linked.records),
        "dropped_records": linked.dropped_records,
        "dropped_trips": linked.dropped_trips,
    }
    _write_json(cfg.out_dir / "link_summary.json", summary)
    return {"timings": timings, **summary}


def cmd_assign(cfg: RunConfig) -> dict:
    from dataclasses import replace

    from .assignment import FwConfig, frank_wolfe, write_flows
    from .attributes import load_enriched_graph
    from .demand import read_node_demand

    timings: dict = {}
    fw_cfg = FwConfig(cfg.max_iterations, cfg.gap_tolerance, cfg.line_search_tolerance)
    with stage("load", timings):
        g = load_enriched_graph(cfg.nodes, cfg.edges, cfg.alpha, cfg.beta)
    if cfg.demand is not None:
        demand = read_node_demand(cfg.demand)
    else:
        demand = _demand_from_zones(cfg, g, timings).records
    if cfg.demand_unit == "vph":
        demand = [replace(r, trips=r.trips / 3600.0) for r in demand]
    with stage("frank_wolfe", timings):
        state = frank_wolfe(g, demand, fw_cfg, cfg.workers)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_flows(g, state, cfg.out_dir / "flows.csv")
    summary = state.summary()
    summary["demand_vps"] = sum(r.trips for r in demand)
    summary["stage_seconds"] = timings
    _write_json(cfg.out_dir / "assign_summary.json", summary)
    return summary


def _sim_config(cfg: RunConfig):
    from .microsim.engine import SimConfig

    car, truck = vehicle_params(cfg)
    try:
        return SimConfig(
            dt=cfg.dt, lc_scale_m=cfg.lc_scale_m, lc_gain_m=cfg.lc_gain_m,
            phase_duration=cfg.phase_duration, truck_share=cfg.truck_share, car=car, truck=truck,
            max_time=cfg.max_time, workers=cfg.workers, check_atlas=cfg.check_atlas,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_microsim(cfg: RunConfig) -> dict:
    from .attributes import load_enriched_graph
    from .demand import read_node_demand
    from .microsim.control import read_controls
    from .microsim.planning import DepartureHistogram
    from .microsim.runner import run_iterations, write_edge_series, write_vehicles

    sim_cfg = _sim_config(cfg)
    timings: dict = {}
    with stage("load", timings):
        g = load_enriched_graph(cfg.nodes, cfg.edges, cfg.alpha, cfg.beta)
        demand = read_node_demand(cfg.demand)
        hist = DepartureHistogram.read(cfg.departures)
        controls = read_controls(cfg.controls) if cfg.controls else {}
    with stage("simulate", timings):
        report = run_iterations(g, demand, hist, cfg.n_iter, sim_cfg, cfg.seed, controls)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_vehicles(report, out / "vehicles.csv")
    write_edge_series(report, out / "edge_series.csv")
    last = report.iterations[-1]
    summary = {
        "seed": cfg.seed,
        "vehicles": len(report.vehicles),
        "departed": last.departed,
        "arrived": last.arrived,
        "sim_time_s": last.sim_time_s,
        "iterations": [
            {k: v for k, v in r.__dict__.items() if k != "wall_time_s"} for r in report.iterations
        ],
    }
    _write_json(out / "microsim_summary.json", summary)
    return {"timings": timings, **summary}


def cmd_report(cfg: RunConfig) -> dict:
    from .graph import load_graph
    from .report import build_report

    timings: dict = {}
    g = None
    if cfg.nodes is not None and cfg.edges is not None:
        g = load_graph(cfg.nodes, cfg.edges)
    with stage("report", timings):
        files = build_report(cfg.vehicles, cfg.out_dir, g, cfg.edge_series, cfg.bins)
    return {"timings": timings, "files": [str(p) for p in files]}


COMMANDS = {
    "network": (cmd_network, ("nodes", "edges", "out_dir"), False),
    "link-demand": (cmd_link_demand, ("nodes", "edges", "zones", "trips", "out_dir"), False),
    "assign": (cmd_assign, ("nodes", "edges", "out_dir"), False),
    "microsim": (cmd_microsim, ("nodes", "edges", "demand", "departures", "out_dir"), True),
    "report": (cmd_report, ("vehicles", "out_dir"), False),
}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out-dir", dest="out_dir", type=Path)
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])

    parser = argparse.ArgumentParser(prog="trafficpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_args(p):
        p.add_argument("--nodes", type=Path)
        p.add_argument("--edges", type=Path)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)

    p = sub.add_parser("network", parents=[common], help="clean and enrich a road network extract")
    graph_args(p)
    p.add_argument("--graphml", action="store_true", default=None)

    p = sub.add_parser("link-demand", parents=[common], help="map zone trips onto network nodes")
    graph_args(p)
    p.add_argument("--zones", type=Path)
    p.add_argument("--trips", type=Path)

    p = sub.add_parser("assign", parents=[common], help="static user-equilibrium assignment")
    graph_args(p)
    p.add_argument("--demand", type=Path, help="node demand CSV")
    p.add_argument("--zones", type=Path)
    p.add_argument("--trips", type=Path)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--gap", dest="gap_tolerance", type=float)
    p.add_argument("--vph", dest="demand_unit", action="store_const", const="vph",
                   help="demand is given in vehicles per hour")

    p = sub.add_parser("microsim", parents=[common], help="per-vehicle simulation")
    graph_args(p)
    p.add_argument("--demand", type=Path)
    p.add_argument("--departures", type=Path)
    p.add_argument("--controls", type=Path)
    p.add_argument("--iterations", dest="n_iter", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--truck-share", dest="truck_share", type=float)
    p.add_argument("--max-time", dest="max_time", type=float)

    p = sub.add_parser("report", parents=[common], help="histograms and figures from simulation output")
    p.add_argument("--vehicles", type=Path)
    p.add_argument("--edge-series", dest="edge_series", type=Path)
    p.add_argument("--nodes", type=Path)
    p.add_argument("--edges", type=Path)
    p.add_argument("--bins", type=int)
    return parser


_NOT_SETTINGS = {"command", "config", "log_level"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    func, required, need_seed = COMMANDS[args.command]
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS}
    try:
        cfg = load_config(args.config, overrides).validate(required, need_seed)
        if args.command == "assign" and cfg.demand is None and (cfg.zones is None or cfg.trips is None):
            raise ConfigError("assign needs either demand or zones + trips")
        if args.command == "microsim":
            _sim_config(cfg)
    except ConfigError as exc:
        log.error("invalid configuration", extra={"fields": {"error": str(exc)}})
        return EXIT_INVALID
    try:
        t0 = time.perf_counter()
        result = func(cfg)
    except (PipelineError, OSError, ValueError) as exc:
        log.error("run failed", extra={"fields": {"command": args.command, "error": str(exc),
                                                    "error_type": type(exc).__name__}})
        return EXIT_RUNTIME
    except Exception:
        log.exception("run failed", extra={"fields": {"command": args.command}})
        return EXIT_RUNTIME
    log.info("run finished", extra={"fields": {"command": args.command,
                                               "seconds": round(time.perf_counter() - t0, 6),
                                               "result": result}})
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
