import csv
import json

import pytest

from trafficpipe.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from trafficpipe.config import RunConfig, load_config, parse_config_text, vehicle_params
from trafficpipe.errors import ConfigError
from trafficpipe.synthetic import write_scenario

# ------------------------------------------------------------------ config


def test_parse_config_types_and_vehicle_overrides():
    vals = parse_config_text("seed = 7\nalpha = 0.2\nnodes = a.csv\ngraphml = yes\ncar_a_max = 1.4\n# note\n")
    assert vals["seed"] == 7 and vals["alpha"] == 0.2 and vals["graphml"] is True
    assert str(vals["nodes"]) == "a.csv"
    cfg = RunConfig(**vals)
    car, truck = vehicle_params(cfg)
    assert car.a_max == 1.4 and truck.a_max == 0.8


@pytest.mark.parametrize("text", ["sed = 7\n", "seed = seven\n", "graphml = maybe\n", "bus_a_max = 1\n",
                                  "car_colour = 1\n"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_flags_override_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 1\nworkers = 2\nn_iter = 3\n")
    cfg = load_config(p, {"seed": 9, "workers": None})
    assert (cfg.seed, cfg.workers, cfg.n_iter) == (9, 2, 3)


def test_defaults():
    cfg = RunConfig()
    assert (cfg.alpha, cfg.beta, cfg.dt, cfg.n_iter, cfg.phase_duration) == (0.15, 4.0, 0.5, 4, 10.0)


def test_validation(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("")
    with pytest.raises(ConfigError, match="missing required"):
        RunConfig(nodes=f).validate(("nodes", "edges"))
    with pytest.raises(ConfigError, match="not found"):
        RunConfig(nodes=f, edges=tmp_path / "nope.csv").validate(("nodes", "edges"))
    with pytest.raises(ConfigError, match="seed"):
        RunConfig().validate((), need_seed=True)
    with pytest.raises(ConfigError):
        RunConfig(workers=0).validate()
    with pytest.raises(ConfigError):
        RunConfig(out_dir=f).validate()


# --------------------------------------------------------------------- CLI


def run(*args):
    return main([*map(str, args), "--log-level", "warning"])


def logs(capsys):
    return [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.startswith("{")]


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    base = tmp_path_factory.mktemp("scn")
    raw = write_scenario(base / "raw", n_nodes=60, n_zones=8, n_pairs=20, total_trips=60, seed=2,
                         control_share=0.2)
    net = base / "net"
    assert run("network", "--nodes", raw["nodes"], "--edges", raw["edges"], "--out-dir", net) == EXIT_OK
    dem = base / "dem"
    assert run("link-demand", "--nodes", net / "nodes.csv", "--edges", net / "edges.csv",
               "--zones", raw["zones"], "--trips", raw["trips"], "--out-dir", dem) == EXIT_OK
    return {"base": base, "raw": raw, "net": net, "dem": dem}


def graph_args(s):
    return ["--nodes", s["net"] / "nodes.csv", "--edges", s["net"] / "edges.csv"]


def test_network_stats(scenario):
    stats = json.loads((scenario["net"] / "network_stats.json").read_text())
    assert set(stats["stages"]) == {"load", "filter", "scc", "simplify"}
    assert stats["nodes"] == stats["stages"]["simplify"]["nodes"] > 0
    # simplification merges pass-through nodes but keeps total length
    assert stats["total_km"] == pytest.approx(stats["stages"]["scc"]["total_km"], rel=1e-9)
    with (scenario["net"] / "edges.csv").open() as fh:
        header = next(csv.reader(fh))
    assert {"t0_s", "a0", "a4", "capacity_vps"} <= set(header)


def test_network_rerun_byte_identical(scenario, tmp_path):
    raw = scenario["raw"]
    assert run("network", "--nodes", raw["nodes"], "--edges", raw["edges"], "--out-dir", tmp_path) == EXIT_OK
    for name in ("nodes.csv", "edges.csv", "network_stats.json"):
        assert (tmp_path / name).read_bytes() == (scenario["net"] / name).read_bytes()


def test_missing_input_is_validation_error(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    code = run("network", "--nodes", scenario["raw"]["nodes"], "--edges", tmp_path / "missing.csv", "--out-dir", out)
    assert code == EXIT_INVALID and not out.exists()
    assert any(r["level"] == "error" and "missing.csv" in r["error"] for r in logs(capsys))


def test_microsim_needs_seed(scenario, tmp_path):
    out = tmp_path / "out"
    code = run("microsim", *graph_args(scenario), "--demand", scenario["dem"] / "node_demand.csv",
               "--departures", scenario["raw"]["departures"], "--out-dir", out)
    assert code == EXIT_INVALID and not out.exists()


def test_bad_vehicle_override_is_validation_error(scenario, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("car_a_max = -1\n")
    out = tmp_path / "out"
    code = run("microsim", "--config", cfg, *graph_args(scenario), "--demand", scenario["dem"] / "node_demand.csv",
               "--departures", scenario["raw"]["departures"], "--seed", 1, "--out-dir", out)
    assert code == EXIT_INVALID and not out.exists()


def test_unknown_config_key(scenario, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("gap_tolerence = 1e-3\n")
    out = tmp_path / "out"
    assert run("assign", "--config", cfg, *graph_args(scenario), "--demand", scenario["dem"] / "node_demand.csv",
               "--out-dir", out) == EXIT_INVALID
    assert not out.exists()


def test_malformed_row_is_runtime_error_with_context(scenario, tmp_path, capsys):
    bad = tmp_path / "edges.csv"
    text = scenario["raw"]["edges"].read_text().splitlines()
    text[3] = "1,2,0,primary,not-a-length,,,"
    bad.write_text("\n".join(text) + "\n")
    assert run("network", "--nodes", scenario["raw"]["nodes"], "--edges", bad, "--out-dir", tmp_path / "o") == EXIT_RUNTIME
    err = [r for r in logs(capsys) if r["level"] == "error"][0]
    assert f"{bad}:4" in err["error"] and err["error_type"] == "MalformedRow"


def test_assign_summary_and_vph(scenario, tmp_path):
    demand = scenario["dem"] / "node_demand.csv"
    assert run("assign", *graph_args(scenario), "--demand", demand, "--out-dir", tmp_path / "a") == EXIT_OK
    summary = json.loads((tmp_path / "a" / "assign_summary.json").read_text())
    assert summary["relative_gap"] < 1e-4 and summary["wall_time_ms"] > 0
    # the same demand given per hour is divided by 3600 internally
    rows = list(csv.DictReader(demand.open()))
    vph = tmp_path / "vph.csv"
    with vph.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({**r, "trips": repr(float(r["trips"]) * 3600.0)})
    assert run("assign", *graph_args(scenario), "--demand", vph, "--vph", "--out-dir", tmp_path / "b") == EXIT_OK
    other = json.loads((tmp_path / "b" / "assign_summary.json").read_text())
    assert other["demand_vps"] == pytest.approx(summary["demand_vps"], rel=1e-12)
    a = list(csv.DictReader((tmp_path / "a" / "flows.csv").open()))
    b = list(csv.DictReader((tmp_path / "b" / "flows.csv").open()))
    for x, y in zip(a, b):
        assert float(x["volume_vps"]) == pytest.approx(float(y["volume_vps"]), rel=1e-9, abs=1e-12)


def test_assign_from_zones(scenario, tmp_path):
    raw = scenario["raw"]
    assert run("assign", *graph_args(scenario), "--zones", raw["zones"], "--trips", raw["trips"],
               "--out-dir", tmp_path) == EXIT_OK
    assert run("assign", *graph_args(scenario), "--zones", raw["zones"], "--out-dir", tmp_path / "x") == EXIT_INVALID


@pytest.fixture(scope="module")
def microsim_runs(scenario):
    s = scenario
    outs = {}
    for name, workers in (("one", 1), ("again", 1), ("three", 3)):
        out = s["base"] / f"sim_{name}"
        code = run("microsim", *graph_args(s), "--demand", s["dem"] / "node_demand.csv",
                   "--departures", s["raw"]["departures"], "--controls", s["raw"]["controls"],
                   "--seed", 4, "--workers", workers, "--out-dir", out)
        assert code == EXIT_OK
        outs[name] = out
    return outs


def test_microsim_outputs_deterministic(microsim_runs):
    for name in ("vehicles.csv", "edge_series.csv"):
        first = (microsim_runs["one"] / name).read_bytes()
        assert first == (microsim_runs["again"] / name).read_bytes()
        assert first == (microsim_runs["three"] / name).read_bytes()


def test_microsim_summary(microsim_runs, scenario):
    summary = json.loads((microsim_runs["one"] / "microsim_summary.json").read_text())
    assert [r["reroute_fraction"] for r in summary["iterations"]] == [1.0, 1.0, 0.5, 0.25]
    trips = sum(float(r["trips"]) for r in csv.DictReader((scenario["dem"] / "node_demand.csv").open()))
    assert summary["vehicles"] == summary["departed"] == trips


def test_report_command(microsim_runs, scenario, tmp_path):
    sim = microsim_runs["one"]
    code = run("report", "--vehicles", sim / "vehicles.csv", "--edge-series", sim / "edge_series.csv",
               *graph_args(scenario), "--bins", 10, "--out-dir", tmp_path)
    assert code == EXIT_OK
    for fam in ("departure_time", "edges_per_path", "distance", "fuel", "road_length"):
        assert (tmp_path / f"hist_{fam}.csv").is_file() and (tmp_path / f"hist_{fam}.png").is_file()
    assert (tmp_path / "utilization_map.png").is_file()


def test_stage_timings_logged(scenario, tmp_path, capsys):
    raw = scenario["raw"]
    main(["network", "--nodes", str(raw["nodes"]), "--edges", str(raw["edges"]), "--out-dir", str(tmp_path)])
    records = logs(capsys)
    finished = [r["stage"] for r in records if r["msg"] == "stage finished"]
    assert finished == ["load", "filter", "scc", "simplify", "attributes", "write"]
    assert all("seconds" in r for r in records if r["msg"] == "stage finished")
