import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from bftperf import SimConfig, run
from bftperf.errors import ConfigError
from bftperf.harness import (
    ResultSeries, SeriesPoint, export_csv, find_crossover, get_preset, point_seed,
    preset_names, read_csv, run_sweep, sim_argmin, tail_slope,
)
from bftperf.harness.cli import main, parse_values
from bftperf.harness.presets import DEFAULTS, ratio_adjust

ALL_PRESETS = ["fig1a", "fig1b", "fig1c", "fig4a", "fig4b", "fig5a", "fig5b", "fig7a", "fig7b",
               "fig8a", "fig8b", "fig9a", "fig9b", "fig9c", "fig10a", "fig10b", "fig12", "fig14"]


def series_of(pairs, variable="rs", label=""):
    s = ResultSeries(variable, label)
    for x, y in pairs:
        s.points.append(SeriesPoint(x, y, 10, None, None, None, None))
    return s


# -- config

def test_config_roundtrip(tmp_path):
    cfg = SimConfig(protocol="ibft", topology="fc", topo_params=(8, 4), n=31, rs=2.5)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert SimConfig.load(p) == cfg


@pytest.mark.parametrize("bad", [dict(n=3), dict(n=16, n_f=6), dict(instances=0),
                                 dict(topology="fc", topo_params=(8, 3))])
def test_config_invalid(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad).validate()


def test_config_unknown_key():
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"n": 16, "bogus": 1})


# -- sweeps

def test_single_value_sweep_is_single_run():
    base = SimConfig(protocol="hotstuff", n=16, n_f=2, instances=60, seed=5)
    s = run_sweep(base, "tau0", [300.0])
    r = run(base.with_(tau0=300.0))
    assert s.points[0].sim_mean == r.mean
    assert s.points[0].sim_n == r.count


def test_point_seed_independent_of_grid():
    base = SimConfig(protocol="hotstuff", n=16, instances=20, seed=5)
    a = run_sweep(base, "tau0", [300.0, 400.0, 500.0])
    b = run_sweep(base, "tau0", [300.0, 400.0])
    assert [p.sim_mean for p in a.points[:2]] == [p.sim_mean for p in b.points]
    assert len({point_seed(5, i) for i in range(100)}) == 100


def test_parallel_sweep_matches_serial():
    base = SimConfig(protocol="ibft", n=10, instances=30, seed=2)
    a = run_sweep(base, "tau0", [50.0, 80.0, 120.0], workers=1)
    b = run_sweep(base, "tau0", [50.0, 80.0, 120.0], workers=2)
    assert [p.sim_mean for p in a.points] == [p.sim_mean for p in b.points]


def test_invalid_point_skipped_with_warning():
    base = SimConfig(protocol="hotstuff", n=16, instances=10)
    s = run_sweep(base, "n_f", [0, 2, 9])
    assert [p.value for p in s.points] == [0, 2]
    assert len(s.warnings) == 1 and "n_f=9" in s.warnings[0]


def test_sweep_columns_equal_length():
    base = SimConfig(protocol="hotstuff", topology="fc", topo_params=(8, 4), n=31, instances=20)
    s = run_sweep(base, "rs", [1.0, 9.0])
    cols = [s.column(c) for c in ("value", "sim_mean", "sim_n", "model", "model_improved", "q")]
    assert len({len(c) for c in cols}) == 1
    assert all(p.model_improved is not None for p in s.points)


def test_multichain_sweep_uses_split_rate():
    base = SimConfig(protocol="ibft", topology="fc", topo_params=(8, 4), n=31, rs=9.0,
                     instances=20)
    s = run_sweep(base, "c", [1, 3])
    assert s.points[1].chains == 3
    assert s.points[1].model == pytest.approx(189.0, rel=1e-9)   # rs/c = 3 keeps it validator-bound


def test_unknown_variable():
    with pytest.raises(ConfigError):
        run_sweep(SimConfig(), "rv", [1])


# -- slope, argmin, crossover

def test_slope_flat():
    s = series_of([(x, 100.0) for x in (1, 2, 3, 4)], "tau0")
    assert tail_slope(s) == 0.0


def test_slope_needs_three_points():
    s = series_of([(1, 1.0), (2, 2.0), (9, 3.0)], "tau0")
    with pytest.raises(ValueError):
        tail_slope(s, window=(0, 5))


def test_slope_no_faults_near_zero():
    base = SimConfig(protocol="hotstuff", n=16, instances=300)
    s = run_sweep(base, "tau0", [600.0, 800.0, 1000.0, 1200.0])
    assert abs(tail_slope(s)) < 0.02


def test_argmin_tolerance():
    s = series_of([(1, 10.0), (2, 5.02), (3, 5.0), (4, 7.0)], "tau0")
    assert sim_argmin(s) == 3
    assert sim_argmin(s, rel_tol=0.01) == 2


def test_crossover_single_sign_change():
    h = series_of([(1, 10.0), (2, 10.0), (3, 10.0)])
    i = series_of([(1, 14.0), (2, 12.0), (3, 8.0)])
    assert find_crossover(h, i) == pytest.approx(2.5)


def test_crossover_none():
    h = series_of([(1, 1.0), (2, 1.0)])
    i = series_of([(1, 2.0), (2, 3.0)])
    assert find_crossover(h, i) is None


@given(st.lists(st.floats(0.1, 100), min_size=2, max_size=8, unique=True), st.floats(-5, 5))
def test_crossover_of_linear_difference(xs, shift):
    xs = sorted(xs)
    mid = (xs[0] + xs[-1]) / 2
    h = series_of([(x, 50.0) for x in xs])
    i = series_of([(x, 50.0 + (mid - x) * 3) for x in xs])
    x = find_crossover(h, i)
    assert x is not None and x == pytest.approx(mid, rel=1e-9, abs=1e-9)


# -- CSV

def test_csv_empty_series_header_only(tmp_path):
    p = tmp_path / "e.csv"
    export_csv(ResultSeries("tau0"), p)
    lines = p.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("variable,value,sim_mean,sim_n,model,model_improved,q,tau0_star")


def test_csv_roundtrip(tmp_path):
    base = SimConfig(protocol="hotstuff", n=16, instances=20)
    s = [run_sweep(base.with_(n_f=k), "tau0", [200.0, 1 / 3 * 1000], label=f"n_f={k}")
         for k in (0, 2)]
    p = tmp_path / "r.csv"
    export_csv(s, p)
    back = read_csv(p)
    assert [b.label for b in back] == ["n_f=0", "n_f=2"]
    for a, b in zip(s, back):
        assert a.points == b.points
    assert {r.n_f for b in back for r in b.points} == {0, 2}


def test_csv_keeps_six_digits(tmp_path):
    s = series_of([(1.0, 123.4567891)])
    p = tmp_path / "d.csv"
    export_csv(s, p)
    assert "123.4567891" in p.read_text()


def test_csv_unwritable(tmp_path):
    with pytest.raises(ConfigError):
        export_csv(ResultSeries("rs"), tmp_path / "missing" / "x.csv")


# -- presets

def test_all_presets_exist():
    assert preset_names() == ALL_PRESETS


def test_unknown_preset_lists_names():
    with pytest.raises(ConfigError, match="fig4a"):
        get_preset("fig99")


@pytest.mark.parametrize("name", ALL_PRESETS)
def test_preset_log_has_caption_parameters(name):
    pr = get_preset(name)
    log = "\n".join(pr.config_log())
    for k, v in pr.caption.items():
        assert f"{k}={v}" in log
    for k, v in DEFAULTS.items():
        assert f"{k}={v}" in log
    for _, cfg in pr.curves:
        cfg.validate()


def test_preset_fig1b():
    pr = get_preset("fig1b")
    assert pr.variable == "n"
    assert {c.protocol for _, c in pr.curves} == {"hotstuff", "ibft"}
    assert all(c.topology == "dragonfly" and c.topo_params == (5,) and c.rs == 9.0
               for _, c in pr.curves)


def test_preset_fig9a():
    pr = get_preset("fig9a")
    label, cfg = pr.curves[0]
    assert (cfg.protocol, cfg.topology, cfg.topo_params, cfg.n) == ("hotstuff", "dragonfly", (4,), 40)
    assert pr.variable == "tau0"


def test_preset_fig10b_grid():
    pr = get_preset("fig10b")
    assert all(v * (v + 1) % 3 == 0 for v in pr.values)
    fc = ratio_adjust(pr.curves[0][1], 3)
    df = ratio_adjust(pr.curves[1][1], 3)
    assert fc.n == df.n == 24
    assert fc.topo_params == (4, 2) and df.topo_params == (3,)
    with pytest.raises(ConfigError):
        ratio_adjust(df, 4)


def test_preset_fig4a_two_curves():
    pr = get_preset("fig4a")
    assert [c.n_f for _, c in pr.curves] == [0, 2]
    assert pr.values[0] == 150 and pr.values[-1] == 500


# -- CLI

def test_parse_values():
    assert parse_values("150:250:50") == [150, 200, 250]
    assert parse_values("1,2.5") == [1, 2.5]


def test_cli_model(capsys):
    assert main(["model", "--protocol", "hotstuff", "--n", "16", "--tau0", "1e9"]) == 0
    out = capsys.readouterr().out
    assert "sigma=1/rate" in out
    body = json.loads(out[out.index("{\n"):])
    assert body["model"]["expected_time"] == pytest.approx(189.0)


def test_cli_flags_override_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"protocol": "ibft", "n": 16, "instances": 5}))
    out = tmp_path / "o.json"
    assert main(["simulate", "--config", str(p), "--instances", "7", "--seed", "3",
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["instances"] == 7


def test_cli_sweep_and_compare(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["compare", "--topology", "fc", "--topo-params", "8,4", "--n", "31",
                 "--instances", "30", "--variable", "rs", "--values", "0.5,9",
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "crossover rs" in text
    assert len(read_csv(out)) == 2


def test_cli_bad_config(capsys):
    assert main(["simulate", "--n", "3"]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_preset_list(capsys):
    assert main(["preset", "--list"]) == 0
    assert "fig10b" in capsys.readouterr().out


def test_cli_preset_run(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["preset", "fig14", "--instances", "20", "--out", str(out)]) == 0
    log = (tmp_path / "p.csv.config.txt").read_text()
    assert "caption model_rate=rs/c" in log
    assert sum(len(s) for s in read_csv(out)) == 9
