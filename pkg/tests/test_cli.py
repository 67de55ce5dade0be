"""Command line front end: config parsing, run outputs, reproducibility."""

import json
import math

import numpy as np
import pytest

from nbbm import __version__
from nbbm.cli import ConfigError, main, parse_config
from nbbm.runio import (
    ExperimentManifest,
    checkpoint_hash,
    load_population,
    read_events_csv,
    read_levy_csv,
    read_series_csv,
)

NBBM_INI = """\
[law]
q2 = 1.0

[selection]
N = 20
alphas = 0.25, 0.5

[run]
mode = nbbm
dt = 0.05
horizon = 2.0
replicas = 2
seed = 11
"""

BBBM_INI = """\
[law]
q2 = 1.0

[interval]
a = 5.0

[bbbm]
A = 1.2
epsilon = 1e9
y = 2.0
zeta = 6.0
zeta_breakout = false

[run]
mode = bbbm
dt = 0.05
horizon = 10.0
seed = 0
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# config parsing


def test_parse_minimal_config(tmp_path):
    cfg, mode = parse_config(_write(tmp_path, "[law]\nq2 = 1.0\n"))
    assert mode is None
    assert cfg.law.probabilities == (0.0, 0.0, 1.0)
    assert cfg.dt == 0.1 and cfg.replicas == 1 and cfg.seed == 0
    assert cfg.interval is None and cfg.alphas == (0.5,)


def test_parse_full_config(tmp_path):
    cfg, mode = parse_config(_write(tmp_path, BBBM_INI))
    assert mode == "bbbm"
    assert cfg.interval.a == 5.0
    assert cfg.A == 1.2 and cfg.epsilon == 1e9
    assert cfg.zeta_breakout is False
    assert cfg.horizon == 10.0 and cfg.dt == 0.05


@pytest.mark.parametrize("text,needle", [
    ("[run]\ndt = 0.1\n", "[law]"),
    ("[law]\nq2 = 0.9\n", "sum to 0.9"),
    ("[law]\nq2 = 1.0\n[bbbm]\nA = fast\n", "[bbbm] A must be a number"),
    ("[law]\nq2 = 1.0\n[warp]\nx = 1\n", "unknown section"),
    ("[law]\nq2 = 1.0\n[run]\nspeed = 3\n", "unknown key [run] speed"),
    ("[law]\nq2 = 1.0\n[run]\nmode = warp\n", "[run] mode"),
    ("[law]\nq2 = 1.0\n[selection]\nalphas = a,b\n", "[selection] alphas"),
    ("[law]\nq2 = 1.0\n[interval]\na = -3\n", "[interval] a"),
    ("[law]\nq2 = 1.0\n[interval]\na = 2.0\n", "[interval] a"),
    ("[law]\nq2 = 1.0\n[run]\ndt = -0.1\n", "dt"),
    ("[law]\nqq = 1.0\n", "unknown key [law]"),
])
def test_parse_errors_name_the_key(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=None) as err:
        parse_config(_write(tmp_path, text))
    assert needle in str(err.value)


def test_parse_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.ini")


# ---------------------------------------------------------------------------
# simulate


def test_simulate_nbbm_outputs(tmp_path):
    ini = _write(tmp_path, NBBM_INI)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(ini), "--out", str(out),
                 "--checkpoint"]) == 0

    manifest = ExperimentManifest.load(out / "manifest.json")
    h, series = read_series_csv(out / "series.csv")
    assert h == manifest.hash()
    assert len(series) == 2
    assert series[0].column_names() == ["med_0.25", "med_0.5", "count"]
    assert np.all(series[0].columns["count"] == 20.0)
    assert series[0].times[-1] == 2.0

    runinfo = json.loads((out / "runinfo.json").read_text())
    assert runinfo["manifest"] == h
    assert runinfo["n_select"] == 20

    assert checkpoint_hash(out / "final.ckpt") == h
    pop = load_population(out / "final.ckpt")
    assert len(pop) == 20 and pop.time == 2.0
    assert manifest.outputs["checkpoint"] == "final.ckpt"


def test_simulate_reruns_are_byte_identical(tmp_path):
    ini = _write(tmp_path, NBBM_INI)
    outs = []
    for name, threads in (("a", None), ("b", None), ("c", "3")):
        out = tmp_path / name
        argv = ["simulate", "--config", str(ini), "--out", str(out)]
        if threads:
            argv += ["--threads", threads]
        assert main(argv) == 0
        outs.append((out / "series.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_simulate_env_threads_override(tmp_path, monkeypatch):
    ini = _write(tmp_path, NBBM_INI)
    base = tmp_path / "base"
    assert main(["simulate", "--config", str(ini), "--out", str(base)]) == 0
    monkeypatch.setenv("NBBM_THREADS", "4")
    env_out = tmp_path / "env"
    assert main(["simulate", "--config", str(ini), "--out",
                 str(env_out)]) == 0
    assert (base / "series.csv").read_bytes() == \
        (env_out / "series.csv").read_bytes()
    monkeypatch.setenv("NBBM_THREADS", "zero")
    code = main(["simulate", "--config", str(ini),
                 "--out", str(tmp_path / "bad")])
    assert code == 1


def test_simulate_stamp_keeps_the_hash(tmp_path):
    ini = _write(tmp_path, NBBM_INI)
    plain, stamped = tmp_path / "plain", tmp_path / "stamped"
    assert main(["simulate", "--config", str(ini), "--out",
                 str(plain)]) == 0
    assert main(["simulate", "--config", str(ini), "--out", str(stamped),
                 "--stamp"]) == 0
    m_plain = ExperimentManifest.load(plain / "manifest.json")
    m_stamped = ExperimentManifest.load(stamped / "manifest.json")
    assert m_plain.created_at is None
    assert m_stamped.created_at is not None
    assert m_plain.hash() == m_stamped.hash()


def test_simulate_event_log(tmp_path):
    ini = _write(tmp_path, NBBM_INI)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(ini), "--out", str(out),
                 "--log-events"]) == 0
    h, events = read_events_csv(out / "events.csv")
    assert h == ExperimentManifest.load(out / "manifest.json").hash()
    kinds = {ev.kind for ev in events}
    assert "branch" in kinds
    assert all((ev.k >= 0) == (ev.kind == "branch") for ev in events)


def test_simulate_bbbm_runinfo_carries_diagnostics(tmp_path):
    ini = _write(tmp_path, BBBM_INI)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(ini), "--out", str(out)]) == 0
    runinfo = json.loads((out / "runinfo.json").read_text())
    row = runinfo["barrier"][0]
    for key in ("trials_run", "wall_hits", "reinjected", "pieces",
                "depth_capped"):
        assert key in row
    h, series = read_series_csv(out / "series.csv")
    assert "barrier_shift" in series[0].columns


def test_simulate_mode_requirements(tmp_path, capsys):
    ini = _write(tmp_path, "[law]\nq2 = 1.0\n")
    assert main(["simulate", "--config", str(ini), "--mode", "bbbm",
                 "--out", str(tmp_path / "x")]) == 1
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["error"]["type"] == "ConfigError"
    assert "[bbbm] A" in err["error"]["message"]


def test_simulate_without_mode_fails(tmp_path, capsys):
    ini = _write(tmp_path, "[law]\nq2 = 1.0\n")
    assert main(["simulate", "--config", str(ini),
                 "--out", str(tmp_path / "x")]) == 1
    assert "no mode" in capsys.readouterr().err


def test_simulate_rejects_event_log_outside_nbbm(tmp_path, capsys):
    ini = _write(tmp_path, BBBM_INI)
    assert main(["simulate", "--config", str(ini), "--out",
                 str(tmp_path / "x"), "--log-events"]) == 1
    assert "labelled lane" in capsys.readouterr().err


def test_simulate_prints_regime_warnings(tmp_path, capsys):
    ini = _write(tmp_path, BBBM_INI.replace("epsilon = 1e9",
                                            "epsilon = 0.2")
                 .replace("horizon = 10.0", "horizon = 0.5"))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(ini), "--out", str(out)]) == 0
    assert "regime condition" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# other subcommands


def test_selfcheck_passes(capsys):
    assert main(["kernels-selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_levy_outputs(tmp_path):
    out = tmp_path / "levy"
    assert main(["levy", "--out", str(out), "--samples", "500",
                 "--t", "0.01", "--seed", "3", "--lambdas", "3.5"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    h, table = read_levy_csv(out / "increments.csv")
    assert h == manifest["hash"]
    assert len(table["value"]) == 500
    assert np.all(table["t"] == 0.01)
    assert np.all(table["seed"] == 3)
    kappa_lines = (out / "kappa.csv").read_text().splitlines()
    assert kappa_lines[0] == f"# manifest={h}"
    lams = [float(ln.split(",")[0]) for ln in kappa_lines[2:]]
    assert lams == sorted([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.5])


def test_levy_is_deterministic(tmp_path):
    args = ["levy", "--samples", "200", "--t", "0.5", "--seed", "7"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert (a / "increments.csv").read_bytes() == \
        (b / "increments.csv").read_bytes()


def test_couple_verifies_dominance(tmp_path, capsys):
    out = tmp_path / "couple"
    assert main(["couple", "--n", "25", "--horizon", "3.0", "--replicas",
                 "2", "--slack", "2", "--extra", "1",
                 "--out", str(out)]) == 0
    assert "dominance verified" in capsys.readouterr().out
    rows = json.loads((out / "runinfo.json").read_text())["coupled"]
    assert len(rows) == 2
    assert all(r["dominance_verified"] for r in rows)


def test_couple_fault_injection_fails(capsys):
    assert main(["couple", "--n", "25", "--horizon", "3.0",
                 "--inject-fault"]) == 1
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["error"]["type"] == "CouplingError"


def test_report_on_series_and_events(tmp_path):
    ini = _write(tmp_path, NBBM_INI)
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(ini), "--out", str(out),
                 "--log-events"]) == 0
    rep = tmp_path / "rep"
    assert main(["report", "--series", str(out / "series.csv"),
                 "--events", str(out / "events.csv"),
                 "--out", str(rep)]) == 0
    bundle = json.loads((rep / "verdicts.json").read_text())
    names = {v["name"]: v for v in bundle["verdicts"]}
    assert names["speed_med_0.5"]["verdict"] == "info"
    assert "slope" in names["speed_med_0.5"]
    assert names["event_counts"]["branch"] > 0
    assert bundle["failed"] == 0
    mean = (rep / "series_mean.csv").read_text().splitlines()
    assert mean[1] == "t,med_0.25,med_0.5,count"
    assert len(mean) == 2 + len(read_series_csv(out / "series.csv")[1][0].times)


def test_report_passes_true_increments(tmp_path):
    lev = tmp_path / "levy"
    assert main(["levy", "--out", str(lev), "--samples", "5000",
                 "--t", "0.01", "--seed", "3"]) == 0
    rep = tmp_path / "rep"
    assert main(["report", "--levy", str(lev / "increments.csv"),
                 "--out", str(rep)]) == 0
    bundle = json.loads((rep / "verdicts.json").read_text())
    cf = next(v for v in bundle["verdicts"] if v["name"] == "cf_vs_kappa")
    assert cf["verdict"] == "pass"
    assert (rep / "cf_table.csv").exists()
    assert (rep / "increment_density.csv").exists()


def test_report_fails_gaussian_impostor(tmp_path):
    from nbbm.engine import rng_stream
    from nbbm.runio import write_levy_csv

    rng = rng_stream(9, 0, 0)
    vals = rng.normal(0.103, math.sqrt(0.325), 2000)
    fake = tmp_path / "fake.csv"
    write_levy_csv(fake, np.arange(2000), np.full(2000, 0.01), vals, 9, "ff")
    rep = tmp_path / "rep"
    assert main(["report", "--levy", str(fake), "--out", str(rep)]) == 1
    bundle = json.loads((rep / "verdicts.json").read_text())
    assert bundle["failed"] == 1


def test_report_requires_an_input(capsys):
    assert main(["report", "--out", "x"]) == 1
    assert "at least one input" in capsys.readouterr().err


def test_error_record_lands_in_out_dir(tmp_path, capsys):
    rep = tmp_path / "rep"
    rep.mkdir()
    assert main(["report", "--series", str(tmp_path / "missing.csv"),
                 "--out", str(rep)]) == 1
    record = json.loads((rep / "error.json").read_text())
    assert record["error"]["type"] == "FileNotFoundError"
    capsys.readouterr()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == __version__
