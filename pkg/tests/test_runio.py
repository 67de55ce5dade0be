"""Persistence formats: manifests, CSV logs, binary checkpoints."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nbbm.engine import (
    Event,
    Particle,
    Population,
    ReproductionLaw,
    SimConfig,
)
from nbbm.kernels import IntervalParams
from nbbm.runio import (
    ExperimentManifest,
    canonical_hash,
    checkpoint_hash,
    fmt_real,
    load_population,
    read_events_csv,
    read_levy_csv,
    read_series_csv,
    save_population,
    series_columns,
    write_events_csv,
    write_levy_csv,
    write_series_csv,
)
from nbbm.stats import StatsSeries


# ---------------------------------------------------------------------------
# primitives


def test_fmt_real_round_trips_awkward_doubles():
    values = [0.1, 1.0 / 3.0, math.pi, 1e-300, 2.0 ** 1023, -0.0,
              np.nextafter(1.0, 2.0), 6.02e23, -1.7976931348623157e308]
    for v in values:
        assert float(fmt_real(v)) == v


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_real_round_trips_any_double(x):
    assert float(fmt_real(x)) == x


def test_canonical_hash_ignores_key_order():
    h1 = canonical_hash({"a": 1, "b": [2, 3]})
    h2 = canonical_hash({"b": [2, 3], "a": 1})
    assert h1 == h2
    assert len(h1) == 16 and int(h1, 16) >= 0
    assert canonical_hash({"a": 2, "b": [2, 3]}) != h1


# ---------------------------------------------------------------------------
# manifest


def _cfg(**kw):
    base = dict(law=ReproductionLaw.binary(), interval=IntervalParams(5.0),
                dt=0.1, horizon=10.0, replicas=2, seed=7, alphas=(0.5,),
                A=1.0, epsilon=0.5, y=2.0, zeta=4.0)
    base.update(kw)
    return SimConfig(**base)


def test_manifest_round_trip(tmp_path):
    m = ExperimentManifest(_cfg(), "bbbm", outputs={"series": "s.csv"},
                           created_at="2024-05-01T00:00:00Z")
    path = tmp_path / "manifest.json"
    m.save(path)
    back = ExperimentManifest.load(path)
    assert back.hash() == m.hash()
    assert back.mode == "bbbm"
    assert back.outputs == {"series": "s.csv"}
    assert back.config.seed == 7
    assert back.config.interval.a == 5.0
    assert back.config.law.probabilities == (0.0, 0.0, 1.0)


def test_manifest_hash_excludes_run_placement():
    base = ExperimentManifest(_cfg(), "bbbm")
    assert ExperimentManifest(_cfg(threads=8), "bbbm").hash() == base.hash()
    assert ExperimentManifest(_cfg(), "bbbm",
                              outputs={"x": "y"}).hash() == base.hash()
    assert ExperimentManifest(_cfg(), "bbbm",
                              created_at="now").hash() == base.hash()


def test_manifest_hash_covers_the_experiment_identity():
    base = ExperimentManifest(_cfg(), "bbbm").hash()
    assert ExperimentManifest(_cfg(seed=8), "bbbm").hash() != base
    assert ExperimentManifest(_cfg(dt=0.2), "bbbm").hash() != base
    assert ExperimentManifest(_cfg(), "bflat",
                              ).hash() != base  # mode matters
    other = ExperimentManifest(_cfg(), "bbbm", code_version="0.0.0")
    assert other.hash() != base


def test_manifest_rejects_unknown_mode():
    with pytest.raises(ValueError):
        ExperimentManifest(_cfg(), "warp")


def test_manifest_rejects_tampered_payload(tmp_path):
    m = ExperimentManifest(_cfg(), "bbbm")
    d = m.to_json_dict()
    d["config"]["seed"] = 99
    d["seed"] = 99
    with pytest.raises(ValueError, match="hash mismatch"):
        ExperimentManifest.from_json_dict(d)
    with pytest.raises(ValueError, match="schema"):
        ExperimentManifest.from_json_dict({"schema": "nbbm-manifest-9"})


# ---------------------------------------------------------------------------
# series CSV


def _series(replica, scale=1.0):
    times = np.array([0.0, 0.5, 1.0])
    return StatsSeries(times, {
        "med_0.5": scale * np.array([0.1, 0.2, 1.0 / 3.0]),
        "med_0.25": scale * np.array([1.0, 2.0, math.pi]),
        "count": np.array([3.0, 4.0, 5.0]),
        "Z": scale * np.array([1e-10, 2.5, 17.0]),
    }, replica=replica)


def test_series_csv_round_trip(tmp_path):
    path = tmp_path / "series.csv"
    orig = [_series(0), _series(1, scale=0.7)]
    write_series_csv(path, orig, "deadbeefdeadbeef")
    text = path.read_text()
    assert text.startswith("# manifest=deadbeefdeadbeef\n")
    assert text.splitlines()[1] == "replica,t,med_0.25,med_0.5,count,Z"
    h, back = read_series_csv(path)
    assert h == "deadbeefdeadbeef"
    assert len(back) == 2
    for s_in, s_out in zip(orig, back):
        assert s_out.replica == s_in.replica
        assert np.array_equal(s_out.times, s_in.times)
        for name, col in s_in.columns.items():
            assert np.array_equal(s_out.columns[name], col), name


def test_series_csv_errors(tmp_path):
    with pytest.raises(ValueError):
        write_series_csv(tmp_path / "x.csv", [], "h")
    other = StatsSeries(np.array([0.0]), {"count": np.array([1.0])},
                        replica=1)
    with pytest.raises(ValueError, match="column sets differ"):
        write_series_csv(tmp_path / "x.csv", [_series(0), other], "h")
    bad = tmp_path / "bad.csv"
    bad.write_text("replica,t,count\n0,0.0,1\n")
    with pytest.raises(ValueError, match="manifest header"):
        read_series_csv(bad)
    bad.write_text("# manifest=h\nt,replica,count\n")
    with pytest.raises(ValueError, match="replica,t"):
        read_series_csv(bad)


def test_series_column_order():
    s = StatsSeries(np.array([0.0]), {
        "zebra": np.array([1.0]),
        "barrier_shift": np.array([0.0]),
        "med_0.75": np.array([1.0]),
        "count": np.array([1.0]),
        "med_0.5": np.array([1.0]),
        "alpha_extra": np.array([2.0]),
    })
    assert series_columns(s) == ["med_0.5", "med_0.75", "count",
                                 "barrier_shift", "alpha_extra", "zebra"]


# ---------------------------------------------------------------------------
# events CSV


def test_events_csv_round_trip_and_kind_map(tmp_path):
    events = [
        Event("branch", 0.25, (1, 2), 3.5, k=2),
        Event("absorb_lo", 0.5, (1,), 0.0),
        Event("absorb_hi", 0.75, (2, 1, 1), 5.0),
    ]
    path = tmp_path / "events.csv"
    write_events_csv(path, events, "cafecafecafecafe",
                     kind_map={"absorb_lo": "freeze"})
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifest=cafecafecafecafe"
    assert lines[1] == "event,time,label,position,k"
    assert lines[2].startswith("branch,") and lines[2].endswith(",2")
    assert lines[3].startswith("freeze,") and lines[3].endswith(",")
    h, back = read_events_csv(path)
    assert h == "cafecafecafecafe"
    assert back[0] == Event("branch", 0.25, (1, 2), 3.5, k=2)
    assert back[1].kind == "freeze" and back[1].k == -1
    assert back[2].label == (2, 1, 1)


def test_events_csv_rejects_unknown_kinds(tmp_path):
    path = tmp_path / "events.csv"
    with pytest.raises(ValueError, match="unknown event kind"):
        write_events_csv(path, [Event("branch", 0.0, (1,), 0.0, k=2)], "h",
                         kind_map={"branch": "explode"})
    path.write_text("# manifest=h\nevent,time,label,position,k\n"
                    "explode,0,1,0.0,\n")
    with pytest.raises(ValueError, match="unknown event kind"):
        read_events_csv(path)


# ---------------------------------------------------------------------------
# levy CSV


def test_levy_csv_round_trip(tmp_path):
    path = tmp_path / "levy.csv"
    rep = np.array([0, 0, 1])
    t = np.array([1.0, 2.0, 1.0])
    val = np.array([0.125, -3.5, 1.0 / 3.0])
    write_levy_csv(path, rep, t, val, seed=42, manifest_hash="aa")
    h, data = read_levy_csv(path)
    assert h == "aa"
    assert np.array_equal(data["replica"], rep)
    assert np.array_equal(data["t"], t)
    assert np.array_equal(data["value"], val)
    assert np.all(data["seed"] == 42)


def test_levy_csv_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_levy_csv(tmp_path / "x.csv", np.array([0]),
                       np.array([1.0, 2.0]), np.array([1.0]), 0, "h")


# ---------------------------------------------------------------------------
# population checkpoints


def _pop():
    return Population(3.25, [
        Particle((1,), 0.5, 0.0),
        Particle((1, 2, 7), -1.25, 1.5),
        Particle((2, 1), 1e-12, 3.0),
    ])


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "pop.bin"
    pop = _pop()
    save_population(path, pop, "feedfacefeedface")
    assert checkpoint_hash(path) == "feedfacefeedface"
    back = load_population(path)
    assert back.time == pop.time
    assert len(back) == 3
    for p_in, p_out in zip(pop.particles, back.particles):
        assert p_out.label == p_in.label
        assert p_out.position == p_in.position
        assert p_out.birth_time == p_in.birth_time


def test_checkpoint_unstamped_hash_is_empty(tmp_path):
    path = tmp_path / "pop.bin"
    save_population(path, _pop())
    assert checkpoint_hash(path) == ""


def test_checkpoint_corruption_errors(tmp_path):
    path = tmp_path / "pop.bin"
    save_population(path, _pop(), "aa")
    blob = bytearray(path.read_bytes())

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAPOP!" + bytes(blob[8:]))
    with pytest.raises(ValueError, match="not a population checkpoint"):
        load_population(bad)
    with pytest.raises(ValueError, match="not a population checkpoint"):
        checkpoint_hash(bad)

    versioned = bytearray(blob)
    versioned[8] = 99
    bad.write_bytes(bytes(versioned))
    with pytest.raises(ValueError, match="version"):
        load_population(bad)

    bad.write_bytes(bytes(blob[:-4]))
    with pytest.raises(ValueError, match="truncated"):
        load_population(bad)

    bad.write_bytes(bytes(blob) + b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_population(bad)


def test_checkpoint_rejects_bad_payloads(tmp_path):
    path = tmp_path / "pop.bin"
    wide = Population(0.0, [Particle((2 ** 31,), 1.0, 0.0)])
    with pytest.raises(ValueError, match="i32 range"):
        save_population(path, wide)
    with pytest.raises(ValueError, match="too long"):
        save_population(path, _pop(), "x" * 17)
    save_population(path, Population(0.0, [Particle((1,), math.inf, 0.0)]))
    with pytest.raises(ValueError, match="non-finite"):
        load_population(path)
