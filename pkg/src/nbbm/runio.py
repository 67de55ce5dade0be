"""Experiment persistence: manifest, CSV logs, binary population checkpoints.

Every file format here is deterministic: the same manifest produces the
same bytes, including across thread counts, because all randomness is keyed
by (seed, replica, lane) and the writers render floats at fixed precision
from a single collector.  Data files carry the manifest hash in a leading
comment line so any output can be traced back to the exact configuration
that produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nbbm import __version__
from nbbm.engine import (
    Event,
    IntervalParams,
    Particle,
    Population,
    ReproductionLaw,
    SimConfig,
    format_label,
    parse_label,
)
from nbbm.stats import StatsSeries

MODES = ("nbbm", "bbbm", "bflat", "bsharp", "csharp", "coupled")

# float rendering for CSV cells: 17 significant digits round-trip any
# double exactly through decimal
_FMT = "%.17g"


def fmt_real(x: float) -> str:
    return _FMT % float(x)


def canonical_hash(ident: dict) -> str:
    """Order-independent 16-hex-digit identity for a JSON-able dict."""
    blob = json.dumps(ident, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# manifest


def _config_to_dict(cfg: SimConfig) -> dict:
    return {
        "law": list(cfg.law.probabilities),
        "interval_a": cfg.interval.a if cfg.interval is not None else None,
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "replicas": cfg.replicas,
        "seed": cfg.seed,
        "n_select": cfg.n_select,
        "alphas": list(cfg.alphas),
        "A": cfg.A,
        "epsilon": cfg.epsilon,
        "eta": cfg.eta,
        "y": cfg.y,
        "zeta": cfg.zeta,
        "delta_color": cfg.delta_color,
        "c_center": cfg.c_center,
        "sample_every": cfg.sample_every,
        "threads": cfg.threads,
        "zeta_breakout": cfg.zeta_breakout,
        "max_segments": cfg.max_segments,
    }


def _config_from_dict(d: dict) -> SimConfig:
    return SimConfig(
        law=ReproductionLaw(tuple(d["law"])),
        interval=(IntervalParams(d["interval_a"])
                  if d.get("interval_a") is not None else None),
        dt=d["dt"],
        horizon=d["horizon"],
        replicas=d["replicas"],
        seed=d["seed"],
        n_select=d["n_select"],
        alphas=tuple(d["alphas"]),
        A=d["A"],
        epsilon=d["epsilon"],
        eta=d["eta"],
        y=d["y"],
        zeta=d["zeta"],
        delta_color=d["delta_color"],
        c_center=d["c_center"],
        sample_every=d["sample_every"],
        threads=d["threads"],
        zeta_breakout=d.get("zeta_breakout", True),
        max_segments=d["max_segments"],
    )


@dataclass
class ExperimentManifest:
    """Everything needed to reproduce a run, plus where its outputs went.

    The identity hash covers what determines the sampled numbers: mode,
    config, seed, code version.  It excludes created_at, the output paths,
    and the thread count (randomness is keyed by replica, so threading
    cannot change results), which is what lets the same experiment rerun
    anywhere, at any parallelism, and produce data files with identical
    bytes.  created_at stays None unless stamping is requested.
    """

    config: SimConfig
    mode: str
    code_version: str = __version__
    outputs: dict[str, str] = field(default_factory=dict)
    created_at: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(
                f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def seed(self) -> int:
        return self.config.seed

    def to_json_dict(self) -> dict:
        return {
            "schema": "nbbm-manifest-1",
            "mode": self.mode,
            "code_version": self.code_version,
            "seed": self.seed,
            "config": _config_to_dict(self.config),
            "outputs": dict(self.outputs),
            "created_at": self.created_at,
            "hash": self.hash(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentManifest":
        if d.get("schema") != "nbbm-manifest-1":
            raise ValueError(
                f"unrecognised manifest schema {d.get('schema')!r}")
        m = cls(
            config=_config_from_dict(d["config"]),
            mode=d["mode"],
            code_version=d["code_version"],
            outputs=dict(d.get("outputs", {})),
            created_at=d.get("created_at"),
        )
        if "hash" in d and d["hash"] != m.hash():
            raise ValueError(
                f"manifest hash mismatch: file says {d['hash']}, "
                f"contents give {m.hash()}")
        return m

    def hash(self) -> str:
        ident_cfg = _config_to_dict(self.config)
        del ident_cfg["threads"]
        return canonical_hash({
            "schema": "nbbm-manifest-1",
            "mode": self.mode,
            "code_version": self.code_version,
            "config": ident_cfg,
        })

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# CSV logs

_SERIES_ORDER = ("count", "Z", "Y", "R_cum", "barrier_shift",
                 "count_white", "count_blue")


def series_columns(series: StatsSeries) -> list[str]:
    """Column order: medians first, then the standard observables."""
    meds = sorted((k for k in series.columns if k.startswith("med_")),
                  key=lambda k: float(k[4:]))
    rest = [k for k in _SERIES_ORDER if k in series.columns]
    extra = sorted(k for k in series.columns
                   if k not in rest and not k.startswith("med_"))
    return meds + rest + extra


def write_series_csv(path: str | Path, series_list: list[StatsSeries],
                     manifest_hash: str) -> None:
    if not series_list:
        raise ValueError("no series to write")
    cols = series_columns(series_list[0])
    for s in series_list[1:]:
        if series_columns(s) != cols:
            raise ValueError("series column sets differ between replicas")
    lines = [f"# manifest={manifest_hash}",
             ",".join(["replica", "t"] + cols)]
    for s in series_list:
        for i, t in enumerate(s.times):
            row = [str(int(s.replica)), fmt_real(t)]
            row += [fmt_real(s.columns[c][i]) for c in cols]
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path: str | Path) -> tuple[str, list[StatsSeries]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# manifest="):
        raise ValueError(f"{path}: missing manifest header line")
    manifest_hash = lines[0].split("=", 1)[1]
    header = lines[1].split(",")
    if header[:2] != ["replica", "t"]:
        raise ValueError(f"{path}: expected replica,t leading columns")
    cols = header[2:]
    by_rep: dict[int, list[list[float]]] = {}
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        by_rep.setdefault(int(parts[0]), []).append(
            [float(v) for v in parts[1:]])
    out = []
    for rep in sorted(by_rep):
        arr = np.asarray(by_rep[rep])
        out.append(StatsSeries(
            times=arr[:, 0],
            columns={c: arr[:, j + 1] for j, c in enumerate(cols)},
            replica=rep,
            meta={"manifest": manifest_hash},
        ))
    return manifest_hash, out


_EVENT_KINDS = ("branch", "absorb_lo", "absorb_hi", "freeze")


def write_events_csv(path: str | Path, events: list[Event],
                     manifest_hash: str,
                     kind_map: dict[str, str] | None = None) -> None:
    """Event log: kind, time, dot-separated label, position, k (branch only).

    kind_map renames kinds on the way out; trials freeze their particles on
    the stopping line through the engine's lower absorption, so a trial log
    is written with kind_map={"absorb_lo": "freeze"}.
    """
    kind_map = kind_map or {}
    lines = [f"# manifest={manifest_hash}", "event,time,label,position,k"]
    for ev in events:
        kind = kind_map.get(ev.kind, ev.kind)
        if kind not in _EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        k = str(ev.k) if kind == "branch" else ""
        lines.append(",".join([kind, fmt_real(ev.time),
                               format_label(ev.label),
                               fmt_real(ev.position), k]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_events_csv(path: str | Path) -> tuple[str, list[Event]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# manifest="):
        raise ValueError(f"{path}: missing manifest header line")
    manifest_hash = lines[0].split("=", 1)[1]
    if lines[1] != "event,time,label,position,k":
        raise ValueError(f"{path}: unexpected event header {lines[1]!r}")
    events = []
    for ln in lines[2:]:
        if not ln:
            continue
        kind, t, label, pos, k = ln.split(",")
        if kind not in _EVENT_KINDS:
            raise ValueError(f"{path}: unknown event kind {kind!r}")
        events.append(Event(kind=kind, time=float(t),
                            label=parse_label(label), position=float(pos),
                            k=int(k) if k else -1))
    return manifest_hash, events


def write_levy_csv(path: str | Path, replica: np.ndarray, t: np.ndarray,
                   value: np.ndarray, seed: int, manifest_hash: str) -> None:
    replica = np.asarray(replica)
    t = np.asarray(t, dtype=float)
    value = np.asarray(value, dtype=float)
    if not (len(replica) == len(t) == len(value)):
        raise ValueError("replica, t and value must have equal lengths")
    lines = [f"# manifest={manifest_hash}", "replica,t,value,seed"]
    for r, tt, v in zip(replica, t, value):
        lines.append(f"{int(r)},{fmt_real(tt)},{fmt_real(v)},{int(seed)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_levy_csv(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# manifest="):
        raise ValueError(f"{path}: missing manifest header line")
    manifest_hash = lines[0].split("=", 1)[1]
    if lines[1] != "replica,t,value,seed":
        raise ValueError(f"{path}: unexpected levy header {lines[1]!r}")
    rows = [ln.split(",") for ln in lines[2:] if ln]
    return manifest_hash, {
        "replica": np.array([int(r[0]) for r in rows], dtype=np.int64),
        "t": np.array([float(r[1]) for r in rows]),
        "value": np.array([float(r[2]) for r in rows]),
        "seed": np.array([int(r[3]) for r in rows], dtype=np.int64),
    }


# ---------------------------------------------------------------------------
# binary population checkpoint

_MAGIC = b"NBBMPOP1"
_CKPT_VERSION = 1


def save_population(path: str | Path, pop: Population,
                    manifest_hash: str = "") -> None:
    """Versioned little-endian snapshot for restarting long runs.

    The header carries the 16-character manifest hash (zero-padded when
    absent) so a checkpoint can be traced like any other output file.
    """
    h = manifest_hash.encode("ascii")
    if len(h) > 16:
        raise ValueError(f"manifest hash too long for header: {manifest_hash!r}")
    chunks = [_MAGIC, struct.pack("<H", _CKPT_VERSION),
              struct.pack("<16s", h),
              struct.pack("<Qd", len(pop), pop.time)]
    for p in pop.particles:
        if not all(-2**31 <= c < 2**31 for c in p.label):
            raise ValueError(f"label component out of i32 range: {p.label!r}")
        chunks.append(struct.pack("<ddH", p.position, p.birth_time,
                                  len(p.label)))
        chunks.append(struct.pack(f"<{len(p.label)}i", *p.label))
    Path(path).write_bytes(b"".join(chunks))


def checkpoint_hash(path: str | Path) -> str:
    """Manifest hash recorded in a checkpoint header ('' if unstamped)."""
    with open(path, "rb") as f:
        head = f.read(26)
    if head[:8] != _MAGIC:
        raise ValueError(f"{path}: not a population checkpoint")
    return head[10:26].rstrip(b"\x00").decode("ascii")


def load_population(path: str | Path) -> Population:
    blob = Path(path).read_bytes()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: not a population checkpoint")
    (version,) = struct.unpack_from("<H", blob, 8)
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    try:
        count, time = struct.unpack_from("<Qd", blob, 26)
        off = 26 + struct.calcsize("<Qd")
        particles = []
        for _ in range(count):
            x, bt, nlab = struct.unpack_from("<ddH", blob, off)
            off += struct.calcsize("<ddH")
            label = struct.unpack_from(f"<{nlab}i", blob, off)
            off += 4 * nlab
            particles.append(Particle(tuple(label), x, bt))
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    if any(not math.isfinite(p.position) for p in particles):
        raise ValueError(f"{path}: non-finite particle position")
    return Population(time=time, particles=particles)
