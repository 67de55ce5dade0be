"""Selection rules and moving-barrier dynamics on top of the branching engine.

Three layers live here.  `med_alpha` and `apply_nbbm_selection` implement the
keep-the-N-rightmost rule and the order statistic used to track the front.
`BarrierPath` plus the `run_bbbm` / `run_bflat` / `run_bsharp` runners evolve
a population between an absorbing origin and a right barrier that ratchets
forward after each breakout; the flat and sharp variants additionally colour
particles to bound the population from above and below.  `run_coupled` drives
three systems with shared noise and per-event domination checks.

The barrier runners use the vectorized array lane throughout: populations are
plain position arrays, colour is a parallel code array, and excursions past
the right wall are simulated as stand-alone fugitive trials whose frozen
descendants re-enter the population at their freeze times.  Rule evaluation
happens at step ends, so colour flips and re-entries are placed with O(dt)
time resolution; the Brownian and branching dynamics themselves are exact
within each step.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import (CapacityError, ReproductionLaw, SimConfig, hperp_count,
                     rng_stream, sample_offspring)
from .ensemble import breakout_trials, hperp_flat
from .kernels import (IntervalParams, barrier_f, error_envelope_E,
                      sine_exp_density, w_Y, w_Z)
from .levy import RecenteringConstants, recentering
from .stats import StatsSeries

__all__ = [
    "med_alpha",
    "apply_nbbm_selection",
    "NbbmResult",
    "run_nbbm",
    "BarrierPiece",
    "BarrierPath",
    "BarrierDrift",
    "BarrierResult",
    "run_bbbm",
    "run_bflat",
    "run_bsharp",
    "CouplingError",
    "CoupledResult",
    "run_coupled",
]

# rng_stream lane ids; one replica never mixes lanes, so runs that share a
# seed stay decoupled across runner types.
_LANE_NBBM = 1
_LANE_BARRIER = 2
_LANE_COUPLED = 3

_WHITE, _RED, _BLUE = 0, 1, 2


def med_alpha(positions, alpha: float, n_select: int) -> float:
    """Level below which fewer than alpha * n_select particles remain above.

    Returns inf{x : #(positions >= x) < alpha * n_select}, i.e. the
    ceil(alpha n)-th largest position, or -inf when the population holds
    fewer than alpha * n_select atoms in total.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if n_select < 1:
        raise ValueError(f"n_select must be >= 1, got {n_select!r}")
    pos = np.asarray(positions, dtype=float)
    j = math.ceil(alpha * n_select) - 1
    if len(pos) <= j:
        return -math.inf
    return float(np.partition(pos, len(pos) - 1 - j)[len(pos) - 1 - j])


def apply_nbbm_selection(pop, n_select: int) -> list:
    """Remove left-most particles from a Population until n_select remain.

    Ties are broken by genealogical label, so the killed set is a
    deterministic function of the population.  Returns the killed particles
    in kill order (left to right).
    """
    if n_select < 1:
        raise ValueError(f"n_select must be >= 1, got {n_select!r}")
    excess = len(pop) - n_select
    if excess <= 0:
        return []
    order = sorted(range(len(pop.particles)),
                   key=lambda i: (pop.particles[i].position,
                                  pop.particles[i].label))
    doomed = order[:excess]
    killed = [pop.particles[i] for i in doomed]
    doomed_set = set(doomed)
    pop.particles = [p for i, p in enumerate(pop.particles)
                     if i not in doomed_set]
    return killed


def _trim_rightmost(pos: np.ndarray, n_keep: int) -> np.ndarray:
    """Keep the n_keep right-most entries (ties arbitrary, zero probability)."""
    if len(pos) <= n_keep:
        return pos
    cut = len(pos) - n_keep
    return pos[np.argpartition(pos, cut)[cut:]]


def _map_replicas(fn, replicas: int, threads: int) -> list:
    """Run fn(replica) for each replica, collecting results in replica order.

    Each replica draws from its own rng_stream, so the output is identical
    for any thread count.
    """
    if threads <= 1:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicas)))


# ---------------------------------------------------------------------------
# free-space N-particle system


@dataclass
class NbbmResult:
    """Median trajectories of the N-particle system, one series per replica."""

    series: list[StatsSeries]
    n_select: int
    constants: RecenteringConstants
    horizon: float
    dt: float
    final_positions: list[np.ndarray] = field(default_factory=list)

    def med_matrix(self, alpha: float) -> np.ndarray:
        """Stack one alpha-median column across replicas, shape (R, T)."""
        key = f"med_{alpha:g}"
        return np.stack([s.columns[key] for s in self.series])

    @property
    def times(self) -> np.ndarray:
        return self.series[0].times


def _nbbm_replica(cfg: SimConfig, a_init: float, horizon: float,
                  sample_steps: int, replica: int) -> StatsSeries:
    n_sel = cfg.n_select
    rng = rng_stream(cfg.seed, replica, _LANE_NBBM)
    pos = sine_exp_density(a_init, 1.0).sample(n_sel, rng)
    p_branch = -math.expm1(-cfg.law.beta0 * cfg.dt)
    n_steps = int(math.ceil(horizon / cfg.dt - 1e-9))

    times = [0.0]
    meds = {al: [med_alpha(pos, al, n_sel)] for al in cfg.alphas}
    counts = [len(pos)]
    for i in range(n_steps):
        pos = pos + rng.normal(0.0, math.sqrt(cfg.dt), len(pos))
        branching = rng.random(len(pos)) < p_branch
        if branching.any():
            ks = sample_offspring(cfg.law, int(branching.sum()), rng)
            pos = np.concatenate([pos[~branching],
                                  np.repeat(pos[branching], ks)])
        pos = _trim_rightmost(pos, n_sel)
        if (i + 1) % sample_steps == 0 or i == n_steps - 1:
            times.append((i + 1) * cfg.dt)
            counts.append(len(pos))
            for al in cfg.alphas:
                meds[al].append(med_alpha(pos, al, n_sel))

    columns = {"count": np.asarray(counts, dtype=float)}
    for al in cfg.alphas:
        columns[f"med_{al:g}"] = np.asarray(meds[al])
    return StatsSeries(np.asarray(times), columns, replica=replica,
                       meta={"final_positions": pos})


def run_nbbm(cfg: SimConfig) -> NbbmResult:
    """Branching Brownian motion keeping only the n_select right-most particles.

    Free space, no drift: the front travels at its selection-limited speed,
    read off the alpha-medians.  Default horizon is 20 ln^3 N, the relaxation
    scale of the system.  Branching within a step is Bernoulli with the exact
    single-event probability; multiple branchings of one particle within one
    step are a second-order effect absorbed by the step error.
    """
    if cfg.n_select is None or cfg.n_select < 2:
        raise ValueError("run_nbbm needs n_select >= 2")
    cfg.validate()
    constants = recentering(cfg.n_select) if cfg.n_select >= 16 else None
    a_init = constants.a_N if constants else max(math.pi, math.log(cfg.n_select) + 1.0)
    horizon = cfg.horizon if cfg.horizon is not None \
        else 20.0 * math.log(cfg.n_select) ** 3
    sample_every = cfg.sample_every if cfg.sample_every is not None \
        else horizon / 256.0
    sample_steps = max(1, round(sample_every / cfg.dt))

    series = _map_replicas(
        lambda r: _nbbm_replica(cfg, a_init, horizon, sample_steps, r),
        cfg.replicas, cfg.threads)
    finals = [s.meta.pop("final_positions") for s in series]
    return NbbmResult(series, cfg.n_select, constants, horizon, cfg.dt,
                      final_positions=finals)


# ---------------------------------------------------------------------------
# barrier path


@dataclass
class BarrierPiece:
    """One constant-then-rising stretch of the barrier displacement.

    On [t_start, t_end) the displacement is base until t_plus, then
    base + f_delta((t - t_plus) / a^2).  delta is None while the piece is
    still waiting for its breakout response.
    """

    t_start: float
    base: float
    t_plus: float | None = None
    delta: float | None = None
    t_end: float = math.inf


class BarrierPath:
    """Piecewise barrier displacement X(t), ratcheting forward at breakouts.

    install(T, T_plus, delta) closes the open piece: the response curve
    f_delta starts at T_plus, the piece freezes at
    Theta = max(T + e^A a^2, T_plus), and the next piece opens there at the
    frozen level.  X is continuous and nondecreasing piece to piece whenever
    delta >= 0; a negative delta (shrunken breakout) lets X dip within its
    piece, which the dynamics tolerate.
    """

    def __init__(self, iv: IntervalParams, A: float) -> None:
        if not A > 0.0:
            raise ValueError(f"A must be > 0, got {A!r}")
        self.iv = iv
        self.A = A
        self.pieces: list[BarrierPiece] = [BarrierPiece(t_start=0.0, base=0.0)]

    def _piece_at(self, t: float) -> BarrierPiece:
        if t < 0.0:
            raise ValueError(f"barrier path queried at t = {t!r} < 0")
        for piece in reversed(self.pieces):
            if t >= piece.t_start:
                return piece
        return self.pieces[0]

    def _value(self, piece: BarrierPiece, t: float) -> float:
        if piece.delta is None or t <= piece.t_plus:
            return piece.base
        return piece.base + barrier_f(piece.delta,
                                      (t - piece.t_plus) / self.iv.a ** 2)

    def shift(self, t: float) -> float:
        return self._value(self._piece_at(t), t)

    def install(self, t_break: float, t_plus: float, delta: float) -> float:
        """Close the open piece with a response; returns its freeze time Theta."""
        piece = self.pieces[-1]
        if piece.delta is not None:
            raise RuntimeError("open piece already carries a response")
        if t_break < piece.t_start:
            raise ValueError(
                f"breakout at {t_break!r} predates the open piece "
                f"({piece.t_start!r})")
        if t_plus < t_break:
            raise ValueError("response time precedes the breakout")
        if delta <= -1.0:
            raise ValueError(f"delta must exceed -1, got {delta!r}")
        piece.t_plus = t_plus
        piece.delta = delta
        theta = max(t_break + math.exp(self.A) * self.iv.a ** 2, t_plus)
        frozen = self._value(piece, theta)
        piece.t_end = theta
        self.pieces.append(BarrierPiece(t_start=theta, base=frozen))
        return theta

    def jumps(self) -> list[tuple[float, float]]:
        """(Theta_n, frozen level) for each completed piece."""
        return [(p.t_end, self.pieces[i + 1].base)
                for i, p in enumerate(self.pieces[:-1])]


@dataclass(frozen=True)
class BarrierDrift:
    """Cumulative drift seen in the barrier frame: -mu t - X(t)."""

    mu: float
    path: BarrierPath

    def cumulative(self, t: float) -> float:
        return -self.mu * t - self.path.shift(t)


# ---------------------------------------------------------------------------
# barrier runners


@dataclass
class BarrierResult:
    """Series and breakout bookkeeping for one barrier-frame run."""

    series: StatsSeries
    path: BarrierPath
    pieces: list[dict]
    mode: str
    trials_run: int
    suppressed_breakouts: int
    clamped_responses: int
    reinjected: int
    wall_hits: int
    depth_capped: int = 0
    colour_stats: dict = field(default_factory=dict)
    final_positions: np.ndarray | None = None


def _require(cfg: SimConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ValueError(f"config is missing required fields: {missing}")


def _sharp_expire(pos, col, expy, now, n_sharp, permissive, stats):
    """Apply the expiry rule to due blue particles.

    Expired blues left of the origin are killed; under the permissive
    variant only those still seeing n_sharp particles strictly to their
    right are.  Survivors re-whiten.
    """
    due = (col == _BLUE) & (expy <= now + 1e-9)
    if not due.any():
        return pos, col, expy
    doomed = due & (pos < 0.0)
    if permissive and doomed.any():
        srt = np.sort(pos)
        right = len(pos) - np.searchsorted(srt, pos, side="right")
        doomed &= right >= n_sharp
    stats["blue_killed"] += int(doomed.sum())
    stats["rewhitened"] += int((due & ~doomed).sum())
    col = np.where(due & ~doomed, _WHITE, col)
    expy = np.where(due & ~doomed, math.inf, expy)
    keep = ~doomed
    return pos[keep], col[keep], expy[keep]


def _barrier_run(cfg: SimConfig, mode: str, replica: int) -> BarrierResult:
    _require(cfg, "interval", "A", "epsilon", "y", "zeta")
    cfg.validate()
    iv, A, eps = cfg.interval, cfg.A, cfg.epsilon
    y, zeta, dt = cfg.y, cfg.zeta, cfg.dt
    a, mu = iv.a, iv.mu
    if not y < a:
        raise ValueError(f"y must be < a, got y = {y!r}, a = {a!r}")
    if not zeta < y / (1.0 - mu):
        raise ValueError(
            f"zeta = {zeta!r} lets the stopping line reach the wall; "
            f"need zeta < y / (1 - mu) = {y / (1.0 - mu):g}")

    coloured = mode in ("bflat", "bsharp", "csharp")
    sharp = mode in ("bsharp", "csharp")
    if coloured:
        _require(cfg, "delta_color")
    dc = cfg.delta_color if coloured else 0.0
    wall_count = 2.0 * math.pi / a ** 3 * math.exp(mu * a)
    n_flat = int(wall_count * math.exp(A + dc)) if mode == "bflat" else 0
    n_sharp = int(wall_count * math.exp(A - dc)) if sharp else 0
    if sharp:
        k_env = 1
        while error_envelope_E(float(k_env)) > dc / 10.0:
            k_env += 1
        sharp_period = (k_env + 3.0) * a ** 2
    else:
        sharp_period = math.inf

    horizon = cfg.horizon if cfg.horizon is not None \
        else 1.5 * math.exp(A) * a ** 2
    sample_steps = max(1, round((cfg.sample_every or horizon / 256.0) / dt))
    n_med = hperp_count(A, iv)
    max_pop = max(200_000, 100 * n_med)

    rng = rng_stream(cfg.seed, replica, _LANE_BARRIER)
    pos, _ = hperp_flat(A, iv, 1, rng)
    col = np.zeros(len(pos), dtype=np.int8)
    expy = np.full(len(pos), math.inf)

    path = BarrierPath(iv, A)
    pending: tuple[float, float] | None = None
    theta_queue: list[tuple[float, int]] = []
    reinject: list[tuple[float, int, float, int, float, int]] = []
    seq = 0
    pieces: list[dict] = []
    stats = {"red_killed": 0, "blue_created": 0, "blue_killed": 0,
             "rewhitened": 0, "white_killed_at_origin": 0}
    trials_run = suppressed = clamped = reinjected = wall_hits = 0
    depth_capped = 0
    scale = 1.0 / cfg.law.beta0

    times = [0.0]
    rows: dict[str, list[float]] = {k: [] for k in
                                    ("count", "Z", "Y", "R_cum", "barrier_shift")}
    med_rows: dict[float, list[float]] = {al: [] for al in cfg.alphas}
    if mode == "bflat":
        rows["count_white"] = []
    if sharp:
        rows["count_blue"] = []

    def measure_positions(p, c):
        return p[c == _WHITE] if mode == "bflat" else p

    def record(t_now, p, c):
        rows["count"].append(float(len(p)))
        rows["Z"].append(float(np.sum(w_Z(p, iv))))
        rows["Y"].append(float(np.sum(w_Y(p, iv))))
        rows["R_cum"].append(float(wall_hits))
        rows["barrier_shift"].append(path.shift(t_now))
        if mode == "bflat":
            rows["count_white"].append(float(np.sum(c == _WHITE)))
        if sharp:
            rows["count_blue"].append(float(np.sum(c == _BLUE)))
        for al in cfg.alphas:
            med_rows[al].append(med_alpha(measure_positions(p, c), al, n_med))

    record(0.0, pos, col)

    n_steps = int(math.ceil(horizon / dt - 1e-9))
    for i in range(n_steps):
        t0 = i * dt
        h = min(dt, horizon - t0)
        t1 = t0 + h
        drift_rate = -mu - (path.shift(t1) - path.shift(t0)) / h

        def launch_trial(t_hit: float, c_hit: int, e_hit: float,
                         depth: int = 1) -> None:
            nonlocal trials_run, suppressed, pending, seq
            trials_run += 1
            batch = breakout_trials(cfg.law, iv, A, eps, y, zeta,
                                    n_trials=1, dt=dt, rng=rng,
                                    collect_line=True,
                                    zeta_breakout=cfg.zeta_breakout)
            for s_f, x_f in zip(batch.frozen_time, batch.frozen_pos):
                heapq.heappush(reinject, (t_hit + float(s_f), seq,
                                          float(x_f), c_hit, e_hit, depth))
                seq += 1
            for x_f in batch.alive_pos:
                heapq.heappush(reinject, (t_hit + zeta, seq, float(x_f),
                                          c_hit, e_hit, depth))
                seq += 1
            if bool(batch.is_breakout[0]):
                if pending is not None or t_hit < path.pieces[-1].t_start:
                    suppressed += 1
                else:
                    pending = (t_hit, t_hit + float(batch.sigma_max[0]))

        hits_upper: list[tuple[float, int, float]] = []
        hits_origin: list[float] = []
        out_pos, out_col, out_expy = [], [], []
        w_pos, w_col, w_expy = pos, col, expy
        w_rem = np.full(len(pos), h)
        while len(w_pos):
            n = len(w_pos)
            tb = rng.exponential(scale, n)
            seg = np.minimum(tb, w_rem)
            x2 = w_pos + drift_rate * seg + rng.normal(0.0, 1.0, n) * np.sqrt(seg)
            with np.errstate(over="ignore"):
                p_lo = np.exp(np.minimum(-2.0 * w_pos * x2 / seg, 0.0))
                p_hi = np.exp(np.minimum(-2.0 * (a - w_pos) * (a - x2) / seg, 0.0))
            hit_lo = (rng.random(n) < p_lo) & (w_col != _BLUE)
            hit_hi = ~hit_lo & (rng.random(n) < p_hi)
            t_hit = t0 + (h - w_rem) + seg

            if hit_lo.any():
                hits_origin.extend(t_hit[hit_lo])
            for j in np.nonzero(hit_hi)[0]:
                hits_upper.append((float(t_hit[j]), int(w_col[j]),
                                   float(w_expy[j])))
            live = ~hit_lo & ~hit_hi
            done = live & (tb >= w_rem)
            out_pos.append(x2[done])
            out_col.append(w_col[done])
            out_expy.append(w_expy[done])
            cont = live & ~done
            if not cont.any():
                break
            ks = sample_offspring(cfg.law, int(cont.sum()), rng)
            w_pos = np.repeat(x2[cont], ks)
            w_col = np.repeat(w_col[cont], ks)
            w_expy = np.repeat(w_expy[cont], ks)
            w_rem = np.repeat(w_rem[cont] - tb[cont], ks)
        pos = np.concatenate(out_pos) if out_pos else np.empty(0)
        col = np.concatenate(out_col).astype(np.int8) if out_col \
            else np.empty(0, dtype=np.int8)
        expy = np.concatenate(out_expy) if out_expy else np.empty(0)

        # fugitive trials for this step's wall hits, in hit-time order
        hits_upper.sort()
        for t_hit, c_hit, e_hit in hits_upper:
            wall_hits += 1
            launch_trial(t_hit, c_hit, e_hit)

        # step-end housekeeping; each block sees the previous one's output
        add_pos, add_col, add_expy = [], [], []
        while reinject and reinject[0][0] <= t1 + 1e-9:
            t_in, _, x_in, c_in, e_in, d_in = heapq.heappop(reinject)
            if sharp and c_in == _BLUE and e_in <= t1:
                if x_in < 0.0:
                    stats["blue_killed"] += 1
                    continue
                c_in, e_in = _WHITE, math.inf
                stats["rewhitened"] += 1
            if x_in >= a:
                # a lineage frozen beyond the wall counts as a fresh hit,
                # but trials within trials stop nesting past depth 3
                if d_in >= 3:
                    depth_capped += 1
                    continue
                wall_hits += 1
                launch_trial(max(t_in, t0), c_in, e_in, d_in + 1)
                continue
            reinjected += 1
            add_pos.append(x_in)
            add_col.append(c_in)
            add_expy.append(e_in)
        if add_pos:
            pos = np.concatenate([pos, add_pos])
            col = np.concatenate([col, np.asarray(add_col, dtype=np.int8)])
            expy = np.concatenate([expy, add_expy])

        if sharp and hits_origin:
            n_right = int(np.sum(pos > 0.0))
            for t_hit in sorted(hits_origin):
                if n_right < n_sharp:
                    cell = math.floor(t_hit / sharp_period)
                    pos = np.append(pos, 0.0)
                    col = np.append(col, np.int8(_BLUE))
                    expy = np.append(expy, (cell + 2.0) * sharp_period)
                    stats["blue_created"] += 1
                else:
                    stats["white_killed_at_origin"] += 1

        if sharp:
            pos, col, expy = _sharp_expire(pos, col, expy, t1, n_sharp,
                                           mode == "csharp", stats)

        if pending is not None and pending[1] <= t1 + 1e-9:
            t_break, t_plus = pending
            z_now = float(np.sum(w_Z(pos, iv)))
            delta_raw = math.log(z_now) - A if z_now > 0.0 else -math.inf
            delta = max(delta_raw, -1.0 + 1e-9)
            if delta != delta_raw:
                clamped += 1
            theta = path.install(t_break, t_plus, delta)
            theta_queue.append((theta, len(pieces)))
            pieces.append({"T": t_break, "T_plus": t_plus, "Z": z_now,
                           "delta_raw": delta_raw, "delta": delta,
                           "theta": theta})
            pending = None

        while theta_queue and theta_queue[0][0] <= t1 + 1e-9:
            _, piece_idx = theta_queue.pop(0)
            # diagnostic only: whether the strip below the wall and the
            # trial pipeline had really cleared by the freeze time
            n_strip = int(np.sum(pos > a - y))
            pieces[piece_idx]["in_between_at_theta"] = n_strip
            pieces[piece_idx]["outstanding_at_theta"] = len(reinject)
            pieces[piece_idx]["clear_at_theta"] = (
                n_strip == 0 and not reinject)
            if mode == "bflat":
                reds = col == _RED
                stats["red_killed"] += int(reds.sum())
                pos, col, expy = pos[~reds], col[~reds], expy[~reds]
            if sharp:
                pos, col, expy = _sharp_expire(pos, col, expy, math.inf,
                                               n_sharp, mode == "csharp",
                                               stats)

        if mode == "bflat":
            whites = col == _WHITE
            n_white = int(whites.sum())
            if n_white > n_flat:
                wpos = pos[whites]
                srt = np.sort(wpos)
                right = n_white - np.searchsorted(srt, wpos, side="right")
                flip = np.zeros(len(pos), dtype=bool)
                flip[np.nonzero(whites)[0][right >= n_flat]] = True
                col = np.where(flip, _RED, col).astype(np.int8)

        if len(pos) > max_pop:
            raise CapacityError(
                f"population {len(pos)} exceeds the cap {max_pop}")
        if (i + 1) % sample_steps == 0 or i == n_steps - 1:
            times.append(t1)
            record(t1, pos, col)

    columns = {k: np.asarray(v) for k, v in rows.items()}
    for al in cfg.alphas:
        columns[f"med_{al:g}"] = np.asarray(med_rows[al])
    series = StatsSeries(np.asarray(times), columns, replica=replica,
                         meta={"mode": mode, "n_med": n_med})
    colour_stats = dict(stats)
    if mode == "bflat":
        colour_stats["n_flat"] = n_flat
    if sharp:
        colour_stats["n_sharp"] = n_sharp
        colour_stats["period"] = sharp_period
    return BarrierResult(series=series, path=path, pieces=pieces, mode=mode,
                         trials_run=trials_run,
                         suppressed_breakouts=suppressed,
                         clamped_responses=clamped, reinjected=reinjected,
                         wall_hits=wall_hits, depth_capped=depth_capped,
                         colour_stats=colour_stats,
                         final_positions=pos)


def run_bbbm(cfg: SimConfig, replica: int = 0) -> BarrierResult:
    """Barrier-frame run: absorbing origin, ratcheting right barrier.

    Particles diffuse with drift -mu in the frame of the barrier, whose
    displacement adds the extra drift -X'(t), linearised within each step.
    A particle touching the right wall starts a fugitive trial above the
    stopping line; the trial's frozen descendants re-enter the population at
    their freeze times.  The first breakout at or after the previous freeze
    time Theta installs the next barrier response with
    Delta = log(Z(T+) e^-A), clamped just above -1 when the observed mass
    sits below the e^-A floor.
    """
    return _barrier_run(cfg, "bbbm", replica)


def run_bflat(cfg: SimConfig, replica: int = 0) -> BarrierResult:
    """Barrier run whose measure drops over-crowded particles.

    A white particle seeing at least N_flat whites strictly to its right
    turns red (checked at step ends); reds keep diffusing and branching but
    are culled at each barrier freeze time, and the reported medians and
    white counts are over whites only.  N_flat is the stationary wall count
    at mass e^(A + delta_color).
    """
    return _barrier_run(cfg, "bflat", replica)


def run_bsharp(cfg: SimConfig, replica: int = 0,
               csharp: bool = False) -> BarrierResult:
    """Barrier run that lets under-crowded origin hits live on as blues.

    A white hitting the origin while fewer than N_sharp particles sit
    strictly right of it turns blue at the origin instead of dying; blues
    ignore the origin until their expiry, two cells of the (K + 3) a^2 time
    grid after the hit (or the next barrier freeze, whichever is first).  At
    expiry a blue left of the origin is killed (csharp: only when N_sharp
    particles sit strictly to its right) and survivors re-whiten.  Reported
    statistics are over all particles.
    """
    return _barrier_run(cfg, "csharp" if csharp else "bsharp", replica)


# ---------------------------------------------------------------------------
# coupled triple


class CouplingError(RuntimeError):
    """A coupling invariant failed: domination, injectivity or an offset."""


@dataclass
class CoupledResult:
    """Outcome of one coupled three-system run."""

    events: int
    checks: int
    horizon: float
    n_select: int
    slack: int
    extra: int
    final_plus: np.ndarray
    final_mid: np.ndarray
    final_minus: np.ndarray

    @property
    def dominance_verified(self) -> bool:
        return self.checks == self.events


def run_coupled(law: ReproductionLaw, n_select: int, *, horizon: float,
                seed: int = 0, replica: int = 0, slack: int = 0,
                extra: int = 0, init_positions=None,
                inject_fault: bool = False) -> CoupledResult:
    """Drive three selection systems on shared noise and verify domination.

    The plus system trims to n_select + slack only when it exceeds that,
    the mid system applies the exact keep-n_select rule, and the minus
    system over-culls to n_select - extra whenever it exceeds n_select.
    Mid particles ride plus particles through an injective pairing at
    nonnegative offset (and minus particles ride mid ones), so each lower
    system is a shifted-left subset of the one above: domination holds by
    construction and is re-verified after every event, as are injectivity
    and the offset signs.  Kills in an upper system re-pair the orphaned
    lower particle with the nearest free carrier weakly to its right; the
    coupling argument guarantees one exists, and a CouplingError reports
    any violation.

    With slack = extra = 0 the three systems coincide sample-path-wise.
    Event-driven and exact: no time discretisation enters.
    """
    if n_select < 2:
        raise ValueError(f"n_select must be >= 2, got {n_select!r}")
    if slack < 0 or extra < 0 or extra > n_select - 1:
        raise ValueError(f"need slack >= 0 and 0 <= extra <= n_select - 1, "
                         f"got slack = {slack!r}, extra = {extra!r}")
    rng = rng_stream(seed, replica, _LANE_COUPLED)
    if init_positions is None:
        a0 = recentering(n_select).a_N if n_select >= 16 \
            else max(math.pi, math.log(n_select) + 1.0)
        init_positions = sine_exp_density(a0, 1.0).sample(n_select, rng)
    init_positions = np.asarray(init_positions, dtype=float)
    if len(init_positions) != n_select:
        raise ValueError("init_positions must hold exactly n_select values")

    # plus: pid -> [position, label]; mid: uid -> [pid, offset, label];
    # minus: wid -> [uid, offset, label].  Lower positions derive from the
    # carrier minus the offset, so paired particles share increments.
    plus: dict[int, list] = {}
    mid: dict[int, list] = {}
    minus: dict[int, list] = {}
    phi_inv: dict[int, int] = {}
    psi_inv: dict[int, int] = {}
    next_id = 0
    for i, x in enumerate(init_positions):
        pid, uid, wid = next_id, next_id + 1, next_id + 2
        next_id += 3
        label = (i,)
        plus[pid] = [float(x), label]
        mid[uid] = [pid, 0.0, label]
        minus[wid] = [uid, 0.0, label]
        phi_inv[pid] = uid
        psi_inv[uid] = wid

    def mid_pos(uid: int) -> float:
        ent = mid[uid]
        return plus[ent[0]][0] - ent[1]

    def minus_pos(wid: int) -> float:
        ent = minus[wid]
        return mid_pos(ent[0]) - ent[1]

    def check_invariants() -> None:
        if len(phi_inv) != len(mid) or \
                any(phi_inv.get(ent[0]) != u for u, ent in mid.items()):
            raise CouplingError("mid-to-plus pairing lost injectivity")
        if len(psi_inv) != len(minus) or \
                any(psi_inv.get(ent[0]) != w for w, ent in minus.items()):
            raise CouplingError("minus-to-mid pairing lost injectivity")
        nm, nw = len(mid), len(minus)
        try:
            p = np.fromiter((ent[0] for ent in plus.values()), float,
                            len(plus))
            mc = np.fromiter((plus[ent[0]][0] for ent in mid.values()),
                             float, nm)
            mo = np.fromiter((ent[1] for ent in mid.values()), float, nm)
            wc = np.fromiter(
                (plus[mid[ent[0]][0]][0] - mid[ent[0]][1]
                 for ent in minus.values()), float, nw)
            wo = np.fromiter((ent[1] for ent in minus.values()), float, nw)
        except KeyError:
            raise CouplingError("pairing points at a dead carrier") from None
        if min(mo.min(initial=0.0), wo.min(initial=0.0)) < -1e-12:
            raise CouplingError("negative pairing offset")
        m = mc - mo
        w = wc - wo
        p.sort()
        m.sort()
        w.sort()
        if len(p) < nm or not np.all(p[len(p) - nm:] >= m - 1e-12):
            raise CouplingError("domination order violated (plus vs mid)")
        if nm < nw or not np.all(m[nm - nw:] >= w - 1e-12):
            raise CouplingError("domination order violated (mid vs minus)")

    def rewire_mid(uid: int, x: float) -> None:
        """Re-pair an orphaned mid at position x with the leftmost free plus
        weakly to its right."""
        best = None
        for pid, ent in plus.items():
            if pid not in phi_inv and ent[0] >= x - 1e-12 and \
                    (best is None or (ent[0], ent[1]) < best[:2]):
                best = (ent[0], ent[1], pid)
        if best is None:
            raise CouplingError(
                "no free plus carrier weakly right of an orphaned mid")
        mid[uid][0] = best[2]
        mid[uid][1] = best[0] - x
        phi_inv[best[2]] = uid

    def rewire_minus(wid: int, x: float) -> None:
        """Re-pair an orphaned minus at position x with the leftmost free mid
        weakly to its right."""
        best = None
        for u, ent in mid.items():
            if u not in psi_inv:
                ux = plus[ent[0]][0] - ent[1]
                if ux >= x - 1e-12 and \
                        (best is None or (ux, ent[2]) < best[:2]):
                    best = (ux, ent[2], u)
        if best is None:
            raise CouplingError(
                "no free mid carrier weakly right of an orphaned minus")
        minus[wid][0] = best[2]
        minus[wid][1] = best[0] - x
        psi_inv[best[2]] = wid

    t = 0.0
    events = checks = 0
    beta0 = law.beta0
    fault_done = not inject_fault
    ids_cache = sorted(plus)

    while True:
        n = len(plus)
        if n == 0:
            break
        wait = rng.exponential(1.0 / (beta0 * n))
        step = min(wait, horizon - t)
        if step > 0.0:
            moved = np.fromiter((plus[p][0] for p in ids_cache), float, n)
            moved += rng.normal(0.0, math.sqrt(step), n)
            for pid, x in zip(ids_cache, moved.tolist()):
                plus[pid][0] = x
        t += step
        if wait >= horizon - (t - step):
            break
        events += 1

        if not fault_done and t >= horizon / 2.0:
            fault_done = True
            mid[min(mid)][1] = -0.5

        # branching cascade: the chosen plus particle and its riders branch
        # together with a common offspring count
        victim = ids_cache[int(rng.integers(n))]
        k = int(sample_offspring(law, 1, rng)[0])
        vx, vlabel = plus.pop(victim)
        child_pids = []
        for j in range(k):
            plus[next_id] = [vx, vlabel + (j,)]
            child_pids.append(next_id)
            next_id += 1
        uid = phi_inv.pop(victim, None)
        if uid is not None:
            pid_of, off, ulabel = mid.pop(uid)
            child_uids = []
            for j in range(k):
                mid[next_id] = [child_pids[j], off, ulabel + (j,)]
                phi_inv[child_pids[j]] = next_id
                child_uids.append(next_id)
                next_id += 1
            wid = psi_inv.pop(uid, None)
            if wid is not None:
                uid_of, off2, wlabel = minus.pop(wid)
                for j in range(k):
                    minus[next_id] = [child_uids[j], off2, wlabel + (j,)]
                    psi_inv[child_uids[j]] = next_id
                    next_id += 1

        # kill rules, lowest system first
        if len(minus) > n_select:
            doomed = heapq.nsmallest(
                len(minus) - (n_select - extra),
                ((minus_pos(w), minus[w][2], w) for w in minus))
            for _, _, wid in doomed:
                uid_of = minus.pop(wid)[0]
                del psi_inv[uid_of]

        while len(mid) > n_select:
            _, _, u_kill = min((plus[ent[0]][0] - ent[1], ent[2], u)
                               for u, ent in mid.items())
            wid = psi_inv.pop(u_kill, None)
            orphan_x = minus_pos(wid) if wid is not None else 0.0
            pid_of = mid.pop(u_kill)[0]
            del phi_inv[pid_of]
            if wid is not None:
                rewire_minus(wid, orphan_x)

        if len(plus) > n_select + slack:
            victims = heapq.nsmallest(
                len(plus) - (n_select + slack),
                ((ent[0], ent[1], pid) for pid, ent in plus.items()))
            orphans = []
            for _, _, pid in victims:
                u = phi_inv.pop(pid, None)
                if u is not None:
                    orphans.append((mid_pos(u), u))
                del plus[pid]
            for x, u in sorted(orphans, reverse=True):
                rewire_mid(u, x)

        ids_cache = sorted(plus)
        check_invariants()
        checks += 1

    final_plus = np.sort([ent[0] for ent in plus.values()])[::-1]
    final_mid = np.sort([mid_pos(u) for u in mid])[::-1]
    final_minus = np.sort([minus_pos(w) for w in minus])[::-1]
    return CoupledResult(events=events, checks=checks, horizon=horizon,
                         n_select=n_select, slack=slack, extra=extra,
                         final_plus=final_plus, final_mid=final_mid,
                         final_minus=final_minus)
