"""Exact pathwise simulation of the variable-speed random walk.

Jump times are produced by inverting the compensator integral of the total
jump rate against unit exponentials.  Because conductances are piecewise
constant in time the compensator is piecewise linear, so the inversion is
closed form interval by interval: no time-discretisation error enters any
trajectory.

Randomness discipline: walker w consumes exponentials from the stream
(seed, tag, w, 0) and uniforms (start vertex if random, then one jump
target per jump) from (seed, tag, w, 1), in a fixed order.  The scalar and
vectorised engines follow the same consumption order and the same
arithmetic for holding times and target selection, so ensembles are
reproducible under any thread count or engine choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .environment import ConductanceField
from .lattice import TorusLattice

__all__ = [
    "TrajectorySample", "SlowedTrajectory", "RescaledPath",
    "simulate_vsrw", "simulate_slowed", "time_change_compose", "rescale",
    "simulate_ensemble", "EnsembleResult", "JumpTables",
]

_MAX_JUMPS = 50_000_000


# ---------------------------------------------------------------------------
# trajectory containers
# ---------------------------------------------------------------------------

@dataclass
class TrajectorySample:
    """One walk realisation: position k is held on [J_k, J_{k+1})."""

    start_time: float
    start: np.ndarray            # (d,) torus coords
    jump_times: np.ndarray       # (m,) strictly increasing, > start_time
    displacements: np.ndarray    # (m, d) signed unit steps
    end_time: float

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def positions_unwrapped(self) -> np.ndarray:
        """(m+1, d) integer positions in Z^d (torus lift via jump increments)."""
        if self.n_jumps == 0:
            return self.start[np.newaxis, :].astype(np.int64)
        return np.vstack([self.start[np.newaxis, :],
                          self.start[np.newaxis, :] + np.cumsum(self.displacements, axis=0)])

    def holding_times(self) -> np.ndarray:
        """Durations between consecutive jumps (excludes the censored last sojourn)."""
        if self.n_jumps == 0:
            return np.empty(0)
        return np.diff(np.concatenate([[self.start_time], self.jump_times]))

    def position_at(self, t: float) -> np.ndarray:
        """Unwrapped position at time t (cadlag)."""
        if t < self.start_time - 1e-12 or t > self.end_time + 1e-12:
            raise ValueError("time outside trajectory window")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.positions_unwrapped()[k]


@dataclass
class SlowedTrajectory(TrajectorySample):
    """Unit-rate-bounded walk plus its clock.

    The clock (field time as a function of wall time) is piecewise linear;
    breakpoints occur at jumps and at crossings of the field's time grid,
    so linear interpolation between breakpoints is exact.
    """

    clock_wall: np.ndarray = field(default_factory=lambda: np.zeros(1))
    clock_value: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def clock_at(self, t: float) -> float:
        return float(np.interp(t, self.clock_wall, self.clock_value))


@dataclass
class RescaledPath:
    """Diffusively rescaled path t -> X_{n^2 t} / n on [0, horizon]."""

    times: np.ndarray    # (m,) rescaled jump times
    points: np.ndarray   # (m+1, d) rescaled unwrapped positions
    horizon: float

    def at(self, t: float) -> np.ndarray:
        if t < -1e-12 or t > self.horizon + 1e-12:
            raise ValueError("time outside rescaled window")
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.points[k]


# ---------------------------------------------------------------------------
# shared jump tables
# ---------------------------------------------------------------------------

class JumpTables:
    """Per-slice vertex rate tables shared by all engines.

    For slice k: ``w(k)`` lists, per vertex, the conductances of its 2d
    outgoing edges in the fixed order (+e_0, ..., -e_0, ...); ``mu(k)`` is
    their sum and ``cum(k)`` the cumulative target distribution.  Every
    engine draws holding times as E/mu[pos] and targets as
    (U >= cum[pos]).sum(), which makes trajectories engine-independent.
    """

    def __init__(self, omega: ConductanceField):
        self.omega = omega
        lat = omega.lattice
        self.neighbors = np.concatenate([lat.nbr_plus, lat.nbr_minus], axis=0).T  # (N, 2d)
        disp = np.zeros((2 * lat.d, lat.d), dtype=np.int64)
        for i in range(lat.d):
            disp[i, i] = 1
            disp[lat.d + i, i] = -1
        self.disp = disp
        self._mu: dict[int, np.ndarray] = {}
        self._cum: dict[int, np.ndarray] = {}

    def _build(self, k: int):
        vals = self.omega.values[k]
        gathered = np.take_along_axis(vals, self.omega.lattice.nbr_minus, axis=1)
        w = np.concatenate([vals, gathered], axis=0).T.copy()  # (N, 2d)
        mu = w.sum(axis=1)
        self._mu[k] = mu
        self._cum[k] = np.cumsum(w, axis=1) / mu[:, None]

    def mu(self, k: int) -> np.ndarray:
        if k not in self._mu:
            self._build(k)
        return self._mu[k]

    def cum(self, k: int) -> np.ndarray:
        if k not in self._cum:
            self._build(k)
        return self._cum[k]


def _slice_bounds(omega: ConductanceField, t: float) -> tuple[int, float]:
    """(slice index, absolute end time of the interval containing t)."""
    rel = (t - omega.t_start) / omega.dt
    j = int(math.floor(rel + 1e-12))
    if not omega.periodic:
        if j == omega.K and abs(t - omega.t_end) < 1e-9 * max(1.0, abs(t)):
            j -= 1
        if not (0 <= j < omega.K):
            raise ValueError("time outside field support")
        return j, omega.t_start + (j + 1) * omega.dt
    return j % omega.K, omega.t_start + (j + 1) * omega.dt


def _check_horizon(omega: ConductanceField, s: float, t_end: float):
    if t_end <= s:
        raise ValueError("end time must exceed start time")
    if not omega.periodic:
        tol = 1e-9 * max(1.0, abs(t_end))
        if s < omega.t_start - tol or t_end > omega.t_end + tol:
            raise ValueError("simulation window exceeds field horizon")


def _uniform_start_vertex(u: float, n_vertices: int) -> int:
    return min(int(u * n_vertices), n_vertices - 1)


def _track_value(track: np.ndarray, k: int, pos: int) -> float:
    return track[k % track.shape[0], pos]


# ---------------------------------------------------------------------------
# scalar exact engine
# ---------------------------------------------------------------------------

def simulate_vsrw(omega: ConductanceField, s: float, x, t_end: float,
                  seed: int, walker_id: int = 0, *,
                  tables: JumpTables | None = None,
                  start_uniform: bool = False,
                  track_max_of: np.ndarray | None = None,
                  stream_tag: str = "walk",
                  max_jumps: int = _MAX_JUMPS):
    """Exact VSRW sample path on [s, t_end] started at vertex x.

    The walk leaves x at total rate mu_t(x) (no unit floor); at a jump the
    target is drawn proportionally to the current edge weights.  With
    ``track_max_of`` set to per-slice vertex values (K', N), the running
    maximum of that field along the path (evaluated at the start, at every
    jump and at every grid crossing) is returned alongside the trajectory.
    """
    _check_horizon(omega, s, t_end)
    tab = tables if tables is not None else JumpTables(omega)
    lat = omega.lattice
    exp_gen = rng.stream(seed, stream_tag, walker_id, 0)
    uni_gen = rng.stream(seed, stream_tag, walker_id, 1)

    if start_uniform:
        pos = _uniform_start_vertex(float(uni_gen.random()), lat.n_vertices)
        start = lat.coords(pos)
    else:
        pos = lat.vertex_index(x)
        start = np.asarray(x, dtype=np.int64) % lat.L
    t = s
    jump_times, steps = [], []
    k, k_end = _slice_bounds(omega, t)
    run_max = _track_value(track_max_of, k, pos) if track_max_of is not None else -np.inf

    while True:
        E = float(exp_gen.standard_exponential())
        jumped = False
        while True:
            seg_end = min(k_end, t_end)
            mu_here = tab.mu(k)[pos]
            cap = mu_here * (seg_end - t)
            if E <= cap:
                t = t + E / mu_here
                jumped = True
                break
            E -= cap
            t = seg_end
            if t >= t_end:
                break
            k = (k + 1) % omega.K if omega.periodic else k + 1
            k_end += omega.dt
            if track_max_of is not None:
                run_max = max(run_max, _track_value(track_max_of, k, pos))
        if not jumped:
            break
        U = float(uni_gen.random())
        choice = int((U >= tab.cum(k)[pos]).sum())
        steps.append(tab.disp[choice])
        pos = int(tab.neighbors[pos, choice])
        jump_times.append(t)
        if track_max_of is not None:
            run_max = max(run_max, _track_value(track_max_of, k, pos))
        if len(jump_times) >= max_jumps:
            raise RuntimeError(f"jump cap {max_jumps} exceeded; rate explosion?")

    traj = TrajectorySample(
        start_time=s, start=start,
        jump_times=np.asarray(jump_times, dtype=float),
        displacements=np.asarray(steps, dtype=np.int64).reshape(-1, lat.d),
        end_time=t_end,
    )
    if track_max_of is not None:
        return traj, float(run_max)
    return traj


def simulate_slowed(omega: ConductanceField, s: float, x, seed: int,
                    walker_id: int = 0, *, t_end: float | None = None,
                    clock_end: float | None = None,
                    max_jumps: int = _MAX_JUMPS) -> SlowedTrajectory:
    """Slowed-down walk: jump rates w/(1 v mu) <= 1, clock rate 1/(1 v mu).

    The clock is the field time seen by the walk; it starts at s and
    advances at rate 1/(1 v mu), so clock - s <= wall time always.  The
    pair (clock, position) is advanced segment by segment; within a
    segment both rates are constant, so every crossing is closed form.
    Exactly one of ``t_end`` (wall) and ``clock_end`` (field time) stops
    the simulation.
    """
    if (t_end is None) == (clock_end is None):
        raise ValueError("specify exactly one of t_end, clock_end")
    if clock_end is not None:
        _check_horizon(omega, s, clock_end)
    tab = JumpTables(omega)
    lat = omega.lattice
    exp_gen = rng.stream(seed, "slow", walker_id, 0)
    uni_gen = rng.stream(seed, "slow", walker_id, 1)

    pos = lat.vertex_index(x)
    start = np.asarray(x, dtype=np.int64) % lat.L
    wall, T = 0.0, s
    jump_times, steps = [], []
    clock_wall, clock_val = [0.0], [T]
    k, k_end = _slice_bounds(omega, T)
    E = float(exp_gen.standard_exponential())

    while True:
        mu = float(tab.mu(k)[pos])
        m1 = max(1.0, mu)
        lam = mu / m1
        wall_grid = (k_end - T) * m1
        wall_jump = E / lam
        wall_stop = (t_end - wall) if t_end is not None else (clock_end - T) * m1
        step_wall = min(wall_grid, wall_jump, wall_stop)

        if step_wall == wall_stop:
            wall += wall_stop
            T += wall_stop / m1
            clock_wall.append(wall)
            clock_val.append(T)
            break
        if wall_jump <= wall_grid:
            wall += wall_jump
            T += wall_jump / m1
            U = float(uni_gen.random())
            choice = int((U >= tab.cum(k)[pos]).sum())
            steps.append(tab.disp[choice])
            pos = int(tab.neighbors[pos, choice])
            jump_times.append(wall)
            clock_wall.append(wall)
            clock_val.append(T)
            E = float(exp_gen.standard_exponential())
            if len(jump_times) >= max_jumps:
                raise RuntimeError("jump cap exceeded")
        else:
            wall += wall_grid
            E -= lam * wall_grid
            T = k_end  # land exactly on the grid line
            if not omega.periodic and k + 1 >= omega.K:
                clock_wall.append(wall)
                clock_val.append(T)
                break
            k = (k + 1) % omega.K if omega.periodic else k + 1
            k_end += omega.dt
            clock_wall.append(wall)
            clock_val.append(T)

    return SlowedTrajectory(
        start_time=0.0, start=start,
        jump_times=np.asarray(jump_times, dtype=float),
        displacements=np.asarray(steps, dtype=np.int64).reshape(-1, lat.d),
        end_time=wall,
        clock_wall=np.asarray(clock_wall), clock_value=np.asarray(clock_val),
    )


def time_change_compose(slowed: SlowedTrajectory) -> TrajectorySample:
    """Recover the full-speed walk from the slowed one.

    The composed walk jumps at the clock readings of the slowed walk's
    jump instants; those instants are stored clock breakpoints, so the
    composition is exact.
    """
    composed_times = np.interp(slowed.jump_times, slowed.clock_wall, slowed.clock_value)
    return TrajectorySample(
        start_time=float(slowed.clock_value[0]),
        start=slowed.start,
        jump_times=composed_times,
        displacements=slowed.displacements,
        end_time=float(slowed.clock_value[-1]),
    )


def rescale(traj: TrajectorySample, n: float, horizon: float = 1.0) -> RescaledPath:
    """Diffusive rescaling t -> X_{n^2 t} / n with unwrapped positions."""
    need = traj.start_time + n ** 2 * horizon
    if traj.end_time < need - 1e-9:
        raise ValueError(f"trajectory ends at {traj.end_time}, need {need}")
    return RescaledPath(
        times=(traj.jump_times - traj.start_time) / n ** 2,
        points=traj.positions_unwrapped() / n,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

class _StreamBlocks:
    """Buffered draws from the per-walker streams of one ensemble chunk."""

    def __init__(self, seed: int, tag: str, walker_ids: np.ndarray, sub: int,
                 kind: str, block: int = 512):
        self.gens = [rng.stream(seed, tag, int(w), sub) for w in walker_ids]
        self.kind = kind
        self.block = block
        self.buf = np.empty((len(self.gens), block))
        self.ptr = np.full(len(self.gens), block, dtype=np.int64)

    def take(self, local_idx: np.ndarray) -> np.ndarray:
        """Next value for each (chunk-local) walker index."""
        for w in local_idx[self.ptr[local_idx] >= self.block]:
            g = self.gens[int(w)]
            self.buf[w] = (g.standard_exponential(self.block) if self.kind == "exp"
                           else g.random(self.block))
            self.ptr[w] = 0
        out = self.buf[local_idx, self.ptr[local_idx]]
        self.ptr[local_idx] += 1
        return out


@dataclass
class EnsembleResult:
    """Unwrapped positions of an ensemble at requested sample times."""

    sample_times: np.ndarray      # (T,)
    positions: np.ndarray         # (W, T, d) unwrapped, float
    jump_counts: np.ndarray       # (W,) jumps before the last sample time
    sup_tracked: np.ndarray | None = None  # (W,) running max of tracked field


def simulate_ensemble(omega: ConductanceField, s: float, start, t_ends,
                      n_walkers: int, seed: int, threads: int = 1,
                      track_max_of: np.ndarray | None = None) -> EnsembleResult:
    """Simulate independent walks, recording unwrapped positions at the
    sorted times ``t_ends``.

    ``start`` is a coordinate tuple or "uniform" (each walker then draws
    its start vertex from its own uniform stream before any jump).  Fields
    constant in time run through a vectorised engine; general fields use
    the exact scalar engine per walker.  Output is identical for every
    thread count, and for either engine, because all randomness is
    addressed per walker.
    """
    sample_times = np.atleast_1d(np.asarray(t_ends, dtype=float))
    if sample_times.size == 0 or np.any(np.diff(sample_times) < 0):
        raise ValueError("sample times must be nonempty and sorted")
    _check_horizon(omega, s, float(sample_times[-1]))
    lat = omega.lattice

    worker = _run_static_chunk if omega.time_constant else _run_general_chunk
    threads = max(1, int(threads))
    chunks = [ids for ids in np.array_split(np.arange(n_walkers), min(threads, n_walkers))
              if len(ids)]
    out_pos = np.empty((n_walkers, len(sample_times), lat.d))
    out_jumps = np.empty(n_walkers, dtype=np.int64)
    out_sup = np.empty(n_walkers) if track_max_of is not None else None

    args = [(omega, s, start, sample_times, ids, seed, track_max_of,
             out_pos, out_jumps, out_sup) for ids in chunks]
    if len(args) == 1:
        _ = worker(*args[0])
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda a: worker(*a), args))

    return EnsembleResult(sample_times, out_pos, out_jumps, out_sup)


def _run_static_chunk(omega, s, start, sample_times, ids, seed, track,
                      out_pos, out_jumps, out_sup):
    lat = omega.lattice
    tab = JumpTables(omega)
    mu, cum = tab.mu(0), tab.cum(0)
    egens = _StreamBlocks(seed, "walk", ids, 0, "exp")
    ugens = _StreamBlocks(seed, "walk", ids, 1, "uni")
    n = len(ids)
    n_samples = len(sample_times)
    t_final = float(sample_times[-1])

    if isinstance(start, str):
        if start != "uniform":
            raise ValueError(f"unknown start spec {start!r}")
        u = ugens.take(np.arange(n))
        pos = np.array([_uniform_start_vertex(v, lat.n_vertices) for v in u],
                       dtype=np.int64)
    else:
        pos = np.full(n, lat.vertex_index(start), dtype=np.int64)

    unwrapped = lat.coords_all()[pos].astype(float)
    t = np.full(n, float(s))
    jumps = np.zeros(n, dtype=np.int64)
    cursor = np.zeros(n, dtype=np.int64)
    sup = track[0, pos].astype(float) if track is not None else None

    active = np.arange(n)
    while active.size:
        E = egens.take(active)
        t_new = t[active] + E / mu[pos[active]]

        # record any sample times passed during this holding interval;
        # a walker that fails to pass its next sample passes no later one
        rec, t_rec = active, t_new
        for _ in range(n_samples):
            c = cursor[rec]
            m = c < n_samples
            m[m] = t_rec[m] > sample_times[c[m]]
            if not np.any(m):
                break
            who = rec[m]
            out_pos[ids[who], cursor[who]] = unwrapped[who]
            cursor[who] += 1
            rec, t_rec = who, t_rec[m]

        crossed = t_new > t_final
        if np.any(crossed):
            done = active[crossed]
            out_jumps[ids[done]] = jumps[done]
            if track is not None:
                out_sup[ids[done]] = sup[done]
            active = active[~crossed]
            t_new = t_new[~crossed]
            if active.size == 0:
                break

        t[active] = t_new
        U = ugens.take(active)
        choice = (U[:, None] >= cum[pos[active]]).sum(axis=1)
        unwrapped[active] += tab.disp[choice]
        pos[active] = tab.neighbors[pos[active], choice]
        jumps[active] += 1
        if track is not None:
            sup[active] = np.maximum(sup[active], track[0, pos[active]])


def _run_general_chunk(omega, s, start, sample_times, ids, seed, track,
                       out_pos, out_jumps, out_sup):
    tab = JumpTables(omega)
    t_final = float(sample_times[-1])
    uniform = isinstance(start, str)
    if uniform and start != "uniform":
        raise ValueError(f"unknown start spec {start!r}")
    for w in ids:
        res = simulate_vsrw(omega, s, None if uniform else start, t_final,
                            seed, int(w), tables=tab, start_uniform=uniform,
                            track_max_of=track)
        traj, sup = res if track is not None else (res, None)
        path = traj.positions_unwrapped()
        idx = np.searchsorted(traj.jump_times, sample_times, side="right")
        out_pos[w] = path[idx]
        out_jumps[w] = traj.n_jumps
        if track is not None:
            out_sup[w] = sup
