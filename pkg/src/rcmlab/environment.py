"""Time-dependent random conductance fields on the torus.

A conductance field assigns a strictly positive weight to every edge,
piecewise constant on a uniform time grid.  Model variants cover the cases
of interest: constant, static ergodic, exactly separable space x time
products, edge-wise exponential refreshes, and heavy-tailed laws whose
Pareto exponents place them on either side of the moment condition.

All sampling is driven by counter-based streams keyed on (seed, model),
so a field is a pure function of (model, lattice, grid, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import rng
from .lattice import (SpaceTimeCylinder, SpaceTimeField, TorusLattice, ball,
                      interval_weights, measures_mu_nu, spacetime_norm, NormSpec)

__all__ = [
    "Law", "Constant", "StaticErgodic", "ProductSeparable", "TimeRefresh",
    "HeavyTail", "EnvironmentModel", "ConductanceField", "MomentExponents",
    "sample_environment", "shift", "moment_condition_check", "measure_fields",
    "empirical_moment_norms", "ergodic_average", "EnvironmentView",
]


# ---------------------------------------------------------------------------
# laws and model variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Law:
    """Scalar law for conductance values.

    kinds:
      uniform(a, b)          — uniform on [a, b], 0 < a
      pareto(alpha)          — density a x^{-a-1} on [1, inf);
                               E[X^p] < inf iff p < alpha
      pareto_ratio(au, al)   — P1/P2 with independent Paretos; E[w^p] < inf
                               iff p < au and E[w^{-q}] < inf iff q < al
      constant(c)
    """

    kind: str
    a: float = 1.0
    b: float = 1.0

    def sample(self, gen: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            if self.a <= 0 or self.b < self.a:
                raise ValueError("uniform law needs 0 < a <= b")
            return gen.uniform(self.a, self.b, size=size)
        if self.kind == "pareto":
            return (1.0 - gen.random(size=size)) ** (-1.0 / self.a)
        if self.kind == "pareto_ratio":
            up = (1.0 - gen.random(size=size)) ** (-1.0 / self.a)
            low = (1.0 - gen.random(size=size)) ** (-1.0 / self.b)
            return up / low
        if self.kind == "constant":
            return np.full(size, float(self.a))
        raise ValueError(f"unknown law kind {self.kind!r}")


@dataclass(frozen=True)
class Constant:
    value: float = 1.0


@dataclass(frozen=True)
class StaticErgodic:
    """I.i.d. law per edge, constant in time."""
    law: Law = Law("uniform", 1.0, 2.0)


@dataclass(frozen=True)
class ProductSeparable:
    """w(k, e) = f(e) g(k) with f i.i.d. over edges, g i.i.d. over intervals."""
    space_law: Law = Law("uniform", 1.0, 2.0)
    time_law: Law = Law("uniform", 1.0, 2.0)


@dataclass(frozen=True)
class TimeRefresh:
    """Each edge refreshes at exponential times, discretised to the grid.

    On interval k the stored value is the value at the interval's left
    endpoint, so an edge keeps its value with probability exp(-rate dt)
    per step and otherwise redraws from the law.
    """
    law: Law = Law("uniform", 1.0, 2.0)
    rate: float = 1.0


@dataclass(frozen=True)
class HeavyTail:
    """Static field of Pareto ratios with prescribed tail exponents."""
    alpha_up: float = 2.5
    alpha_low: float = 2.5


EnvironmentModel = Union[Constant, StaticErgodic, ProductSeparable, TimeRefresh, HeavyTail]


# ---------------------------------------------------------------------------
# the field
# ---------------------------------------------------------------------------

@dataclass
class ConductanceField:
    """Strictly positive edge weights, piecewise constant in time.

    ``values[k, i, v]`` is the conductance of the edge (v, v + e_i) on the
    interval [t_start + k dt, t_start + (k+1) dt).  Symmetry w(x,y) = w(y,x)
    holds by construction: one value per unordered edge.  ``periodic`` marks
    the field as time-periodic with period K dt, which permits grid-aligned
    time shifts of any size and time-periodic corrector solves.
    """

    lattice: TorusLattice
    t_start: float
    dt: float
    values: np.ndarray  # (K, d, N)
    periodic: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != (self.lattice.d, self.lattice.n_vertices):
            raise ValueError("conductance values must have shape (K, d, N)")
        if not np.all(self.values > 0):
            raise ValueError("degenerate conductance: all weights must be strictly positive")
        if self.dt <= 0:
            raise ValueError("time step must be positive")

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def t_end(self) -> float:
        return self.t_start + self.K * self.dt

    @property
    def time_constant(self) -> bool:
        return self.K == 1 or bool(np.all(self.values == self.values[0]))

    def slice_index(self, t: float) -> int:
        k = int(math.floor((t - self.t_start) / self.dt + 1e-12))
        if self.periodic:
            return k % self.K
        if k == self.K and abs(t - self.t_end) < 1e-9 * max(1.0, abs(t)):
            k -= 1
        if not (0 <= k < self.K):
            raise ValueError(f"time {t} outside field support [{self.t_start}, {self.t_end})")
        return k

    def at_time(self, t: float) -> np.ndarray:
        """Edge weights (d, N) on the interval containing t."""
        return self.values[self.slice_index(t)]

    def edge_value(self, t: float, x, y) -> float:
        """w_t({x, y}) for nearest-neighbour torus vertices x, y."""
        k = self.slice_index(t)
        x = np.asarray(x, dtype=np.int64) % self.lattice.L
        y = np.asarray(y, dtype=np.int64) % self.lattice.L
        diff = (y - x) % self.lattice.L
        nz = np.flatnonzero(diff)
        if nz.size != 1 or diff[nz[0]] not in (1, self.lattice.L - 1):
            raise ValueError("not a nearest-neighbour pair")
        i = int(nz[0])
        base = x if diff[i] == 1 else y
        return float(self.values[k, i, self.lattice.vertex_index(base)])

    def mu_nu(self, k: int, floor: bool = False):
        return measures_mu_nu(self.lattice, self.values[k], floor=floor)

    def mu_max(self) -> float:
        mu_top = 0.0
        for k in range(self.K):
            mu, _ = self.mu_nu(k)
            mu_top = max(mu_top, float(mu.max()))
        return mu_top


class EnvironmentView:
    """Lazy space-time shifted view of a field, for local functionals.

    ``value(t, x, y)`` returns the shifted field's conductance at relative
    time t and relative edge {x, y}; nothing is copied.
    """

    def __init__(self, field: ConductanceField, s: float, z):
        self.field = field
        self.s = s
        self.z = np.asarray(z, dtype=np.int64)

    def value(self, t: float, x, y) -> float:
        return self.field.edge_value(t + self.s,
                                     np.asarray(x, dtype=np.int64) + self.z,
                                     np.asarray(y, dtype=np.int64) + self.z)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _grid_count(horizon: float, dt: float) -> int:
    K = int(round(horizon / dt))
    if abs(K * dt - horizon) > 1e-9 * max(1.0, horizon) or K < 1:
        raise ValueError("horizon must be a positive multiple of dt")
    return K


def sample_environment(model: EnvironmentModel, lattice: TorusLattice,
                       horizon: float, dt: float, seed: int,
                       t_start: float = 0.0, periodic: bool = True) -> ConductanceField:
    """Draw one field realisation; deterministic given (model, seed).

    The grid has K = horizon/dt intervals.  Static variants store a single
    time block (K folds to 1), which downstream code treats as constant in
    time; time shifts then act trivially, matching time invariance.
    """
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    K = _grid_count(horizon, dt)
    d, N = lattice.d, lattice.n_vertices
    gen = rng.stream(seed, "env", type(model).__name__)

    if isinstance(model, Constant):
        if model.value <= 0:
            raise ValueError("constant conductance must be positive")
        vals = np.full((1, d, N), float(model.value))
        return ConductanceField(lattice, t_start, horizon, vals, periodic=periodic)

    if isinstance(model, StaticErgodic):
        vals = model.law.sample(gen, (1, d, N))
        _check_positive(vals)
        return ConductanceField(lattice, t_start, horizon, vals, periodic=periodic)

    if isinstance(model, HeavyTail):
        law = Law("pareto_ratio", model.alpha_up, model.alpha_low)
        vals = law.sample(gen, (1, d, N))
        _check_positive(vals)
        return ConductanceField(lattice, t_start, horizon, vals, periodic=periodic)

    if isinstance(model, ProductSeparable):
        f_edge = model.space_law.sample(gen, (d, N))
        g_time = model.time_law.sample(gen, K)
        vals = g_time[:, None, None] * f_edge[None, :, :]
        _check_positive(vals)
        return ConductanceField(lattice, t_start, dt, vals, periodic=periodic)

    if isinstance(model, TimeRefresh):
        if model.rate < 0:
            raise ValueError("refresh rate must be nonnegative")
        vals = np.empty((K, d, N))
        vals[0] = model.law.sample(gen, (d, N))
        keep = math.exp(-model.rate * dt)
        for k in range(1, K):
            redraw = gen.random((d, N)) >= keep
            vals[k] = np.where(redraw, model.law.sample(gen, (d, N)), vals[k - 1])
        _check_positive(vals)
        return ConductanceField(lattice, t_start, dt, vals, periodic=periodic)

    raise TypeError(f"unknown environment model {model!r}")


def _check_positive(vals: np.ndarray):
    if not np.all(vals > 0):
        raise RuntimeError("sampled a nonpositive conductance; law unsupported")


def shift(omega: ConductanceField, s: float, z) -> ConductanceField:
    """Space-time shift: (shifted w)_t({x,y}) = w_{t+s}({x+z, y+z}).

    s must be grid aligned.  For periodic fields the time axis rotates; for
    finite-horizon fields the support window moves to [t_start - s, ...).
    The group law shift(s,z) o shift(s',z') = shift(s+s', z+z') holds
    exactly on stored values.
    """
    steps = s / omega.dt
    k = int(round(steps))
    if abs(steps - k) > 1e-9:
        raise ValueError(f"time shift {s} is not a multiple of dt = {omega.dt}")
    perm = omega.lattice.translate_perm(z)
    vals = omega.values[:, :, perm]
    if omega.periodic:
        vals = np.roll(vals, -k, axis=0)
        return ConductanceField(omega.lattice, omega.t_start, omega.dt, vals,
                                periodic=True)
    return ConductanceField(omega.lattice, omega.t_start - s, omega.dt, vals,
                            periodic=False)


# ---------------------------------------------------------------------------
# moment conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentExponents:
    """Integrability exponents (p, p', q, q'), each in (1, inf]."""

    p: float
    p_prime: float
    q: float
    q_prime: float
    d: int = 2

    def __post_init__(self):
        for name in ("p", "p_prime", "q", "q_prime"):
            if getattr(self, name) <= 1:
                raise ValueError(f"exponent {name} must exceed 1")


def _inv(x: float) -> float:
    return 0.0 if np.isinf(x) else 1.0 / x


def moment_condition_check(e: MomentExponents) -> dict:
    """Exponent inequality controlling the Moser-chain machinery.

    Evaluates (1/p)(p'/(p'-1))((q'+1)/q') + 1/q < 2/d, with the conventions
    1/inf = 0, p'/(p'-1) = 1 and (q'+1)/q' = 1 at infinity.  When p = p' and
    q = q' the equivalent single-exponent form 1/(p-1) + 1/((p-1)q) + 1/q
    < 2/d is evaluated as well.
    """
    holder_p = 1.0 if np.isinf(e.p_prime) else e.p_prime / (e.p_prime - 1.0)
    weight_q = 1.0 if np.isinf(e.q_prime) else (e.q_prime + 1.0) / e.q_prime
    lhs = _inv(e.p) * holder_p * weight_q + _inv(e.q)
    rhs = 2.0 / e.d
    out = {
        "lhs": lhs,
        "rhs": rhs,
        "margin": rhs - lhs,
        "satisfied": bool(lhs < rhs),
    }
    if e.p == e.p_prime and e.q == e.q_prime:
        pm1 = np.inf if np.isinf(e.p) else e.p - 1.0
        lhs_simple = _inv(pm1) + _inv(pm1) * _inv(e.q) + _inv(e.q)
        out["simple_form_lhs"] = lhs_simple
        out["simple_form_satisfied"] = bool(lhs_simple < rhs)
    return out


def measure_fields(omega: ConductanceField,
                   floor: bool = False) -> tuple[SpaceTimeField, SpaceTimeField]:
    """The vertex measures mu, nu of the field as space-time fields."""
    K = omega.K
    mu_vals = np.empty((K, omega.lattice.n_vertices))
    nu_vals = np.empty_like(mu_vals)
    for k in range(K):
        mu_vals[k], nu_vals[k] = omega.mu_nu(k, floor=floor)
    return (SpaceTimeField(omega.lattice, omega.t_start, omega.dt, mu_vals),
            SpaceTimeField(omega.lattice, omega.t_start, omega.dt, nu_vals))


def empirical_moment_norms(omega: ConductanceField, e: MomentExponents,
                           Q: SpaceTimeCylinder) -> tuple[float, float]:
    """(|mu|_{p,p',Q}, |nu|_{q,q',Q}) without the unit floor."""
    mu_field, nu_field = measure_fields(omega, floor=False)
    mu_norm = spacetime_norm(mu_field, NormSpec(e.p, e.p_prime, Q))
    nu_norm = spacetime_norm(nu_field, NormSpec(e.q, e.q_prime, Q))
    return mu_norm, nu_norm


def ergodic_average(phi: Callable[[EnvironmentView], float],
                    omega: ConductanceField, n: float) -> float:
    """Space-time average of phi over shifted copies of the field.

    (1/n^2) int_0^{n^2} (1/|B(n)|) sum_{x in B(n)} phi(view at (t, x)) dt,
    with the time integral an exact grid sum.  For ergodic models this
    tends to the ensemble mean of phi as n grows.
    """
    if n >= omega.lattice.L / 2:
        raise ValueError("spatial scale exceeds half the torus")
    horizon = n ** 2
    w = interval_weights(omega.t_start, omega.dt, omega.K,
                         omega.t_start, omega.t_start + horizon)
    verts = ball(omega.lattice, (0,) * omega.lattice.d, n)
    coords = omega.lattice.coords_all()[verts]
    total = 0.0
    for k in np.flatnonzero(w):
        t_k = omega.t_start + k * omega.dt
        slice_sum = 0.0
        for c in coords:
            slice_sum += phi(EnvironmentView(omega, t_k, c))
        total += w[k] * slice_sum / len(verts)
    return total / horizon
