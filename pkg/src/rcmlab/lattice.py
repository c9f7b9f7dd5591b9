"""Discrete geometry and calculus on the d-dimensional torus.

The torus {0,...,L-1}^d stands in for the infinite lattice: every field is
periodic in space, and translation invariance replaces ergodicity.  Fields
are plain numpy arrays,

* vertex field      shape (N,)      with N = L**d, row-major vertex order,
* edge field        shape (d, N)    entry [i, v] lives on the oriented edge
                                    (v, v + e_i); reversing an edge negates
                                    the value,
* space-time field  shape (K, N)    one block per time-grid interval.

Every edge is oriented once and for all in the positive coordinate
direction: tail v, head v + e_i.  All sign conventions below follow from
that choice, and none of the derived quantities depend on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusLattice",
    "SpaceTimeCylinder",
    "SpaceTimeField",
    "NormSpec",
    "ball",
    "grad",
    "div",
    "edge_average",
    "generator_apply",
    "dirichlet_form",
    "spacetime_norm",
    "measures_mu_nu",
    "displacement_gradient",
    "interval_weights",
]


@dataclass(frozen=True)
class TorusLattice:
    """d-dimensional discrete torus with side length L (even, >= 4).

    Precomputes the neighbour permutations used by all calculus operators:
    ``nbr_plus[i][v]`` is the vertex index of v + e_i, ``nbr_minus[i][v]``
    of v - e_i (periodic wrap).
    """

    d: int
    L: int
    nbr_plus: np.ndarray = field(init=False, repr=False, compare=False)
    nbr_minus: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"dimension must be >= 2, got {self.d}")
        if self.L < 4 or self.L % 2 != 0:
            raise ValueError(f"side length must be even and >= 4, got {self.L}")
        shape = (self.L,) * self.d
        idx = np.arange(self.n_vertices).reshape(shape)
        plus = np.empty((self.d, self.n_vertices), dtype=np.int64)
        minus = np.empty((self.d, self.n_vertices), dtype=np.int64)
        for i in range(self.d):
            plus[i] = np.roll(idx, -1, axis=i).ravel()
            minus[i] = np.roll(idx, 1, axis=i).ravel()
        object.__setattr__(self, "nbr_plus", plus)
        object.__setattr__(self, "nbr_minus", minus)

    @property
    def n_vertices(self) -> int:
        return self.L ** self.d

    @property
    def n_edges(self) -> int:
        return self.d * self.n_vertices

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.d

    def vertex_index(self, coords) -> int:
        """Row-major index of a vertex given by integer coordinates."""
        coords = np.asarray(coords, dtype=np.int64) % self.L
        return int(np.ravel_multi_index(tuple(coords), self.shape))

    def coords(self, index: int) -> np.ndarray:
        return np.array(np.unravel_index(index, self.shape), dtype=np.int64)

    def coords_all(self) -> np.ndarray:
        """(N, d) array of vertex coordinates in index order."""
        return np.stack(np.unravel_index(np.arange(self.n_vertices), self.shape),
                        axis=1).astype(np.int64)

    def distance(self, x, y) -> int:
        """Graph distance = l1 torus metric."""
        dx = np.abs(np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64)) % self.L
        return int(np.sum(np.minimum(dx, self.L - dx)))

    def distance_field(self, center) -> np.ndarray:
        """(N,) array of torus distances from ``center``."""
        c = np.asarray(center, dtype=np.int64) % self.L
        coords = self.coords_all()
        dx = np.abs(coords - c) % self.L
        return np.sum(np.minimum(dx, self.L - dx), axis=1)

    def translate_perm(self, z) -> np.ndarray:
        """Permutation p with p[v] = index(v + z)."""
        z = np.asarray(z, dtype=np.int64)
        coords = self.coords_all()
        shifted = (coords + z) % self.L
        return np.ravel_multi_index(tuple(shifted.T), self.shape)


def ball(lattice: TorusLattice, x, r: float) -> np.ndarray:
    """Sorted vertex indices of the closed ball {y : d(x,y) <= floor(r)}.

    The radius must satisfy r < L/2 so the ball embeds in the torus without
    wrapping onto itself.
    """
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {r}")
    if r >= lattice.L / 2:
        raise ValueError(f"ball wraps torus: radius {r} >= L/2 = {lattice.L / 2}")
    dist = lattice.distance_field(x)
    return np.flatnonzero(dist <= math.floor(r))


def grad(lattice: TorusLattice, f: np.ndarray) -> np.ndarray:
    """Oriented edge gradient: (grad f)[i, v] = f(v + e_i) - f(v)."""
    f = np.asarray(f)
    return f[lattice.nbr_plus] - f[np.newaxis, :]


def div(lattice: TorusLattice, F: np.ndarray) -> np.ndarray:
    """Adjoint of grad: (div F)(x) = sum_{e: head x} F(e) - sum_{e: tail x} F(e).

    Satisfies <grad f, F>_E = <f, div F>_V exactly.
    """
    F = np.asarray(F)
    gathered = np.take_along_axis(F, lattice.nbr_minus, axis=1)
    return np.sum(gathered, axis=0) - np.sum(F, axis=0)


def edge_average(lattice: TorusLattice, f: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the endpoint values on each oriented edge."""
    f = np.asarray(f)
    return 0.5 * (f[lattice.nbr_plus] + f[np.newaxis, :])


def generator_apply(lattice: TorusLattice, omega_t: np.ndarray, f: np.ndarray,
                    check_positive: bool = True) -> np.ndarray:
    """Weighted graph generator (L f)(x) = sum_{y~x} w(x,y) (f(y) - f(x)).

    Identical, summand for summand, to -div(w * grad f); the fused form
    avoids one intermediate array.
    """
    omega_t = np.asarray(omega_t)
    if check_positive and not np.all(omega_t > 0):
        raise ValueError("degenerate conductance: weights must be strictly positive")
    p = omega_t * (np.asarray(f)[lattice.nbr_plus] - f[np.newaxis, :])
    return np.sum(p, axis=0) - np.sum(np.take_along_axis(p, lattice.nbr_minus, axis=1), axis=0)


def dirichlet_form(lattice: TorusLattice, omega_t: np.ndarray, f: np.ndarray,
                   g: np.ndarray | None = None) -> float:
    """Quadratic form E_t(f, g) = <grad f, w grad g>_E (g defaults to f)."""
    omega_t = np.asarray(omega_t)
    if not np.all(omega_t > 0):
        raise ValueError("degenerate conductance: weights must be strictly positive")
    gf = grad(lattice, f)
    gg = gf if g is None else grad(lattice, g)
    return float(np.sum(gf * omega_t * gg))


def measures_mu_nu(lattice: TorusLattice, omega_t: np.ndarray,
                   floor: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vertex measures mu(x) = sum_{y~x} w(x,y) and nu(x) = sum_{y~x} 1/w(x,y).

    With ``floor`` set, each is replaced by max(measure, 1).
    """
    omega_t = np.asarray(omega_t)
    if not np.all(omega_t > 0):
        raise ValueError("degenerate conductance: weights must be strictly positive")
    inv = 1.0 / omega_t
    mu = np.sum(omega_t, axis=0) + np.sum(np.take_along_axis(omega_t, lattice.nbr_minus, axis=1), axis=0)
    nu = np.sum(inv, axis=0) + np.sum(np.take_along_axis(inv, lattice.nbr_minus, axis=1), axis=0)
    if floor:
        mu = np.maximum(mu, 1.0)
        nu = np.maximum(nu, 1.0)
    return mu, nu


def displacement_gradient(lattice: TorusLattice, j: int) -> np.ndarray:
    """Edge field equal to the j-th coordinate increment along each edge.

    This is the gradient of the (torus-ill-defined) j-th coordinate map,
    which IS well defined edge-locally: +1 on direction-j edges, 0 else.
    """
    G = np.zeros((lattice.d, lattice.n_vertices))
    G[j] = 1.0
    return G


# ---------------------------------------------------------------------------
# space-time machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceTimeCylinder:
    """Parabolic window [t0, t0 + sigma n^2] x B(x0, sigma n)."""

    t0: float
    n: float
    x0: tuple
    sigma: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.sigma <= 1.0):
            raise ValueError(f"sigma must lie in (0, 1], got {self.sigma}")
        if self.n <= 0:
            raise ValueError(f"scale must be positive, got {self.n}")

    @property
    def t1(self) -> float:
        return self.t0 + self.sigma * self.n ** 2

    @property
    def radius(self) -> float:
        return self.sigma * self.n

    def shrink(self, sigma: float) -> "SpaceTimeCylinder":
        """Sub-cylinder with the same anchor and scale but smaller sigma."""
        if sigma > self.sigma:
            raise ValueError("shrink target exceeds current sigma")
        return SpaceTimeCylinder(self.t0, self.n, self.x0, sigma)

    def vertices(self, lattice: TorusLattice) -> np.ndarray:
        return ball(lattice, self.x0, self.radius)


@dataclass(frozen=True)
class NormSpec:
    """Exponent pair and region for a space-time averaged norm."""

    p: float
    p_prime: float
    region: SpaceTimeCylinder

    def __post_init__(self):
        if not (self.p > 0 and self.p_prime > 0):
            raise ValueError("norm exponents must be positive (inf allowed)")


@dataclass
class SpaceTimeField:
    """Real field on a uniform time grid times the torus.

    ``values[k]`` is the vertex field on the interval
    [t_start + k dt, t_start + (k+1) dt).
    """

    lattice: TorusLattice
    t_start: float
    dt: float
    values: np.ndarray  # (K, N)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.lattice.n_vertices:
            raise ValueError("space-time field values must have shape (K, N)")
        if self.dt <= 0:
            raise ValueError("time step must be positive")

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def t_end(self) -> float:
        return self.t_start + self.K * self.dt

    def slice_index(self, t: float) -> int:
        """Grid interval containing time t (right-continuous convention)."""
        k = int(math.floor((t - self.t_start) / self.dt + 1e-12))
        if k == self.K and abs(t - self.t_end) < 1e-9 * max(1.0, abs(t)):
            k -= 1  # closed right endpoint maps to the last interval
        if not (0 <= k < self.K):
            raise ValueError(f"time {t} outside field support [{self.t_start}, {self.t_end})")
        return k


def interval_weights(t_start: float, dt: float, K: int, a: float, b: float) -> np.ndarray:
    """Overlap length of [a, b] with each grid cell [t_start + k dt, +dt).

    Exact quadrature weights for integrating piecewise-constant functions
    of time: sum_k w_k u_k equals the integral of u over [a, b].
    """
    if b < a:
        raise ValueError("empty time interval")
    tol = 1e-9 * max(1.0, abs(a), abs(b))
    if a < t_start - tol or b > t_start + K * dt + tol:
        raise ValueError(
            f"interval [{a}, {b}] not covered by grid [{t_start}, {t_start + K * dt}]")
    lo = t_start + dt * np.arange(K)
    hi = lo + dt
    return np.maximum(np.minimum(b, hi) - np.maximum(a, lo), 0.0)


def _space_norm(block: np.ndarray, p: float) -> np.ndarray:
    """Averaged l^p norm over the last axis, for each time row."""
    if np.isinf(p):
        return np.max(np.abs(block), axis=-1)
    return np.mean(np.abs(block) ** p, axis=-1) ** (1.0 / p)


def spacetime_norm(u: SpaceTimeField, spec: NormSpec) -> float:
    """Space-time averaged norm of u over spec.region.

    ((1/|I|) int_I ((1/|B|) sum_B |u|^p)^(p'/p) dt)^(1/p'), with either
    exponent equal to inf realised as a maximum.  The time integral is an
    exact overlap-weighted sum over grid cells.
    """
    region = spec.region
    verts = region.vertices(u.lattice)
    if verts.size == 0:
        raise ValueError("empty spatial region")
    w = interval_weights(u.t_start, u.dt, u.K, region.t0, region.t1)
    active = w > 0
    if not np.any(active):
        raise ValueError("empty time region")
    block = u.values[np.ix_(active, verts)]
    per_time = _space_norm(block, spec.p)
    if np.isinf(spec.p_prime):
        return float(np.max(per_time))
    wa = w[active]
    total = wa.sum()
    return float(np.sum(wa * per_time ** spec.p_prime) / total) ** (1.0 / spec.p_prime)
