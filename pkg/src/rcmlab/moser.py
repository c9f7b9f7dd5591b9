"""Empirical verification of the Moser-iteration inequality chain.

Every inequality used by the iteration (Poincare, space-time Sobolev,
interpolation, the cutoff energy estimate, the maximal inequality, and the
discrete chain-rule bounds) is evaluated on concrete instances: both sides
are computed without unknown constants and the smallest constant making
the inequality hold is tracked.  Nothing is proved here; the product is a
corpus of ratios whose boundedness and stability in the scale n are what
the test suite asserts.

Parameter algebra: with Hoelder conjugates p_* = p/(p-1), p'_* = p'/(p'-1)
(both 1 at infinity) and rho = d'/(d'-2+d'/q), the iteration exponent is

    alpha = 1/p_* + (1/p'_*)(1 - 1/rho) q'/(q'+1),

which exceeds 1 exactly when (1/p) p'_* (q'+1)/q' + 1/q < 2/d'.  The
shrinking cylinders use sigma_k = sigma' + 2^{-k}(sigma - sigma') and
tau_k = 2^{-k-1}(sigma - sigma'), so sigma_k = sigma_{k+1} + tau_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .corrector import CorrectorSolution, harmonic_residual, phi_gradient
from .environment import ConductanceField, measure_fields
from .lattice import (NormSpec, SpaceTimeCylinder, SpaceTimeField,
                      TorusLattice, ball, dirichlet_form, edge_average, grad,
                      interval_weights, spacetime_norm)

__all__ = [
    "MoserParams", "CutoffPair", "rho", "iteration_constants",
    "poincare_check", "sobolev_check", "interpolation_check",
    "energy_estimate_check", "maximal_inequality_check",
    "tilde_pow", "appendix_inequality_suite", "build_cutoffs",
    "random_test_field",
]


def _conj(p: float) -> float:
    """Hoelder conjugate p/(p-1), equal to 1 at infinity."""
    return 1.0 if np.isinf(p) else p / (p - 1.0)


def _qweight(q_prime: float) -> float:
    """q'/(q'+1), equal to 1 at infinity."""
    return 1.0 if np.isinf(q_prime) else q_prime / (q_prime + 1.0)


def rho(d_prime: float, q: float) -> float:
    """Sobolev exponent d'/(d'-2+d'/q); q = inf requires d' > 2."""
    if d_prime < 2:
        raise ValueError("d' must be at least 2")
    if np.isinf(q):
        if d_prime <= 2:
            raise ValueError("q = inf requires d' > 2")
        return d_prime / (d_prime - 2.0)
    if q < 1:
        raise ValueError("q must be at least 1")
    return d_prime / (d_prime - 2.0 + d_prime / q)


@dataclass(frozen=True)
class MoserParams:
    """Moment exponents plus the cylinder-shrinking pair (sigma, sigma')."""

    p: float
    p_prime: float
    q: float
    q_prime: float
    d_prime: float = 2.0
    sigma: float = 1.0
    sigma_prime: float = 0.5

    def __post_init__(self):
        for name in ("p", "p_prime", "q", "q_prime"):
            if getattr(self, name) <= 1:
                raise ValueError(f"exponent {name} must exceed 1")
        if not (0.5 <= self.sigma_prime < self.sigma <= 1.0):
            raise ValueError("need 1/2 <= sigma' < sigma <= 1")
        if self.d_prime < 2:
            raise ValueError("d' must be at least 2")

    def condition_margin(self) -> float:
        """2/d' minus the exponent combination; positive iff admissible."""
        lhs = ((0.0 if np.isinf(self.p) else 1.0 / self.p)
               * _conj(self.p_prime) / _qweight(self.q_prime)
               + (0.0 if np.isinf(self.q) else 1.0 / self.q))
        return 2.0 / self.d_prime - lhs

    def sigma_k(self, k: int) -> float:
        return self.sigma_prime + 2.0 ** (-k) * (self.sigma - self.sigma_prime)

    def tau_k(self, k: int) -> float:
        return 2.0 ** (-k - 1) * (self.sigma - self.sigma_prime)


def iteration_constants(params: MoserParams, n: float) -> dict:
    """All derived constants of the iteration at scale n.

    Returns rho, alpha, the schedules (alpha_k, sigma_k, tau_k) up to the
    stopping index K_stop (first k with alpha^k >= ln n), kappa = half the
    geometric sum of 1/alpha_k, the exponent gamma both as partial product
    to K_stop and as infinite-product limit, and the norm threshold
    beta = 2 rho max(1, p'_*/p_*) below which the Hoelder bootstrap is
    needed.  Raises if the exponent condition fails, reporting the margin.
    """
    margin = params.condition_margin()
    if margin <= 0:
        raise ValueError(f"exponent condition violated by margin {-margin:.6g}")
    r = rho(params.d_prime, params.q)
    p_star = _conj(params.p)
    pp_star = _conj(params.p_prime)
    alpha = 1.0 / p_star + (1.0 / pp_star) * (1.0 - 1.0 / r) * _qweight(params.q_prime)
    if not alpha > 1.0:
        raise AssertionError("alpha must exceed 1 under the exponent condition")
    if alpha * p_star > r + 1e-12:
        raise AssertionError("alpha p_* <= rho violated")
    if not alpha * pp_star > _qweight(params.q_prime):
        raise AssertionError("alpha p'_* > q'/(q'+1) violated")

    log_target = math.log(max(n, 1.0 + 1e-12))
    k_stop = 0
    while alpha ** k_stop < log_target:
        k_stop += 1
    ks = np.arange(k_stop + 1)
    alpha_k = alpha ** ks
    sigma_k = np.array([params.sigma_k(int(k)) for k in ks])
    tau_k = np.array([params.tau_k(int(k)) for k in ks])

    kappa = 0.5 * alpha / (alpha - 1.0)        # (1/2) sum_{k>=0} alpha^-k
    gamma_partial = float(np.prod(1.0 - 1.0 / alpha ** np.arange(1, k_stop + 1))) \
        if k_stop >= 1 else 1.0
    # infinite product converges geometrically; extend until machine精度
    gamma_limit = gamma_partial
    k = k_stop + 1
    while True:
        factor = 1.0 - alpha ** (-k)
        new = gamma_limit * factor
        if abs(new - gamma_limit) <= 1e-16 * abs(new) or k > 10_000:
            gamma_limit = new
            break
        gamma_limit = new
        k += 1
    beta_threshold = 2.0 * r * max(1.0, pp_star / p_star)
    return {
        "rho": r, "alpha": alpha, "p_star": p_star, "pp_star": pp_star,
        "q_weight": _qweight(params.q_prime), "margin": margin,
        "K_stop": k_stop, "alpha_k": alpha_k, "sigma_k": sigma_k,
        "tau_k": tau_k, "kappa": kappa,
        "gamma_partial": gamma_partial, "gamma": gamma_limit,
        "beta_threshold": beta_threshold,
    }


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

@dataclass
class CutoffPair:
    """Space cutoff eta (vertex field) and time cutoff zeta (piecewise linear).

    eta ramps from 1 on B_{k+1} down to 0 with slope exactly 1/(tau_k n)
    per unit graph distance, vanishing on the boundary sphere of B_k; zeta
    is 1 up to t0 + sigma_{k+1} n^2, then falls linearly to 0 at
    t0 + sigma_k n^2.  The a.e. derivative bound |zeta'| <= 1/(tau_k n^2)
    is attained exactly on the ramp.
    """

    eta: np.ndarray
    k: int
    n: float
    tau: float
    r_inner: int
    r_outer: int
    t_flat_end: float
    t_zero: float

    def zeta(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        ramp = (self.t_zero - t) / (self.t_zero - self.t_flat_end)
        return np.clip(np.where(t <= self.t_flat_end, 1.0, ramp), 0.0, 1.0)

    def zeta_slope(self, t) -> np.ndarray:
        """A.e. derivative of zeta."""
        t = np.asarray(t, dtype=float)
        inside = (t > self.t_flat_end) & (t < self.t_zero)
        return np.where(inside, -1.0 / (self.t_zero - self.t_flat_end), 0.0)


def build_cutoffs(k: int, params: MoserParams, n: float, lattice: TorusLattice,
                  t0: float = 0.0, x0=None) -> CutoffPair:
    """Cutoff pair for iteration step k on the cylinder hierarchy at scale n.

    Raises when the integer ball radii cannot accommodate a ramp of slope
    1/(tau_k n) (degenerate geometry at small n), or when the outer ball
    would wrap the torus.
    """
    if x0 is None:
        x0 = (0,) * lattice.d
    sig_k, sig_k1, tau = params.sigma_k(k), params.sigma_k(k + 1), params.tau_k(k)
    if sig_k * n >= lattice.L / 2:
        raise ValueError("outer cutoff ball wraps the torus")
    r_outer = math.floor(sig_k * n)
    r_inner = math.floor(sig_k1 * n)
    if r_inner + tau * n > r_outer + 1e-12:
        raise ValueError(
            f"cutoff geometry violation at k={k}: ramp of width {tau * n:.3g} "
            f"does not fit between radii {r_inner} and {r_outer}")
    dist = lattice.distance_field(x0)
    eta = np.clip((r_inner + tau * n - dist) / (tau * n), 0.0, 1.0)
    eta[dist >= r_outer] = 0.0  # redundant given the fit check; keeps it exact
    return CutoffPair(eta=eta, k=k, n=n, tau=tau, r_inner=r_inner,
                      r_outer=r_outer,
                      t_flat_end=t0 + sig_k1 * n ** 2,
                      t_zero=t0 + sig_k * n ** 2)


# ---------------------------------------------------------------------------
# inequality evaluations
# ---------------------------------------------------------------------------

def poincare_check(lattice: TorusLattice, u: np.ndarray, center, radius: float) -> dict:
    """Strong l1 Poincare inequality on a lattice ball.

    lhs = sum_{x in B} |u(x) - mean_B(u)|, rhs = r * sum over edges inside
    B of |u(x) - u(y)| (each unordered edge once).  The ratio lhs/rhs is
    bounded by a dimension-only constant over any corpus.
    """
    verts = ball(lattice, center, radius)
    inside = np.zeros(lattice.n_vertices, dtype=bool)
    inside[verts] = True
    mean = float(np.mean(u[verts]))
    lhs = float(np.abs(u[verts] - mean).sum())
    g = np.abs(grad(lattice, u))
    both = inside[np.newaxis, :] & inside[lattice.nbr_plus]
    rhs = float(radius * g[both].sum())
    ratio = 0.0 if lhs == 0 else (math.inf if rhs == 0 else lhs / rhs)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def _boundary_mask(lattice: TorusLattice, verts: np.ndarray) -> np.ndarray:
    inside = np.zeros(lattice.n_vertices, dtype=bool)
    inside[verts] = True
    has_out = np.zeros(lattice.n_vertices, dtype=bool)
    for i in range(lattice.d):
        has_out |= inside & ~inside[lattice.nbr_plus[i]]
        has_out |= inside & ~inside[lattice.nbr_minus[i]]
    return has_out


def _require_support(u: SpaceTimeField, Q: SpaceTimeCylinder):
    lat = u.lattice
    verts = Q.vertices(lat)
    inside = np.zeros(lat.n_vertices, dtype=bool)
    inside[verts] = True
    support_ok = np.all(u.values[:, ~inside] == 0.0)
    boundary = _boundary_mask(lat, verts)
    support_ok &= np.all(u.values[:, boundary] == 0.0)
    w = interval_weights(u.t_start, u.dt, u.K, Q.t0, Q.t1)
    support_ok &= np.all(u.values[w == 0.0] == 0.0)
    if not support_ok:
        raise ValueError("test function must vanish outside the cylinder and on the boundary sphere")


def sobolev_check(u: SpaceTimeField, omega: ConductanceField,
                  Q: SpaceTimeCylinder, q: float, q_prime: float,
                  d_prime: float | None = None) -> dict:
    """Local space-time Sobolev inequality on the cylinder Q.

    lhs = |u^2|_{rho, q'/(q'+1), Q};
    rhs = n^2 |1 v nu|_{q, q', Q} * (1/|I|) int_I E_t(u_t)/|B| dt,
    for u supported strictly inside Q.  The ratio is the empirical Sobolev
    constant of the instance.
    """
    _require_support(u, Q)
    lat = u.lattice
    if d_prime is None:
        d_prime = lat.d
    r = rho(d_prime, q)
    u2 = SpaceTimeField(lat, u.t_start, u.dt, u.values ** 2)
    lhs = spacetime_norm(u2, NormSpec(r, _qweight(q_prime), Q))
    _, nu_field = measure_fields(omega, floor=True)
    nu_norm = spacetime_norm(nu_field, NormSpec(q, q_prime, Q))
    verts = Q.vertices(lat)
    w = interval_weights(u.t_start, u.dt, u.K, Q.t0, Q.t1)
    active = np.flatnonzero(w)
    energy = 0.0
    for k in active:
        energy += w[k] * dirichlet_form(lat, omega.values[k % omega.K], u.values[k])
    energy /= w.sum() * len(verts)
    rhs = Q.radius ** 2 * nu_norm * energy
    ratio = 0.0 if lhs == 0 else (math.inf if rhs == 0 else lhs / rhs)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "rho": r}


def interpolation_check(u: SpaceTimeField, rho_val: float, q_prime: float,
                        gamma1: float, gamma2: float,
                        Q: SpaceTimeCylinder) -> dict:
    """Norm interpolation |u|_{g1,g2,Q} <= |u|_{1,inf,Q} + |u|_{rho,qw,Q}.

    Requires 1 < gamma1 <= rho, q'/(q'+1) <= gamma2 < inf and the exponent
    balance 1/g1 + (1/g2)(1 - 1/rho) q'/(q'+1) = 1 to within 1e-12.
    """
    qw = _qweight(q_prime)
    if not (1.0 < gamma1 <= rho_val + 1e-12):
        raise ValueError("gamma1 must lie in (1, rho]")
    if not (qw - 1e-12 <= gamma2 < math.inf):
        raise ValueError("gamma2 must lie in [q'/(q'+1), inf)")
    balance = 1.0 / gamma1 + (1.0 / gamma2) * (1.0 - 1.0 / rho_val) * qw
    if abs(balance - 1.0) > 1e-12:
        raise ValueError(f"exponent balance violated: {balance} != 1")
    lhs = spacetime_norm(u, NormSpec(gamma1, gamma2, Q))
    rhs = (spacetime_norm(u, NormSpec(1.0, math.inf, Q))
           + spacetime_norm(u, NormSpec(rho_val, qw, Q)))
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs <= rhs * (1 + 1e-12))}


def energy_estimate_check(u: SpaceTimeField, omega: ConductanceField,
                          cutoffs: CutoffPair, alpha: float,
                          p: float, p_prime: float, Q: SpaceTimeCylinder,
                          grad_f: np.ndarray, residual_tol: float = 1e-6) -> dict:
    """Cutoff energy estimate for solutions of (d/dt + L_t) u = div*(w grad f).

    Both sides are evaluated with the solver's grid quadrature (zeta and
    zeta' at interval left endpoints).  LHS is the parabolic energy of
    tilde u^alpha = |u|^alpha sign(u) under the cutoffs; the three RHS
    groups carry |1 v mu|_{p,p',Q} times the cutoff/drift sup-norms times
    |u|^{2 alpha - m} norms (m = 0, 1, 2) at the conjugate exponents.  The
    report includes the smallest admissible constant lhs/rhs.
    """
    if alpha < 1.0:
        raise ValueError("alpha must be at least 1")
    lat = u.lattice
    _check_is_solution(u, omega, grad_f, residual_tol)
    verts = Q.vertices(lat)
    w = interval_weights(u.t_start, u.dt, u.K, Q.t0, Q.t1)
    active = np.flatnonzero(w)
    t_left = u.t_start + u.dt * active
    zeta = cutoffs.zeta(t_left)
    zeta_slope_max = float(np.abs(cutoffs.zeta_slope(t_left)).max())
    eta = cutoffs.eta
    eta_sq_av = edge_average(lat, eta ** 2)

    util = tilde_pow(u.values, alpha)
    lhs_sup = 0.0
    lhs_energy = 0.0
    for z, k in zip(zeta, active):
        block = (eta[verts] * util[k, verts]) ** 2
        lhs_sup = max(lhs_sup, z * float(block.mean()))
        g = grad(lat, util[k])
        lhs_energy += w[k] * z * float(np.sum(g * eta_sq_av * omega.values[k % omega.K] * g))
    total_time = w.sum()
    lhs_energy /= total_time * len(verts)
    # |I| multiplies both normalised terms down by the same convention
    lhs = lhs_sup / total_time + lhs_energy / total_time

    mu_field, _ = measure_fields(omega, floor=True)
    mu_norm = spacetime_norm(mu_field, NormSpec(p, p_prime, Q))
    p_star, pp_star = _conj(p), _conj(p_prime)
    grad_eta = grad(lat, eta)
    grad_eta_max = float(np.abs(grad_eta).max())
    cross_max = float(np.abs(grad_eta * grad_f).max())
    grad_f_max = float(np.abs(grad_f).max())

    absu = np.abs(u.values)
    norms = {}
    for m in (0, 1, 2):
        power = SpaceTimeField(lat, u.t_start, u.dt, absu ** (2 * alpha - m))
        norms[m] = spacetime_norm(power, NormSpec(p_star, pp_star, Q))
    a2 = alpha ** 2
    rhs_groups = (
        a2 * mu_norm * (grad_eta_max ** 2 + zeta_slope_max) * norms[0],
        a2 * mu_norm * cross_max * norms[1],
        a2 * mu_norm * grad_f_max ** 2 * norms[2],
    )
    rhs = float(sum(rhs_groups))
    c2 = 0.0 if lhs == 0 else (math.inf if rhs == 0 else lhs / rhs)
    return {"lhs_sup": lhs_sup / total_time, "lhs_energy": lhs_energy / total_time,
            "lhs": lhs, "rhs_groups": rhs_groups, "rhs": rhs, "c2": c2}


def _check_is_solution(u: SpaceTimeField, omega: ConductanceField,
                       grad_f: np.ndarray, tol: float):
    """Max-norm residual of (u_{k+1}-u_k)/dt + L u_{k+1} = div*(w grad f)."""
    from .lattice import div
    lat = u.lattice
    worst = 0.0
    for k in range(u.K):
        kp = (k + 1) % u.K
        wk = omega.values[k % omega.K]
        lhs = (u.values[kp] - u.values[k]) / u.dt - div(lat, wk * grad(lat, u.values[kp]))
        rhs = div(lat, wk * grad_f)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    if worst > tol:
        raise ValueError(f"field does not solve the drift equation: residual {worst:.3e}")


def maximal_inequality_check(omega: ConductanceField, n: float,
                             params: MoserParams, alpha_norm: float,
                             sol: CorrectorSolution | None = None,
                             j: int = 0, tol: float = 1e-9) -> dict:
    """Maximal inequality for the rescaled corrector u = chi^j / n.

    lhs = max over Q(sigma' n) of |u|; rhs is the moment functional
    (|1 v mu| |1 v nu| / (sigma - sigma')^2)^kappa |u|_{a,a,Q(sigma n)}^gamma
    with all norms over the anchored cylinders and (kappa, gamma) from the
    iteration constants.  The ratio must stay bounded as n grows.
    """
    consts = iteration_constants(params, n)
    lat = omega.lattice
    if sol is None:
        from .corrector import _solve_for_field
        sol = _solve_for_field(omega, tol)
    u_vals = sol.chi[:, :, j] / n
    u = SpaceTimeField(lat, sol.t_start, sol.dt, u_vals)

    x0 = (0,) * lat.d
    Q_full = SpaceTimeCylinder(omega.t_start, n, x0, 1.0)
    Q_sig = SpaceTimeCylinder(omega.t_start, n, x0, params.sigma)
    Q_in = SpaceTimeCylinder(omega.t_start, n, x0, params.sigma_prime)

    lhs = spacetime_norm(u, NormSpec(math.inf, math.inf, Q_in))
    mu_field, nu_field = measure_fields(omega, floor=True)
    mu_norm = spacetime_norm(mu_field, NormSpec(params.p, params.p_prime, Q_full))
    nu_norm = spacetime_norm(nu_field, NormSpec(params.q, params.q_prime, Q_full))
    base_norm = spacetime_norm(u, NormSpec(alpha_norm, alpha_norm, Q_sig))
    functional = ((mu_norm * nu_norm / (params.sigma - params.sigma_prime) ** 2)
                  ** consts["kappa"]) * base_norm ** consts["gamma"]
    ratio = 0.0 if lhs == 0 else (math.inf if functional == 0 else lhs / functional)
    return {"lhs": lhs, "rhs_functional": functional, "ratio": ratio,
            "mu_norm": mu_norm, "nu_norm": nu_norm,
            "kappa": consts["kappa"], "gamma": consts["gamma"],
            "alpha_norm": alpha_norm, "n": n, "residual": sol.residual}


# ---------------------------------------------------------------------------
# discrete chain-rule bounds
# ---------------------------------------------------------------------------

def tilde_pow(a, alpha: float):
    """Signed power |a|^alpha sign(a)."""
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.abs(a) ** alpha


def appendix_inequality_suite(trials: int, seed: int) -> dict:
    """Randomised verification of the three discrete chain-rule bounds.

    Sampling ranges (documented so corpora are reproducible by seed):
    values a, b uniform on [-3, 3]; exponents alpha, beta uniform on
    [0.2, 4], restricted per inequality to its validity range; for the
    power-difference bound (i) the magnitudes are bounded away from zero
    (|a|, |b| >= 0.01) because alpha - beta may be negative.

    (i)   |ta^a - tb^a| <= (1 v |a/b|) |ta^b - tb^b| (|a|^{a-b} + |b|^{a-b})
    (ii)  (ta^a - tb^a)^2 <= |a^2/(2a-1)| (a - b)(ta^{2a-1} - tb^{2a-1}),
          for alpha > 1/2; for nonnegative arguments and alpha outside
          {0, 1/2} the same bound holds with both right factors in
          absolute value (the product itself is what appears for
          alpha > 1/2, where it is automatically nonnegative)
    (iii) (|a|^{2a-1} + |b|^{2a-1}) |a-b| <= 4 |ta^a - tb^a| (|a|^a + |b|^a)

    Returns per-inequality counts of violations (beyond a 1e-12 relative
    rounding allowance) and the worst observed ratio.
    """
    gen = _rng.stream(seed, "appendix")
    out = {}
    slack = 1e-12

    def _report(name, lhs, rhs):
        with np.errstate(invalid="ignore"):
            bad = lhs > rhs * (1 + slack) + 1e-300
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
        out[name] = {"trials": int(lhs.size), "violations": int(np.count_nonzero(bad)),
                     "max_ratio": float(np.nanmax(ratio))}

    # (i) power difference
    a = gen.uniform(-3, 3, trials)
    b = gen.uniform(-3, 3, trials)
    a = np.where(np.abs(a) < 0.01, np.sign(a) * 0.01 + (a == 0) * 0.01, a)
    b = np.where(np.abs(b) < 0.01, np.sign(b) * 0.01 + (b == 0) * 0.01, b)
    al = gen.uniform(0.2, 4.0, trials)
    be = gen.uniform(0.2, 4.0, trials)
    lhs = np.abs(tilde_pow(a, al) - tilde_pow(b, al))
    rhs = (np.maximum(1.0, np.abs(al / be)) * np.abs(tilde_pow(a, be) - tilde_pow(b, be))
           * (np.abs(a) ** (al - be) + np.abs(b) ** (al - be)))
    _report("power_difference", lhs, rhs)

    # (ii) polarisation, alpha > 1/2, real arguments
    a = gen.uniform(-3, 3, trials)
    b = gen.uniform(-3, 3, trials)
    al = gen.uniform(0.501, 4.0, trials)
    lhs = (tilde_pow(a, al) - tilde_pow(b, al)) ** 2
    rhs = (np.abs(al ** 2 / (2 * al - 1)) * (a - b)
           * (tilde_pow(a, 2 * al - 1) - tilde_pow(b, 2 * al - 1)))
    _report("polarisation", lhs, rhs)

    # (ii') nonnegative branch, alpha outside {0, 1/2}
    a = gen.uniform(0, 3, trials)
    b = gen.uniform(0, 3, trials)
    al = gen.uniform(0.05, 4.0, trials)
    al = np.where(np.abs(al - 0.5) < 1e-3, 0.6, al)
    lhs = (tilde_pow(a, al) - tilde_pow(b, al)) ** 2
    rhs = (np.abs(al ** 2 / (2 * al - 1)) * np.abs(a - b)
           * np.abs(tilde_pow(a, 2 * al - 1) - tilde_pow(b, 2 * al - 1)))
    _report("polarisation_nonneg", lhs, rhs)

    # (iii) chain-rule lower bound
    a = gen.uniform(-3, 3, trials)
    b = gen.uniform(-3, 3, trials)
    al = gen.uniform(0.5, 4.0, trials)
    lhs = (np.abs(a) ** (2 * al - 1) + np.abs(b) ** (2 * al - 1)) * np.abs(a - b)
    rhs = 4.0 * np.abs(tilde_pow(a, al) - tilde_pow(b, al)) * (np.abs(a) ** al + np.abs(b) ** al)
    _report("chain_rule", lhs, rhs)

    out["total_violations"] = sum(v["violations"] for v in out.values()
                                  if isinstance(v, dict))
    return out


# ---------------------------------------------------------------------------
# reproducible test-function corpora
# ---------------------------------------------------------------------------

def random_test_field(lattice: TorusLattice, omega: ConductanceField,
                      Q: SpaceTimeCylinder, seed: int,
                      kind: str = "gaussian") -> SpaceTimeField:
    """Reproducible compactly supported test function on the cylinder.

    "gaussian": white noise on the interior of B, mollified by two
    applications of the lazy random-walk averaging operator built from the
    generator (P f = f + L f / (2 max mu)), re-zeroed outside; "spike": a
    handful of unit impulses at interior vertices.  Either kind vanishes
    on the boundary sphere of B and outside the time window.
    """
    gen = _rng.stream(seed, "testfield", kind)
    verts = Q.vertices(lattice)
    inside = np.zeros(lattice.n_vertices, dtype=bool)
    inside[verts] = True
    inside[_boundary_mask(lattice, verts)] = False
    w = interval_weights(omega.t_start, omega.dt, omega.K, Q.t0, Q.t1)
    vals = np.zeros((omega.K, lattice.n_vertices))
    interior = np.flatnonzero(inside)
    if interior.size == 0:
        raise ValueError("cylinder has empty interior")
    active = np.flatnonzero(w)
    if kind == "gaussian":
        from .lattice import generator_apply
        for k in active:
            f = np.zeros(lattice.n_vertices)
            f[interior] = gen.normal(size=interior.size)
            wk = omega.values[k % omega.K]
            top = 2.0 * float(omega.mu_nu(int(k) % omega.K)[0].max())
            for _ in range(2):
                f = f + generator_apply(lattice, wk, f) / top
                f[~inside] = 0.0
            vals[k] = f
    elif kind == "spike":
        for k in active:
            hits = gen.choice(interior, size=max(1, interior.size // 16), replace=False)
            vals[k, hits] = gen.uniform(1.0, 5.0, size=hits.size) * gen.choice([-1.0, 1.0], size=hits.size)
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    return SpaceTimeField(lattice, omega.t_start, omega.dt, vals)
