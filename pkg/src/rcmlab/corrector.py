"""Harmonic coordinates and the corrector on the space-time torus.

The corrector chi makes Phi = Pi - chi space-time harmonic:
(d/dt + L_t) Phi = 0, i.e. chi solves the time-inhomogeneous Poisson
equation (d/dt + L_t) u = L_t Pi.  The coordinate map Pi is not defined on
the torus, but its edge gradient is (+1 on direction-j edges), so the
right-hand side L_t Pi = -div(w_t grad Pi^j) is torus-exact.

Discretisation: implicit Euler on the field's own time grid with periodic
closure,

    (u_{k+1} - u_k) + dt L_{t_k} u_{k+1} = dt b_k,      u_K = u_0,

whose residual is what ``harmonic_residual`` measures.  The assembled
system is solved matrix-free by restarted GMRES, preconditioned by the
exact inverse of the time-averaged-coefficient operator (block-diagonal
after a Fourier transform in time; one complex sparse factorisation per
time frequency).  The kernel of the scheme is the space-time constant,
removed by projection and a final zero-mean gauge per slice.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rng as _rng
from .environment import ConductanceField, EnvironmentModel, sample_environment
from .lattice import (SpaceTimeCylinder, TorusLattice, ball,
                      displacement_gradient, div, grad)
from .walker import JumpTables, simulate_ensemble, simulate_vsrw

__all__ = [
    "CorrectorSolution", "solve_poisson_time_periodic", "solve_static_corrector",
    "solve_regularized", "harmonic_residual", "sublinearity_profile",
    "martingale_check", "covariance_estimate", "covariance_empirical",
    "corrector_control", "laplacian_matrix", "rhs_divergence", "phi_gradient",
]


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------

def laplacian_matrix(lat: TorusLattice, w: np.ndarray) -> sp.csr_matrix:
    """Sparse PSD operator div(w grad .) = -generator, for edge weights (d, N)."""
    N = lat.n_vertices
    tail = np.arange(N)
    rows, cols, data = [], [], []
    for i in range(lat.d):
        head = lat.nbr_plus[i]
        we = np.asarray(w[i], dtype=float)
        rows += [tail, head, tail, head]
        cols += [tail, head, head, tail]
        data += [we, we, -we, -we]
    return sp.csr_matrix((np.concatenate(data),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def rhs_divergence(omega: ConductanceField, j: int) -> np.ndarray:
    """(K, N) values of L_t Pi^j = -div(w_t grad Pi^j) per time slice."""
    dPi = displacement_gradient(omega.lattice, j)
    return np.stack([-div(omega.lattice, omega.values[k] * dPi)
                     for k in range(omega.K)])


@dataclass
class CorrectorSolution:
    """Corrector field with solver metadata.

    ``chi[k, x, j]`` is the j-th corrector coordinate on time slice k.
    ``gauge`` records the per-slice means subtracted to pin the additive
    constant; gradients and increments are gauge-independent.
    """

    lattice: TorusLattice
    t_start: float
    dt: float
    chi: np.ndarray                 # (K, N, d)
    residual: float
    tol: float
    gauge: np.ndarray               # (K, d)
    beta: float = 0.0
    iterations: int = 0
    method: str = "time_periodic"
    mass_drift: float = 0.0
    extras: dict = dfield(default_factory=dict)

    @property
    def K(self) -> int:
        return self.chi.shape[0]

    def chi_abs(self) -> np.ndarray:
        """(K, N) Euclidean norm of the corrector vector."""
        return np.linalg.norm(self.chi, axis=2)

    def chi_at(self, t: float, coords) -> np.ndarray:
        k = int(math.floor((t - self.t_start) / self.dt + 1e-12)) % self.K
        return self.chi[k, self.lattice.vertex_index(coords)]


def phi_gradient(sol: CorrectorSolution, j: int) -> np.ndarray:
    """(K, d, N) edge gradient of the harmonic coordinate Phi^j = Pi^j - chi^j."""
    lat = sol.lattice
    dPi = displacement_gradient(lat, j)
    return np.stack([dPi - grad(lat, sol.chi[k, :, j]) for k in range(sol.K)])


# ---------------------------------------------------------------------------
# time-periodic solver
# ---------------------------------------------------------------------------

class _PeriodicOperator:
    """Matrix-free space-time operator and its frequency-space preconditioner."""

    def __init__(self, omega: ConductanceField):
        if not omega.periodic:
            raise ValueError("time-periodic solve requires a periodic field")
        self.omega = omega
        lat = omega.lattice
        self.K, self.N = omega.K, lat.n_vertices
        self.dt = omega.dt
        self.lat = lat
        self._nbr_minus_b = np.broadcast_to(lat.nbr_minus, (self.K, lat.d, self.N))
        self._lus = None

    def apply(self, u: np.ndarray) -> np.ndarray:
        U = u.reshape(self.K, self.N)
        Up = np.roll(U, -1, axis=0)
        vals = self.omega.values
        p = vals * (Up[:, self.lat.nbr_plus] - Up[:, None, :])
        Lu = p.sum(axis=1) - np.take_along_axis(p, self._nbr_minus_b, axis=2).sum(axis=1)
        return (Up - U + self.dt * Lu).ravel()

    def _build_preconditioner(self):
        wbar = self.omega.values.mean(axis=0)
        G = laplacian_matrix(self.lat, wbar).tocsc()
        eye = sp.identity(self.N, format="csc")
        lus = []
        for th in 2 * np.pi * np.fft.fftfreq(self.K):
            z = np.exp(1j * th)
            block = (z - 1) * eye - self.dt * z * G
            if abs(th) < 1e-14:
                block = block - 1e-8 * self.dt * eye  # kernel shift; mean is projected anyway
            lus.append(spla.splu(block.astype(np.complex128)))
        self._lus = lus

    def precondition(self, v: np.ndarray) -> np.ndarray:
        if self._lus is None:
            self._build_preconditioner()
        V = v.reshape(self.K, self.N) - v.mean()
        Vh = np.fft.fft(V, axis=0)
        out = np.empty_like(Vh)
        for k in range(self.K):
            out[k] = self._lus[k].solve(Vh[k])
        res = np.fft.ifft(out, axis=0).real
        return (res - res.mean()).ravel()


def _gmres_to_tolerance(op: _PeriodicOperator, rhs: np.ndarray, tol: float,
                        maxiter: int = 400) -> tuple[np.ndarray, int]:
    """Iterate until the pde-form residual max|A u - rhs|/dt <= tol."""
    n = rhs.size
    A = spla.LinearOperator((n, n), matvec=op.apply)
    M = spla.LinearOperator((n, n), matvec=op.precondition)
    iters = [0]

    def cb(_):
        iters[0] += 1

    atol = 0.5 * tol * op.dt
    x = np.zeros(n)
    for _ in range(3):
        x, info = spla.gmres(A, rhs, x0=x, M=M, rtol=0.0, atol=atol,
                             restart=40, maxiter=maxiter, callback=cb,
                             callback_type="pr_norm")
        res = np.abs(op.apply(x) - rhs).max() / op.dt
        if res <= tol:
            return x, iters[0]
        atol *= 0.05
    raise RuntimeError(
        f"corrector solve did not reach tolerance {tol:.1e}; residual {res:.3e}")


def solve_poisson_time_periodic(omega: ConductanceField, tol: float = 1e-10,
                                maxiter: int = 400) -> CorrectorSolution:
    """Corrector on the space-time torus for every coordinate direction.

    Solves (u_{k+1} - u_k)/dt + L_{t_k} u_{k+1} = L_{t_k} Pi^j with periodic
    closure and per-slice zero-mean gauge.  The scheme conserves spatial
    mass analytically (slice sums of the ungauged solution agree up to the
    solver residual; the recorded drift quantifies it).
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    op = _PeriodicOperator(omega)
    lat = omega.lattice
    K, N = op.K, op.N
    chi = np.zeros((K, N, lat.d))
    iterations = 0
    residual = 0.0
    mass_drift = 0.0
    for j in range(lat.d):
        b = rhs_divergence(omega, j)
        rhs = (op.dt * b).ravel()
        if np.abs(rhs).max() == 0.0:
            continue
        u, its = _gmres_to_tolerance(op, rhs, tol, maxiter=maxiter)
        iterations += its
        U = u.reshape(K, N)
        sums = U.sum(axis=1)
        mass_drift = max(mass_drift, float(np.ptp(sums)) / N)
        residual = max(residual, float(np.abs(op.apply(u) - rhs).max() / op.dt))
        chi[:, :, j] = U
    gauge = chi.mean(axis=1)
    chi -= gauge[:, None, :]
    return CorrectorSolution(lat, omega.t_start, omega.dt, chi,
                             residual=residual, tol=tol, gauge=gauge,
                             iterations=iterations, method="time_periodic",
                             mass_drift=mass_drift)


# ---------------------------------------------------------------------------
# static solver (conjugate gradients)
# ---------------------------------------------------------------------------

def solve_static_corrector(omega: ConductanceField, tol: float = 1e-10,
                           maxiter: int = 20000) -> CorrectorSolution:
    """Corrector of a time-constant field: div(w grad chi^j) = div(w grad Pi^j).

    The operator is symmetric positive semidefinite; conjugate gradients on
    the zero-mean subspace, preconditioned by the constant-coefficient
    inverse (FFT symbol of the mean conductance), to max-norm residual
    <= tol.
    """
    if not omega.time_constant:
        raise ValueError("static solve requires a time-constant field")
    lat = omega.lattice
    N = lat.n_vertices
    w = omega.values[0]

    def apply_G(f):
        p = w * (f[lat.nbr_plus] - f[np.newaxis, :])
        return np.take_along_axis(p, lat.nbr_minus, axis=1).sum(axis=0) - p.sum(axis=0)

    # FFT symbol of div(wbar grad .)
    wbar = float(w.mean())
    s = np.zeros(lat.shape)
    for i in range(lat.d):
        freq = 2.0 - 2.0 * np.cos(2 * np.pi * np.fft.fftfreq(lat.L))
        shape = [1] * lat.d
        shape[i] = lat.L
        s = s + freq.reshape(shape)
    sym = wbar * s
    sym.ravel()[0] = 1.0

    def precond(v):
        V = v.reshape(lat.shape)
        out = np.fft.ifftn(np.fft.fftn(V) / sym).real.ravel()
        return out - out.mean()

    A = spla.LinearOperator((N, N), matvec=apply_G)
    M = spla.LinearOperator((N, N), matvec=precond)

    chi = np.zeros((1, N, lat.d))
    counter = [0]

    def _count(_):
        counter[0] += 1

    residual = 0.0
    for j in range(lat.d):
        r = div(lat, w * displacement_gradient(lat, j))
        if np.abs(r).max() == 0.0:
            continue
        atol = 0.5 * tol
        x = np.zeros(N)
        ok = False
        for _ in range(3):
            x, _info = spla.cg(A, r, x0=x, M=M, rtol=0.0, atol=atol,
                               maxiter=maxiter, callback=_count)
            res = float(np.abs(apply_G(x) - r).max())
            if res <= tol:
                ok = True
                break
            atol *= 0.05
        if not ok:
            raise RuntimeError(f"static corrector CG stalled at residual {res:.3e}")
        residual = max(residual, res)
        chi[0, :, j] = x - x.mean()
    iterations = counter[0]
    # replicate across the field's grid so residual checks see one object
    chi = np.broadcast_to(chi, (omega.K, N, lat.d)).copy()
    gauge = chi.mean(axis=1)
    chi -= gauge[:, None, :]
    return CorrectorSolution(lat, omega.t_start, omega.dt, chi,
                             residual=residual, tol=tol, gauge=gauge,
                             iterations=iterations, method="static_cg")


# ---------------------------------------------------------------------------
# regularised space-time solver
# ---------------------------------------------------------------------------

def solve_regularized(omega: ConductanceField, beta: float,
                      tol: float = 1e-10) -> CorrectorSolution:
    """Coercive regularisation of the corrector equation.

    With D the w-weighted spatial gradient pairing and D0 the centred
    periodic time difference, solves for each coordinate j

        2 G_k psi - 2 D0 psi + beta D0^T D0 psi + beta psi = 2 div(w grad Pi^j),

    the Euler-Lagrange system of the quadratic form
    <D psi, D psi> - 2 <D0 psi, psi> + beta(<D0 psi, D0 psi> + <psi, psi>).
    The beta terms make the form coercive, so the system is nonsingular;
    as beta -> 0 the spatial gradient approaches the gradient of the
    time-periodic corrector (the beta = 0 system is the centred-difference
    Poisson equation).

    The discrete energy bound is evaluated and returned in ``extras``:
    |D psi|_m^2 + beta |D0 psi|^2 + beta |psi|^2 <= mean(mu), with the
    m-scalar product the conductance-weighted space-time average.
    """
    if beta <= 0:
        raise ValueError("regularisation parameter must be positive")
    if not omega.periodic:
        raise ValueError("regularised solve requires a periodic field")
    lat = omega.lattice
    K, N = omega.K, lat.n_vertices
    if K * N > 250_000:
        raise RuntimeError("regularised solve is assembled densely in time; instance too large")
    dt = omega.dt

    blocks = [laplacian_matrix(lat, omega.values[k]) for k in range(K)]
    G = sp.block_diag(blocks, format="csc")
    # centred periodic time difference (antisymmetric); vanishes for K <= 2
    shift = sp.csr_matrix((np.ones(K), (np.arange(K), (np.arange(K) + 1) % K)),
                          shape=(K, K))
    D0t = (shift - shift.T) / (2.0 * dt)
    D0 = sp.kron(D0t, sp.identity(N, format="csr"), format="csc")
    A = (2.0 * G - 2.0 * D0 + beta * (D0.T @ D0) + beta * sp.identity(K * N, format="csc"))

    lu = spla.splu(A.tocsc())
    chi = np.zeros((K, N, lat.d))
    energy = []
    mu_mean = 0.0
    for k in range(K):
        mu_k, _ = omega.mu_nu(k)
        mu_mean += float(mu_k.mean()) / K
    for j in range(lat.d):
        r = np.stack([div(lat, omega.values[k] * displacement_gradient(lat, j))
                      for k in range(K)]).ravel()
        psi = lu.solve(2.0 * r)
        res = float(np.abs(A @ psi - 2.0 * r).max())
        if res > max(tol, 1e-8 * max(1.0, np.abs(psi).max())):
            raise RuntimeError(f"regularised solve residual {res:.3e} above tolerance")
        P = psi.reshape(K, N)
        grad_energy = 0.0
        for k in range(K):
            grad_energy += 2.0 * float(P[k] @ (blocks[k] @ P[k])) / (K * N)
        d0psi = (D0 @ psi)
        energy.append({
            "grad_m2": grad_energy,
            "d0_2": beta * float(d0psi @ d0psi) / (K * N),
            "l2": beta * float(psi @ psi) / (K * N),
            "bound": mu_mean,
        })
        chi[:, :, j] = P
    gauge = chi.mean(axis=1)
    residual_pde = _centered_residual(omega, chi)
    return CorrectorSolution(lat, omega.t_start, omega.dt, chi,
                             residual=residual_pde, tol=tol, gauge=gauge,
                             beta=beta, method="regularized",
                             extras={"energy": energy, "mu_mean": mu_mean})


def _centered_residual(omega: ConductanceField, chi: np.ndarray) -> float:
    """Max-abs residual of the centred-difference equation (diagnostic)."""
    lat = omega.lattice
    K = omega.K
    worst = 0.0
    for j in range(lat.d):
        b = rhs_divergence(omega, j)
        U = chi[:, :, j]
        d0 = (np.roll(U, -1, axis=0) - np.roll(U, 1, axis=0)) / (2 * omega.dt) if K > 2 \
            else np.zeros_like(U)
        for k in range(K):
            lu = -div(lat, omega.values[k] * grad(lat, U[k]))
            worst = max(worst, float(np.abs(d0[k] + lu - b[k]).max()))
    return worst


# ---------------------------------------------------------------------------
# residual, diagnostics and experiments
# ---------------------------------------------------------------------------

def harmonic_residual(sol: CorrectorSolution, omega: ConductanceField) -> float:
    """Max-abs defect of Phi = Pi - chi under the solver's discretisation.

    Evaluates b_k - [(chi_{k+1} - chi_k)/dt + L_{t_k} chi_{k+1}] over all
    slices, vertices and coordinates; this equals the implicit-Euler
    residual of the harmonic-coordinate equation.  Solutions produced by
    the solvers satisfy residual <= tol (checked independently here).
    """
    if sol.K != omega.K or sol.chi.shape[1] != omega.lattice.n_vertices:
        raise ValueError("solution grid does not match the field grid")
    lat = omega.lattice
    worst = 0.0
    for j in range(lat.d):
        b = rhs_divergence(omega, j)
        U = sol.chi[:, :, j]
        Up = np.roll(U, -1, axis=0)
        for k in range(omega.K):
            lhs = (Up[k] - U[k]) / sol.dt - div(lat, omega.values[k] * grad(lat, Up[k]))
            worst = max(worst, float(np.abs(lhs - b[k]).max()))
    return worst


def _solve_for_field(omega: ConductanceField, tol: float) -> CorrectorSolution:
    if omega.time_constant:
        return solve_static_corrector(omega, tol=tol)
    return solve_poisson_time_periodic(omega, tol=tol)


def sublinearity_profile(model: EnvironmentModel, n_list, seed: int,
                         time_slices: int = 16, tol: float = 1e-9,
                         lattice_factor: int = 4) -> list[dict]:
    """Corrector growth statistics over the parabolic windows Q(n).

    For each n: sample the environment on a torus with L = lattice_factor*n
    and horizon n^2, solve the corrector, and report

      max_stat = max_{Q(n)} |chi| / n,
      l1_stat  = n^{-3} int_0^{n^2} |B(n)|^{-1} sum_{B(n)} |chi| dt.

    For environments below the moment condition the profile is diagnostic
    only; nothing here asserts decay.  Failures (solver non-convergence,
    resource caps) mark the row and leave the rest of the table intact.
    """
    rows = []
    for n in n_list:
        n = int(n)
        row = {"n": n, "L": lattice_factor * n, "ok": False}
        try:
            t0 = time.time()
            lat = TorusLattice(2, lattice_factor * n)
            horizon = float(n * n)
            K = 1 if _is_static_model(model) else time_slices
            omega = sample_environment(model, lat, horizon=horizon,
                                       dt=horizon / K, seed=seed)
            sol = _solve_for_field(omega, tol)
            verts = ball(lat, (0, 0), n)
            absval = sol.chi_abs()[:, verts]           # (K, |B|)
            row["max_stat"] = float(absval.max()) / n
            row["l1_stat"] = float(absval.mean(axis=1).sum() * omega.dt) / n ** 3
            row["residual"] = sol.residual
            row["seconds"] = time.time() - t0
            row["ok"] = True
        except (RuntimeError, MemoryError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def _is_static_model(model) -> bool:
    from .environment import Constant, HeavyTail, StaticErgodic
    return isinstance(model, (Constant, StaticErgodic, HeavyTail))


def covariance_estimate(sol: CorrectorSolution, omega: ConductanceField) -> np.ndarray:
    """Deterministic covariance from the harmonic-coordinate gradient.

    Sigma2_ij = space-time average over the torus of
    sum_{y ~ x} w_t(x,y) DPhi^i(x,y) DPhi^j(x,y); the ordered-pair sum is
    twice the edge sum.  For w = c and chi = 0 this is exactly 2c * Id.
    """
    lat = sol.lattice
    d = lat.d
    gphis = [phi_gradient(sol, j) for j in range(d)]    # each (K, d, N)
    sigma = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            val = float(np.sum(omega.values * gphis[i] * gphis[j]))
            sigma[i, j] = sigma[j, i] = 2.0 * val / (sol.K * lat.n_vertices)
    return sigma


def covariance_empirical(omega, n: float, n_paths: int, seed: int,
                         threads: int = 1, start=None) -> np.ndarray:
    """Sample covariance of the rescaled endpoint X^{(n)}_1 over an ensemble.

    ``omega`` may be a field or an environment model; a model is sampled on
    a torus of side 4n with horizon n^2 (seeded, so reproducible).
    """
    if not isinstance(omega, ConductanceField):
        lat = TorusLattice(2, int(4 * n))
        omega = sample_environment(omega, lat, horizon=float(n * n),
                                   dt=float(n * n), seed=seed)
    lat = omega.lattice
    if start is None:
        start = (0,) * lat.d
    res = simulate_ensemble(omega, 0.0, start, [n * n], n_paths, seed, threads=threads)
    endpoints = res.positions[:, 0, :] / n
    return np.cov(endpoints.T, ddof=1)


def martingale_check(sol: CorrectorSolution, omega: ConductanceField,
                     n_paths: int, t_grid, seed: int, start=None,
                     v: np.ndarray | None = None, threads: int = 1) -> dict:
    """Empirical test of the decomposition X_t = M_t + chi(t, X_t).

    M_t = Phi(t, X_t) (unwrapped lift; chi is torus periodic and adds no
    linear part).  Per coordinate and per interval of ``t_grid``, the mean
    increment of M must vanish within 3 standard errors.  The optional
    direction v drives a quadratic variation check: the ensemble mean of
    sum of squared jump increments of v . M is compared with the ensemble
    mean of the covariance integral int sum_y w_s(X_s, y)(v . DPhi)^2 ds
    (exact along each path for piecewise-constant fields).

    Exactness caveat: for genuinely time-varying fields the implicit-Euler
    corrector is harmonic only up to the time discretisation, so the mean
    increments carry an O(dt) bias; for time-constant fields the test is
    unbiased up to the solver residual.
    """
    lat = omega.lattice
    d = lat.d
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if start is None:
        start = (0,) * d
    if v is None:
        v = np.zeros(d)
        v[0] = 1.0
    v = np.asarray(v, dtype=float)

    # per-slice, per-vertex quadratic-variation rate for direction v
    qv_rate = np.empty((sol.K, lat.n_vertices))
    vgrad = np.zeros((sol.K, lat.d, lat.n_vertices))
    for j in range(d):
        gp = phi_gradient(sol, j)
        vgrad += v[j] * gp
    for k in range(sol.K):
        w = omega.values[k % omega.K]
        sq = w * vgrad[k] ** 2
        # ordered neighbour sum = outgoing edges + incoming edges
        qv_rate[k] = sq.sum(axis=0) + np.take_along_axis(
            sq, lat.nbr_minus, axis=1).sum(axis=0)

    tab = JumpTables(omega)
    n_times = len(t_grid)
    M = np.empty((n_paths, n_times, d))
    qv_emp = np.zeros(n_paths)
    qv_pred = np.zeros(n_paths)
    t_final = float(t_grid[-1])

    time_const = omega.time_constant and sol.K == 1

    for wlk in range(n_paths):
        traj = simulate_vsrw(omega, 0.0, start, t_final, seed, wlk, tables=tab)
        path = traj.positions_unwrapped()
        torus = np.mod(path, lat.L)
        vidx = np.ravel_multi_index(tuple(torus.T), lat.shape)
        times = np.concatenate([[0.0], traj.jump_times, [t_final]])
        # M at sample times
        at = np.searchsorted(traj.jump_times, t_grid, side="right")
        ks = _slice_of_times(sol, t_grid)
        M[wlk] = path[at] - sol.chi[ks, vidx[at]]
        # quadratic variation along the path (jump terms)
        if traj.n_jumps:
            kj = _slice_of_times(sol, traj.jump_times)
            dphi = (path[1:] - path[:-1]).astype(float)
            dchi = sol.chi[kj, vidx[1:]] - sol.chi[kj, vidx[:-1]]
            dM = dphi - dchi
            qv_emp[wlk] = float(((dM @ v) ** 2).sum())
        # predicted compensator: the rate is constant between path events and
        # grid lines, so the integral splits exactly over both
        if time_const:
            qv_pred[wlk] = float(np.sum(qv_rate[0, vidx] * np.diff(times)))
        else:
            acc = 0.0
            for i in range(len(times) - 1):
                acc += _integrate_rate(sol, qv_rate, times[i], times[i + 1], vidx[i])
            qv_pred[wlk] = acc

    incr = np.diff(M, axis=1)
    mean_inc = incr.mean(axis=0)
    se_inc = incr.std(axis=0, ddof=1) / math.sqrt(n_paths)
    zscores = np.where(se_inc > 0, mean_inc / np.maximum(se_inc, 1e-300), 0.0)
    qv_ratio = qv_emp.mean() / qv_pred.mean() if qv_pred.mean() else 1.0
    return {
        "t_grid": t_grid,
        "mean_increments": mean_inc,
        "se_increments": se_inc,
        "z_increments": zscores,
        "increments_pass": bool(np.all(np.abs(zscores) <= 3.0)),
        "qv_empirical": float(qv_emp.mean()),
        "qv_predicted": float(qv_pred.mean()),
        "qv_relative_error": float(abs(qv_ratio - 1.0)),
        "qv_pass": bool(abs(qv_ratio - 1.0) <= 0.05),
    }


def _slice_of_times(sol: CorrectorSolution, times: np.ndarray) -> np.ndarray:
    ks = np.floor((np.asarray(times) - sol.t_start) / sol.dt + 1e-12).astype(np.int64)
    return ks % sol.K


def _integrate_rate(sol: CorrectorSolution, rate: np.ndarray,
                    a: float, b: float, x: int) -> float:
    """Integral of t -> rate[slice(t), x] over [a, b] (piecewise constant)."""
    ka = int(math.floor((a - sol.t_start) / sol.dt + 1e-12))
    kb = int(math.ceil((b - sol.t_start) / sol.dt - 1e-12))
    acc = 0.0
    for k in range(ka, kb):
        lo = sol.t_start + k * sol.dt
        acc += rate[k % sol.K, x] * (min(b, lo + sol.dt) - max(a, lo))
    return acc


def corrector_control(sol: CorrectorSolution, omega: ConductanceField, n: float,
                      T: float, n_paths: int, seed: int, threads: int = 1,
                      start=None) -> dict:
    """Distribution of the pathwise supremum sup_{t <= T} |chi(n^2 t, n X^(n)_t)|/n.

    Evaluated exactly: chi is piecewise constant in time and the walk is
    piecewise constant in space, so the supremum is attained at a jump, a
    grid crossing, or the start, all of which the engines visit.
    """
    lat = omega.lattice
    if start is None:
        start = (0,) * lat.d
    track = sol.chi_abs()
    res = simulate_ensemble(omega, 0.0, start, [n * n * T], n_paths, seed,
                            threads=threads, track_max_of=track)
    sups = res.sup_tracked / n
    qs = np.quantile(sups, [0.25, 0.5, 0.75, 0.9, 1.0])
    return {
        "n": n, "T": T, "n_paths": n_paths,
        "quantiles": {"q25": qs[0], "median": qs[1], "q75": qs[2],
                      "q90": qs[3], "max": qs[4]},
        "mean": float(sups.mean()),
        "samples": sups,
    }
