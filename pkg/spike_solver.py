"""Scratch: performance/convergence spike for the space-time periodic solver."""
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from rcmlab.lattice import TorusLattice, grad, div, displacement_gradient
from rcmlab.environment import sample_environment, ProductSeparable, StaticErgodic, Law


def laplacian_matrix(lat, w):
    """Assemble div(w grad .) = -generator as a sparse matrix for weights (d,N)."""
    N = lat.n_vertices
    rows, cols, data = [], [], []
    for i in range(lat.d):
        head = lat.nbr_plus[i]
        tail = np.arange(N)
        we = w[i]
        rows += [tail, head, tail, head]
        cols += [tail, head, head, tail]
        data += [we, we, -we, -we]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    return sp.csr_matrix((data, (rows, cols)), shape=(N, N))


def solve_periodic(field, j, tol=1e-9, verbose=True):
    lat = field.lattice
    K, N = field.K, lat.n_vertices
    dt = field.dt
    vals = field.values  # (K, d, N)

    dPi = displacement_gradient(lat, j)
    b = np.stack([-div(lat, vals[k] * dPi) for k in range(K)])  # (K, N)
    rhs = (dt * b).ravel()
    if np.abs(rhs).max() == 0:
        return np.zeros((K, N)), 0.0, 0.0

    nbr_minus_b = np.broadcast_to(lat.nbr_minus, (K, lat.d, N))

    def apply_A(u):
        U = u.reshape(K, N)
        Up = np.roll(U, -1, axis=0)
        p = vals * (Up[:, lat.nbr_plus] - Up[:, None, :])
        Lu = p.sum(axis=1) - np.take_along_axis(p, nbr_minus_b, axis=2).sum(axis=1)
        return (Up - U + dt * Lu).ravel()

    # preconditioner: exact inverse of the time-averaged-coefficient operator,
    # diagonalised by FFT in time; one complex LU per time frequency
    wbar = vals.mean(axis=0)  # (d, N)
    G = laplacian_matrix(lat, wbar).tocsc()
    theta = 2 * np.pi * np.fft.fftfreq(K)
    lus = []
    t0 = time.time()
    eye = sp.identity(N, format="csc")
    for th in theta:
        z = np.exp(1j * th)
        # generator of the averaged field is -G, so the symbol is (z-1) - dt z G
        Mth = (z - 1) * eye - dt * z * G
        if abs(th) < 1e-14:
            Mth = Mth - 1e-8 * dt * sp.identity(N, format="csc")
        lus.append(spla.splu(Mth.tocsc().astype(np.complex128)))
    setup = time.time() - t0

    def apply_M(v):
        V = np.fft.fft(v.reshape(K, N), axis=0)
        out = np.empty_like(V)
        for kk in range(K):
            out[kk] = lus[kk].solve(V[kk])
        return np.fft.ifft(out, axis=0).real.ravel()

    A = spla.LinearOperator((K * N, K * N), matvec=apply_A)
    M = spla.LinearOperator((K * N, K * N), matvec=apply_M)

    t0 = time.time()
    it = [0]

    def cb(_):
        it[0] += 1

    target = tol * dt  # max-norm residual of the pde form
    u, info = spla.gmres(A, rhs, M=M, rtol=0.0, atol=0.5 * target,
                         restart=40, maxiter=400, callback=cb,
                         callback_type="pr_norm")
    dtime = time.time() - t0
    res = np.abs(apply_A(u) - rhs).max() / dt
    if verbose:
        print(f"  K={K} N={N}: info={info} iters={it[0]} setup={setup:.2f}s "
              f"solve={dtime:.2f}s harmonic-res={res:.2e}")
    return u.reshape(K, N), res, dtime


if __name__ == "__main__":
    for (L, K) in [(32, 16), (64, 16), (128, 16), (128, 64)]:
        lat = TorusLattice(2, L)
        n = L // 4
        horizon = float(n * n)
        field = sample_environment(ProductSeparable(Law("uniform", 1, 2), Law("uniform", 1, 2)),
                                   lat, horizon=horizon, dt=horizon / K, seed=1)
        print(f"L={L} K={K} dt={field.dt} mumax={field.mu_max():.1f}")
        solve_periodic(field, 0)

    lat = TorusLattice(2, 128)
    field = sample_environment(StaticErgodic(Law("uniform", 1, 2)), lat,
                               horizon=1024.0, dt=1024.0, seed=2)
    print("static L=128 K=1")
    solve_periodic(field, 0)
