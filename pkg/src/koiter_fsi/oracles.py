"""Independent finite-difference references used to cross-check the Galerkin solvers."""
import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import splu


def fd_clamped_beam_eigenvalues(n_points=256, length=1.0, k=3):
    """Lowest k eigenvalues of d^4 on a clamped interval, 5-point stencil.

    Unknowns are the n_points interior nodes; clamping is imposed with the
    ghost values w_{-1} = w_1, which turns the corner stencil entry 6 into 7.
    """
    h = length / (n_points + 1)
    A = (np.diag(np.full(n_points, 6.0))
         + np.diag(np.full(n_points - 1, -4.0), 1) + np.diag(np.full(n_points - 1, -4.0), -1)
         + np.diag(np.ones(n_points - 2), 2) + np.diag(np.ones(n_points - 2), -2))
    A[0, 0] = A[-1, -1] = 7.0
    return eigvalsh(A / h**4)[:k]


def fd_laplacian_residual(f, x0, h=1e-3):
    """Five-point Laplacian of a scalar function at points x0 (n, 2)."""
    x0 = np.asarray(x0, dtype=float)
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    return (f(x0 + ex) + f(x0 - ex) + f(x0 + ey) + f(x0 - ey) - 4.0 * f(x0)) / h**2


def neumann_laplacian_1d(n, h):
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h**2


def fd_crank_nicolson_square(rho0, eps, T, dt, n=256):
    """Heat equation d_t rho = eps Lap rho on the unit square, homogeneous Neumann.

    Cell-centred grid of n x n cells, Crank-Nicolson in time with a sparse LU
    factorisation.  Returns (x centres, rho(T) on the grid).
    """
    h = 1.0 / n
    xc = (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(xc, xc, indexing="ij")
    u = rho0(np.stack([X.ravel(), Y.ravel()], axis=1))
    L1 = neumann_laplacian_1d(n, h)
    I1 = sp.identity(n)
    Lap = sp.kron(L1, I1) + sp.kron(I1, L1)
    I = sp.identity(n * n)
    lhs = splu((I - 0.5 * dt * eps * Lap).tocsc())
    rhs = (I + 0.5 * dt * eps * Lap).tocsr()
    nsteps = int(round(T / dt))
    for _ in range(nsteps):
        u = lhs.solve(rhs @ u)
    return xc, u.reshape(n, n)
