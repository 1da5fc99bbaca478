"""Numerical kernel: sparse SPD solves and dense generalized eigenproblems.

Sparse matrices are ``scipy.sparse`` CSR; dense ones are plain ndarrays.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, InvalidArgument, NumericalError

SEMIDEF_SHIFT = 1e-8
INFINITE_ETA = 1e-12


def solve_spd(A, b, tol: float = 1e-10, maxit: int | None = None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``x`` with ``||Ax - b|| <= tol ||b||``; raises ConvergenceError otherwise.
    """
    if not 0 < tol < 1:
        raise InvalidArgument(f"tol must lie in (0, 1), got {tol}")
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise InvalidArgument(f"matrix {A.shape} does not conform to rhs of length {n}")
    maxit = 10 * n if maxit is None else maxit
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise NumericalError("matrix has a non-positive diagonal entry; not SPD")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r)
    it = 0
    while res > tol * bnorm:
        if it >= maxit:
            raise ConvergenceError(f"PCG did not converge in {maxit} iterations "
                                   f"(relative residual {res / bnorm:.3e})", res / bnorm, it)
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NumericalError("non-positive curvature in PCG; matrix not SPD")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        if it % 50 == 0:
            r = b - A @ x  # refresh against drift
        res = np.linalg.norm(r)
    return x


def solve_direct(A, b):
    """Sparse LU solve; accepts a matrix of right-hand sides."""
    A = sp.csc_matrix(A)
    lu = spla.splu(A)
    return lu.solve(np.asarray(b, dtype=float))


def factorize(A, steps: int = 2):
    """Sparse LU with iterative refinement; returns a solve callable.

    High-contrast local problems lose a few digits in a plain LU solve;
    a couple of refinement sweeps recover them.
    """
    A = sp.csc_matrix(A)
    lu = spla.splu(A)

    def solve(b):
        b = np.asarray(b, dtype=float)
        x = lu.solve(b)
        for _ in range(steps):
            x = x + lu.solve(b - A @ x)
        return x

    return solve


def sym_check(A, rtol: float = 1e-12, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"{name} must be square, got {A.shape}")
    scale = np.abs(A).max() if A.size else 0.0
    if scale and np.abs(A - A.T).max() > rtol * scale:
        raise InvalidArgument(f"{name} is not symmetric (asymmetry {np.abs(A - A.T).max() / scale:.2e})")
    return A


def eig_gen_sym(A, B, semidefinite_ok: bool = False, keep_infinite: bool = False):
    """Solve ``A v = xi B v`` for symmetric A >= 0 and B > 0 (or B >= 0).

    Eigenvalues ascend; eigenvectors are B-orthonormal.  If B is only
    semidefinite and ``semidefinite_ok`` is set, the reversed pencil
    ``B v = eta (A + s B) v`` is solved and ``xi = (1 - eta s) / eta``.
    Modes with negligible ``eta`` have infinite xi; they are dropped unless
    ``keep_infinite`` is set, in which case they come last with ``xi = inf``
    and are normalised in ``A + s B``.
    """
    A = sym_check(A, 1e-10, "A")
    B = sym_check(B, 1e-10, "B")
    if A.shape != B.shape:
        raise InvalidArgument(f"dimension mismatch: A {A.shape} vs B {B.shape}")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        sla.cholesky(B, lower=True)
        definite = True
    except np.linalg.LinAlgError:
        definite = False
    if definite:
        xi, V = sla.eigh(A, B)
        return xi, V
    if not semidefinite_ok:
        raise NumericalError("right-hand matrix B is not positive definite")
    wB = np.linalg.eigvalsh(B)
    if wB.min() < -1e-10 * max(abs(wB).max(), 1e-300):
        raise NumericalError(f"right-hand matrix B is indefinite (min eigenvalue {wB.min():.3e})")
    s = SEMIDEF_SHIFT * np.trace(A) / n
    if s <= 0:
        s = SEMIDEF_SHIFT
    C = A + s * B
    try:
        eta, V = sla.eigh(B, C)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"shifted pencil A + sB is singular: {exc}") from None
    eta_max = eta.max()
    finite = eta > INFINITE_ETA * eta_max
    order = np.argsort(-eta[finite], kind="stable")
    ef = eta[finite][order]
    Vf = V[:, finite][:, order]
    xi = 1.0 / ef - s
    # B-normalise: v^T B v = eta v^T C v = eta
    Vf = Vf / np.sqrt(ef)
    # round-off can leave tiny negatives for the null space of A
    if not keep_infinite:
        return xi, Vf
    Vi = V[:, ~finite]
    return np.concatenate([xi, np.full(Vi.shape[1], np.inf)]), np.hstack([Vf, Vi])


def submatrix(A, dofs) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    dofs = np.asarray(dofs)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= A.shape[0]):
        raise InvalidArgument("index out of range in submatrix")
    return A[dofs][:, dofs].tocsr()


def triple_product(R, A, S=None) -> np.ndarray:
    """Dense ``R^T A S`` (``S = R`` by default), symmetrised when ``S is R``."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] != A.shape[0]:
        raise InvalidArgument(f"columns of length {R.shape[0]} do not conform to matrix {A.shape}")
    if S is None:
        out = R.T @ np.asarray(A @ R)
        return 0.5 * (out + out.T)
    S = np.asarray(S, dtype=float)
    return R.T @ np.asarray(A @ S)


def pivoted_cholesky_select(G, tol: float):
    """Greedy column selection on a Gram matrix.

    Returns the kept column indices (in original order) such that every
    rejected column has relative residual pivot below ``tol`` after
    projecting out the kept ones.  The Gram matrix is scaled to unit
    diagonal first, so ``tol`` is a squared sine of the angle to the span.
    """
    G = np.array(G, dtype=float)
    n = G.shape[0]
    d = np.diag(G).copy()
    nz = d > 0
    scale = np.zeros(n)
    scale[nz] = 1.0 / np.sqrt(d[nz])
    G = G * scale[:, None] * scale[None, :]
    diag = np.where(nz, 1.0, 0.0)
    L = np.zeros((n, n))
    kept: list[int] = []
    active = np.ones(n, dtype=bool)
    for k in range(n):
        cand = np.where(active, diag, -np.inf)
        p = int(np.argmax(cand))
        if not active[p] or diag[p] <= tol:
            break
        kept.append(p)
        active[p] = False
        piv = np.sqrt(diag[p])
        col = (G[:, p] - L[:, :k] @ L[p, :k]) / piv
        col[~active] = 0.0
        L[:, k] = col
        L[p, k] = piv
        diag = diag - col ** 2
    return np.array(sorted(kept), dtype=int)
