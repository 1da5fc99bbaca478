import numpy as np
import pytest
import sympy as s

from gmsfem import fem
from gmsfem.coeff import constant_field
from gmsfem.grid import build_grid


def _manufactured(lam=1.0, mu=1.0):
    """Smooth field vanishing on the unit square boundary and its body force."""
    x, y = s.symbols("x y")
    u = [s.sin(s.pi * x) * s.sin(s.pi * y), x * (1 - x) * y * (1 - y) * s.exp(x)]
    grad = [[s.diff(ui, v) for v in (x, y)] for ui in u]
    eps = [[(grad[i][j] + grad[j][i]) / 2 for j in range(2)] for i in range(2)]
    div = grad[0][0] + grad[1][1]
    sig = [[2 * mu * eps[i][j] + (lam * div if i == j else 0) for j in range(2)] for i in range(2)]
    f = [-(s.diff(sig[i][0], x) + s.diff(sig[i][1], y)) for i in range(2)]
    lf = lambda e: s.lambdify((x, y), e, "numpy")
    u_n, g_n, f_n = [lf(e) for e in u], [[lf(e) for e in row] for row in grad], [lf(e) for e in f]

    def bc(fn):
        return lambda X, Y: np.broadcast_to(fn(X, Y), np.shape(X)).astype(float)

    exact = lambda X, Y: (bc(u_n[0])(X, Y), bc(u_n[1])(X, Y))
    exact_grad = lambda X, Y: tuple(tuple(bc(gij)(X, Y) for gij in row) for row in g_n)
    force = lambda X, Y: (bc(f_n[0])(X, Y), bc(f_n[1])(X, Y))
    return exact, exact_grad, force


@pytest.fixture(scope="session")
def manufactured():
    return _manufactured()


def observed_rates(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


def cg_errors(nfs, manufactured, ncx=2):
    exact, grad, force = manufactured
    out = []
    for nf in nfs:
        g = build_grid(1.0, 1.0, ncx, ncx, nf)
        c = constant_field(g)
        u = fem.solve_fine_cg(g, c, fem.load_vector(g, force))
        out.append(fem.exact_errors(g, u, exact, grad))
    return np.array(out)


def dg_errors(nfs, manufactured, ncx=2, gamma=8.0):
    exact, grad, force = manufactured
    out = []
    for nf in nfs:
        g = build_grid(1.0, 1.0, ncx, ncx, nf)
        c = constant_field(g)
        op = fem.assemble_dg(g, c, gamma)
        u = fem.solve_fine_dg(g, c, fem.broken_load(g, force), op=op)
        out.append(fem.exact_errors(g, u, exact, grad, broken=True))
    return np.array(out)
