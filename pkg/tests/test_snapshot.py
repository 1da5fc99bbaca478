import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmsfem import fem, snapshot as sn
from gmsfem.coeff import gen_model1_like
from gmsfem.errors import InvalidArgument, NumericalError
from gmsfem.grid import block, build_grid, neighborhood, oversample


@pytest.fixture(scope="module")
def setup():
    g = build_grid(1, 1, 3, 3, 4)
    return g, gen_model1_like(g, contrast=1e4, seed=0)


def test_type1_is_identity(setup):
    g, c = setup
    K = block(g, 4)
    s = sn.snapshots_type1(g, c, K)
    assert s.n_snap == K.n_dofs and np.array_equal(s.columns, np.eye(K.n_dofs))


@pytest.mark.parametrize("region", ["block", "neighborhood"])
def test_type2_harmonic_with_delta_traces(setup, region):
    g, c = setup
    r = block(g, 4) if region == "block" else neighborhood(g, 5)
    s = sn.snapshots_type2(g, c, r)
    bd, idf = fem.region_boundary_dofs(r)
    assert s.n_snap == len(bd) == 2 * len(r.boundary_nodes)
    assert np.array_equal(s.columns[bd], np.eye(len(bd)))
    A = fem.assemble_stiffness(g, c, r).stiffness
    res = (A @ s.columns)[idf]
    assert np.abs(res).max() < 1e-8 * abs(A).max()
    # ordering: boundary node ascending, component 1 then 2
    assert np.array_equal(bd[:4], [2 * r.boundary_local[0], 2 * r.boundary_local[0] + 1,
                                   2 * r.boundary_local[1], 2 * r.boundary_local[1] + 1])


def test_oversampled_restriction_consistent(setup):
    g, c = setup
    K = block(g, 4)
    s = sn.snapshots_oversampled(g, c, K, layers=1)
    assert s.oversampled and s.layers == 1 and s.outer.same_rect(oversample(g, K, 1))
    from gmsfem.grid import restriction_dofs
    assert np.array_equal(s.outer_columns[restriction_dofs(s.outer, K)], s.columns)
    # restriction to a smaller block makes columns dependent; all are kept by default
    assert not s.dropped and s.n_snap == 2 * len(s.outer.boundary_nodes) == 96
    assert np.linalg.matrix_rank(s.columns) < s.n_snap
    # corner block: the enlarged region is clipped
    s0 = sn.snapshots_oversampled(g, c, block(g, 0), layers=1)
    assert (s0.outer.bx1 - s0.outer.bx0, s0.outer.by1 - s0.outer.by0) == (2, 2)
    with pytest.raises(InvalidArgument):
        sn.snapshots_oversampled(g, c, K, layers=-1)


def test_rank_filter_drops_dependent_columns(setup):
    g, c = setup
    s = sn.snapshots_oversampled(g, c, block(g, 4), layers=1, rank_tol=sn.RANK_TOL)
    assert s.dropped and s.n_snap + len(s.dropped) == 96
    assert s.outer_columns.shape == (s.outer.n_dofs, s.n_snap)
    G = s.columns.T @ s.columns
    d = np.sqrt(np.diag(G))
    assert np.linalg.eigvalsh(G / np.outer(d, d)).min() > 1e-12


def test_interior_oversampled_counts():
    # interior block, nf = 10: the enlarged boundary has 120 nodes
    g = build_grid(1, 1, 3, 3, 10)
    c = gen_model1_like(g, contrast=10, seed=0)
    s = sn.snapshots_oversampled(g, c, block(g, 4), layers=1)
    assert s.n_snap == 240 and s.columns.shape == (242, 240)
    assert sn.snapshots_type2(g, c, block(g, 4)).n_snap == 80
    assert sn.snapshots_type2(g, c, neighborhood(g, 5)).n_snap == 160


def test_cache_roundtrip(setup, tmp_path):
    g, c = setup
    K = block(g, 4)
    a = sn.snapshots_type2(g, c, K, cache_dir=tmp_path)
    files = list(tmp_path.glob("snap_*.bin"))
    assert len(files) == 1
    b = sn.snapshots_type2(g, c, K, cache_dir=tmp_path)
    assert np.array_equal(a.columns, b.columns)
    assert sn.cache_key(g, c, K, "type2") != sn.cache_key(g, c, block(g, 3), "type2")


def test_cache_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"nonsense")
    with pytest.raises(NumericalError, match="not a snapshot"):
        sn.read_columns(p)
    sn.write_columns(p, np.ones((3, 2)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(NumericalError, match="truncated"):
        sn.read_columns(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_cache_format_roundtrip(tmp_path_factory, rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols))
    p = tmp_path_factory.mktemp("c") / "a.bin"
    sn.write_columns(p, x)
    assert np.array_equal(sn.read_columns(p), x)


def test_bad_columns_rejected(setup):
    g, _ = setup
    K = block(g, 0)
    with pytest.raises(InvalidArgument):
        sn.SnapshotSpace(K, sn.SnapshotKind.TYPE1, np.eye(3))
