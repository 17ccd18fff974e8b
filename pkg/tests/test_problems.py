import numpy as np
import pytest

from h2arith import assemble_bem_slp, assemble_fem_poisson, densify, make_instance
from h2arith.problems import BEM_TABLE, FEM_TABLE, default_eps, export_instance

from instances import model


@pytest.mark.parametrize("level", [2, 3, 5])
def test_fem_size(level):
    inst = assemble_fem_poisson(level)
    assert inst.n == (2 ** level - 1) ** 2
    assert inst.h == 2.0 ** -level


def test_fem_stencil_3x3_grid():
    A = assemble_fem_poisson(2).matrix.toarray()
    assert A.shape == (9, 9)
    assert np.all(np.diag(A) == 4.0)
    centre = A[4]
    assert centre[[1, 3, 5, 7]].tolist() == [-1.0] * 4
    assert np.count_nonzero(centre) == 5
    assert np.count_nonzero(A[0]) == 3


def test_fem_spd():
    A = assemble_fem_poisson(4).matrix.toarray()
    assert np.allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0


def test_bem_size_symmetry_circulant():
    inst = assemble_bem_slp(4)
    A = inst.matrix
    assert A.shape == (64, 64) and inst.n == 64
    assert np.allclose(A, A.T, atol=1e-14 * np.abs(A).max())
    assert np.allclose(np.roll(np.roll(A, 1, 0), 1, 1), A)
    assert np.linalg.eigvalsh(A).min() > 0


def test_bem_circulant_matvec():
    inst = assemble_bem_slp(5)
    x = np.random.default_rng(0).standard_normal(inst.n)
    lazy = assemble_bem_slp(5, dense=False)
    assert np.allclose(lazy.matvec(x), inst.matrix @ x)


def test_bem_self_term_dominates():
    row = assemble_bem_slp(8).first_row
    assert row[0] > 0 and row[0] == row.max()


def test_level_caps():
    with pytest.raises(MemoryError):
        assemble_fem_poisson(20)
    with pytest.raises(ValueError):
        assemble_bem_slp(1)
    with pytest.raises(ValueError):
        make_instance("wave", 3)


def test_default_eps_matches_tables():
    for level, (eta, eps) in FEM_TABLE.items():
        assert default_eps("fem", level) == (eta, eps)
    for level, (eta, eps) in BEM_TABLE.items():
        assert default_eps("bem", level) == (eta, eps)
    eta, eps = default_eps("fem", 6)
    assert eta == 4.0 and np.isclose(eps, 4 * FEM_TABLE[7][1])


@pytest.mark.parametrize("kind,level", [("fem", 4), ("bem", 6)])
def test_instance_round_trip(kind, level):
    G, A = model(kind, level)
    err = np.linalg.norm(densify(G) - A, 2) / np.linalg.norm(A, 2)
    tol = 0.0 if kind == "fem" else 10 * default_eps(kind, level)[1]
    assert err <= tol


def test_export(tmp_path):
    inst = assemble_fem_poisson(2)
    export_instance(inst, tmp_path / "a.mtx", tmp_path / "p.txt")
    lines = (tmp_path / "a.mtx").read_text().splitlines()
    assert lines[0].startswith("% fem") and len(lines) == 1 + inst.matrix.nnz
    assert np.loadtxt(tmp_path / "p.txt").shape == (9, 2)


def test_bem_size_per_level():
    assert assemble_bem_slp(2, dense=False).n == 16
    assert assemble_bem_slp(11, dense=False).n == 8192
