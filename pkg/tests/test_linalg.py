import numpy as np
import numpy.testing as npt
import pytest

from tbptt.linalg import DimensionError, matvec, spectral_norm


def test_matvec_identity():
    npt.assert_array_equal(matvec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_matvec_zeros():
    npt.assert_array_equal(matvec(np.zeros((2, 2)), [5.0, 7.0]), [0.0, 0.0])


def test_matvec_hand_case():
    npt.assert_allclose(matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])


def test_matvec_shape_mismatch_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 2\).*\(3,\)"):
        matvec(np.eye(2), np.ones(3))


def test_matvec_linearity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.normal(size=(3, 4))
        u, v = rng.normal(size=4), rng.normal(size=4)
        al, be = rng.normal(), rng.normal()
        lhs = matvec(a, al * u + be * v)
        rhs = al * matvec(a, u) + be * matvec(a, v)
        npt.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_spectral_norm_identity():
    assert spectral_norm(np.eye(2)) == pytest.approx(1.0, rel=1e-10)


def test_spectral_norm_diagonal():
    assert spectral_norm(np.diag([0.5, -0.2])) == pytest.approx(0.5, rel=1e-10)


def test_spectral_norm_nilpotent():
    # singular values of [[0,2],[0,0]] are {2, 0}
    assert spectral_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0, rel=1e-10)


def test_spectral_norm_top_direction_orthogonal_to_ones():
    # gram eigvectors are [1,-1] (eigenvalue 4) and [1,1] (eigenvalue 1): the
    # all-ones start alone would converge to the wrong eigenpair
    c = np.cos(np.pi / 4)
    rot = np.array([[c, -c], [c, c]])
    a = np.diag([2.0, 1.0]) @ rot.T
    assert spectral_norm(a) == pytest.approx(2.0, rel=1e-9)


def test_spectral_norm_zero_matrix():
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_spectral_norm_dominates_rayleigh_quotients():
    rng = np.random.default_rng(3)
    for _ in range(25):
        a = rng.normal(size=(4, 3))
        sigma = spectral_norm(a)
        v = rng.normal(size=3)
        assert sigma * np.linalg.norm(v) >= np.linalg.norm(a @ v) - 1e-9


def test_spectral_norm_absolute_homogeneity():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 3))
    base = spectral_norm(a)
    for c in (-2.5, 0.3, 7.0):
        assert spectral_norm(c * a) == pytest.approx(abs(c) * base, rel=1e-10)


def test_spectral_norm_empty_rejected():
    with pytest.raises(DimensionError):
        spectral_norm(np.zeros((0, 2)))
