"""Canonical nonlinear-connection pipeline tests.

The conformal case has a fully hand-derived oracle (Hessian, semispray,
connection coefficients).  Structural identities (frame commutators,
closure of theta, block transformation of the Sasaki lift) are checked on
the whole corpus.
"""

import numpy as np
import pytest

from akquant.errors import DegenerateHessianError
from akquant.exprlang import eval_jet
from akquant.jets import Chart, Jet
from akquant.lagrange_geometry import (
    build_from_blocks,
    build_lagrange,
    euler_residual,
    form_d,
    form_max_abs,
    hessian,
    potential_form,
    symplectic_report,
)

from conftest import BASE2, LAGRANGIANS2, chart_n1, chart_n2


def rand_jet(chart, rng):
    return Jet(chart, rng.standard_normal(chart.size) + 1j * rng.standard_normal(chart.size))


# ---------------------------------------------------------------------------
# hand-derived oracle: conformal generating function


def test_conformal_oracle(corpus2):
    geom = corpus2["conformal"]
    ch = geom.chart
    conf = eval_jet("exp(2*x1)", ch)
    zero = Jet.zero(ch)
    # Hessian e^{2x1} * identity
    for a in range(2):
        for b in range(2):
            want = conf if a == b else zero
            assert geom.g_v[a][b].max_abs_diff(want) < 1e-12
    # semispray
    G0 = eval_jet("(y3^2 - y4^2)/2", ch)
    G1 = eval_jet("y3*y4", ch)
    assert geom.G[0].max_abs_diff(G0) < 1e-11
    assert geom.G[1].max_abs_diff(G1) < 1e-11
    # nonlinear connection
    oracle_N = [["y3", "-y4"], ["y4", "y3"]]
    for a in range(2):
        for i in range(2):
            want = eval_jet(oracle_N[a][i], ch)
            got = geom.N[a][i]
            assert got.max_abs_diff(want) < 1e-11, f"N^{a}_{i}"


def test_conformal_n1():
    geom = build_lagrange("exp(2*x1)*y2^2/2", chart_n1())
    want = Jet.coordinate(geom.chart, "y2")
    assert geom.N[0][0].max_abs_diff(want) < 1e-11


def test_flat_everything_vanishes(corpus2):
    geom = corpus2["flat"]
    for a in range(2):
        assert geom.G[a].max_abs() < 1e-14
        for i in range(2):
            assert geom.N[a][i].max_abs() < 1e-14


# ---------------------------------------------------------------------------
# structure: frames, anholonomy, commutators


def test_frame_commutator_matches_omega(corpus2):
    # [e_1, e_2] f = + Omega^a_{12} d_a f (sign fixed by direct expansion)
    rng = np.random.default_rng(41)
    for name, geom in corpus2.items():
        om = geom.omega_nc()
        n = geom.n
        f = rand_jet(geom.chart, rng)
        lhs = geom.e(geom.e(f, 1), 0) - geom.e(geom.e(f, 0), 1)
        rhs = Jet.zero(geom.chart)
        for a in range(n):
            rhs = rhs + om[a][0][1] * f.partial(n + a)
        assert lhs.max_abs_diff(rhs) < 1e-9, f"{name}: commutator vs Omega"


def test_omega_nonzero_somewhere(corpus2):
    om = corpus2["anisotropic"].omega_nc()
    ch = corpus2["anisotropic"].chart
    # hand value: Omega^4_{12} = -y3/(1+x1^2)^2
    want = eval_jet("-y3/(1 + x1^2)^2", ch)
    assert om[1][0][1].max_abs_diff(want, through_order=4) < 1e-10


def test_mixed_commutator(corpus2):
    # [e_i, d_b] f = (d_b N^a_i) d_a f
    rng = np.random.default_rng(43)
    geom = corpus2["quartic"]
    n = geom.n
    f = rand_jet(geom.chart, rng)
    for i in range(n):
        for b in range(n):
            lhs = geom.e(f.partial(n + b), i) - geom.e(f, i).partial(n + b)
            rhs = Jet.zero(geom.chart)
            for a in range(n):
                rhs = rhs - geom.N[a][i].partial(n + b) * f.partial(n + a)
            assert lhs.max_abs_diff(rhs) < 1e-9


def test_anholonomy_table_matches_commutators(corpus2):
    # W contains exactly the two families, checked on coordinate jets
    geom = corpus2["pseudo"]
    W = geom.anholonomy()
    ch = geom.chart
    n = geom.n
    for al in range(2 * n):
        for be in range(2 * n):
            for gam in range(2 * n):
                # commutator applied to the coordinate jet u^gam picks out W^gam
                u = Jet.coordinate(ch, gam)
                lhs = geom.e(geom.e(u, be), al) - geom.e(geom.e(u, al), be)
                assert lhs.max_abs_diff(W[gam][al][be], through_order=5) < 1e-10


# ---------------------------------------------------------------------------
# symplectic structure


def test_flat_theta_components(corpus2):
    geom = corpus2["flat"]
    th = geom.theta_coordinate()
    # theta = dy3 ^ dx1 + dy4 ^ dx2 = -(dx1 ^ dy3) - (dx2 ^ dy4)
    assert th[(0, 2)].max_abs_diff(Jet.constant(geom.chart, -1.0)) < 1e-14
    assert th[(1, 3)].max_abs_diff(Jet.constant(geom.chart, -1.0)) < 1e-14


def test_theta_closed_and_exact(corpus2):
    for name, geom in corpus2.items():
        rep = symplectic_report(geom)
        assert rep["closure"] < 1e-10, f"{name}: d(theta) = {rep['closure']:.2e}"
        assert rep["exactness"] < 1e-10, f"{name}: d(omega)-theta = {rep['exactness']:.2e}"


def test_flat_potential_form(corpus2):
    geom = corpus2["flat"]
    om = potential_form(geom.L, geom.chart)
    assert om[(0,)].max_abs_diff(Jet.coordinate(geom.chart, "y3")) < 1e-14
    assert om[(1,)].max_abs_diff(Jet.coordinate(geom.chart, "y4")) < 1e-14


def test_theta_up_is_inverse(corpus2):
    for name, geom in corpus2.items():
        up, down = geom.theta_up(), geom.theta_down()
        dim = 2 * geom.n
        for al in range(dim):
            for gam in range(dim):
                acc = Jet.zero(geom.chart)
                for be in range(dim):
                    acc = acc + up[al][be] * down[be][gam]
                want = 1.0 if al == gam else 0.0
                assert acc.max_abs_diff(Jet.constant(geom.chart, want)) < 1e-10


# ---------------------------------------------------------------------------
# Sasaki lift and almost-complex structure


def test_sasaki_lift_block_structure(corpus2):
    for name, geom in corpus2.items():
        gc = geom.sasaki_metric()
        E = geom.frame_components()
        dim = 2 * geom.n
        for al in range(dim):
            for be in range(dim):
                acc = Jet.zero(geom.chart)
                for mu in range(dim):
                    for nu in range(dim):
                        acc = acc + E[al][mu] * E[be][nu] * gc[mu][nu]
                want = geom.frame_metric(al, be)
                assert acc.max_abs_diff(want) < 1e-10, f"{name} block ({al},{be})"


def test_almost_complex_squares_to_minus_one(corpus2):
    geom = corpus2["flat"]
    J = np.array(geom.almost_complex())
    assert np.array_equal(J @ J, -np.eye(2 * geom.n, dtype=int))


def test_compatibility_theta_g_J(corpus2):
    # theta(e_al, e_be) = g(J e_al, e_be) on Lagrange-type data
    for name, geom in corpus2.items():
        J = geom.almost_complex()
        down = geom.theta_down()
        dim = 2 * geom.n
        for al in range(dim):
            for be in range(dim):
                acc = Jet.zero(geom.chart)
                for gam in range(dim):
                    if J[gam][al]:
                        acc = acc + float(J[gam][al]) * geom.frame_metric(gam, be)
                assert acc.max_abs_diff(down[al][be]) < 1e-12, f"{name} ({al},{be})"


# ---------------------------------------------------------------------------
# homogeneity and degeneracy


def test_quartic_homogeneity(corpus2):
    geom = corpus2["quartic"]
    flat_N = [geom.N[a][i] for a in range(2) for i in range(2)]
    # N is fiberwise 1-homogeneous for a 2-homogeneous generating function
    assert euler_residual(flat_N, geom.chart, 1) < 1e-8
    g_entries = [geom.g_v[a][b] for a in range(2) for b in range(2)]
    assert euler_residual(g_entries, geom.chart, 0) < 1e-8


def test_degenerate_hessian_raises():
    ch = chart_n1()
    with pytest.raises(DegenerateHessianError):
        build_lagrange("x1*y2", ch)


def test_build_from_blocks_checks_regularity():
    ch = chart_n2(order=4)
    one = Jet.constant(ch, 1.0)
    zero = Jet.zero(ch)
    with pytest.raises(DegenerateHessianError):
        build_from_blocks(ch, [[one, zero], [zero, zero]], [[one, zero], [zero, one]],
                          [[zero, zero], [zero, zero]])


def test_form_d_nilpotent():
    ch = chart_n2(order=6)
    f = eval_jet("exp(x1)*y3 + x2*y4^2", ch)
    df = form_d({(): f}, ch)
    ddf = form_d(df, ch)
    assert form_max_abs(ddf) < 1e-13
