"""d-connection tests: hand oracles, finite differences, coordinate
Christoffels.

The conformal case has fully hand-derived connection coefficients.  The
curvature routes cross-check each other inside `curvature`; here the Ricci
scalar additionally gets an independent finite-difference oracle built from
low-order rebuilds at shifted base points, and the Levi-Civita frame table
is compared against coordinate Christoffel symbols of the lifted metric
pushed through the frame transformation.
"""

import numpy as np
import pytest

from akquant.dconnection import (
    canonical_dconnection,
    curvature,
    distortion,
    einstein_residual,
    levi_civita_frame,
    metric_compatibility,
    normal_dconnection,
    ricci,
    scalar_curvature,
    torsion,
    torsion_operator,
)
from akquant.exprlang import eval_jet
from akquant.jets import Chart, Jet
from akquant.lagrange_geometry import build_from_blocks, build_lagrange

from conftest import BASE2, LAGRANGIANS2


@pytest.fixture(scope="module")
def conns2(corpus2):
    return {name: normal_dconnection(g) for name, g in corpus2.items()}


@pytest.fixture(scope="module")
def curvs2(conns2):
    # cross-check runs inside; failure raises
    return {name: curvature(c) for name, c in conns2.items()}


# ---------------------------------------------------------------------------
# hand oracles


def test_conformal_connection_oracle(conns2):
    # L = exp(2 x1) (y^2)/2:  g = e^{2x1} delta, e_k g_ij = 2 delta_{k1} g_ij
    # (N kills the fiber dependence), so
    # Lhat^i_{jk} = delta_{k1} delta_{ij} + delta_{j1} delta_{ik}
    #               - delta_{i1} delta_{jk},  Chat = 0.
    conn = conns2["conformal"]
    ch = conn.chart
    for i in range(2):
        for j in range(2):
            for k in range(2):
                want = float((k == 0) * (i == j) + (j == 0) * (i == k)
                             - (i == 0) * (j == k))
                got = conn.Lhat[i][j][k]
                assert got.max_abs_diff(Jet.constant(ch, want)) < 1e-11, \
                    f"Lhat[{i}][{j}][{k}]"
                assert conn.Chat[i][j][k].max_abs() < 1e-11


def test_flat_connection_vanishes(conns2, curvs2):
    conn = conns2["flat"]
    for i in range(2):
        for j in range(2):
            for k in range(2):
                assert conn.Lhat[i][j][k].max_abs() == 0.0
                assert conn.Chat[i][j][k].max_abs() == 0.0
    R = curvs2["flat"].R_full
    assert max(R[m][u][a][b].max_abs() for m in range(4) for u in range(4)
               for a in range(4) for b in range(4)) == 0.0
    LC = levi_civita_frame(conn.geom)
    assert max(LC[g][a][b].max_abs() for g in range(4) for a in range(4)
               for b in range(4)) == 0.0


def test_families_cloned_and_symmetric(conns2):
    for name, conn in conns2.items():
        # fiber-Hessian route shares the table objects across blocks
        assert conn.Lv is conn.Lhat and conn.Cv is conn.Chat, name
        for i in range(2):
            for j in range(2):
                assert conn.Lhat[i][j][1] is conn.Lhat[i][1][j]
                assert conn.Chat[i][j][1] is conn.Chat[i][1][j]


def test_chat_single_term_reduction(corpus2, conns2):
    # on fiber-Hessian data the symmetrized Chat collapses to
    # (1/2) g^{ih} d_c g_jh  (third-derivative symmetry of the generator)
    geom = corpus2["quartic"]
    conn = conns2["quartic"]
    n = geom.n
    for i in range(n):
        for j in range(n):
            for c in range(n):
                acc = Jet.zero(geom.chart)
                for h in range(n):
                    acc = acc + geom.g_v_inv[i][h] * geom.g_v[j][h].partial(n + c)
                assert conn.Chat[i][j][c].max_abs_diff(0.5 * acc) < 1e-11


# ---------------------------------------------------------------------------
# torsion


def test_pure_torsion_exactly_zero(conns2):
    for name, conn in conns2.items():
        fam = torsion(conn)
        for blk in ("h_hh", "v_vv"):
            worst = max(fam[blk][a][b][c].max_abs() for a in range(2)
                        for b in range(2) for c in range(2))
            assert worst == 0.0, f"{name}:{blk}"


def test_torsion_families_match_coefficients(corpus2, conns2):
    geom = corpus2["quartic"]
    conn = conns2["quartic"]
    n = geom.n
    fam = torsion(conn)
    om = geom.omega_nc()
    for a in range(n):
        for i in range(n):
            for j in range(n):
                assert fam["v_hh"][a][i][j].max_abs_diff(om[a][i][j]) < 1e-12
            for b in range(n):
                want = geom.N[a][i].partial(n + b) - conn.Lv[a][b][i]
                assert fam["v_hv"][a][i][b].max_abs_diff(want) < 1e-12
    for i in range(n):
        for j in range(n):
            for c in range(n):
                assert fam["h_hv"][i][j][c].max_abs_diff(conn.Chat[i][j][c]) < 1e-12


def test_torsion_operator_antisymmetric(conns2):
    T = torsion_operator(conns2["anisotropic"])
    for g in range(4):
        for a in range(4):
            for b in range(4):
                assert T[g][a][b].max_abs_diff(-1.0 * T[g][b][a]) == 0.0


# ---------------------------------------------------------------------------
# curvature: built-in cross-check plus structure


def test_curvature_cross_check_tight(curvs2):
    for name, curv in curvs2.items():
        assert curv.cross_check_error < 1e-9, name


def test_curvature_antisymmetric_in_form_slots(curvs2):
    R = curvs2["quartic"].R_full
    for m in range(4):
        for u in range(4):
            for a in range(4):
                for b in range(4):
                    assert R[m][u][a][b].max_abs_diff(-1.0 * R[m][u][b][a]) == 0.0


def test_metric_and_symplectic_compatibility(conns2):
    for name, conn in conns2.items():
        rep = metric_compatibility(conn)
        assert rep["metric"] < 1e-10, name
        assert rep["symplectic"] < 1e-10, name


def test_ricci_alternative_contraction_is_negative(curvs2):
    curv = curvs2["anisotropic"]
    ric = ricci(curv)
    alt = ricci(curv, alternative=True)
    for a in range(4):
        for b in range(4):
            assert alt[a][b].max_abs_diff(-1.0 * ric[a][b]) == 0.0


def test_scalar_curvature_split(corpus2, curvs2):
    geom = corpus2["anisotropic"]
    ric = ricci(curvs2["anisotropic"])
    stot, sh, sv = scalar_curvature(geom, ric)
    assert stot.max_abs_diff(sh + sv) < 1e-14
    # anisotropy genuinely curves the space
    assert abs(stot.value()) > 1e-2


# ---------------------------------------------------------------------------
# independent finite-difference oracle for the Ricci data


def _gamma_values(expr, base, h=0.0):
    """Connection values at a (possibly shifted) base point, low order."""
    ch = Chart.standard(2, base, jet_order=3)
    conn = normal_dconnection(build_lagrange(expr, ch))
    G = conn.gamma()
    return np.array([[[G[m][a][b].value() for b in range(4)] for a in range(4)]
                     for m in range(4)])


def test_fd_ricci_oracle(corpus2, curvs2):
    expr = LAGRANGIANS2["anisotropic"]
    geom = corpus2["anisotropic"]
    n, dim = 2, 4
    step = 1e-4
    base = np.array(BASE2, dtype=float)
    G0 = _gamma_values(expr, tuple(base))
    dG = []
    for mu in range(dim):
        shift = np.zeros(dim)
        shift[mu] = step
        plus = _gamma_values(expr, tuple(base + shift))
        minus = _gamma_values(expr, tuple(base - shift))
        dG.append((plus - minus) / (2 * step))
    Nv = np.array([[geom.N[a][i].value() for i in range(n)] for a in range(n)])
    eG = []
    for al in range(dim):
        if al < n:
            acc = dG[al].copy()
            for a in range(n):
                acc = acc - Nv[a][al] * dG[n + a]
            eG.append(acc)
        else:
            eG.append(dG[al])
    W = geom.anholonomy()
    Wv = np.array([[[W[s][a][b].value() for b in range(dim)]
                    for a in range(dim)] for s in range(dim)])
    rho = np.zeros((dim, dim, dim, dim), dtype=complex)
    for mu in range(dim):
        for nu in range(dim):
            for al in range(dim):
                for be in range(dim):
                    acc = eG[al][mu][be][nu] - eG[be][mu][al][nu]
                    for s in range(dim):
                        acc += G0[s][be][nu] * G0[mu][al][s]
                        acc -= G0[s][al][nu] * G0[mu][be][s]
                        acc -= Wv[s][al][be] * G0[mu][s][nu]
                    rho[mu][nu][al][be] = acc
    ric_fd = np.einsum("tatb->ab", rho)
    ric = ricci(curvs2["anisotropic"])
    ric_jet = np.array([[ric[a][b].value() for b in range(dim)]
                        for a in range(dim)])
    assert np.max(np.abs(ric_fd - ric_jet)) < 1e-4
    s_fd = 0.0
    for i in range(n):
        for j in range(n):
            s_fd += geom.g_h_inv[i][j].value() * ric_fd[i][j]
            s_fd += geom.g_v_inv[i][j].value() * ric_fd[n + i][n + j]
    stot, _, _ = scalar_curvature(geom, ric)
    assert abs(s_fd - stot.value()) < 1e-5


# ---------------------------------------------------------------------------
# Levi-Civita: coordinate Christoffels pushed into the frame


def _coordinate_christoffels(geom):
    n, ch = geom.n, geom.chart
    dim = 2 * n
    Gc = geom.sasaki_metric()
    E = geom.frame_components()
    # inverse lifted metric assembled from the frame blocks, no jet inversion
    Gi = [[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
    for mu in range(dim):
        for nu in range(dim):
            acc = Jet.zero(ch)
            for al in range(dim):
                for be in range(dim):
                    acc = acc + E[al][mu] * geom.frame_metric_inv(al, be) * E[be][nu]
            Gi[mu][nu] = acc
    dG = [[[Gc[s][l].partial(m) for m in range(dim)] for l in range(dim)]
          for s in range(dim)]
    Gamma = [[[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
             for _ in range(dim)]
    for nu in range(dim):
        for mu in range(dim):
            for la in range(dim):
                acc = Jet.zero(ch)
                for s in range(dim):
                    acc = acc + Gi[nu][s] * (dG[s][la][mu] + dG[s][mu][la]
                                             - dG[mu][la][s])
                Gamma[nu][mu][la] = 0.5 * acc
    return Gamma


def test_levi_civita_vs_coordinate_route(corpus2):
    geom = corpus2["anisotropic"]
    dim = 2 * geom.n
    Gc = _coordinate_christoffels(geom)
    E = geom.frame_components()
    P = geom.coordinate_to_frame()
    LC = levi_civita_frame(geom)
    for ga in range(dim):
        for al in range(dim):
            for be in range(dim):
                acc = Jet.zero(geom.chart)
                for nu in range(dim):
                    inner = Jet.zero(geom.chart)
                    for mu in range(dim):
                        inner = inner + E[al][mu] * E[be][nu].partial(mu)
                        for la in range(dim):
                            inner = inner + E[al][mu] * E[be][la] * Gc[nu][mu][la]
                    # reuse of `inner` name: nu-component of nabla_{e_al} e_be
                    acc = acc + P[ga][nu] * inner
                assert acc.max_abs_diff(LC[ga][al][be], through_order=5) < 1e-9, \
                    (ga, al, be)


def test_levi_civita_torsion_free(corpus2):
    geom = corpus2["quartic"]
    dim = 2 * geom.n
    LC = levi_civita_frame(geom)
    W = geom.anholonomy()
    for ga in range(dim):
        for al in range(dim):
            for be in range(dim):
                lhs = LC[ga][al][be] - LC[ga][be][al]
                assert lhs.max_abs_diff(W[ga][al][be]) < 1e-10


# ---------------------------------------------------------------------------
# distortion


def test_distortion_identity_holds(conns2):
    # validate=True raises on failure; conformal additionally integrable
    for name, conn in conns2.items():
        Z, LC = distortion(conn)
        if name == "conformal":
            worst = max(Z[g][a][b].max_abs() for g in range(4)
                        for a in range(4) for b in range(4))
            assert worst < 1e-11, "integrable case must have zero distortion"
        if name == "anisotropic":
            worst = max(Z[g][a][b].max_abs() for g in range(4)
                        for a in range(4) for b in range(4))
            assert worst > 1e-3, "anisotropy must distort"


def test_canonical_variant_coincides_on_hessian_data(corpus2):
    # with the canonical N the lowered mixed torsion is symmetric, so the
    # dN-corrected vertical family collapses onto the clone
    geom = corpus2["quartic"]
    conn = canonical_dconnection(geom)
    assert conn.family == "canonical"
    norm = normal_dconnection(geom)
    diff = max(conn.Lv[a][b][k].max_abs_diff(norm.Lv[a][b][k])
               for a in range(2) for b in range(2) for k in range(2))
    assert diff < 1e-11


def _split_block_geometry(order=6):
    ch = Chart.standard(2, BASE2, jet_order=order)
    zero, one = Jet.zero(ch), Jet.constant(ch, 1.0)
    g_h = [[eval_jet("1 + x1^2", ch), zero], [zero, one]]
    g_v = [[one, zero], [zero, eval_jet("1 + y3^2", ch)]]
    N = [[eval_jet("y4*x2", ch), zero],
         [eval_jet("y3", ch), eval_jet("x1*y4", ch)]]
    return build_from_blocks(ch, g_h, g_v, N)


def test_split_metric_variants(corpus2):
    geom = _split_block_geometry()
    norm = normal_dconnection(geom)
    canl = canonical_dconnection(geom)
    # variants genuinely differ once g_h != g_v
    diff = max(canl.Lv[a][b][k].max_abs_diff(norm.Lv[a][b][k])
               for a in range(2) for b in range(2) for k in range(2))
    assert diff > 1e-3
    for conn in (norm, canl):
        curv = curvature(conn)
        assert curv.cross_check_error < 1e-12
        rep = metric_compatibility(conn)
        assert rep["metric"] < 1e-12
        # split data is not almost Kaehler; the form residual must show it
        assert rep["symplectic"] > 1e-3
        Z, LC = distortion(conn)
        worst = max(
            (conn.gamma()[g][a][b] + Z[g][a][b]).max_abs_diff(LC[g][a][b])
            for g in range(4) for a in range(4) for b in range(4))
        assert worst < 1e-12


# ---------------------------------------------------------------------------
# Einstein residual plumbing (flat space sanity)


def test_einstein_residual_flat(corpus2):
    geom = corpus2["flat"]
    rep = einstein_residual(geom)
    assert rep["max_residual_at_base"] == 0.0
    rep = einstein_residual(geom, lam_h=0.3, lam_v=0.5)
    assert abs(rep["max_residual_at_base"] - 0.5) < 1e-14
    # jets accepted as sources
    lam = Jet.constant(geom.chart, 0.2)
    rep = einstein_residual(geom, lam_h=lam, lam_v=lam)
    assert abs(rep["max_residual_at_base"] - 0.2) < 1e-14


def test_einstein_residual_mixed_ricci_raises_index(corpus2, conns2, curvs2):
    geom = corpus2["anisotropic"]
    rep = einstein_residual(geom, conn=conns2["anisotropic"],
                            curv=curvs2["anisotropic"])
    ric = ricci(curvs2["anisotropic"])
    n = geom.n
    for a in range(2 * n):
        for b in range(2 * n):
            acc = Jet.zero(geom.chart)
            for s in range(2 * n):
                acc = acc + geom.frame_metric(a, s) * rep["mixed_ricci"][s][b]
            assert acc.max_abs_diff(ric[a][b], through_order=5) < 1e-10
