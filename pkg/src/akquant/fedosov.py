"""Flat connection on the Weyl bundle, flat lifts and the star product.

The machine: lift the d-connection's torsion and curvature into z-linear and
z-quadratic Weyl 2-forms, solve the degree-by-degree recursion for the
correction r, and certify flatness of

    D_r = -delta + D - (i/v) ad(r)

by applying it twice to a probe basis.  Flat sections chi(f) with
sigma(chi(f)) = f then carry the star product f * g = sigma(chi(f) o chi(g)).

The base covariant operator is

    D(a) = e^alpha ^ ( e_alpha(a) - Gamma^gamma_{alpha beta} z^beta dz_gamma a )
           + d(form part),     d(e^gamma) = -1/2 W^gamma_{mu nu} e^mu ^ e^nu,

with the anholonomy coefficients W of the N-adapted frame; the d(e) term is
what makes D^2 close onto the curvature alone.

All v-divisions go through WeylForm.div_v and are exact: wherever a product
appears under (i/v), its contraction-free slice cancels identically and is
never computed (min_m=1), so every surviving term carries the v-factor.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace as dataclass_replace

import numpy as np

from .dconnection import (
    DConnectionData,
    curvature,
    metric_compatibility,
    torsion_operator,
)
from .errors import InvariantViolationError
from .jets import Chart, Jet, multi_rank
from .lagrange_geometry import GeometryData
from .weyl import (
    SymplecticData,
    WeylForm,
    _chain_jet,
    _insert_sign,
    _merge_sign,
    contraction_plan,
    delta,
    delta_inv,
    graded_commutator,
    sigma,
    weyl_monomial,
    weyl_scalar,
    weyl_zero,
    wick_kernel,
    wick_product,
)

FLATNESS_TOL = 1e-8


def _nz(jet: Jet) -> bool:
    # exact-zero skip guard; unlike max_abs it never consults reliability
    return bool(np.any(jet.c))


@dataclass
class FedosovState:
    geom: GeometryData
    conn: DConnectionData
    symp: SymplecticData
    w: WeylForm
    T_W: WeylForm
    R_W: WeylForm
    r_by_degree: list
    r_total: WeylForm
    K_max: int
    flatness_report: dict = field(default=None)
    # cached coefficient-times-kernel jets for the ad(r) action
    _ad_cache: dict = field(default_factory=dict, repr=False)
    # D_r applied to unit monomials, keyed by (k, zeta, A); the operator is
    # C-linear and a derivation over coefficients, so this table determines
    # it everywhere
    _op_table: dict = field(default_factory=dict, repr=False)
    # base-point-only variant of _op_table: (k, zeta, A) -> {okey: complex}
    _val_table: dict = field(default_factory=dict, repr=False)
    # scalar ad-action atoms keyed by (zeta, piece degree), see _ad_atoms
    _atom_cache: dict = field(default_factory=dict, repr=False)
    # memoized low-jet-order copies, keyed by jet order
    _cuts: dict = field(default_factory=dict, repr=False)

    @property
    def chart(self) -> Chart:
        return self.geom.chart


def truncate_state(state: FedosovState, jet_order: int) -> FedosovState:
    """Copy of the state with every jet cut to `jet_order`.

    The recursion runs at high jet order so that iterated derivatives stay
    reliable; checks that only read low-order coefficients (base values and
    gradients in the flatness certificate, base-point star tables) are exact
    on the cut copy and the arithmetic is an order of magnitude cheaper.
    The graded coefficient layout makes the cut a prefix slice, and jet
    arithmetic is local in order, so tables recomputed on cut data agree
    with cut recomputed tables.
    """
    ch = state.chart
    if jet_order >= ch.jet_order:
        return state
    got = state._cuts.get(jet_order)
    if got is not None:
        return got
    ch2 = dataclass_replace(ch, jet_order=jet_order)
    m = ch2.size

    def cut(j):
        return Jet(ch2, j.c[:m], min(j.reliable, jet_order))

    def cut_tab(t):
        if t is None:
            return None
        if isinstance(t, Jet):
            return cut(t)
        return [cut_tab(x) for x in t]

    def cut_form(a):
        return WeylForm(ch2, {k: cut(j) for k, j in a.terms.items()},
                        a.v_max, a.s_max, a.dropped)

    g = state.geom
    geom2 = GeometryData(chart=ch2, g_h=cut_tab(g.g_h), g_v=cut_tab(g.g_v),
                         N=cut_tab(g.N), L=cut_tab(g.L), G=cut_tab(g.G))
    c = state.conn
    conn2 = DConnectionData(geom=geom2, Lhat=cut_tab(c.Lhat),
                            Chat=cut_tab(c.Chat), Lv=cut_tab(c.Lv),
                            Cv=cut_tab(c.Cv), family=c.family)
    s = state.symp
    symp2 = SymplecticData(chart=ch2, b=s.b, kernel=cut_tab(s.kernel),
                           mode=s.mode)
    out = FedosovState(
        geom=geom2, conn=conn2, symp=symp2, w=cut_form(state.w),
        T_W=cut_form(state.T_W), R_W=cut_form(state.R_W),
        r_by_degree=[cut_form(p) for p in state.r_by_degree],
        r_total=cut_form(state.r_total), K_max=state.K_max)
    state._cuts[jet_order] = out
    return out


# ---------------------------------------------------------------------------
# lifts


def theta_weyl(geom: GeometryData, v_max=None, s_max=None) -> WeylForm:
    """The symplectic 2-form as a z-free Weyl element
    (1/2) theta_{alpha beta} e^alpha ^ e^beta."""
    ch = geom.chart
    kw = {}
    if v_max is not None:
        kw["v_max"] = v_max
    if s_max is not None:
        kw["s_max"] = s_max
    th = geom.theta_down()
    out = weyl_zero(ch, **kw)
    dim = ch.dim
    for a in range(dim):
        for b in range(a + 1, dim):
            out = out + weyl_monomial(ch, th[a][b], 0, None, (a, b), **kw)
    return out


def w_element(geom: GeometryData, v_max=None, s_max=None) -> WeylForm:
    """z^alpha theta_{alpha beta} e^beta: conjugating delta into ad_Wick form."""
    ch = geom.chart
    kw = {}
    if v_max is not None:
        kw["v_max"] = v_max
    if s_max is not None:
        kw["s_max"] = s_max
    th = geom.theta_down()
    out = weyl_zero(ch, **kw)
    dim = ch.dim
    for a in range(dim):
        zeta = tuple(1 if i == a else 0 for i in range(dim))
        for b in range(dim):
            if not _nz(th[a][b]):
                continue
            out = out + weyl_monomial(ch, th[a][b], 0, zeta, (b,), **kw)
    return out


def lift_torsion_curvature(conn: DConnectionData, theta=None,
                           v_max=None, s_max=None):
    """(T_W, R_W): torsion and curvature 2-forms lowered with theta and
    lifted to z-linear / z-quadratic Weyl elements,

        T_W = 1/2 theta_{alpha mu} T^mu_{beta gamma} z^alpha e^beta ^ e^gamma
        R_W = 1/4 theta_{alpha mu} R^mu_{nu beta gamma} z^alpha z^nu
              e^beta ^ e^gamma,

    with T, R in operator slot order (the order in which the commutator
    definition feeds the form arguments); calibrated by the identities
    delta D + D delta = (i/v) ad(T_W) and D^2 = -(i/v) ad(R_W).
    """
    geom = conn.geom
    ch = geom.chart
    dim = ch.dim
    kw = {}
    if v_max is not None:
        kw["v_max"] = v_max
    if s_max is not None:
        kw["s_max"] = s_max
    th = theta if theta is not None else geom.theta_down()
    T_op = torsion_operator(conn)
    curv = curvature(conn, cross_check=False)
    R_full = curv.R_full

    T_W = weyl_zero(ch, **kw)
    for al in range(dim):
        zeta = tuple(1 if i == al else 0 for i in range(dim))
        for be in range(dim):
            for ga in range(be + 1, dim):
                acc = Jet.zero(ch)
                for mu in range(dim):
                    if not _nz(th[al][mu]):
                        continue
                    acc = acc + th[al][mu] * T_op[mu][be][ga]
                if not _nz(acc):
                    continue
                T_W = T_W + weyl_monomial(ch, acc, 0, zeta, (be, ga), **kw)

    R_W = weyl_zero(ch, **kw)
    for al in range(dim):
        for nu in range(dim):
            zeta = list(0 for _ in range(dim))
            zeta[al] += 1
            zeta[nu] += 1
            zeta = tuple(zeta)
            for be in range(dim):
                for ga in range(be + 1, dim):
                    acc = Jet.zero(ch)
                    for mu in range(dim):
                        if not _nz(th[al][mu]):
                            continue
                        # operator slot order: R_full stores the printed
                        # label order, form slots reversed
                        acc = acc + th[al][mu] * R_full[mu][nu][ga][be]
                    if not _nz(acc):
                        continue
                    R_W = R_W + weyl_monomial(
                        ch, 0.5 * acc, 0, zeta, (be, ga), **kw)
    return T_W, R_W


# ---------------------------------------------------------------------------
# the covariant operator


def dhat_weyl(a: WeylForm, conn: DConnectionData) -> WeylForm:
    """D(a): N-elongated base derivatives wedged in from the left, the
    connection acting on z-slots, and the exterior derivative of the form
    part through the anholonomy coefficients."""
    geom = conn.geom
    ch = geom.chart
    dim = ch.dim
    G = conn.gamma()
    W = geom.anholonomy()
    out = weyl_zero(ch, a.v_max, a.s_max)
    out.dropped = a.dropped
    for (k, zeta, A), c in a.terms.items():
        for al in range(dim):
            sA, alA = _insert_sign(al, A)
            if sA is None:
                continue
            # e_alpha on the coefficient
            ec = geom.e(c, al)
            if _nz(ec):
                out._accum((k, zeta, alA), sA * ec)
            # -Gamma^gamma_{alpha beta} z^beta d/dz^gamma
            for ga in range(dim):
                if zeta[ga] == 0:
                    continue
                for be in range(dim):
                    gam = G[ga][al][be]
                    if not _nz(gam):
                        continue
                    nz = list(zeta)
                    nz[ga] -= 1
                    nz[be] += 1
                    out._accum((k, tuple(nz), alA),
                               (-sA * zeta[ga]) * (gam * c))
        # exterior derivative of the form part
        for pos, aj in enumerate(A):
            rest = A[:pos] + A[pos + 1:]
            lead = (-1.0) ** pos
            for mu in range(dim):
                for nu in range(mu + 1, dim):
                    wj = W[aj][mu][nu]
                    if not _nz(wj):
                        continue
                    s2, nuA = _insert_sign(nu, rest)
                    if s2 is None:
                        continue
                    s1, muA = _insert_sign(mu, nuA)
                    if s1 is None:
                        continue
                    out._accum((k, zeta, muA),
                               (-lead * s1 * s2) * (wj * c))
    return out.pruned()


def ad_r_over_v(state: FedosovState, a: WeylForm, extra=None,
                out_deg_max=None) -> WeylForm:
    """(i/v) [r, a]; the m = 0 slice is skipped (it cancels identically), so
    every surviving term carries the v needed for the division.

    out_deg_max windows the result: ad(r_j)/v maps Deg d to exactly
    Deg d + j - 2, so input terms above the window for a given piece are
    skipped without loss.  Coefficient-times-kernel products are cached on
    the state across calls (the r side repeats for every probe and every
    lift iteration).
    """
    if extra is not None:
        comm = graded_commutator(extra, a, state.symp, min_m=1)
        return 1j * comm.div_v(1)
    out = weyl_zero(state.chart, a.v_max, a.s_max)
    out.dropped = a.dropped
    cache = state._ad_cache
    symp = state.symp
    a_parts = a.deg_parts()
    for j, piece in enumerate(state.r_by_degree):
        if not piece.terms:
            continue
        for d_in, part in a_parts.items():
            if out_deg_max is not None and d_in + j - 2 > out_deg_max:
                continue
            _ad_piece_into(out, j, piece, part, symp, cache)
    return (1j * out.div_v(1)).pruned()


def _ad_piece_into(out, j, piece, a, symp, cache):
    """Accumulate [r_piece, a] (min_m = 1) into `out` via contraction plans,
    caching the r-side coefficient-times-kernel jets (they repeat for every
    probe and every lift iteration)."""
    for key2, c2 in a.terms.items():
        k2, z2, A2 = key2
        q2 = len(A2) % 2
        c2_unit = (not c2.c[1:].any()) and c2.c[0] == 1.0
        for key1, c1 in piece.terms.items():
            k1, z1, A1 = key1
            sign_f, A = _merge_sign(A1, A2)
            if sign_f is not None:
                # forward r o a: kernel rows from r, columns from a
                for m_tot, zo, kjet, parts in contraction_plan(symp, z1, z2):
                    okey = (k1 + k2 + m_tot, zo, A)
                    if kjet is not None:
                        ck = (j, key1, z2, m_tot, zo)
                        left = cache.get(ck)
                        if left is None:
                            left = c1 * kjet
                            cache[ck] = left
                        jet = (sign_f * left) if c2_unit \
                            else sign_f * (left * c2)
                        out._accum(okey, jet)
                    else:
                        for sig, w in parts:
                            ck = (j, key1, sig)
                            left = cache.get(ck)
                            if left is None:
                                left = c1 * _chain_jet(symp, sig)
                                cache[ck] = left
                            sw = sign_f * w
                            jet = (sw * left) if c2_unit \
                                else sw * (left * c2)
                            out._accum(okey, jet)
            # backward a o r with the graded sign
            sign_b, Ab = _merge_sign(A2, A1)
            if sign_b is None:
                continue
            sign_b = -sign_b if q2 == 0 else sign_b
            for m_tot, zo, kjet, parts in contraction_plan(symp, z2, z1):
                okey = (k1 + k2 + m_tot, zo, Ab)
                if kjet is not None:
                    ck = (j, key1, z2, m_tot, zo, "b")
                    right = cache.get(ck)
                    if right is None:
                        right = c1 * kjet
                        cache[ck] = right
                    jet = (sign_b * right) if c2_unit \
                        else sign_b * (right * c2)
                    out._accum(okey, jet)
                else:
                    for sig, w in parts:
                        ck = (j, key1, sig, "b")
                        right = cache.get(ck)
                        if right is None:
                            right = c1 * _chain_jet(symp, sig)
                            cache[ck] = right
                        sw = sign_b * w
                        jet = (sw * right) if c2_unit \
                            else sw * (right * c2)
                        out._accum(okey, jet)


def dhat_r(a: WeylForm, state: FedosovState, out_deg_max=None) -> WeylForm:
    """The full Fedosov operator -delta + D - (i/v) ad(r).

    With out_deg_max the ad part is windowed (see ad_r_over_v); components of
    the result above the window are then partial and callers must discard
    them."""
    return (-1.0) * delta(a) + dhat_weyl(a, state.conn) \
        - ad_r_over_v(state, a, out_deg_max=out_deg_max)


# ---------------------------------------------------------------------------
# recursion


def fedosov_recursion(conn: DConnectionData, geom: GeometryData = None,
                      K_max: int = 6, kernel: str = "wick",
                      v_max=None, s_max=None) -> FedosovState:
    """Solve for r degree by degree:

        r(2) = delta_inv T_W
        r(3) = delta_inv( R_W + D r(2) - (i/v) r(2) o r(2) )
        r(k+3) = delta_inv( D r(k+2) - (i/v) sum_{l+m=k} r(l+2) o r(m+2) )

    keeping each step Deg-homogeneous; asserts delta_inv r(k) = 0 and
    deg_a r(k) = 1 throughout.  The convolution sum over l+m=k is the
    degree-consistent reading of the recursion; homogeneity forces it.

    Pieces are computed through Deg K_max + 1, one past the certificate
    window: D_r^2 = (i/v) ad(B) with B zero exactly as far as the recursion
    has been solved, and ad of the first unsolved piece reaches down to
    output degree (piece Deg) - 2 + (probe z-degree) >= K_max on the probe
    basis, so the extra piece keeps every reported degree <= K_max - 1
    clean.
    """
    if geom is None:
        geom = conn.geom
    if K_max < 3:
        raise ValueError("K_max must be at least 3")
    if s_max is None:
        s_max = max(K_max + 2, 8)
    # the whole construction needs a symplectic connection: the z-symmetric
    # curvature lift only captures all of R when theta is parallel
    compat = metric_compatibility(conn)
    if compat["symplectic"] > 1e-8:
        raise InvariantViolationError(
            f"connection does not preserve the symplectic form "
            f"(residual {compat['symplectic']:.3e}); the curvature lift "
            "would be lossy"
        )
    if kernel == "wick":
        symp = wick_kernel(geom)
    elif kernel == "moyal":
        base = wick_kernel(geom)
        up = geom.theta_up()
        dim = geom.chart.dim
        ker = [[up[a][b] if up[a][b].max_abs() != 0.0 else None
                for b in range(dim)] for a in range(dim)]
        symp = SymplecticData(chart=geom.chart, b=base.b, kernel=ker,
                              mode="moyal")
    else:
        raise ValueError(f"unknown kernel mode {kernel!r}")

    T_W, R_W = lift_torsion_curvature(conn, v_max=v_max, s_max=s_max)
    w = w_element(geom, v_max=T_W.v_max, s_max=s_max)
    zero = weyl_zero(geom.chart, T_W.v_max, s_max)

    r = [zero, zero]  # r(0) = r(1) = 0
    r.append(delta_inv(T_W))
    state = FedosovState(geom=geom, conn=conn, symp=symp, w=w, T_W=T_W,
                         R_W=R_W, r_by_degree=r, r_total=zero, K_max=K_max)
    if K_max >= 3:
        rhs = R_W + dhat_weyl(r[2], conn) - _over_v(
            wick_product(r[2], r[2], symp, min_m=1))
        r.append(delta_inv(rhs).deg_part(3))
    for k in range(1, K_max - 1):
        # the m = 0 wedge slices cancel pairwise across the convolution
        conv = zero
        for l in range(k + 1):
            m = k - l
            conv = conv + wick_product(r[l + 2], r[m + 2], symp, min_m=1)
        rhs = dhat_weyl(r[k + 2], conn) - _over_v(conv)
        r.append(delta_inv(rhs).deg_part(k + 3))
    total = zero
    for k, piece in enumerate(r):
        if delta_inv(piece).max_abs() > 1e-12:
            raise InvariantViolationError(
                f"recursion step {k} violates the normalization "
                "delta_inv r = 0"
            )
        for (kk, zeta, A) in piece.terms:
            if len(A) != 1:
                raise InvariantViolationError(
                    f"recursion step {k} produced deg_a != 1"
                )
        total = total + piece
    state.r_by_degree = r
    state.r_total = total
    return state


def _over_v(x: WeylForm) -> WeylForm:
    return 1j * x.div_v(1)


# ---------------------------------------------------------------------------
# flatness certificate


def _probe_keys(chart: Chart, s_cap=3, a_cap=1):
    dim = chart.dim
    zetas = []

    def rec(i, left, cur):
        if i == dim:
            zetas.append(tuple(cur))
            return
        for t in range(left + 1):
            rec(i + 1, left - t, cur + [t])

    rec(0, s_cap, [])
    As = [()]
    if a_cap >= 1:
        As += [(a,) for a in range(dim)]
    return [(0, z, A) for z in zetas for A in As]


def probe_basis(chart: Chart, s_cap=3, a_cap=1, v_max=None, s_max=None):
    """Monomials z^zeta e^A with deg_s <= s_cap, deg_a <= a_cap; D_r^2 is a
    derivation, so vanishing here extends by Leibniz."""
    kw = {}
    if v_max is not None:
        kw["v_max"] = v_max
    if s_max is not None:
        kw["s_max"] = s_max
    return [weyl_monomial(chart, 1.0, k, z, A, **kw)
            for (k, z, A) in _probe_keys(chart, s_cap, a_cap)]


def _table_entry(state: FedosovState, key) -> WeylForm:
    """D_r applied to the unit monomial for `key`, ad part windowed at
    K_max, cached on the state."""
    got = state._op_table.get(key)
    if got is None:
        k, zeta, A = key
        E = weyl_monomial(state.chart, 1.0, k, zeta, A,
                          v_max=state.r_total.v_max,
                          s_max=state.r_total.s_max)
        got = dhat_r(E, state, out_deg_max=state.K_max).pruned()
        state._op_table[key] = got
    return got


def _ad_atoms(state: FedosovState, z2, j) -> dict:
    """Base values of the ad(r_j) action against the z-signature `z2`.

    A jet product's value at the base point is the product of base values,
    so for a unit-coefficient input monomial the whole contraction sum
    collapses to scalars.  Returns {(dir, A1, k1 + m, zeta_out): complex}
    where dir is "f" for r o a and "b" for a o r; the merge sign and the
    backward graded sign depend on the input's form part and are applied by
    the caller.  Cached per (z2, j) on the state.
    """
    akey = (z2, j)
    got = state._atom_cache.get(akey)
    if got is None:
        symp = state.symp
        got = {}
        for (k1, z1, A1), c1 in state.r_by_degree[j].terms.items():
            c10 = complex(c1.c[0])
            if not c10:
                continue
            for dr, za, zb in (("f", z1, z2), ("b", z2, z1)):
                for m_tot, zo, kjet, parts in contraction_plan(symp, za, zb):
                    if kjet is not None:
                        val = c10 * kjet.c[0]
                    else:
                        val = c10 * sum(
                            w * _chain_jet(symp, sig).c[0]
                            for sig, w in parts)
                    key = (dr, A1, k1 + m_tot, zo)
                    got[key] = got.get(key, 0.0j) + val
        got = {k: v for k, v in got.items() if v}
        state._atom_cache[akey] = got
    return got


def _entry_values(state: FedosovState, key) -> dict:
    """Base values of _table_entry(state, key) without building the jets.

    The delta and D parts cost one cheap jet pass on the unit monomial; the
    ad part is assembled from _ad_atoms with the same per-piece Deg window
    and the same v/s caps as the jet path, so the two agree exactly.
    """
    got = state._val_table.get(key)
    if got is not None:
        return got
    k2, z2, A2 = key
    full = state._op_table.get(key)
    if full is not None:
        got = {k: complex(j.c[0]) for k, j in full.terms.items() if j.c[0]}
        state._val_table[key] = got
        return got
    v_max = state.r_total.v_max
    s_max = state.r_total.s_max
    E = weyl_monomial(state.chart, 1.0, k2, z2, A2, v_max=v_max, s_max=s_max)
    base = (-1.0) * delta(E) + dhat_weyl(E, state.conn)
    got = {}
    for okey, jet in base.terms.items():
        v0 = complex(jet.c[0])
        if v0:
            got[okey] = v0
    q2 = len(A2) % 2
    d_in = 2 * k2 + sum(z2)
    for j, piece in enumerate(state.r_by_degree):
        if not piece.terms or d_in + j - 2 > state.K_max:
            continue
        for (dr, A1, dv, zo), aval in _ad_atoms(state, z2, j).items():
            if dr == "f":
                sgn, A = _merge_sign(A1, A2)
            else:
                sgn, A = _merge_sign(A2, A1)
                if sgn is not None and q2 == 0:
                    sgn = -sgn
            if sgn is None:
                continue
            # the jet path caps before div_v eats one v, mirror that
            if k2 + dv > v_max or sum(zo) > s_max:
                continue
            okey = (k2 + dv - 1, zo, A)
            # dhat_r subtracts (i/v) ad(r), hence the -i; div_v eats one v
            got[okey] = got.get(okey, 0.0j) - 1j * sgn * aval
    got = {k: v for k, v in got.items() if v}
    state._val_table[key] = got
    return got


def _frame_base_values(state: FedosovState):
    """Base values of the frame components and the positions of the linear
    jet coefficients: everything a base-point sweep of D_r needs."""
    F0 = [[complex(j.value()) for j in row]
          for row in state.geom.frame_components()]
    dim = state.chart.dim
    rank = multi_rank(dim, state.chart.jet_order)
    lin = [rank[tuple(1 if i == b else 0 for i in range(dim))]
           for b in range(dim)]
    return F0, lin


def _dhat_r_values(a: WeylForm, state: FedosovState, F0, lin) -> dict:
    """Base-point values of D_r(a) as {term key: complex}.

    D_r is C-linear and a derivation over scalar coefficients,

        D_r(c E) = e_alpha(c) e^alpha ^ E + c D_r(E),

    and at the base point the first term only reads the gradient of c while
    the second reads c and the operator table on unit monomials, so the
    whole sweep is scalar arithmetic.  Keys above Deg K_max are partial
    (the table is windowed) and callers must treat them as unverified.
    """
    dim = state.chart.dim
    acc = {}
    for (k, zeta, A), c in a.terms.items():
        for al in range(dim):
            sA, alA = _insert_sign(al, A)
            if sA is None:
                continue
            v = 0.0j
            for be in range(dim):
                gb = c.c[lin[be]]
                if gb:
                    v += F0[al][be] * gb
            if v:
                key2 = (k, zeta, alA)
                acc[key2] = acc.get(key2, 0.0j) + sA * v
        c0 = complex(c.c[0])
        if c0:
            for okey, g0 in _entry_values(state, (k, zeta, A)).items():
                acc[okey] = acc.get(okey, 0.0j) + c0 * g0
    return acc


def _bracket_apply(a: WeylForm, state: FedosovState) -> WeylForm:
    """(D - (i/v) ad(r))(a), the fixed-point bracket for flat-section
    lifts, evaluated through the operator table.

    The table holds the full D_r on unit monomials, so delta is added back
    per key, and the derivation rule supplies the coefficient-gradient
    term: bracket(c E) = c (table(E) + delta(E)) + e_alpha(c) e^alpha ^ E.
    One jet product per table term instead of one per contraction pair.
    """
    ch = state.chart
    dim = ch.dim
    geom = state.geom
    out = weyl_zero(ch, a.v_max, a.s_max)
    out.dropped = a.dropped
    for (k, zeta, A), c in a.terms.items():
        c_const = not c.c[1:].any()
        c0 = complex(c.c[0])
        for okey, gjet in _table_entry(state, (k, zeta, A)).terms.items():
            if c_const:
                if c0:
                    out._accum(okey, c0 * gjet)
            else:
                out._accum(okey, c * gjet)
        for al in range(dim):
            sA, alA = _insert_sign(al, A)
            if sA is None:
                continue
            if zeta[al] > 0:
                nz = list(zeta)
                nz[al] -= 1
                out._accum((k, tuple(nz), alA), (sA * zeta[al]) * c)
            if not c_const:
                ec = geom.e(c, al)
                if _nz(ec):
                    out._accum((k, zeta, alA), sA * ec)
    return out


def flatness_check(state: FedosovState, tol: float = FLATNESS_TOL) -> dict:
    """Apply D_r twice to the probe basis; report the max magnitude per
    total degree.  Degrees <= K_max - 1 are verified against `tol`; higher
    degrees are truncation-contaminated and only listed.

    After two operator applications the jet reliability certifies the base
    value of each coefficient and nothing more, so the second application
    is evaluated at the base point (see _dhat_r_values) on a copy of the
    state cut to low jet order: base values and gradients are all the sweep
    reads, and they are exact on the cut."""
    work = state if state.chart.jet_order <= 2 else truncate_state(state, 2)
    K = work.K_max
    F0, lin = _frame_base_values(work)
    per_degree = {d: 0.0 for d in range(K)}
    unverified = set()
    for pkey in _probe_keys(work.chart):
        mid = _table_entry(work, pkey)
        # degrees above K_max cannot reach the verified window (only delta
        # lowers Deg, by one); dropping them is exact for the report
        kept = _deg_window(mid, K)
        for (k, zeta, A), val in _dhat_r_values(kept, work, F0, lin).items():
            d = 2 * k + sum(zeta)
            if d <= K - 1:
                per_degree[d] = max(per_degree[d], abs(val))
            else:
                unverified.add(d)
    worst = max(per_degree.values(), default=0.0)
    report = {
        "per_degree": dict(sorted(per_degree.items())),
        "unverified": sorted(unverified),
        "max_verified": worst,
        "passed": bool(worst < tol),
        "tol": tol,
    }
    state.flatness_report = report
    return report


def _deg_window(a: WeylForm, dmax: int) -> WeylForm:
    out = WeylForm(a.chart, {}, a.v_max, a.s_max, a.dropped)
    for (k, zeta, A), jet in a.terms.items():
        if 2 * k + sum(zeta) <= dmax:
            out._accum((k, zeta, A), jet)
    return out


# ---------------------------------------------------------------------------
# flat sections and the star product


def chi_lift(f, state: FedosovState, tol: float = 1e-9,
             v_cone: int = None) -> WeylForm:
    """The flat section with sigma(chi(f)) = f via the fixed point
    chi = f + delta_inv( D chi - (i/v) ad(r) chi ).

    Each sweep of the fixed point freezes one more total degree, so the
    iteration is evaluated shell by shell: the Deg-t component is delta_inv
    of the Deg-(t-1) part of the bracket, and that part only reads shells
    below t (D preserves Deg; ad(r_j)/v raises it by j - 2 >= 0).

    The lift is computed through Deg <= K_max, which pins the induced star
    product through v^(K_max // 2).  Flatness of the result is re-checked
    at the base point per degree <= K_max - 1 against `tol`.

    v_cone drops shell terms with k + |zeta| > v_cone.  A term only reaches
    the scalar part of a product truncated at v^v_cone if k + |zeta| stays
    within that bound (every kernel contraction trades one z for one v),
    and the bound never decreases shell to shell: an ad(r_j) hit with m
    contractions shifts k + |zeta| by k_r + |zeta_r| - m - 1 >= k_r - 1
    >= -1, D preserves or lowers it by one, and delta_inv adds one back.
    The pruned lift is NOT flat (discarded terms carry part of the
    residual), so the flatness sweep is skipped; use it only to feed
    truncated star products.
    """
    ch = state.chart
    if not isinstance(f, Jet):
        f = Jet.constant(ch, f)
    K = state.K_max
    v_max, s_max = state.r_total.v_max, state.r_total.s_max
    shells = [weyl_scalar(ch, f, v_max, s_max)]
    pending: dict = {}
    for t in range(1, K + 1):
        # bracket(shell Deg t-1) lands at Deg t-1 (D part) and above (ad
        # parts); stash the higher slices for the shells they feed.
        for d, part in _bracket_apply(shells[t - 1], state).deg_parts().items():
            if t - 1 <= d <= K - 1:
                got = pending.get(d)
                pending[d] = part if got is None else got + part
        sh = delta_inv(pending.pop(t - 1, weyl_zero(ch, v_max, s_max)))
        if v_cone is not None:
            kept = weyl_zero(ch, v_max, s_max)
            kept.dropped = sh.dropped
            for (k, zeta, A), jet in sh.terms.items():
                if k + sum(zeta) <= v_cone:
                    kept._accum((k, zeta, A), jet)
            sh = kept
        shells.append(sh)
    chi = shells[0]
    for sh in shells[1:]:
        chi = chi + sh
    if chi.dropped:
        raise InvariantViolationError(
            "flat-section lift overflowed the caps; raise s_max"
        )
    if sigma(chi).max_abs_diff(
            weyl_scalar(ch, f, chi.v_max, chi.s_max)) > 1e-12:
        raise InvariantViolationError("flat section lost its symbol")
    if v_cone is None:
        F0, lin = _frame_base_values(state)
        worst = 0.0
        for (k, zeta, A), val in _dhat_r_values(chi, state, F0, lin).items():
            if 2 * k + sum(zeta) <= K - 1:
                worst = max(worst, abs(val))
        if worst > tol:
            raise InvariantViolationError(
                f"lift is not flat through the working degree: {worst:.3e}"
            )
    return chi


def _complete_contractions(z1, z2, pairs):
    """(M, comb) over contraction matrices that consume every z on both
    sides; comb = z1! z2! / M! (the complete-contraction specialization of
    the product's combinatorial factor)."""
    dim = len(z1)
    by_a = {}
    for idx, (a, b) in enumerate(pairs):
        by_a.setdefault(a, []).append((idx, b))
    slots = [a for a in range(dim) if z1[a] > 0]
    for a in slots:
        if a not in by_a:
            return []
    out = []
    M = [0] * len(pairs)
    rem2 = list(z2)
    pre = 1.0
    for a in range(dim):
        pre *= math.factorial(z1[a]) * math.factorial(z2[a])

    def rec(si):
        if si == len(slots):
            if any(rem2):
                return
            denom = 1.0
            for m in M:
                denom *= math.factorial(m)
            out.append((tuple(M), pre / denom))
            return
        opts = by_a[slots[si]]

        def dist(oi, left):
            if oi == len(opts):
                if left == 0:
                    rec(si + 1)
                return
            idx, b = opts[oi]
            for m in range(min(left, rem2[b]) + 1):
                M[idx] = m
                rem2[b] -= m
                dist(oi + 1, left - m)
                rem2[b] += m
            M[idx] = 0

        dist(0, z1[slots[si]])

    rec(0)
    return out


def sigma_wick(a: WeylForm, b: WeylForm, s: SymplecticData) -> WeylForm:
    """sigma(a o b) without building the full product: only complete
    z-contractions of form-free terms survive the projection."""
    ch = a.chart
    dim = ch.dim
    out = weyl_zero(ch, a.v_max, a.s_max)
    pairs = [(al, be) for al in range(dim) for be in range(dim)
             if s.kernel[al][be] is not None]
    for (k1, z1, A1), c1 in a.terms.items():
        if A1:
            continue
        s1 = sum(z1)
        for (k2, z2, A2), c2 in b.terms.items():
            if A2:
                continue
            # a complete contraction consumes one z from each side per pair
            if s1 != sum(z2):
                continue
            usable = [(al, be) for (al, be) in pairs
                      if z1[al] > 0 and z2[be] > 0]
            base = None
            for M, comb in _complete_contractions(z1, z2, usable):
                m_tot = s1
                if base is None:
                    base = c1 * c2
                coeff = base * (comb * (0.5j) ** m_tot)
                for (al, be), m in zip(usable, M):
                    for _ in range(m):
                        coeff = coeff * s.kernel[al][be]
                out._accum((k1 + k2 + m_tot, (0,) * dim, ()), coeff)
    return out.pruned()


def star(f, g, state: FedosovState, chi_f: WeylForm = None,
         chi_g: WeylForm = None, v_cone: int = None) -> dict:
    """f * g = sigma( chi(f) o chi(g) ) as {v-power: Jet}.

    With v_cone the lifts are cone-pruned and the series is only returned
    through that v-power (higher entries would be incomplete)."""
    if chi_f is None:
        chi_f = chi_lift(f, state, v_cone=v_cone)
    if chi_g is None:
        chi_g = chi_lift(g, state, v_cone=v_cone)
    prod = sigma_wick(chi_f, chi_g, state.symp)
    ch = state.chart
    zeta0 = (0,) * ch.dim
    out = {}
    for (k, zeta, A), jet in prod.terms.items():
        if zeta == zeta0 and A == () and (v_cone is None or k <= v_cone):
            out[k] = out.get(k, Jet.zero(ch)) + jet
    return out


@dataclass
class StarProduct:
    """Cached star-product evaluator with a JSON-exportable table."""

    state: FedosovState
    v_order: int = 3
    _lifts: dict = field(default_factory=dict, repr=False)

    def lift(self, key, f):
        got = self._lifts.get(key)
        if got is None:
            got = chi_lift(f, self.state, v_cone=self.v_order)
            self._lifts[key] = got
        return got

    def __call__(self, f: Jet, g: Jet, key_f=None, key_g=None) -> dict:
        chi_f = self.lift(key_f, f) if key_f is not None else None
        chi_g = self.lift(key_g, g) if key_g is not None else None
        series = star(f, g, self.state, chi_f=chi_f, chi_g=chi_g,
                      v_cone=self.v_order)
        return {k: v for k, v in series.items() if k <= self.v_order}

    def table_rows(self, basis: dict) -> list:
        """Rows (name_f, name_g, order, base-point coefficient) over a named
        basis of jets."""
        rows = []
        for nf, f in basis.items():
            for ng, g in basis.items():
                series = self(f, g, key_f=nf, key_g=ng)
                for order in sorted(series):
                    val = series[order].value()
                    rows.append({
                        "f": nf, "g": ng, "order": order,
                        "re": float(val.real), "im": float(val.imag),
                    })
        return rows


def star_fingerprint(rows: list, digits: int = 6) -> str:
    """Stable hash of a star table, coefficients rounded to `digits`
    significant figures (coarser than the gauge-agreement tolerance, so
    equivalent states print identical strings)."""
    canon = []
    for r in rows:
        re = float(f"%.{digits}g" % r["re"])
        im = float(f"%.{digits}g" % r["im"])
        canon.append((r["f"], r["g"], r["order"],
                      re if re != 0.0 else 0.0,
                      im if im != 0.0 else 0.0))
    canon.sort()
    return hashlib.sha256(json.dumps(canon).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Weyl curvature and gauge moves


def weyl_curvature(state: FedosovState, tol: float = FLATNESS_TOL) -> dict:
    """C_W = R_W + D(w + r) - (i/v)(w + r) o (w + r); asserts the central
    form C_W = -theta + vOmega with vOmega z-free and closed.

    Everything is windowed at Deg <= K_max - 1: higher components read the
    unsolved tail of the recursion (and the derivative of its last piece),
    so they are not meaningful.  Returns the windowed element, the scalar
    2-form series vOmega, and the residuals (z-dependence, closure,
    centrality on probes).
    """
    geom = state.geom
    K1 = state.K_max - 1
    tr = state.w + state.r_total
    # a Wick pair lands at Deg d1 + d2 exactly (each contraction trades two
    # z-degrees for two v-degrees) and /v then shifts it down by 2, so pairs
    # beyond K_max + 1 never reach the window
    parts = tr.deg_parts()
    prod = weyl_zero(state.chart, tr.v_max, tr.s_max)
    for d1, p1 in parts.items():
        for d2, p2 in parts.items():
            if d1 + d2 <= state.K_max + 1:
                prod = prod + wick_product(p1, p2, state.symp, min_m=1)
    wc = state.R_W + dhat_weyl(_deg_window(tr, K1), state.conn) - _over_v(prod)
    wc = _deg_window(wc, K1)
    th_w = _deg_window(
        theta_weyl(geom, v_max=wc.v_max, s_max=wc.s_max), state.K_max - 1)
    v_om = wc + th_w
    z_resid = 0.0
    scalar_part = weyl_zero(state.chart, wc.v_max, wc.s_max)
    for (k, zeta, A), jet in v_om.terms.items():
        if sum(zeta) > 0:
            z_resid = max(z_resid, jet.max_abs())
        else:
            scalar_part._accum((k, zeta, A), jet)
    if z_resid > tol:
        raise InvariantViolationError(
            f"Weyl curvature has a non-central z-dependent remainder "
            f"{z_resid:.3e}"
        )
    closure = dhat_weyl(scalar_part, state.conn).max_abs()
    centrality = 0.0
    for p in probe_basis(state.chart, s_cap=2, a_cap=1,
                         v_max=wc.v_max, s_max=wc.s_max):
        centrality = max(centrality,
                         graded_commutator(wc, p, state.symp).max_abs())
    return {
        "wC": wc,
        "vOmega": scalar_part.pruned(),
        "z_residual": z_resid,
        "closure_residual": closure,
        "centrality": centrality,
    }


def wick_inverse(B: WeylForm, s: SymplecticData) -> WeylForm:
    """Neumann-series inverse of B = 1 + B1 with Deg(B1) >= 1."""
    ch = B.chart
    one = weyl_scalar(ch, 1.0, B.v_max, B.s_max)
    B1 = B - one
    if B1.deg_part(0).max_abs() > 1e-12:
        raise InvariantViolationError(
            "gauge element must be 1 + (positive-degree part)"
        )
    inv = one
    power = one
    for _ in range(2 * B.s_max + 2):
        power = (-1.0) * wick_product(power, B1, s)
        if power.max_abs() == 0.0:
            break
        inv = inv + power
    return inv


def gauge_transform(state: FedosovState, B: WeylForm,
                    check_order: int = 2, probes=None,
                    tol: float = 1e-8) -> FedosovState:
    """Equivalent state with r -> r + i v B^{-1} o (D_r B); the star products
    of the two states must agree through `check_order` in v on the probe
    jets (default: the coordinate functions)."""
    s = state.symp
    G = wick_product(wick_inverse(B, s), dhat_r(B, state), s)
    r_new = state.r_total + 1j * G.times_v(1)
    # list index doubles as the total degree in the windowed ad action,
    # so missing degrees must be filled with zeros
    parts = r_new.deg_parts()
    top = max(parts, default=0)
    zero = weyl_zero(state.chart, r_new.v_max, r_new.s_max)
    new_state = FedosovState(
        geom=state.geom, conn=state.conn, symp=s, w=state.w,
        T_W=state.T_W, R_W=state.R_W,
        r_by_degree=[parts.get(d, zero) for d in range(top + 1)],
        r_total=r_new, K_max=state.K_max)
    ch = state.chart
    if probes is None:
        probes = [Jet.coordinate(ch, i) for i in range(ch.dim)]
    sp_old = StarProduct(state, v_order=check_order)
    sp_new = StarProduct(new_state, v_order=check_order)
    worst = 0.0
    for kf, f in enumerate(probes):
        for kg, g in enumerate(probes):
            s_old = sp_old(f, g, key_f=kf, key_g=kg)
            s_new = sp_new(f, g, key_f=kf, key_g=kg)
            for order in range(check_order + 1):
                a = s_old.get(order, Jet.zero(ch))
                b = s_new.get(order, Jet.zero(ch))
                worst = max(worst, a.max_abs_diff(b))
    if worst > tol:
        raise InvariantViolationError(
            f"gauge-transformed star product deviates by {worst:.3e} "
            f"through v^{check_order}"
        )
    return new_state


# ---------------------------------------------------------------------------
# endomorphism sections (matrix-valued, small rank)


def matrix_wick(A, B, s: SymplecticData):
    k = len(A)
    return [[_msum(wick_product(A[i][t], B[t][j], s) for t in range(k))
             for j in range(k)] for i in range(k)]


def _msum(forms):
    out = None
    for f in forms:
        out = f if out is None else out + f
    return out


def as_matrix_section(chart: Chart, entries, v_max=None, s_max=None):
    """k x k matrix of WeylForms from numbers / jets / WeylForms."""
    kw = {}
    if v_max is not None:
        kw["v_max"] = v_max
    if s_max is not None:
        kw["s_max"] = s_max
    out = []
    for row in entries:
        r = []
        for x in row:
            if isinstance(x, WeylForm):
                r.append(x)
            else:
                r.append(weyl_scalar(chart, x, **kw))
        out.append(r)
    return out


def matrix_dhat_r(M, state: FedosovState, EGamma=None):
    """Componentwise D_r plus the connection-form commutator [EGamma, M]."""
    out = [[dhat_r(M[i][j], state) for j in range(len(M))]
           for i in range(len(M))]
    if EGamma is not None:
        comm_l = matrix_wick(EGamma, M, state.symp)
        comm_r = matrix_wick(M, EGamma, state.symp)
        for i in range(len(M)):
            for j in range(len(M)):
                out[i][j] = out[i][j] + comm_l[i][j] - comm_r[i][j]
    return out


def flat_endomorphism_check(section, state: FedosovState, EGamma=None,
                            tol: float = 1e-10) -> dict:
    """For a constant section the flat lift is the section itself and
    D_r kills it; u-dependent sections report the (expected) failure."""
    ch = state.chart
    M = as_matrix_section(ch, section, v_max=state.r_total.v_max,
                          s_max=state.r_total.s_max)
    k = len(M)
    chi_resid = 0.0
    for i in range(k):
        for j in range(k):
            entry = M[i][j]
            f = entry.terms.get((0, (0,) * ch.dim, ()), Jet.zero(ch))
            lifted = chi_lift(f, state)
            chi_resid = max(chi_resid, lifted.max_abs_diff(entry))
    dr = matrix_dhat_r(M, state, EGamma=EGamma)
    dr_resid = 0.0
    for i in range(k):
        for j in range(k):
            for d, part in dr[i][j].deg_parts().items():
                if d <= state.K_max - 1:
                    dr_resid = max(dr_resid, part.max_abs())
    return {
        "chi_residual": chi_resid,
        "dr_residual": dr_resid,
        "passed": bool(chi_resid < tol and dr_resid < tol),
    }
