"""Formal Weyl algebra with fiber variables z^alpha, frame forms and a
formal parameter v.

Elements are finite sums  v^k z^zeta a_{zeta A}(u) e^{A}  with jet
coefficients; zeta is a symmetric multi-index over the 2n fiber variables and
A a strictly increasing tuple of frame-form indices (antisymmetry normalized
into the key, sign absorbed into the coefficient).  Gradings: deg_v = k,
deg_s = |zeta|, deg_a = |A|, Deg = 2k + |zeta|.

The product is the Wick/Moyal exponential pairing z-derivatives of the two
factors through a kernel matrix: a constant antisymmetric b for the flat
model, or the geometry kernel theta^{alpha beta} - i g^{alpha beta} with jet
entries.  Forms multiply by wedge; z and forms carry independent gradings, so
the only signs are wedge signs.

delta, delta_inv and sigma implement the homotopy decomposition
a = sigma(a) + delta(delta_inv(a)) + delta_inv(delta(a)); delta_inv uses the
1/(p+q) normalization on (deg_s, deg_a)-bihomogeneous parts, under which the
identity holds exactly.

Truncation: powers of v beyond v_max and z-degrees beyond s_max are dropped
and counted in `dropped` (a pipeline-poisoning flag, checked by callers that
need exactness).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartMismatchError, InvariantViolationError
from .jets import Chart, Jet

V_MAX_DEFAULT = 3
S_MAX_DEFAULT = 8


def _merge_sign(A1, A2):
    """Sign of sorting the concatenation of two increasing index tuples;
    None if they overlap."""
    if set(A1) & set(A2):
        return None, ()
    sign = 1
    for a in A1:
        # inversions against the elements of A2 smaller than a
        for b in A2:
            if b < a:
                sign = -sign
    return sign, tuple(sorted(A1 + A2))


def _insert_sign(alpha, A):
    """e^alpha wedge e^A normalized to increasing order; None if alpha in A."""
    if alpha in A:
        return None, ()
    pos = sum(1 for b in A if b < alpha)
    out = tuple(sorted(A + (alpha,)))
    return (-1) ** pos, out


@dataclass
class WeylForm:
    chart: Chart
    terms: dict = field(default_factory=dict)
    v_max: int = V_MAX_DEFAULT
    s_max: int = S_MAX_DEFAULT
    dropped: int = 0

    # -- bookkeeping --------------------------------------------------------

    def _accum(self, key, jet):
        k, zeta, A = key
        if k > self.v_max or sum(zeta) > self.s_max:
            self.dropped += 1
            return
        cur = self.terms.get(key)
        self.terms[key] = jet if cur is None else cur + jet

    def pruned(self):
        """Drop exactly-zero coefficients (keeps rounding residue)."""
        self.terms = {k: j for k, j in self.terms.items() if np.any(j.c)}
        return self

    def copy(self):
        return WeylForm(self.chart, dict(self.terms), self.v_max, self.s_max,
                        self.dropped)

    # -- gradings ------------------------------------------------------------

    def deg_min(self):
        """Minimal total degree 2k + |zeta| over stored terms; None if 0."""
        degs = [2 * k + sum(z) for (k, z, A), j in self.terms.items()
                if j.max_abs() != 0.0]
        return min(degs) if degs else None

    def bihomogeneous_parts(self):
        """Split by (deg_s, deg_a); returns {(p, q): WeylForm}."""
        parts = {}
        for key, jet in self.terms.items():
            k, zeta, A = key
            pq = (sum(zeta), len(A))
            part = parts.setdefault(
                pq, WeylForm(self.chart, {}, self.v_max, self.s_max))
            part._accum(key, jet)
        return parts

    def deg_part(self, d):
        """The Deg = d homogeneous component."""
        out = WeylForm(self.chart, {}, self.v_max, self.s_max)
        for (k, zeta, A), jet in self.terms.items():
            if 2 * k + sum(zeta) == d:
                out._accum((k, zeta, A), jet)
        return out

    def deg_parts(self):
        """{Deg: component} decomposition."""
        parts = {}
        for (k, zeta, A), jet in self.terms.items():
            d = 2 * k + sum(zeta)
            part = parts.setdefault(
                d, WeylForm(self.chart, {}, self.v_max, self.s_max))
            part._accum((k, zeta, A), jet)
        return parts

    # -- arithmetic -----------------------------------------------------------

    def _check(self, other):
        if self.chart is not other.chart and self.chart != other.chart:
            raise ChartMismatchError("WeylForm charts differ")
        if (self.v_max, self.s_max) != (other.v_max, other.s_max):
            raise ChartMismatchError("WeylForm truncation caps differ")

    def __add__(self, other):
        self._check(other)
        out = self.copy()
        out.dropped += other.dropped
        for key, jet in other.terms.items():
            out._accum(key, jet)
        return out.pruned()

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def scale(self, c):
        """Multiply by a complex number or a jet."""
        out = WeylForm(self.chart, {}, self.v_max, self.s_max, self.dropped)
        for key, jet in self.terms.items():
            out._accum(key, jet * c if isinstance(c, Jet) else c * jet)
        return out.pruned()

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def times_v(self, power=1):
        """Shift the v-grading (caps apply)."""
        out = WeylForm(self.chart, {}, self.v_max, self.s_max, self.dropped)
        for (k, zeta, A), jet in self.terms.items():
            out._accum((k + power, zeta, A), jet)
        return out

    def div_v(self, power=1, tol=0.0):
        """Divide by v^power; every stored term must carry at least that
        v-degree (coefficients at lower degree up to `tol` are discarded as
        cancellation residue)."""
        out = WeylForm(self.chart, {}, self.v_max, self.s_max, self.dropped)
        for (k, zeta, A), jet in self.terms.items():
            if k < power:
                if jet.max_abs() > tol:
                    raise InvariantViolationError(
                        f"v-division needs v^{power}; found magnitude "
                        f"{jet.max_abs():.3e} at v^{k}"
                    )
                continue
            out._accum((k - power, zeta, A), jet)
        return out.pruned()

    # -- size ------------------------------------------------------------------

    def max_abs(self):
        return max((j.max_abs() for j in self.terms.values()), default=0.0)

    def max_abs_diff(self, other):
        keys = set(self.terms) | set(other.terms)
        worst = 0.0
        for key in keys:
            a = self.terms.get(key)
            b = other.terms.get(key)
            if a is None:
                worst = max(worst, b.max_abs())
            elif b is None:
                worst = max(worst, a.max_abs())
            else:
                worst = max(worst, a.max_abs_diff(b))
        return worst

    def value_at_base(self):
        """{key: coefficient value at the base point} for reporting."""
        return {key: j.value() for key, j in self.terms.items()}


# ---------------------------------------------------------------------------
# constructors


def weyl_zero(chart: Chart, v_max=V_MAX_DEFAULT, s_max=S_MAX_DEFAULT):
    return WeylForm(chart, {}, v_max, s_max)


def weyl_scalar(chart: Chart, value, v_max=V_MAX_DEFAULT, s_max=S_MAX_DEFAULT):
    jet = value if isinstance(value, Jet) else Jet.constant(chart, value)
    out = WeylForm(chart, {}, v_max, s_max)
    zeta = (0,) * chart.dim
    out._accum((0, zeta, ()), jet)
    return out.pruned()


def weyl_monomial(chart: Chart, coeff, k=0, zeta=None, A=(),
                  v_max=V_MAX_DEFAULT, s_max=S_MAX_DEFAULT):
    """v^k z^zeta coeff e^A with A any index tuple (normalized here)."""
    jet = coeff if isinstance(coeff, Jet) else Jet.constant(chart, coeff)
    zeta = tuple(zeta) if zeta is not None else (0,) * chart.dim
    if len(zeta) != chart.dim:
        raise ValueError("zeta length must equal chart dimension")
    sign = 1
    norm = ()
    # fold right-to-left so each factor is left-inserted in wedge order
    for alpha in reversed(A):
        s, norm = _insert_sign(alpha, norm)
        if s is None:
            return weyl_zero(chart, v_max, s_max)
        sign *= s
    out = WeylForm(chart, {}, v_max, s_max)
    out._accum((k, zeta, norm), sign * jet)
    return out.pruned()


def z_variable(chart: Chart, alpha: int, v_max=V_MAX_DEFAULT,
               s_max=S_MAX_DEFAULT):
    zeta = tuple(1 if i == alpha else 0 for i in range(chart.dim))
    return weyl_monomial(chart, 1.0, 0, zeta, (), v_max, s_max)


# ---------------------------------------------------------------------------
# symplectic / kernel data


@dataclass
class SymplecticData:
    """Kernel for the fiberwise product.

    b: constant antisymmetric matrix (the symplectic structure, or the base
    value of theta-up); kernel[alpha][beta]: jets actually contracted against
    the z-derivatives (b itself in constant mode, theta - i g in wick mode).

    _plans/_chains memoize contraction plans and kernel-jet chains across
    product calls; they carry no information beyond the kernel itself.
    """

    chart: Chart
    b: np.ndarray
    kernel: list
    mode: str = "constant"
    _plans: dict = field(default_factory=dict, repr=False, compare=False)
    _chains: dict = field(default_factory=dict, repr=False, compare=False)


def constant_symplectic(chart: Chart, b) -> SymplecticData:
    b = np.asarray(b, dtype=complex)
    if b.shape != (chart.dim, chart.dim):
        raise ValueError("kernel matrix shape mismatch")
    if np.max(np.abs(b + b.T)) > 1e-12:
        raise InvariantViolationError("constant kernel must be antisymmetric")
    kernel = [
        [Jet.constant(chart, b[i][j]) if b[i][j] != 0 else None
         for j in range(chart.dim)]
        for i in range(chart.dim)
    ]
    return SymplecticData(chart=chart, b=b, kernel=kernel, mode="constant")


def wick_kernel(geom) -> SymplecticData:
    """theta^{alpha beta} - i g^{alpha beta} from a geometry; validates
    theta-up against theta-down."""
    ch = geom.chart
    dim = ch.dim
    up = geom.theta_up()
    down = geom.theta_down()
    # contraction check: theta^{alpha beta} theta_{beta gamma} = delta
    worst = 0.0
    for a in range(dim):
        for c in range(dim):
            acc = Jet.zero(ch)
            for s in range(dim):
                acc = acc + up[a][s] * down[s][c]
            want = 1.0 if a == c else 0.0
            acc = acc - Jet.constant(ch, want)
            worst = max(worst, acc.max_abs())
    if worst > 1e-10:
        raise InvariantViolationError(
            f"theta-up fails to invert theta-down: residual {worst:.3e}"
        )
    kernel = [[None] * dim for _ in range(dim)]
    for a in range(dim):
        for b_ in range(dim):
            lam = up[a][b_] + (-1j) * geom.frame_metric_inv(a, b_)
            kernel[a][b_] = lam if lam.max_abs() != 0.0 else None
    bmat = np.array([[up[a][b_].value() for b_ in range(dim)]
                     for a in range(dim)], dtype=complex)
    return SymplecticData(chart=ch, b=bmat, kernel=kernel, mode="wick")


# ---------------------------------------------------------------------------
# the product


def _contractions(z1, z2, pairs):
    """Yield (M, comb) over contraction matrices M supported on `pairs`
    (list of (alpha, beta) with a usable kernel entry).

    comb = prod_{alpha beta} falling(z1_alpha,..)/M! style factor:
    exactly prod over assignments of derivative counts, i.e.
    z1! z2! / ((z1-r)! (z2-c)! M!) with r/c the row/column sums.
    """
    # depth-first over the usable pairs
    out = []

    def rec(idx, rem1, rem2, M, factor):
        if idx == len(pairs):
            out.append((tuple(M), factor))
            return
        a, b = pairs[idx]
        top = min(rem1[a], rem2[b])
        m_fact = 1
        da = 1
        db = 1
        for m in range(top + 1):
            if m > 0:
                m_fact *= m
                da *= rem1[a] - (m - 1)
                db *= rem2[b] - (m - 1)
            M.append(m)
            r1 = list(rem1)
            r2 = list(rem2)
            r1[a] -= m
            r2[b] -= m
            rec(idx + 1, r1, r2, M, factor * da * db / m_fact)
            M.pop()

    rec(0, list(z1), list(z2), [], 1.0)
    return out


def _chain_jet(s: SymplecticData, sig: tuple) -> Jet:
    """Product of kernel entries along a contraction signature, memoized on
    the kernel (signatures repeat across every plan that touches them)."""
    got = s._chains.get(sig)
    if got is None:
        al, be = sig[-1]
        tail = s.kernel[al][be]
        got = tail if len(sig) == 1 else _chain_jet(s, sig[:-1]) * tail
        s._chains[sig] = got
    return got


# above this coefficient count, plans stay structural (jets per output slot
# would hold full-size arrays for every signature pair ever met)
_PLAN_JET_SIZE = 256


def contraction_plan(s: SymplecticData, z1: tuple, z2: tuple) -> tuple:
    """Contraction slots between two z-signatures, cached on the kernel.

    Each slot is (m, zeta_out, combined, parts): `combined` bakes
    comb * (i v/2)^m * kernel-chain summed over every contraction matrix
    landing on that output, so one jet product per slot serves all term
    pairs sharing the signatures.  On large charts `combined` is None and
    `parts` holds (signature, weight) pairs for use with _chain_jet.
    The m = 0 slice is not included.
    """
    key = (z1, z2)
    got = s._plans.get(key)
    if got is not None:
        return got
    dim = s.chart.dim
    usable = [(al, be) for al in range(dim) for be in range(dim)
              if s.kernel[al][be] is not None and z1[al] > 0 and z2[be] > 0]
    slots: dict = {}
    if usable:
        for M, comb in _contractions(z1, z2, usable):
            m_tot = sum(M)
            if m_tot == 0:
                continue
            sig = tuple(p for p, m in zip(usable, M) for _ in range(m))
            nz = list(x + y for x, y in zip(z1, z2))
            for al, be in sig:
                nz[al] -= 1
                nz[be] -= 1
            w = comb * (0.5j) ** m_tot
            slots.setdefault((m_tot, tuple(nz)), []).append((sig, w))
    plan = []
    if s.chart.size <= _PLAN_JET_SIZE:
        for (m_tot, zo), parts in slots.items():
            jet = None
            for sig, w in parts:
                term = w * _chain_jet(s, sig)
                jet = term if jet is None else jet + term
            plan.append((m_tot, zo, jet, None))
    else:
        for (m_tot, zo), parts in slots.items():
            plan.append((m_tot, zo, None, tuple(parts)))
    plan = tuple(plan)
    s._plans[key] = plan
    return plan


def wick_product(a: WeylForm, b: WeylForm, s: SymplecticData,
                 min_m: int = 0) -> WeylForm:
    """a o b: exponential kernel pairing, wedge on forms, jets multiplied.

    Each kernel contraction carries a factor (i v / 2); the series terminates
    by z-nilpotency of the stored truncations.

    min_m skips terms with fewer than that many contractions.  The m = 0
    slice is the plain wedge product; in any combination where it cancels
    identically (commutators, self-products of odd elements, convolutions
    symmetric under operand swap) min_m=1 removes the cancellation work and
    its rounding residue at once.
    """
    a._check(b)
    if s.chart != a.chart:
        raise ChartMismatchError("kernel chart differs from operands")
    out = WeylForm(a.chart, {}, a.v_max, a.s_max, a.dropped + b.dropped)
    for (k1, z1, A1), c1 in a.terms.items():
        for (k2, z2, A2), c2 in b.terms.items():
            sign, A = _merge_sign(A1, A2)
            if sign is None:
                continue
            plan = contraction_plan(s, z1, z2)
            if min_m > 0 and not plan:
                continue
            base = (sign * c1) * c2
            if min_m == 0:
                zeta = tuple(x + y for x, y in zip(z1, z2))
                out._accum((k1 + k2, zeta, A), base)
            for m_tot, zo, kjet, parts in plan:
                if m_tot < min_m:
                    continue
                okey = (k1 + k2 + m_tot, zo, A)
                if kjet is not None:
                    out._accum(okey, base * kjet)
                else:
                    for sig, w in parts:
                        out._accum(okey, (w * base) * _chain_jet(s, sig))
    return out.pruned()


def graded_commutator(a: WeylForm, b: WeylForm, s: SymplecticData,
                      min_m: int = 0) -> WeylForm:
    """[a, b] = a o b - (-1)^{deg_a(a) deg_a(b)} b o a, distributed over the
    form-degree decomposition.

    The m = 0 slices of the two orders cancel identically, so min_m=1
    computes the same commutator without the wedge round trip.
    """
    parts_a = {}
    for key, jet in a.terms.items():
        parts_a.setdefault(len(key[2]) % 2, WeylForm(
            a.chart, {}, a.v_max, a.s_max))._accum(key, jet)
    parts_b = {}
    for key, jet in b.terms.items():
        parts_b.setdefault(len(key[2]) % 2, WeylForm(
            b.chart, {}, b.v_max, b.s_max))._accum(key, jet)
    out = weyl_zero(a.chart, a.v_max, a.s_max)
    out.dropped = a.dropped + b.dropped
    for pa, fa in parts_a.items():
        for pb, fb in parts_b.items():
            sign = -1.0 if (pa * pb) % 2 else 1.0
            out = out + wick_product(fa, fb, s, min_m) \
                - sign * wick_product(fb, fa, s, min_m)
    return out


# ---------------------------------------------------------------------------
# Fedosov d-operators


def delta(a: WeylForm) -> WeylForm:
    """e^alpha wedge d/dz^alpha; lowers deg_s, raises deg_a."""
    out = WeylForm(a.chart, {}, a.v_max, a.s_max, a.dropped)
    for (k, zeta, A), jet in a.terms.items():
        for alpha in range(a.chart.dim):
            if zeta[alpha] == 0:
                continue
            sign, nA = _insert_sign(alpha, A)
            if sign is None:
                continue
            nz = list(zeta)
            nz[alpha] -= 1
            out._accum((k, tuple(nz), nA), (sign * zeta[alpha]) * jet)
    return out.pruned()


def delta_inv(a: WeylForm) -> WeylForm:
    """z^alpha iota(e_alpha) scaled by 1/(deg_s + deg_a) per bihomogeneous
    part; kills the (0,0) part."""
    out = WeylForm(a.chart, {}, a.v_max, a.s_max, a.dropped)
    for (k, zeta, A), jet in a.terms.items():
        p, q = sum(zeta), len(A)
        if p + q == 0:
            continue
        for pos, alpha in enumerate(A):
            nz = list(zeta)
            nz[alpha] += 1
            nA = A[:pos] + A[pos + 1:]
            out._accum((k, tuple(nz), nA), ((-1) ** pos / (p + q)) * jet)
    return out.pruned()


def sigma(a: WeylForm) -> WeylForm:
    """Projection onto deg_s = 0, deg_a = 0 (z set to zero, forms dropped)."""
    out = WeylForm(a.chart, {}, a.v_max, a.s_max, a.dropped)
    zeta0 = (0,) * a.chart.dim
    jet = a.terms.get((0, zeta0, ()))
    if jet is not None:
        out._accum((0, zeta0, ()), jet)
    # v-powers of the scalar part survive the projection
    for k in range(1, a.v_max + 1):
        jet = a.terms.get((k, zeta0, ()))
        if jet is not None:
            out._accum((k, zeta0, ()), jet)
    return out.pruned()
