"""Truncated multivariate Taylor expansions (jets) with reliability tracking.

A jet stores the monomial coefficients a_mu of

    f(u) = sum_mu  a_mu * (u - u0)^mu,        |mu| <= jet_order,

on a fixed chart (coordinate names, base point u0, truncation order).  All
coefficient arrays are dense complex128 in graded-lexicographic order, so
ring operations reduce to gathers, elementwise products and bincount
scatters over precomputed index tables.

Every jet carries a `reliable` order: coefficients of total degree above it
may be polluted by truncation (taking a partial derivative of a degree-J
truncation leaves degree J-1 data trustworthy at most).  Binary operations
propagate the minimum; comparisons should only look below that order.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Number

import numpy as np

from .errors import (
    ChartMismatchError,
    DomainError,
    SingularJetError,
)

# ---------------------------------------------------------------------------
# multi-index tables


@lru_cache(maxsize=None)
def multi_indices(nvars: int, order: int):
    """All exponent tuples with |mu| <= order, graded-lexicographic."""
    out = []
    for deg in range(order + 1):
        out.extend(_compositions(deg, nvars))
    return tuple(out)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    res = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            res.append((first,) + rest)
    # lexicographic ascending within a degree block
    res.sort()
    yield from res


@lru_cache(maxsize=None)
def multi_rank(nvars: int, order: int):
    return {mu: i for i, mu in enumerate(multi_indices(nvars, order))}


@lru_cache(maxsize=None)
def multi_degrees(nvars: int, order: int):
    return np.array([sum(mu) for mu in multi_indices(nvars, order)], dtype=np.int64)


@lru_cache(maxsize=None)
def product_triples(nvars: int, order: int):
    """(ia, ib, ic) index triples with deg(a)+deg(b) <= order and
    multis[ic] = multis[ia] + multis[ib]."""
    multis = multi_indices(nvars, order)
    rank = multi_rank(nvars, order)
    ia, ib, ic = [], [], []
    for i, mu in enumerate(multis):
        di = sum(mu)
        for j, nu in enumerate(multis):
            if di + sum(nu) > order:
                continue
            ia.append(i)
            ib.append(j)
            ic.append(rank[tuple(m + n for m, n in zip(mu, nu))])
    return (
        np.array(ia, dtype=np.int64),
        np.array(ib, dtype=np.int64),
        np.array(ic, dtype=np.int64),
    )


@lru_cache(maxsize=None)
def product_triples_sub(nvars: int, order: int, support: tuple):
    """product_triples restricted to multi-indices supported on the given
    axes; the indices still address the full chart layout, so the result
    is exact whenever both factors vanish off the support."""
    rank = multi_rank(nvars, order)
    emb = []
    for mu in multi_indices(len(support), order):
        full = [0] * nvars
        for ax, m in zip(support, mu):
            full[ax] = m
        emb.append((sum(mu), tuple(full), rank[tuple(full)]))
    ia, ib, ic = [], [], []
    for di, mi, i in emb:
        for dj, mj, j in emb:
            if di + dj > order:
                continue
            ia.append(i)
            ib.append(j)
            ic.append(rank[tuple(m + n for m, n in zip(mi, mj))])
    return (
        np.array(ia, dtype=np.int64),
        np.array(ib, dtype=np.int64),
        np.array(ic, dtype=np.int64),
    )


@lru_cache(maxsize=None)
def axis_use_masks(nvars: int, order: int):
    """Boolean mask per axis marking the coefficient slots that involve it."""
    multis = multi_indices(nvars, order)
    return tuple(np.array([mu[a] > 0 for mu in multis])
                 for a in range(nvars))


@lru_cache(maxsize=None)
def derivative_map(nvars: int, order: int, axis: int):
    """(src, dst, factor): d/du_axis sends a_mu -> mu_axis * a_mu at mu - e_axis."""
    multis = multi_indices(nvars, order)
    rank = multi_rank(nvars, order)
    src, dst, fac = [], [], []
    for i, mu in enumerate(multis):
        if mu[axis] == 0:
            continue
        nu = list(mu)
        nu[axis] -= 1
        src.append(i)
        dst.append(rank[tuple(nu)])
        fac.append(float(mu[axis]))
    return (
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(fac, dtype=np.float64),
    )


@lru_cache(maxsize=None)
def antiderivative_map(nvars: int, order: int, axis: int):
    """(src, dst, factor) for the termwise primitive along axis, vanishing at
    the base point; degree-`order` sources are dropped (truncation)."""
    multis = multi_indices(nvars, order)
    rank = multi_rank(nvars, order)
    src, dst, fac = [], [], []
    for i, mu in enumerate(multis):
        if sum(mu) >= order:
            continue
        nu = list(mu)
        nu[axis] += 1
        src.append(i)
        dst.append(rank[tuple(nu)])
        fac.append(1.0 / nu[axis])
    return (
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(fac, dtype=np.float64),
    )


def mul_arrays(nvars: int, order: int, ca: np.ndarray, cb: np.ndarray,
               support: tuple = None) -> np.ndarray:
    if support is not None and len(support) < nvars:
        ia, ib, ic = product_triples_sub(nvars, order, support)
    else:
        ia, ib, ic = product_triples(nvars, order)
    w = ca[ia] * cb[ib]
    m = len(ca)
    return np.bincount(ic, w.real, m) + 1j * np.bincount(ic, w.imag, m)


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class Chart:
    """Coordinate chart on a phase space of dimension 2n.

    names: coordinate names, horizontal block first (x1..xn, y{n+1}..y{2n});
    base_point: real expansion point; jet_order: truncation order J >= 2.
    """

    names: tuple
    base_point: tuple
    jet_order: int

    def __post_init__(self):
        if len(self.names) % 2 != 0 or len(self.names) == 0:
            raise ValueError("chart needs 2n coordinates")
        if len(set(self.names)) != len(self.names):
            raise ValueError("coordinate names must be distinct")
        if len(self.base_point) != len(self.names):
            raise ValueError("base point dimension mismatch")
        if self.jet_order < 2:
            raise ValueError("jet_order must be >= 2")
        object.__setattr__(self, "base_point", tuple(float(v) for v in self.base_point))

    @property
    def dim(self):
        return len(self.names)

    @property
    def n(self):
        return len(self.names) // 2

    @property
    def size(self):
        return len(multi_indices(self.dim, self.jet_order))

    def axis(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ChartMismatchError(
                f"unknown coordinate {name!r}; chart has {self.names}"
            ) from None

    @staticmethod
    def standard(n: int, base_point, jet_order: int = 4):
        names = tuple(f"x{i + 1}" for i in range(n)) + tuple(
            f"y{n + i + 1}" for i in range(n)
        )
        return Chart(names=names, base_point=tuple(base_point), jet_order=jet_order)


# ---------------------------------------------------------------------------
# jets


class Jet:
    __slots__ = ("chart", "c", "reliable", "_support")

    def __init__(self, chart: Chart, coeffs: np.ndarray, reliable: int | None = None):
        self.chart = chart
        self.c = np.asarray(coeffs, dtype=np.complex128)
        if self.c.shape != (chart.size,):
            raise ValueError("coefficient array has wrong length for chart")
        self.reliable = chart.jet_order if reliable is None else int(reliable)
        self._support = None

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(chart: Chart, value) -> "Jet":
        c = np.zeros(chart.size, dtype=np.complex128)
        c[0] = _as_complex(value)
        return Jet(chart, c)

    @staticmethod
    def coordinate(chart: Chart, which) -> "Jet":
        axis = chart.axis(which) if isinstance(which, str) else int(which)
        c = np.zeros(chart.size, dtype=np.complex128)
        c[0] = chart.base_point[axis]
        unit = tuple(1 if k == axis else 0 for k in range(chart.dim))
        c[multi_rank(chart.dim, chart.jet_order)[unit]] = 1.0
        return Jet(chart, c)

    @staticmethod
    def zero(chart: Chart) -> "Jet":
        return Jet(chart, np.zeros(chart.size, dtype=np.complex128))

    def copy(self):
        return Jet(self.chart, self.c.copy(), self.reliable)

    # -- inspection ---------------------------------------------------------

    def value(self) -> complex:
        return complex(self.c[0])

    def coeff(self, mu) -> complex:
        return complex(self.c[multi_rank(self.chart.dim, self.chart.jet_order)[tuple(mu)]])

    def support(self) -> tuple:
        """Axes this jet actually depends on; cached (coefficient arrays are
        never mutated after construction)."""
        s = self._support
        if s is None:
            masks = axis_use_masks(self.chart.dim, self.chart.jet_order)
            nz = self.c != 0
            s = tuple(a for a in range(self.chart.dim)
                      if bool(np.any(nz & masks[a])))
            self._support = s
        return s

    def max_abs(self, through_order: int | None = None) -> float:
        lim = self.reliable if through_order is None else min(self.reliable, through_order)
        if lim < 0:
            raise ValueError("jet has no reliable coefficients left")
        deg = multi_degrees(self.chart.dim, self.chart.jet_order)
        sel = deg <= lim
        return float(np.max(np.abs(self.c[sel])))

    def max_abs_diff(self, other: "Jet", through_order: int | None = None) -> float:
        return (self - other).max_abs(through_order)

    def eval_at(self, point) -> complex:
        """Evaluate the truncated polynomial at absolute coordinates."""
        offs = [complex(p) - b for p, b in zip(point, self.chart.base_point)]
        total = 0j
        for mu, a in zip(multi_indices(self.chart.dim, self.chart.jet_order), self.c):
            if a == 0:
                continue
            term = a
            for o, m in zip(offs, mu):
                if m:
                    term *= o**m
            total += term
        return total

    def __repr__(self):
        names = self.chart.names
        parts = []
        for mu, a in zip(multi_indices(self.chart.dim, self.chart.jet_order), self.c):
            if abs(a) < 1e-14:
                continue
            mono = "*".join(
                f"d{names[k]}^{m}" if m > 1 else f"d{names[k]}"
                for k, m in enumerate(mu)
                if m
            )
            parts.append(f"{a:.6g}" + (f"*{mono}" if mono else ""))
            if len(parts) >= 8:
                parts.append("...")
                break
        body = " + ".join(parts) if parts else "0"
        return f"Jet[{body}; rel={self.reliable}]"

    # -- ring operations ----------------------------------------------------

    def _check(self, other: "Jet"):
        if other.chart is not self.chart and other.chart != self.chart:
            raise ChartMismatchError("jets live on different charts")

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return Jet(self.chart, self.c + other.c, min(self.reliable, other.reliable))
        if isinstance(other, Number):
            out = self.c.copy()
            out[0] += _as_complex(other)
            return Jet(self.chart, out, self.reliable)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.chart, -self.c, self.reliable)

    def __sub__(self, other):
        if isinstance(other, (Jet, Number)):
            return self + (-other if isinstance(other, Jet) else -_as_complex(other))
        return NotImplemented

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            rel = min(self.reliable, other.reliable)
            # constant operands reduce to a scalar rescale
            if not self.c[1:].any():
                return Jet(self.chart, self.c[0] * other.c, rel)
            if not other.c[1:].any():
                return Jet(self.chart, other.c[0] * self.c, rel)
            sup = self.support()
            sup_b = other.support()
            if sup != sup_b:
                sup = tuple(sorted(set(sup) | set(sup_b)))
            return Jet(
                self.chart,
                mul_arrays(self.chart.dim, self.chart.jet_order, self.c,
                           other.c, support=sup),
                rel,
            )
        if isinstance(other, Number):
            return Jet(self.chart, self.c * _as_complex(other), self.reliable)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.invert()
        if isinstance(other, Number):
            return self * (1.0 / _as_complex(other))
        return NotImplemented

    def __rtruediv__(self, other):
        return self.invert() * _as_complex(other)

    def __pow__(self, k):
        if isinstance(k, Fraction) or (isinstance(k, Number) and not float(k).is_integer()):
            return self.rational_power(Fraction(k).limit_denominator(10**6))
        k = int(k)
        if k < 0:
            return self.invert() ** (-k)
        out = Jet.constant(self.chart, 1.0)
        out.reliable = self.reliable
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    # -- calculus -----------------------------------------------------------

    def partial(self, which) -> "Jet":
        axis = self.chart.axis(which) if isinstance(which, str) else int(which)
        src, dst, fac = derivative_map(self.chart.dim, self.chart.jet_order, axis)
        out = np.zeros_like(self.c)
        out[dst] = self.c[src] * fac
        return Jet(self.chart, out, self.reliable - 1)

    def antiderivative(self, which) -> "Jet":
        """Termwise primitive along one coordinate, vanishing at the base
        point.  Degree-J input terms fall outside the truncation and are
        dropped; the result is reliable one order higher (capped at J)."""
        axis = self.chart.axis(which) if isinstance(which, str) else int(which)
        src, dst, fac = antiderivative_map(self.chart.dim, self.chart.jet_order, axis)
        out = np.zeros_like(self.c)
        out[dst] = self.c[src] * fac
        return Jet(self.chart, out, min(self.reliable + 1, self.chart.jet_order))

    def invert(self) -> "Jet":
        z0 = self.value()
        if abs(z0) <= 1e-12:
            raise SingularJetError(
                f"cannot invert jet with value {z0} at the base point"
            )
        x = Jet.constant(self.chart, 1.0 / z0)
        x.reliable = self.reliable
        steps = max(1, (self.chart.jet_order).bit_length() + 1)
        for _ in range(steps):
            x = x * (2.0 - self * x)
        return x

    # -- analytic functions via series composition --------------------------

    def compose_series(self, coeffs) -> "Jet":
        """sum_k coeffs[k] * (f - f0)^k, Horner evaluated."""
        d = self - self.value()
        out = Jet.constant(self.chart, coeffs[-1])
        out.reliable = self.reliable
        for k in range(len(coeffs) - 2, -1, -1):
            out = out * d + _as_complex(coeffs[k])
        return out

    def _series_order(self):
        return self.chart.jet_order + 1

    def exp(self) -> "Jet":
        e0 = cmath.exp(self.value())
        fact = 1.0
        coeffs = []
        for k in range(self._series_order()):
            coeffs.append(e0 / fact)
            fact *= k + 1
        return self.compose_series(coeffs)

    def log(self) -> "Jet":
        z0 = self._positive_base("log")
        coeffs = [cmath.log(z0)]
        for k in range(1, self._series_order()):
            coeffs.append((-1.0) ** (k + 1) / (k * z0**k))
        return self.compose_series(coeffs)

    def sqrt(self) -> "Jet":
        return self.rational_power(Fraction(1, 2))

    def rational_power(self, p: Fraction) -> "Jet":
        if p.denominator == 1:
            return self ** int(p)
        z0 = self._positive_base(f"power {p}")
        coeffs = []
        binom = 1.0
        pf = float(p)
        for k in range(self._series_order()):
            coeffs.append(binom * z0.real ** (pf - k))
            binom *= (pf - k) / (k + 1)
        return self.compose_series(coeffs)

    def _trig(self, table):
        z0 = self.value()
        vals = [t(z0) for t in table]
        fact = 1.0
        coeffs = []
        for k in range(self._series_order()):
            coeffs.append(vals[k % 4] / fact)
            fact *= k + 1
        return self.compose_series(coeffs)

    def sin(self):
        return self._trig([cmath.sin, cmath.cos, lambda z: -cmath.sin(z), lambda z: -cmath.cos(z)])

    def cos(self):
        return self._trig([cmath.cos, lambda z: -cmath.sin(z), lambda z: -cmath.cos(z), cmath.sin])

    def sinh(self):
        return self._trig([cmath.sinh, cmath.cosh, cmath.sinh, cmath.cosh])

    def cosh(self):
        return self._trig([cmath.cosh, cmath.sinh, cmath.cosh, cmath.sinh])

    def absolute(self) -> "Jet":
        """abs along the real branch: sgn(Re f(u0)) * f; analytic away from 0."""
        z0 = self.value()
        if abs(z0) <= 1e-12:
            raise DomainError("abs of a jet vanishing at the base point")
        return self if z0.real >= 0 else -self

    def _positive_base(self, what) -> complex:
        z0 = self.value()
        if abs(z0.imag) > 1e-9 * (1.0 + abs(z0)) or z0.real <= 1e-12:
            raise DomainError(
                f"{what} needs a positive real value at the base point, got {z0}"
            )
        return complex(z0.real)


def _as_complex(v) -> complex:
    if isinstance(v, Fraction):
        return complex(float(v))
    return complex(v)


def constant(chart, value):
    return Jet.constant(chart, value)


def coordinate(chart, which):
    return Jet.coordinate(chart, which)


def zero(chart):
    return Jet.zero(chart)
