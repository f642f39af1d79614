"""Canonical nonlinear-connection geometry on the tangent-bundle-like chart.

Given a regular generating function L(x, y) (fiber Hessian invertible), this
module produces, as jets on the chart:

  * the fiber Hessian g_ab and its inverse,
  * the canonical semispray G^a and nonlinear connection N^a_i = dG^a/dy^i,
  * N-elongated frames e_i = d_i - N^a_i d_a and their anholonomy,
  * the Sasaki-type lift of g to the full space,
  * the almost-symplectic 2-form theta (with its potential 1-form and a
    machine check that theta is exact, hence closed),
  * the canonical almost-complex structure J exchanging the two blocks.

A second constructor accepts arbitrary horizontal/vertical metric blocks
plus N coefficients (the shape produced by the exact-solution generator);
everything except the Lagrange-specific pieces works identically there.

Index conventions: greek-style frame indices run 0..2n-1; i,j,k < n label
horizontal slots, and a,b,c in 0..n-1 label vertical slots stored at
position n+a.  N[a][i] holds the coefficient of d/dy^{n+a} in e_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ClosureViolationError, DegenerateHessianError
from .exprlang import eval_jet
from .jets import Chart, Jet

CLOSURE_TOL = 1e-8
HESSIAN_TOL = 1e-10


# ---------------------------------------------------------------------------
# small matrix helpers over the jet ring (n <= 2 is all we ever need)


def mat_det(m):
    k = len(m)
    if k == 1:
        return m[0][0]
    if k == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    raise NotImplementedError("jet matrices larger than 2x2 are not supported")


def mat_inv(m):
    k = len(m)
    det = mat_det(m)
    inv_det = det.invert()
    if k == 1:
        return [[inv_det]]
    return [
        [m[1][1] * inv_det, -m[0][1] * inv_det],
        [-m[1][0] * inv_det, m[0][0] * inv_det],
    ]


# ---------------------------------------------------------------------------
# coordinate-basis exterior calculus (forms as {sorted index tuple: Jet})


def form_d(form: dict, chart: Chart) -> dict:
    """Exterior derivative of a coordinate-basis form."""
    out = {}
    for idx, c in form.items():
        for m in range(chart.dim):
            if m in idx:
                continue
            dc = c.partial(m)
            key = tuple(sorted((m,) + idx))
            sign = (-1) ** sum(1 for j in idx if j < m)
            prev = out.get(key)
            term = sign * dc
            out[key] = term if prev is None else prev + term
    return out


def form_max_abs(form: dict) -> float:
    return max((c.max_abs() for c in form.values()), default=0.0)


# ---------------------------------------------------------------------------


@dataclass
class GeometryData:
    chart: Chart
    g_h: list  # n x n horizontal metric block (frame basis)
    g_v: list  # n x n vertical metric block
    N: list  # N[a][i]
    L: Jet | None = None
    G: list | None = None  # semispray coefficients
    g_h_inv: list = field(default=None, repr=False)
    g_v_inv: list = field(default=None, repr=False)
    _W: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.g_h_inv is None:
            self.g_h_inv = mat_inv(self.g_h)
        if self.g_v_inv is None:
            self.g_v_inv = mat_inv(self.g_v)

    @property
    def n(self):
        return self.chart.n

    # -- frames -----------------------------------------------------------

    def e(self, f: Jet, alpha: int) -> Jet:
        """N-elongated frame derivative e_alpha applied to a jet."""
        n = self.n
        if alpha < n:
            out = f.partial(alpha)
            for a in range(n):
                out = out - self.N[a][alpha] * f.partial(n + a)
            return out
        return f.partial(alpha)

    def frame_metric(self, alpha: int, beta: int) -> Jet:
        n = self.n
        if alpha < n and beta < n:
            return self.g_h[alpha][beta]
        if alpha >= n and beta >= n:
            return self.g_v[alpha - n][beta - n]
        return Jet.zero(self.chart)

    def frame_metric_inv(self, alpha: int, beta: int) -> Jet:
        n = self.n
        if alpha < n and beta < n:
            return self.g_h_inv[alpha][beta]
        if alpha >= n and beta >= n:
            return self.g_v_inv[alpha - n][beta - n]
        return Jet.zero(self.chart)

    def frame_components(self):
        """Coordinate components of the frame fields: e_alpha = E[alpha][mu] d_mu."""
        n, ch = self.n, self.chart
        E = [[Jet.zero(ch) for _ in range(2 * n)] for _ in range(2 * n)]
        one = Jet.constant(ch, 1.0)
        for i in range(n):
            E[i][i] = one
            for a in range(n):
                E[i][n + a] = -self.N[a][i]
        for a in range(n):
            E[n + a][n + a] = one
        return E

    def coordinate_to_frame(self):
        """P[alpha][mu]: coordinate vector d_mu expanded in frames,
        d_j = e_j + N^a_j d_a and d_{n+a} = e_{n+a}."""
        n, ch = self.n, self.chart
        P = [[Jet.zero(ch) for _ in range(2 * n)] for _ in range(2 * n)]
        one = Jet.constant(ch, 1.0)
        for j in range(n):
            P[j][j] = one
            for a in range(n):
                P[n + a][j] = self.N[a][j]
        for a in range(n):
            P[n + a][n + a] = one
        return P

    # -- anholonomy ---------------------------------------------------------

    def omega_nc(self):
        """Curvature of the nonlinear connection:
        Omega[a][i][j] with [e_i, e_j] = + Omega^a_{ij} d/dy^{n+a}."""
        n = self.n
        return [
            [
                [self.e(self.N[a][i], j) - self.e(self.N[a][j], i) for j in range(n)]
                for i in range(n)
            ]
            for a in range(n)
        ]

    def anholonomy(self):
        """Full anholonomy tensor W[gamma][alpha][beta] of the adapted frame,
        [e_alpha, e_beta] = W^gamma_{alpha beta} e_gamma (purely vertical)."""
        if self._W is not None:
            return self._W
        n, ch = self.n, self.chart
        dim = 2 * n
        W = [
            [[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
            for _ in range(dim)
        ]
        om = self.omega_nc()
        for a in range(n):
            for i in range(n):
                for j in range(n):
                    W[n + a][i][j] = om[a][i][j]
                for b in range(n):
                    d = self.N[a][i].partial(n + b)
                    W[n + a][i][n + b] = d
                    W[n + a][n + b][i] = -d
        self._W = W
        return W

    # -- lifted structures ---------------------------------------------------

    def sasaki_metric(self):
        """Coordinate-basis components of the lifted metric."""
        n, ch = self.n, self.chart
        dim = 2 * n
        g = [[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
        for i in range(n):
            for j in range(n):
                acc = self.g_h[i][j]
                for a in range(n):
                    for b in range(n):
                        acc = acc + self.g_v[a][b] * self.N[a][i] * self.N[b][j]
                g[i][j] = acc
        for i in range(n):
            for b in range(n):
                acc = Jet.zero(ch)
                for a in range(n):
                    acc = acc + self.g_v[a][b] * self.N[a][i]
                g[i][n + b] = acc
                g[n + b][i] = acc
        for a in range(n):
            for b in range(n):
                g[n + a][n + b] = self.g_v[a][b]
        return g

    def theta_down(self):
        """Frame components of theta = g_ab e^{n+a} wedge e^b (lower indices):
        theta[n+i][j] = g_v[i][j], theta[j][n+i] = -g_v[i][j]."""
        n, ch = self.n, self.chart
        dim = 2 * n
        th = [[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
        for i in range(n):
            for j in range(n):
                th[n + i][j] = self.g_v[i][j]
                th[j][n + i] = -self.g_v[i][j]
        return th

    def theta_up(self):
        """Inverse of theta_down: theta^{i, n+j} = g_v^{ij}."""
        n, ch = self.n, self.chart
        dim = 2 * n
        th = [[Jet.zero(ch) for _ in range(dim)] for _ in range(dim)]
        for i in range(n):
            for j in range(n):
                th[i][n + j] = self.g_v_inv[i][j]
                th[n + j][i] = -self.g_v_inv[i][j]
        return th

    def theta_coordinate(self) -> dict:
        """Coordinate-basis 2-form components of theta, as a sorted-key dict."""
        n = self.n
        out = {}
        for i in range(n):
            for j in range(n):
                # g_ij dy^{n+i} wedge dx^j = -g_ij dx^j wedge dy^{n+i}
                key = (j, n + i)
                c = -self.g_v[i][j]
                out[key] = out.get(key, Jet.zero(self.chart)) + c
        for k in range(n):
            for j in range(k + 1, n):
                acc = Jet.zero(self.chart)
                for i in range(n):
                    acc = acc + self.g_v[i][j] * self.N[i][k] - self.g_v[i][k] * self.N[i][j]
                if acc.max_abs() > 0:
                    out[(k, j)] = acc
        return out

    def almost_complex(self):
        """Integer matrix of J in the adapted frame: J e_i = -e_{n+i},
        J e_{n+i} = e_i; columns index the argument."""
        n = self.n
        dim = 2 * n
        J = [[0] * dim for _ in range(dim)]
        for i in range(n):
            J[n + i][i] = -1
            J[i][n + i] = 1
        return J


# ---------------------------------------------------------------------------
# Lagrange-route constructors


def hessian(L: Jet, chart: Chart):
    """Fiber Hessian g_ab = d^2 L / dy^a dy^b; raises if degenerate at the
    base point."""
    n = chart.n
    g = [[L.partial(n + a).partial(n + b) for b in range(n)] for a in range(n)]
    det0 = mat_det(g).value()
    if abs(det0) < HESSIAN_TOL:
        raise DegenerateHessianError(
            f"fiber Hessian determinant {det0} at the base point; "
            "the generating function is not regular here"
        )
    return g


def semispray(L: Jet, chart: Chart, g_inv=None):
    """Canonical semispray G^a = (1/2) g^{ab} (d2L/dy^b dx^k y^k - dL/dx^b)."""
    n = chart.n
    if g_inv is None:
        g_inv = mat_inv(hessian(L, chart))
    rhs = []
    for b in range(n):
        acc = -L.partial(b)
        for k in range(n):
            acc = acc + L.partial(n + b).partial(k) * Jet.coordinate(chart, n + k)
        rhs.append(acc)
    return [
        sum((g_inv[a][b] * rhs[b] for b in range(n)), Jet.zero(chart)) * 0.5
        for a in range(n)
    ]


def canonical_N(G, chart: Chart):
    """N^a_i = dG^a/dy^{n+i}."""
    n = chart.n
    return [[G[a].partial(n + i) for i in range(n)] for a in range(n)]


def n_elongated_partial(f: Jet, i: int, N) -> Jet:
    """e_i f = d_i f - N^a_i d_{n+a} f for a horizontal index i."""
    n = len(N)
    out = f.partial(i)
    for a in range(n):
        out = out - N[a][i] * f.partial(n + a)
    return out


def euler_residual(fields, chart: Chart, weight: int) -> float:
    """Max deviation of y^a d_a f - weight*f over the given jets; zero for
    fiberwise `weight`-homogeneous fields (used for Finsler-type inputs)."""
    n = chart.n
    worst = 0.0
    for f in fields:
        acc = -float(weight) * f
        for a in range(n):
            acc = acc + Jet.coordinate(chart, n + a) * f.partial(n + a)
        worst = max(worst, acc.max_abs())
    return worst


def potential_form(L: Jet, chart: Chart) -> dict:
    """The 1-form (dL/dy^{n+i}) dx^i whose exterior derivative is theta."""
    n = chart.n
    return {(i,): L.partial(n + i) for i in range(n)}


def symplectic_report(geom: GeometryData, tol: float = CLOSURE_TOL):
    """Closure and exactness residuals of theta; raises on closure failure."""
    ch = geom.chart
    theta_c = geom.theta_coordinate()
    dtheta = form_d(theta_c, ch)
    closure = form_max_abs(dtheta)
    exactness = None
    if geom.L is not None:
        om = potential_form(geom.L, ch)
        dom = form_d(om, ch)
        diff = dict(dtheta)  # reuse keys; recompute cleanly below
        diff = {}
        keys = set(dom) | set(theta_c)
        for k in keys:
            a = dom.get(k, Jet.zero(ch))
            b = theta_c.get(k, Jet.zero(ch))
            diff[k] = a - b
        exactness = form_max_abs(diff)
    if closure > tol:
        raise ClosureViolationError(
            f"d(theta) residual {closure:.3e} exceeds {tol:.1e}"
        )
    return {"closure": closure, "exactness": exactness}


def build_lagrange(L, chart: Chart) -> GeometryData:
    """Full canonical pipeline from a generating function (expression text,
    AST, or jet)."""
    if not isinstance(L, Jet):
        L = eval_jet(L, chart)
    g = hessian(L, chart)
    g_inv = mat_inv(g)
    G = semispray(L, chart, g_inv)
    N = canonical_N(G, chart)
    gh = [[g[i][j] for j in range(chart.n)] for i in range(chart.n)]
    return GeometryData(
        chart=chart, g_h=gh, g_v=g, N=N, L=L, G=G, g_h_inv=g_inv, g_v_inv=g_inv
    )


def build_from_blocks(chart: Chart, g_h, g_v, N) -> GeometryData:
    """Geometry from explicit metric blocks and nonlinear-connection
    coefficients (the exact-solution route).  Blocks must be invertible at
    the base point."""
    for block in (g_h, g_v):
        det0 = mat_det(block).value()
        if abs(det0) < HESSIAN_TOL:
            raise DegenerateHessianError(
                f"metric block determinant {det0} at the base point"
            )
    return GeometryData(chart=chart, g_h=g_h, g_v=g_v, N=N)
