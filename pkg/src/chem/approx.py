"""Polynomial operators on the cube [-1, 1]^d.

Tensor Bernstein projection, the orthonormal Legendre product basis with a
Gauss-Legendre encoder and an evaluation decoder, a randomized modulus of
continuity estimate, and sweeps that measure discretization error against
closed-form bounds.
"""

import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom


def _as_points(x, d):
    """``x`` as an ``(n, d)`` array of points."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if d == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class ScalarField:
    """A function on ``[-1, 1]^d`` evaluated on ``(n, d)`` point arrays.

    ``lipschitz`` (Euclidean) and ``modulus`` (a callable ``r -> omega(r)``)
    are optional known properties.
    """

    fn: object
    d: int = 1
    lipschitz: float = None
    modulus: object = None
    name: str = "f"

    def __call__(self, x):
        x = _as_points(x, self.d)
        values = np.asarray(self.fn(x), dtype=np.float64).reshape(x.shape[0])
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.name} is not finite at some points")
        return values


@dataclass(frozen=True)
class SampleSet:
    """Sample locations in ``[-1, 1]^d`` with optional positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (t, d) array")
        if np.any(np.abs(pts) > 1.0):
            raise ValueError("sample points must lie in [-1, 1]^d")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64).ravel()
            if w.shape != (pts.shape[0],):
                raise ValueError("need one weight per point")
            if np.any(w <= 0):
                raise ValueError("weights must be positive")
            if abs(w.sum() - 2.0 ** pts.shape[1]) > 1e-10 * 2.0 ** pts.shape[1]:
                raise ValueError("weights must sum to the cube volume 2^d")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def d(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def sample_S(f, xi):
    """Values of ``f`` at the sample points, in their order."""
    return f(xi.points)


# -- Legendre basis -----------------------------------------------------------


def legendre_table(n_max, x):
    """Orthonormal Legendre values ``sqrt(n + 1/2) P_n(x)`` for ``n = 0..n_max``.

    Runs the three-term recurrence on the classical polynomials and applies
    the normalization last. Shape ``(n_max + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    scale = np.sqrt(np.arange(n_max + 1) + 0.5).reshape((-1,) + (1,) * x.ndim)
    return out * scale


def multi_indices(m, d):
    """All degree multi-indices in flat-index order (last coordinate fastest)."""
    return np.array(list(itertools.product(range(m + 1), repeat=d)), dtype=int).reshape(-1, d)


def basis_matrix(m, points):
    """Matrix ``P[n, i] = P_{k_i}(x_n)`` of the product basis at ``points``."""
    points = np.asarray(points, dtype=np.float64)
    d = points.shape[1]
    tables = [legendre_table(m, points[:, a]) for a in range(d)]
    idx = multi_indices(m, d)
    P = np.ones((points.shape[0], idx.shape[0]))
    for a in range(d):
        P *= tables[a][idx[:, a]].T
    return P


def legendre_eval(k, x, m=None, d=None):
    """Product Legendre function ``P_k`` at ``x``.

    ``k`` is a multi-index, or a flat index when ``m`` and ``d`` are given.
    """
    if np.isscalar(k):
        if m is None or d is None:
            raise ValueError("a flat index needs m and d")
        k = np.unravel_index(int(k), (m + 1,) * d)
    k = tuple(int(v) for v in k)
    pts = _as_points(x, len(k))
    value = np.ones(pts.shape[0])
    for a, ka in enumerate(k):
        value *= legendre_table(ka, pts[:, a])[ka]
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and len(k) > 1)
    return float(value[0]) if single else value


def gauss_legendre_nodes(m, d):
    """Tensor product of ``(m + 1)``-point Gauss-Legendre rules on ``[-1, 1]^d``."""
    if m < 0 or d < 1:
        raise ValueError("need m >= 0 and d >= 1")
    x, w = np.polynomial.legendre.leggauss(m + 1)
    idx = multi_indices(m, d)
    return SampleSet(x[idx], np.prod(w[idx], axis=1))


# -- encoder / decoder ----------------------------------------------------------


@dataclass(frozen=True)
class MultiPoly:
    """Polynomial of coordinate degree ``m`` in ``d`` variables, stored in the Legendre basis."""

    coefficients: np.ndarray
    m: int
    d: int

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64).ravel()
        if c.size != (self.m + 1) ** self.d:
            raise ValueError(f"expected {(self.m + 1) ** self.d} coefficients, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __call__(self, x):
        return basis_matrix(self.m, _as_points(x, self.d)) @ self.coefficients

    def l2_norm(self):
        return float(np.linalg.norm(self.coefficients))

    def as_field(self, name="Q"):
        return ScalarField(self, self.d, name=name)


def encoder_matrix(m, d):
    """``U[i, n] = w_n P_i(xi_n)`` at the Gauss-Legendre nodes."""
    xi = gauss_legendre_nodes(m, d)
    return (xi.weights[:, None] * basis_matrix(m, xi.points)).T, xi


def encode_phi(Q, m, d):
    """Legendre coefficients of ``Q`` in ``Pi_m`` from its Gauss-Legendre samples."""
    U, xi = encoder_matrix(m, d)
    return U @ np.asarray(Q(xi.points), dtype=np.float64).ravel()


def decode_phi(c, xi, m=None):
    """Values of ``sum_i c_i P_i`` at the sample points."""
    c = np.asarray(c, dtype=np.float64).ravel()
    d = xi.d
    if m is None:
        m = round(c.size ** (1.0 / d)) - 1
    if c.size != (m + 1) ** d:
        raise ValueError(f"{c.size} coefficients do not form a degree-{m} basis in {d} variables")
    return basis_matrix(m, xi.points) @ c


# -- Bernstein projection -------------------------------------------------------


def bernstein_nodes(m):
    return (2.0 * np.arange(m + 1) - m) / m


def bernstein_basis(m, z):
    """``C(m, k) ((1 + z)/2)^k ((1 - z)/2)^(m - k)`` with shape ``(len(z), m + 1)``."""
    p = np.clip((np.asarray(z, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    return binom.pmf(np.arange(m + 1)[None, :], m, p[:, None])


@dataclass(frozen=True)
class BernsteinPolynomial:
    """Tensor Bernstein polynomial given by its values on the ``(m + 1)^d`` node grid."""

    values: np.ndarray
    m: int
    d: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape((self.m + 1,) * self.d)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        x = _as_points(x, self.d)
        n = x.shape[0]
        t = self.values.reshape(self.m + 1, -1)
        out = bernstein_basis(self.m, x[:, 0]) @ t
        for a in range(1, self.d):
            out = out.reshape(n, self.m + 1, -1)
            out = np.einsum("nkr,nk->nr", out, bernstein_basis(self.m, x[:, a]))
        return out.reshape(n)

    def as_field(self, name="Vf"):
        return ScalarField(self, self.d, name=name)

    def to_legendre(self):
        """Exact Legendre coefficients (the polynomial lies in ``Pi_m``)."""
        return MultiPoly(encode_phi(self, self.m, self.d), self.m, self.d)


def bernstein_project(f, m, d=None, budget=2_000_000):
    """Tensor Bernstein operator applied to ``f`` on ``[-1, 1]^d``."""
    d = f.d if d is None else d
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    if (m + 1) ** d > budget:
        raise ValueError(f"(m + 1)^d = {(m + 1) ** d} evaluations exceed the budget of {budget}")
    z = bernstein_nodes(m)
    grid = z[multi_indices(m, d)]
    return BernsteinPolynomial(f(grid), m, d)


# -- modulus of continuity ------------------------------------------------------


def modulus_of_continuity(f, r, budget=100_000, seed=0):
    """Randomized lower estimate of ``sup |f(x) - f(y)|`` over ``||x - y||_2 <= r``.

    Half of the pairs sit at distance exactly ``r`` and half at a uniform
    distance below it; pairs leaving the cube are discarded. For an array
    ``r`` the estimates are made monotone by a running maximum over
    increasing radii.
    """
    radii = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if np.any(radii <= 0):
        raise ValueError("r must be positive")
    rng = np.random.default_rng(seed)
    d = f.d
    order = np.argsort(radii)
    est = np.zeros(radii.size)
    for i in order:
        ri = radii[i]
        x = rng.uniform(-1.0, 1.0, size=(budget, d))
        u = rng.standard_normal((budget, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s = np.where(np.arange(budget) % 2 == 0, ri, ri * rng.uniform(size=budget))
        y = x + s[:, None] * u
        ok = np.all(np.abs(y) <= 1.0, axis=1)
        if np.any(ok):
            est[i] = np.max(np.abs(f(x[ok]) - f(y[ok])))
    est[order] = np.maximum.accumulate(est[order])
    return est if np.ndim(r) else float(est[0])


# -- surrogate operators --------------------------------------------------------


@dataclass(frozen=True)
class PointwiseOperator:
    """``M(f)(x) = phi(f(x))`` for a scalar ``phi`` with Lipschitz constant ``lipschitz``."""

    phi: object
    lipschitz: float = 1.0
    name: str = "pointwise"

    def __call__(self, f):
        return ScalarField(lambda x: self.phi(f(x)), f.d, name=f"{self.name}({f.name})")

    def output_lipschitz(self, f):
        return None if f.lipschitz is None else self.lipschitz * f.lipschitz


def soft_clip(level=1.0):
    """``level * tanh(v / level)``: 1-Lipschitz and bounded."""
    return PointwiseOperator(lambda v: level * np.tanh(np.asarray(v) / level), 1.0, "softclip")


@dataclass(frozen=True)
class ShiftAverage:
    """``M(f)(x) = sum_i w_i f(clip(x + s_i))``: a fixed smoothing kernel.

    Clipping to the cube is 1-Lipschitz, so ``M`` is ``sum |w_i|``-Lipschitz
    in the sup norm.
    """

    shifts: np.ndarray
    weights: np.ndarray
    name: str = "smooth"

    @property
    def lipschitz(self):
        return float(np.sum(np.abs(self.weights)))

    def __call__(self, f):
        shifts = np.atleast_2d(np.asarray(self.shifts, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)

        def g(x):
            return sum(wi * f(np.clip(x + s, -1.0, 1.0)) for wi, s in zip(w, shifts))

        return ScalarField(g, f.d, name=f"{self.name}({f.name})")

    def output_lipschitz(self, f):
        return None if f.lipschitz is None else self.lipschitz * f.lipschitz


def box_smoother(d, width=0.1, taps=3):
    """Uniform average over a ``taps^d`` lattice of shifts spanning ``width``."""
    offs = np.linspace(-width / 2.0, width / 2.0, taps)
    shifts = offs[multi_indices(taps - 1, d)]
    return ShiftAverage(shifts, np.full(len(shifts), 1.0 / len(shifts)))


@dataclass(frozen=True)
class IdentityOperator:
    lipschitz: float = 1.0
    name: str = "identity"

    def __call__(self, f):
        return f

    def output_lipschitz(self, f):
        return f.lipschitz


# -- bounds and sweeps ----------------------------------------------------------


def dense_grid(d, per_axis=None):
    """Evaluation grid for sup norms: 2^12 points for d = 1, 2^7 per axis for d = 2."""
    if per_axis is None:
        per_axis = {1: 4096, 2: 128}.get(d, 32)
    axis = np.linspace(-1.0, 1.0, per_axis)
    return axis[multi_indices(per_axis - 1, d)]


def sup_distance(f, g, grid):
    return float(np.max(np.abs(f(grid) - g(grid))))


def bernstein_bound(d, omega):
    """``(5d/4) omega_f(2/m)`` given ``omega = omega_f(2/m)``."""
    return 1.25 * d * omega


def discretization_bound(d, m, omega, lipschitz_m, lipschitz_y):
    """``6 L_M d^2 omega_f(2/m) + 5 L_Y d / (2m)``."""
    return 6.0 * lipschitz_m * d**2 * omega + 5.0 * lipschitz_y * d / (2.0 * m)


def _omega(f, r, budget, seed):
    if f.modulus is not None:
        return float(f.modulus(r))
    return modulus_of_continuity(f, r, budget, seed)


@dataclass(frozen=True)
class SweepRow:
    f: str
    m: int
    error: float
    bound: float
    omega_f: float


@dataclass
class ErrorTable:
    rows: list

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("f,m,error,bound,omega_f\n")
        for r in self.rows:
            buf.write(f"{r.f},{r.m},{r.error!r},{r.bound!r},{r.omega_f!r}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def for_field(self, name):
        return [r for r in self.rows if r.f == name]

    def violations(self):
        return [r for r in self.rows if r.error > r.bound]


def bernstein_error_sweep(fields, ms, grid=None, budget=100_000, seed=0):
    """``||f - V_m f||_inf`` against ``(5d/4) omega_f(2/m)`` for every ``f`` and ``m``."""
    rows = []
    for f in fields:
        pts = dense_grid(f.d) if grid is None else grid
        exact = f(pts)
        for m in ms:
            vm = bernstein_project(f, m)
            err = float(np.max(np.abs(exact - vm(pts))))
            om = _omega(f, 2.0 / m, budget, seed)
            rows.append(SweepRow(f.name, int(m), err, bernstein_bound(f.d, om), om))
    return ErrorTable(rows)


def discretization_error_sweep(operator, fields, ms, grid=None, budget=100_000, seed=0, output_lipschitz=None):
    """``||M(f) - V_m M V_m f||_inf`` against the closed-form discretization bound.

    ``output_lipschitz`` overrides the Lipschitz constant of the outputs,
    which otherwise comes from the operator and the field.
    """
    rows = []
    for f in fields:
        pts = dense_grid(f.d) if grid is None else grid
        target = operator(f)(pts)
        ly = output_lipschitz if output_lipschitz is not None else operator.output_lipschitz(f)
        if ly is None:
            raise ValueError(f"the output Lipschitz constant for {f.name} is unknown")
        for m in ms:
            inner = bernstein_project(f, m).as_field()
            approx = bernstein_project(operator(inner), m)
            err = float(np.max(np.abs(target - approx(pts))))
            om = _omega(f, 2.0 / m, budget, seed)
            rows.append(SweepRow(f.name, int(m), err, discretization_bound(f.d, m, om, operator.lipschitz, ly), om))
    return ErrorTable(rows)


# -- reference fields -------------------------------------------------------------


def linear_field(slope=1.0, d=1, name=None):
    """``slope * x_1``; modulus ``|slope| r``."""
    s = float(slope)
    return ScalarField(lambda x: s * x[:, 0], d, abs(s), lambda r: abs(s) * min(r, 2.0), name or f"linear{s:g}")


def square_field():
    """``z^2`` on [-1, 1]; modulus ``2r - r^2`` for ``r <= 2``."""
    return ScalarField(lambda x: x[:, 0] ** 2, 1, 2.0, lambda r: 2.0 * min(r, 2.0) - min(r, 2.0) ** 2, "square")


def sine_field(a=3.0):
    """``sin(a z)``; modulus ``2 sin(a r / 2)`` while ``a r <= pi``, else 2."""
    a = float(a)

    def modulus(r):
        return 2.0 * math.sin(a * r / 2.0) if a * r <= math.pi else 2.0

    return ScalarField(lambda x: np.sin(a * x[:, 0]), 1, abs(a), modulus, f"sin{a:g}")


def radial_square_field():
    """``x_1^2 + x_2^2`` on the square; modulus ``2 sqrt(2) r - r^2`` for ``r <= sqrt(2)``."""

    def modulus(r):
        r = min(r, 2.0 * math.sqrt(2.0))
        return 2.0 * math.sqrt(2.0) * r - r**2 if r <= math.sqrt(2.0) else 2.0

    return ScalarField(lambda x: np.sum(x**2, axis=1), 2, 2.0 * math.sqrt(2.0), modulus, "radial")


def random_trig_field(rng, d=1, terms=4, max_freq=3.0):
    """Random smooth field ``sum_k c_k cos(<w_k, x> + p_k)`` with known Lipschitz bound."""
    c = rng.normal(size=terms)
    w = rng.uniform(-max_freq, max_freq, size=(terms, d))
    p = rng.uniform(0, 2 * np.pi, size=terms)
    lip = float(np.sum(np.abs(c) * np.linalg.norm(w, axis=1)))
    return ScalarField(lambda x: np.cos(x @ w.T + p) @ c, d, lip, name="trig")


__all__ = [
    "BernsteinPolynomial",
    "ErrorTable",
    "IdentityOperator",
    "MultiPoly",
    "PointwiseOperator",
    "SampleSet",
    "ScalarField",
    "ShiftAverage",
    "basis_matrix",
    "bernstein_basis",
    "bernstein_error_sweep",
    "bernstein_project",
    "box_smoother",
    "decode_phi",
    "dense_grid",
    "discretization_error_sweep",
    "encode_phi",
    "encoder_matrix",
    "gauss_legendre_nodes",
    "legendre_eval",
    "legendre_table",
    "bernstein_bound",
    "linear_field",
    "modulus_of_continuity",
    "multi_indices",
    "radial_square_field",
    "random_trig_field",
    "sample_S",
    "sine_field",
    "soft_clip",
    "square_field",
    "discretization_bound",
]
