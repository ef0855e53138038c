"""Band-limited periodic fields on the unit torus [0,1)^3.

Fields are stored as physical samples on a uniform grid.  Spectral work uses
the real-to-complex layout of ``scipy.fft.rfftn`` over the last three axes.
Derivatives map to the multiplier 2*pi*i*k.
"""
from __future__ import annotations

import itertools
import math
import os
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.special import roots_legendre

__all__ = [
    "TorusGrid", "Field", "ScalarField", "VectorField", "SymMatrixField",
    "Mollifier", "derivative", "grad", "divergence", "curl", "leray_project",
    "inverse_div_R", "inverse_div_Rvex", "mollify_space", "holder_norm",
    "random_field", "eval_at_points", "sup_norm", "write_dump", "read_dump", "write_csv", "SYM_INDEX",
]

# storage order of the 6 independent entries of a symmetric matrix
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))
_FULL_TO_SYM = {}
for _c, (_i, _j) in enumerate(SYM_INDEX):
    _FULL_TO_SYM[(_i, _j)] = _c
    _FULL_TO_SYM[(_j, _i)] = _c


def _workers():
    env = os.environ.get("BOUSSINESQ_CI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


class TorusGrid:
    """Uniform grid with ``n`` points per axis and a rational dealias fraction.

    Modes kept by :meth:`truncate` satisfy ``|k_i| <= cutoff`` on each axis,
    where ``cutoff = ceil(dealias * n / 2) - 1``.
    """

    def __init__(self, n, dealias=Fraction(2, 3), max_order=6):
        if int(n) != n or n <= 0 or n % 2:
            raise ValueError(f"n_per_axis must be a positive even integer, got {n}")
        dealias = Fraction(dealias).limit_denominator(10**6)
        if not (0 < dealias <= 1):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        self.n = int(n)
        self.dealias = dealias
        self.max_order = int(max_order)
        self.h = 1.0 / self.n
        self.cutoff = math.ceil(dealias * self.n / 2) - 1
        # radius of the dealiased ball, used to size dyadic blocks
        self.radius = Fraction(self.n) * dealias / 2

    def __repr__(self):
        return f"TorusGrid(n={self.n}, dealias={self.dealias})"

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and (self.n, self.dealias) == (other.n, other.dealias)

    def __hash__(self):
        return hash((self.n, self.dealias))

    @property
    def shape(self):
        return (self.n,) * 3

    @property
    def spec_shape(self):
        return (self.n, self.n, self.n // 2 + 1)

    @cached_property
    def coords(self):
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, x, indexing="ij")

    @cached_property
    def _k1d(self):
        full = np.fft.fftfreq(self.n, 1.0 / self.n)
        half = np.fft.rfftfreq(self.n, 1.0 / self.n)
        return full, half

    @cached_property
    def k(self):
        """Integer wavenumbers broadcastable to the spectral shape."""
        full, half = self._k1d
        return (full[:, None, None], full[None, :, None], half[None, None, :])

    @cached_property
    def kd(self):
        """Angular wavenumbers 2*pi*k for derivatives, Nyquist zeroed."""
        out = []
        for kk in self.k:
            a = 2 * np.pi * kk.copy()
            a[np.abs(kk) == self.n // 2] = 0.0
            out.append(a)
        return tuple(out)

    @cached_property
    def k2(self):
        k0, k1, k2 = self.k
        return (k0**2 + k1**2 + k2**2).astype(float)

    @cached_property
    def kd2(self):
        a, b, c = self.kd
        return a**2 + b**2 + c**2

    @cached_property
    def kabs(self):
        return np.sqrt(self.k2)

    @cached_property
    def mask(self):
        k0, k1, k2 = self.k
        K = self.cutoff
        return (np.abs(k0) <= K) & (np.abs(k1) <= K) & (np.abs(k2) <= K)

    def fft(self, a):
        return sfft.rfftn(a, axes=(-3, -2, -1), workers=_workers())

    def ifft(self, ah):
        return sfft.irfftn(ah, s=self.shape, axes=(-3, -2, -1), workers=_workers())

    def truncate(self, a):
        """Project physical samples onto the dealiased band."""
        return self.ifft(self.fft(a) * self.mask)

    def mul(self, a, b):
        """Dealiased pointwise product."""
        return self.truncate(a * b)

    def mean(self, a):
        return a.mean(axis=(-3, -2, -1))

    def integrate(self, a):
        return self.mean(a)


class Field:
    ncomp = None

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        expect = self._expected_shape(grid)
        if values.shape != expect:
            raise ValueError(f"{type(self).__name__} expects shape {expect}, got {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def _expected_shape(cls, grid):
        return grid.shape if cls.ncomp is None else (cls.ncomp,) + grid.shape

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(cls._expected_shape(grid)))

    def _new(self, values):
        return type(self)(self.grid, values)

    def copy(self):
        return self._new(self.values.copy())

    def fft(self):
        return self.grid.fft(self.values)

    def truncated(self):
        return self._new(self.grid.truncate(self.values))

    def pointwise_norm(self):
        if self.ncomp is None:
            return np.abs(self.values)
        return np.sqrt(np.sum(self.values**2, axis=0))

    def sup(self):
        return float(self.pointwise_norm().max())

    def mean(self):
        return self.grid.mean(self.values)

    def l2(self):
        return float(np.sqrt(np.mean(self.pointwise_norm()**2)))

    def _check(self, other):
        if isinstance(other, Field):
            if type(other) is not type(self) or other.grid != self.grid:
                raise TypeError("field type or grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return self._new(self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._check(other))

    def __rsub__(self, other):
        return self._new(self._check(other) - self.values)

    def __mul__(self, c):
        if isinstance(c, Field):
            raise TypeError("use grid.mul for dealiased field products")
        return self._new(self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._new(self.values / c)

    def __neg__(self):
        return self._new(-self.values)


class ScalarField(Field):
    ncomp = None


class VectorField(Field):
    ncomp = 3

    def dot(self, other):
        return ScalarField(self.grid, np.sum(self.values * other.values, axis=0))

    def component(self, i):
        return ScalarField(self.grid, self.values[i])


class SymMatrixField(Field):
    """Symmetric 3x3 field stored as components (00, 11, 22, 01, 12, 02)."""
    ncomp = 6

    def __init__(self, grid, values, trace_free=False):
        super().__init__(grid, values)
        self.trace_free = bool(trace_free)
        if self.trace_free:
            tr = np.abs(self.values[0] + self.values[1] + self.values[2]).max()
            scale = max(np.abs(self.values).max(), 1.0)
            if tr > 1e-12 * scale:
                raise ValueError(f"trace-free flag set but max |trace| = {tr:.3e}")

    def _new(self, values):
        return SymMatrixField(self.grid, values, trace_free=self.trace_free)

    def __add__(self, other):
        tf = self.trace_free and getattr(other, "trace_free", False)
        return SymMatrixField(self.grid, self.values + self._check(other), trace_free=tf)

    __radd__ = __add__

    def __sub__(self, other):
        tf = self.trace_free and getattr(other, "trace_free", False)
        return SymMatrixField(self.grid, self.values - self._check(other), trace_free=tf)

    @classmethod
    def from_full(cls, grid, M, trace_free=False):
        M = np.asarray(M)
        vals = np.stack([0.5 * (M[i, j] + M[j, i]) for i, j in SYM_INDEX])
        return cls(grid, vals, trace_free=trace_free)

    def full(self):
        return np.stack([np.stack([self.values[_FULL_TO_SYM[(i, j)]] for j in range(3)])
                         for i in range(3)])

    def trace(self):
        return ScalarField(self.grid, self.values[0] + self.values[1] + self.values[2])

    def trace_free_part(self):
        tr = (self.values[0] + self.values[1] + self.values[2]) / 3.0
        vals = self.values.copy()
        vals[:3] -= tr
        return SymMatrixField(self.grid, vals, trace_free=True)

    def pointwise_norm(self):
        # Frobenius norm
        v = self.values
        return np.sqrt(v[0]**2 + v[1]**2 + v[2]**2 + 2 * (v[3]**2 + v[4]**2 + v[5]**2))


def _as_values(f):
    return f.values if isinstance(f, Field) else np.asarray(f)


def derivative(f, multi_index):
    """Spectral derivative d^sigma f for a multi-index (s1, s2, s3)."""
    mi = tuple(int(s) for s in multi_index)
    if len(mi) != 3 or min(mi) < 0:
        raise ValueError(f"multi-index must be three nonnegative integers, got {multi_index}")
    g = f.grid
    if sum(mi) > g.max_order:
        raise ValueError(f"derivative order {sum(mi)} exceeds configured max {g.max_order}")
    if sum(mi) == 0:
        return f.copy()
    mult = 1.0
    for kd, s in zip(g.kd, mi):
        if s:
            mult = mult * (1j * kd) ** s
    return f._new(g.ifft(g.fft(f.values) * mult))


def grad(f):
    g = f.grid
    fh = g.fft(f.values)
    return VectorField(g, np.stack([g.ifft(1j * kd * fh) for kd in g.kd]))


def divergence(u):
    """Divergence of a vector field, or row-wise divergence of a symmetric matrix field."""
    g = u.grid
    if isinstance(u, VectorField):
        uh = g.fft(u.values)
        return ScalarField(g, g.ifft(sum(1j * g.kd[j] * uh[j] for j in range(3))))
    if isinstance(u, SymMatrixField):
        Mh = g.fft(u.values)
        out = []
        for i in range(3):
            out.append(sum(1j * g.kd[j] * Mh[_FULL_TO_SYM[(i, j)]] for j in range(3)))
        return VectorField(g, g.ifft(np.stack(out)))
    raise TypeError("divergence expects a VectorField or SymMatrixField")


def curl(u):
    g = u.grid
    uh = g.fft(u.values)
    k0, k1, k2 = g.kd
    ch = np.stack([1j * (k1 * uh[2] - k2 * uh[1]),
                   1j * (k2 * uh[0] - k0 * uh[2]),
                   1j * (k0 * uh[1] - k1 * uh[0])])
    return VectorField(g, g.ifft(ch))


def _safe_inv(a):
    out = np.zeros_like(a)
    nz = a != 0
    out[nz] = 1.0 / a[nz]
    return out


def leray_project(u):
    """Orthogonal projection onto divergence-free fields; the mean is kept."""
    g = u.grid
    uh = g.fft(u.values)
    kd = g.kd
    kdotu = sum(kd[j] * uh[j] for j in range(3)) * _safe_inv(g.kd2)
    return VectorField(g, g.ifft(np.stack([uh[i] - kd[i] * kdotu for i in range(3)])))


def inverse_div_R(u):
    """Symmetric trace-free right inverse of the divergence on mean-free vector fields.

    R u = -(-L)^-1 (grad u + grad u^T) - 1/2 (-L)^-2 grad grad div u + 1/2 (-L)^-1 (div u) Id,
    with L the Laplacian.
    """
    g = u.grid
    uh = g.fft(u.values)
    kd = g.kd
    inv = _safe_inv(g.kd2)
    divh = 1j * sum(kd[j] * uh[j] for j in range(3))
    comps = []
    for i, j in SYM_INDEX:
        c = -(1j * kd[j] * uh[i] + 1j * kd[i] * uh[j]) * inv
        c = c + 0.5 * kd[i] * kd[j] * divh * inv**2
        if i == j:
            c = c + 0.5 * divh * inv
        comps.append(c)
    vals = g.ifft(np.stack(comps))
    # remove roundoff trace so the flag invariant holds exactly
    tr = (vals[0] + vals[1] + vals[2]) / 3.0
    vals[:3] -= tr
    return SymMatrixField(g, vals, trace_free=True)


def inverse_div_Rvex(f):
    """grad of the inverse Laplacian applied to f - mean(f)."""
    g = f.grid
    fh = g.fft(f.values)
    inv = _safe_inv(g.kd2)
    return VectorField(g, np.stack([g.ifft(-1j * kd * fh * inv) for kd in g.kd]))


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


class Mollifier:
    """Normalized bump exp(-1/(1-r^2)) mollifier in time (1-D) or space (radial 3-D)."""

    _nodes = 200

    def __init__(self, kind, width):
        if kind not in ("space", "time"):
            raise ValueError("kind must be 'space' or 'time'")
        if not width > 0:
            raise ValueError("width must be positive")
        self.kind = kind
        self.width = float(width)
        x, w = roots_legendre(self._nodes)
        if kind == "time":
            self._norm = float(np.sum(w * _bump(x)))
        else:
            r = 0.5 * (x + 1.0)
            self._r, self._w = r, 0.5 * w
            self._norm = float(4 * np.pi * np.sum(self._w * _bump(r) * r**2))

    def kernel(self, x):
        """Kernel value at time offsets (time) or at points of shape (3, ...) (space)."""
        e = self.width
        if self.kind == "time":
            return _bump(np.asarray(x) / e) / (self._norm * e)
        r = np.sqrt(np.sum(np.asarray(x) ** 2, axis=0)) / e
        return _bump(r) / (self._norm * e**3)

    def transform(self, rho):
        """Fourier transform of the unit-width spatial kernel at |xi| = rho (cycles per unit)."""
        rho = np.asarray(rho, dtype=float)
        z = 2 * np.pi * rho[..., None] * self._r
        integrand = _bump(self._r) * self._r**2 * np.sinc(z / np.pi)
        return 4 * np.pi * np.sum(self._w * integrand, axis=-1) / self._norm

    def multiplier(self, grid):
        if self.kind != "space":
            raise ValueError("multiplier needs a spatial mollifier")
        k2 = grid.k2
        uniq, inv = np.unique(k2, return_inverse=True)
        vals = self.transform(self.width * np.sqrt(uniq))
        return vals[inv].reshape(k2.shape)

    def time_weights(self, dt, nsteps=None):
        """Quadrature weights of the time kernel on a lattice with spacing dt."""
        m = int(math.floor(self.width / dt)) if nsteps is None else int(nsteps)
        s = np.arange(-m, m + 1) * dt
        w = self.kernel(s) * dt
        return s, w / w.sum()


def mollify_space(f, ell):
    """Convolution with the spatial mollifier of width ell, applied as a Fourier multiplier."""
    g = f.grid
    if ell < 2 * g.h:
        raise ValueError(f"mollifier width {ell:.4g} below resolution floor 2h = {2 * g.h:.4g} (n={g.n})")
    mult = Mollifier("space", ell).multiplier(g)
    return f._new(g.ifft(g.fft(f.values) * mult))


def _multi_indices(order):
    return [mi for mi in itertools.product(range(order + 1), repeat=3) if sum(mi) == order]


def _holder_offsets(n, radius):
    """Lattice offsets: every axis multiple plus dyadic multiples along diagonals."""
    dirs = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    for d in itertools.product((-1, 0, 1), repeat=3):
        nz = sum(1 for c in d if c)
        if nz >= 2 and next(c for c in d if c) > 0:
            dirs.append(d)
    offs = []
    rmax = radius * n
    for d in dirs:
        length = math.sqrt(sum(c * c for c in d))
        if length == 1.0:
            mults = range(1, int(math.floor(rmax)) + 1)
        else:
            mults, m = [], 1
            while m * length <= rmax + 1e-12:
                mults.append(m)
                m *= 2
        for m in mults:
            offs.append((tuple(m * c for c in d), m * length / n))
    return offs


def _seminorm_alpha(arrs, alpha, radius):
    n = arrs[0].shape[-1]
    best = 0.0
    for off, dist in _holder_offsets(n, radius):
        diff2 = 0.0
        for a in arrs:
            diff2 = diff2 + (np.roll(a, off, axis=(-3, -2, -1)) - a) ** 2
        best = max(best, float(np.sqrt(diff2).max()) / dist**alpha)
    return best


def holder_norm(f, N, alpha=0.0, radius=0.25, parts=False):
    """Grid estimate of the C^{N+alpha} norm: sum_{j<=N} [f]_j + [f]_{N+alpha}.

    [f]_j is the max over |sigma| = j of sup |d^sigma f| (pointwise Euclidean
    norm over components).  The Hoelder seminorm samples point pairs along 13
    lattice directions within ``radius``; it is a lower-bound estimator.
    """
    g = f.grid
    if N + 1 > g.max_order:
        raise ValueError(f"N+1 = {N + 1} exceeds derivative max {g.max_order}")
    if not (0 <= alpha < 1):
        raise ValueError("alpha must lie in [0, 1)")
    vals = f.values if f.ncomp is not None else f.values[None]
    fh = g.fft(vals)
    semis = []
    top = []
    for j in range(N + 1):
        best = 0.0
        for mi in _multi_indices(j):
            mult = 1.0
            for kd, s in zip(g.kd, mi):
                if s:
                    mult = mult * (1j * kd) ** s
            d = g.ifft(fh * mult) if j else vals
            best = max(best, float(np.sqrt(np.sum(d**2, axis=0)).max()))
            if j == N and alpha > 0:
                top.append(d)
        semis.append(best)
    hol = 0.0
    if alpha > 0:
        hol = max(_seminorm_alpha(list(d), alpha, radius) for d in top)
    total = sum(semis) + hol
    if parts:
        return total, semis, hol
    return total


def random_field(grid, kind="scalar", rng=None, kmax=None, amp=1.0, slope=0.0, mean=0.0):
    """Random smooth real field supported on |k| <= kmax (default: the dealiased band).

    Spectral amplitudes scale like |k|^-slope.  The result has its sup norm set to ``amp``
    (before adding ``mean``).
    """
    rng = np.random.default_rng(rng)
    ncomp = {"scalar": 1, "vector": 3, "sym": 6}[kind]
    shp = (ncomp,) + grid.spec_shape
    coef = rng.standard_normal(shp) + 1j * rng.standard_normal(shp)
    m = grid.mask.copy()
    if kmax is not None:
        m &= grid.kabs <= kmax
    m &= grid.k2 > 0
    weight = np.where(m, np.maximum(grid.kabs, 1.0) ** (-slope), 0.0)
    vals = grid.ifft(coef * weight)
    vals = grid.truncate(vals)
    s = np.abs(vals).max()
    if s > 0:
        vals *= amp / s
    vals += mean
    if kind == "scalar":
        return ScalarField(grid, vals[0])
    if kind == "vector":
        return VectorField(grid, vals)
    return SymMatrixField(grid, vals)


def write_dump(path, field):
    """Binary dump: little-endian uint32 n, uint32 ncomp, then float64 samples in C order."""
    ncomp = 1 if field.ncomp is None else field.ncomp
    with open(path, "wb") as fh:
        np.array([field.grid.n, ncomp], dtype="<u4").tofile(fh)
        np.ascontiguousarray(field.values, dtype="<f8").tofile(fh)


def read_dump(path, dealias=Fraction(2, 3)):
    with open(path, "rb") as fh:
        n, ncomp = (int(x) for x in np.fromfile(fh, dtype="<u4", count=2))
        data = np.fromfile(fh, dtype="<f8")
    grid = TorusGrid(n, dealias)
    if ncomp == 1:
        return ScalarField(grid, data.reshape(grid.shape))
    data = data.reshape((ncomp,) + grid.shape)
    if ncomp == 3:
        return VectorField(grid, data)
    if ncomp == 6:
        return SymMatrixField(grid, data)
    raise ValueError(f"unsupported component count {ncomp}")


def write_csv(path, header, rows):
    """CSV with floats at 17 significant digits."""
    def fmt(x):
        if isinstance(x, (float, np.floating)):
            return f"{float(x):.17g}"
        return str(x)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(x) for x in r) + "\n")


def eval_at_points(f, pts, derivs=False):
    """Evaluate the trigonometric interpolant of a scalar field at points of shape (m, 3).

    With ``derivs`` also returns the gradient (m, 3) and Hessian (m, 3, 3).
    """
    g = f.grid
    fh = np.fft.fftn(f.values) / g.n**3
    k = np.fft.fftfreq(g.n, 1.0 / g.n)
    k[np.abs(k) == g.n // 2] = 0.0
    K = np.stack(np.meshgrid(k, k, k, indexing="ij")).reshape(3, -1)
    c = fh.reshape(-1)
    keep = np.abs(c) > 1e-16 * np.abs(c).max() if np.abs(c).max() > 0 else np.zeros_like(c, bool)
    K, c = K[:, keep], c[keep]
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ph = np.exp(2j * np.pi * pts @ K) * c
    val = np.real(ph.sum(axis=1))
    if not derivs:
        return val
    w = 2j * np.pi * K
    grad_ = np.real(ph @ w.T)
    hess = np.real(np.einsum("mk,ik,jk->mij", ph, w, w))
    return val, grad_, hess


def sup_norm(f, refine=True, candidates=4, iters=12):
    """sup |f| of a scalar field; with ``refine`` the grid maximum is polished by
    Newton iterations on the trigonometric interpolant."""
    a = np.abs(f.values)
    gmax = float(a.max())
    if not refine or gmax == 0:
        return gmax
    g = f.grid
    flat = np.argsort(a.reshape(-1))[::-1][:candidates]
    best = gmax
    for idx in flat:
        x = np.array(np.unravel_index(idx, g.shape), dtype=float) * g.h
        sgn = np.sign(f.values.reshape(-1)[idx])
        for _ in range(iters):
            val, gr, H = eval_at_points(f, x[None], derivs=True)
            try:
                step = np.linalg.solve(H[0], gr[0])
            except np.linalg.LinAlgError:
                break
            if np.linalg.norm(step) > g.h:
                break
            x = x - step
            if np.linalg.norm(step) < 1e-14:
                break
        val = float(eval_at_points(f, x[None])[0]) * sgn
        if np.isfinite(val):
            best = max(best, val)
    return best
