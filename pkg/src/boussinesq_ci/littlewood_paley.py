"""Dyadic Littlewood-Paley blocks on T^3, Besov sequences and Bernstein checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .spectral_core import Field, derivative, _multi_indices

__all__ = [
    "smoothstep", "chi", "phi", "DyadicSystem", "BesovSeq", "lp_norm",
    "delta_j", "s_q", "besov_norm", "besov_sequence", "K_kernel",
    "k_kernel_convolve", "bernstein_check", "bernstein_sweep", "write_besov_csv",
]

# radii of the cutoffs
CHI_IN = 0.75            # chi = 1 below
CHI_OUT = 6.0 / 7.0      # chi = 0 above; 2 * 6/7 = 12/7 < 8/3


def smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def chi(r):
    return 1.0 - smoothstep((np.asarray(r, dtype=float) - CHI_IN) / (CHI_OUT - CHI_IN))


def phi(r):
    """Annular cutoff chi(r/2) - chi(r): supported in [3/4, 12/7], equal to 1 on [6/7, 3/2]."""
    r = np.asarray(r, dtype=float)
    return chi(r / 2.0) - chi(r)


class DyadicSystem:
    """Dyadic cutoffs bound to a grid.

    ``j_max`` is the largest block whose annulus sits inside the dealiased ball;
    ``j_top`` is the largest block that touches any retained mode.
    """

    def __init__(self, grid):
        self.grid = grid
        target = grid.radius * Fraction(3, 8)
        j = -1
        while Fraction(2) ** (j + 1) <= target:
            j += 1
        self.j_max = j
        kmax = math.sqrt(3) * grid.cutoff
        j = -1
        while 0.75 * 2.0 ** j < kmax:
            j += 1
        self.j_top = j - 1
        self._cache = {}

    def multiplier(self, j):
        if j in self._cache:
            return self._cache[j]
        r = self.grid.kabs
        m = chi(r) if j == -1 else phi(r / 2.0**j)
        self._cache[j] = m
        return m

    def low_multiplier(self, Q):
        return chi(self.grid.kabs / 2.0**Q)

    def partition_error(self):
        total = sum(self.multiplier(j) for j in range(-1, self.j_top + 1))
        return float(np.abs(total - 1.0)[self.grid.mask].max())


_systems = {}


def _system(grid):
    if grid not in _systems:
        _systems[grid] = DyadicSystem(grid)
    return _systems[grid]


def delta_j(f: Field, j: int) -> Field:
    ds = _system(f.grid)
    if j < -1:
        return f._new(np.zeros_like(f.values))
    if j > ds.j_top:
        warnings.warn(f"block j={j} lies beyond the resolved band (top block {ds.j_top}); returning zero",
                      stacklevel=2)
        return f._new(np.zeros_like(f.values))
    g = f.grid
    return f._new(g.ifft(g.fft(f.values) * ds.multiplier(j)))


def s_q(f: Field, Q: int) -> Field:
    """Low-frequency cut-off chi(2^-Q k); zero for Q < 0."""
    g = f.grid
    if Q < 0:
        return f._new(np.zeros_like(f.values))
    return f._new(g.ifft(g.fft(f.values) * _system(g).low_multiplier(Q)))


def lp_norm(f, p):
    """(mean |f|^p)^(1/p) on the grid; p = inf gives the grid max."""
    a = f.pointwise_norm() if isinstance(f, Field) else np.abs(np.asarray(f))
    if p == math.inf or p == "inf":
        return float(a.max())
    p = float(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.mean(a**p) ** (1.0 / p))


@dataclass
class BesovSeq:
    p: float
    j: np.ndarray
    block_norms: np.ndarray
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = 2.0 ** (self.j / 3.0) * self.block_norms

    def __getitem__(self, j):
        return float(self.values[list(self.j).index(j)])


def besov_sequence(f: Field, p, j_max=None) -> BesovSeq:
    ds = _system(f.grid)
    jm = ds.j_max if j_max is None else j_max
    js = np.arange(-1, jm + 1)
    norms = np.array([lp_norm(delta_j(f, int(j)), p) for j in js])
    return BesovSeq(p=p, j=js, block_norms=norms)


def besov_norm(f: Field, s: float, p, q) -> float:
    ds = _system(f.grid)
    terms = np.array([2.0 ** (j * s) * lp_norm(delta_j(f, j), p) for j in range(-1, ds.j_max + 1)])
    if q == math.inf or q == "inf":
        return float(terms.max())
    q = float(q)
    return float(np.sum(terms**q) ** (1.0 / q))


def K_kernel(m):
    """K(m) = 2^{2m/3} for m <= 0 and 2^{-m/3} for m > 0."""
    m = np.asarray(m, dtype=float)
    return np.where(m <= 0, 2.0 ** (2.0 * m / 3.0), 2.0 ** (-m / 3.0))


def k_kernel_convolve(d, Q: int) -> float:
    """(K * d)(Q) = sum_{j<=Q} 2^{2(j-Q)/3} d_j + sum_{j>Q} 2^{(Q-j)/3} d_j."""
    if isinstance(d, BesovSeq):
        js, vals = d.j, d.values
    else:
        js, vals = np.asarray(d[0]), np.asarray(d[1])
    return float(np.sum(K_kernel(js - Q) * vals))


def _support_radius(f, tol=1e-12):
    g = f.grid
    fh = g.fft(f.values if f.ncomp is not None else f.values[None])
    amp = np.max(np.abs(fh), axis=0)
    big = amp > tol * max(amp.max(), 1e-300)
    if not big.any():
        return 0.0, 0.0
    r = g.kabs[big]
    return float(r.min()), float(r.max())


def bernstein_check(f: Field, band: str, lam: float, p=math.inf, q=None, kmax=3):
    """Measured Bernstein ratios for a field spectrally supported in lam*B or lam*C.

    B is the unit ball and C the annulus 3/4 <= |xi| <= 8/3.  For each order
    k <= kmax the sup over |alpha| = k of ||d^alpha f||_q / (lam^{k + 3(1/p - 1/q)} ||f||_p)
    is reported; for the annulus the lower bound constant C with
    C^{-(k+1)} lam^k ||f||_p <= sup ||d^alpha f||_p is reported too.
    """
    q = p if q is None else q
    rmin, rmax = _support_radius(f)
    if band == "ball":
        if rmax > lam * (1 + 1e-12):
            raise ValueError(f"spectral support radius {rmax:.4g} exceeds ball radius {lam:.4g}")
    elif band == "annulus":
        if rmax > lam * 8 / 3 * (1 + 1e-12) or (rmax > 0 and rmin < lam * 0.75 * (1 - 1e-12)):
            raise ValueError(f"spectral support [{rmin:.4g}, {rmax:.4g}] not inside lam*C")
    else:
        raise ValueError("band must be 'ball' or 'annulus'")
    fp = lp_norm(f, p)
    inv = lambda x: 0.0 if x == math.inf else 1.0 / x
    shift = 3.0 * (inv(p) - inv(q))
    upper, lower = [], []
    for k in range(kmax + 1):
        sup_q = sup_p = 0.0
        for mi in _multi_indices(k):
            d = derivative(f, mi)
            sup_q = max(sup_q, lp_norm(d, q))
            sup_p = max(sup_p, lp_norm(d, p))
        upper.append(sup_q / (lam ** (k + shift) * fp) if fp > 0 else 0.0)
        if band == "annulus" and fp > 0:
            ratio = sup_p / (lam**k * fp)
            lower.append(ratio ** (-1.0 / (k + 1)) if ratio > 0 else math.inf)
    return {"band": band, "lam": lam, "p": p, "q": q, "upper_ratios": upper,
            "lower_constants": lower, "support": (rmin, rmax)}


def bernstein_sweep(make_field, band, lams, p=math.inf, q=None, kmax=3, growth_tol=4.0):
    """Run bernstein_check across lams; flag ratios that grow by more than growth_tol."""
    reports = [bernstein_check(make_field(lam), band, lam, p, q, kmax) for lam in lams]
    ups = np.array([r["upper_ratios"] for r in reports])
    spread = ups.max(axis=0) / np.maximum(ups.min(axis=0), 1e-300)
    lower = [max(r["lower_constants"]) for r in reports if r["lower_constants"]]
    return {"reports": reports, "bounded": bool(np.all(spread <= growth_tol)),
            "max_lower_constant": max(lower) if lower else None}


def write_besov_csv(path, seq: BesovSeq):
    from .spectral_core import write_csv
    rows = [(int(j), float(b), float(v)) for j, b, v in zip(seq.j, seq.block_norms, seq.values)]
    write_csv(path, ["j", "block_norm", "d_j"], rows)
