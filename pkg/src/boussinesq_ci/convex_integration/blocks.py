"""Intermittent cuboid building blocks, their shifts and Fourier coefficients.

A block of family k is a product phi(u) phi(v) of the 1-D profile evaluated on
two integer linear forms of the position.  Theta families use (N kbar, N kbarbar)
and velocity families use (N k, N kbarbar).  Shifts enter as phases (c, d):
u = N kbar . xi - c, so x^k = (c kbar + d kbarbar) / N.

Disjointness of two families is decided exactly.  Stack the four integer forms
into P (4 x 3) and let n be the primitive integer vector with n P = 0.  A common
support point forces n . (c + y) to be an integer for some y in the support box
[0, s]^4, so if the interval of n . (c + y) contains no integer the supports are
disjoint.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .geometry import DirectionSet, GeometryError, default_directions

__all__ = ["BuildingBlockProfile", "BuildingBlocks", "ResolutionError", "DisjointnessError",
           "build_blocks", "pair_null_vector", "placement_slack", "place_shifts",
           "required_support"]


class ResolutionError(ValueError):
    def __init__(self, msg, required_n):
        super().__init__(msg)
        self.required_n = required_n


class DisjointnessError(ValueError):
    pass


def _bump_unit(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = np.abs(r) < 1
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


class BuildingBlockProfile:
    """Mean-free profile phi on [0, 1) supported in [0, s], with int phi^2 = 1.

    phi is a bump on [0, s/2] minus the same bump on [s/2, s].  Phi1 is its
    antiderivative, which is again supported in [0, s].
    """

    def __init__(self, s, nsamp=2**14, tail_tol=1e-4, J_fixed=8, nquad=4097):
        if not 0 < s <= 1:
            raise ValueError("support fraction s must lie in (0, 1]")
        self.s = float(s)
        self.w = self.s / 2
        # cumulative bump on a fine grid, spline-interpolated
        x = np.linspace(0.0, self.w, nquad)
        b = _bump_unit(2 * x / self.w - 1)
        B = cumulative_simpson(b, x=x, initial=0.0)
        xf = np.linspace(0.0, self.w, 8 * nquad + 1)
        self._int_b2 = float(cumulative_simpson(_bump_unit(2 * xf / self.w - 1) ** 2, x=xf)[-1])
        self.A = 1.0 / math.sqrt(2 * self._int_b2)
        self._B = CubicSpline(x, B)
        self._Btot = float(B[-1])

        self.nsamp = int(nsamp)
        xs = np.arange(self.nsamp) / self.nsamp
        a = np.fft.fft(self.phi(xs)) / self.nsamp
        self.a = a  # a[l] = int phi e^{-2 pi i l x}, l mod nsamp
        power = np.abs(a) ** 2
        total = float(power.sum())
        half = self.nsamp // 2
        sym = power[1:half] + power[-1:-half:-1]
        tails = total - power[0] - np.cumsum(sym)          # tails[J-1] = sum_{|l| > J}
        self.total_power = total
        ok = np.nonzero(tails <= tail_tol * total)[0]
        self.J_trunc = int(ok[0] + 1) if ok.size else half - 1
        self.tail = float(tails[self.J_trunc - 1] / total)
        self.J_fixed = int(J_fixed)
        self.tail_fixed = float(tails[self.J_fixed - 1] / total)

    def _bump(self, x):
        return self.A * _bump_unit(2 * x / self.w - 1)

    def phi(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        return self._bump(x) - self._bump(x - self.w)

    def Phi1(self, x):
        """Antiderivative of phi starting at 0; periodic and supported in [0, s]."""
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        y1 = np.clip(x, 0, self.w)
        y2 = np.clip(x - self.w, 0, self.w)
        return self.A * (self._B(y1) - self._B(y2))

    def coeff(self, l):
        return self.a[np.mod(np.asarray(l), self.nsamp)]

    def mean(self):
        return float(self.a[0].real)

    def l2sq(self):
        return self.total_power

    def decay_exponent(self, J=None, lmin=2):
        """Least-squares slope of -log|a_l| against log l over lmin <= l <= J."""
        J = self.J_trunc if J is None else J
        ls = np.arange(lmin, J + 1)
        if ls.size < 2:
            return float("nan")
        y = np.log(np.abs(self.coeff(ls)) + 1e-300)
        return float(-np.polyfit(np.log(ls), y, 1)[0])


def pair_null_vector(P):
    """Primitive integer row vector n with n P = 0 for an integer 4 x 3 matrix P of rank 3."""
    P = np.asarray(P, dtype=np.int64)
    n = np.array([(-1) ** i * round(np.linalg.det(np.delete(P, i, axis=0).astype(float)))
                  for i in range(4)], dtype=np.int64)
    g = np.gcd.reduce(np.abs(n))
    if g == 0:
        raise GeometryError("family pair has rank < 3; exact certificate unavailable")
    n //= g
    if np.any(n @ P):
        raise GeometryError("null vector check failed")
    return n


def placement_slack(n, phases, s, margin=0.0):
    """Distance of [n.c + lo, n.c + hi] from the integers; negative means possible overlap."""
    lo = float(np.sum(np.minimum(n * (-margin), n * (s + margin))))
    hi = float(np.sum(np.maximum(n * (-margin), n * (s + margin))))
    A = float(n @ phases) + lo
    f = A - math.floor(A)
    return min(f, 1.0 - f - (hi - lo))


def required_support(dirs: DirectionSet = None):
    """Largest s for which every family pair can in principle be separated: s < 1/max|n|_1."""
    dirs = default_directions() if dirs is None else dirs
    forms = _family_forms(dirs)
    worst = 0
    for a, b in itertools.combinations(range(len(forms)), 2):
        n = pair_null_vector(np.vstack([forms[a], forms[b]]))
        worst = max(worst, int(np.abs(n).sum()))
    return 1.0 / worst, worst


def _family_forms(dirs):
    out = []
    for f in dirs.theta_frames:
        out.append(np.stack([f.ivec("kbar"), f.ivec("kbarbar")]))
    for f in dirs.v_frames:
        out.append(np.stack([f.ivec("k"), f.ivec("kbarbar")]))
    return out


def place_shifts(dirs, s, G=240, margin=1e-9, restarts=64, seed=0):
    """Greedy phase placement maximizing the worst pairwise slack.

    Families are placed one at a time on a G x G phase grid.  The greedy pass is
    repeated over ``restarts`` seeded family orders (the first is the natural
    order) and the best result is kept.  Returns (phases, certificate) where
    phases has shape (nfam, 2) and the certificate lists (a, b, n, slack) for
    every pair.
    """
    forms = _family_forms(dirs)
    nf = len(forms)
    nulls = {}
    for a, b in itertools.permutations(range(nf), 2):
        nulls[(a, b)] = pair_null_vector(np.vstack([forms[a], forms[b]]))
    grid = np.array(list(itertools.product(range(G), range(G))), dtype=float) / G
    rng = np.random.default_rng(seed)
    best_ph, best_sl = None, -np.inf
    for trial in range(max(1, restarts)):
        order = np.arange(nf) if trial == 0 else rng.permutation(nf)
        phases = {int(order[0]): np.zeros(2)}
        for b in order[1:]:
            worst = np.full(len(grid), np.inf)
            for a, pa in phases.items():
                n = nulls[(a, int(b))]
                lo = float(np.sum(np.minimum(-margin * n, (s + margin) * n)))
                hi = float(np.sum(np.maximum(-margin * n, (s + margin) * n)))
                A = float(n[:2] @ pa) + grid @ n[2:] + lo
                f = A - np.floor(A)
                worst = np.minimum(worst, np.minimum(f, 1.0 - f - (hi - lo)))
            phases[int(b)] = grid[int(np.argmax(worst))]
        ph = np.array([phases[i] for i in range(nf)])
        sl = min(placement_slack(nulls[(a, b)], np.concatenate([ph[a], ph[b]]), s, margin)
                 for a, b in itertools.combinations(range(nf), 2))
        if sl > best_sl:
            best_ph, best_sl = ph, sl
    cert = []
    for a, b in itertools.combinations(range(nf), 2):
        n = nulls[(a, b)]
        sl = placement_slack(n, np.concatenate([best_ph[a], best_ph[b]]), s, margin)
        cert.append((a, b, tuple(int(x) for x in n), sl))
    return best_ph, cert


@dataclass
class BuildingBlocks:
    dirs: DirectionSet
    profile: BuildingBlockProfile
    lam: int
    phases: np.ndarray
    certificate: list
    required_n: int
    underresolved: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def families(self):
        return [("theta", i) for i in range(3)] + [("v", i) for i in range(6)]

    def _fam(self, kind, idx):
        if kind == "theta":
            f = self.dirs.theta_frames[idx]
            return f, f.ivec("kbar"), f.ivec("kbarbar"), self.phases[idx]
        f = self.dirs.v_frames[idx]
        return f, f.ivec("k"), f.ivec("kbarbar"), self.phases[3 + idx]

    def _uv(self, kind, idx, Phi):
        _, A, B, (c, d) = self._fam(kind, idx)
        Phi = np.asarray(Phi)
        u = self.lam * np.tensordot(A.astype(float), Phi, axes=(0, 0)) - c
        v = self.lam * np.tensordot(B.astype(float), Phi, axes=(0, 0)) - d
        return u, v

    def W(self, kind, idx, Phi):
        """Scalar amplitude W_(lam k)(Phi); Phi has shape (3, ...)."""
        u, v = self._uv(kind, idx, Phi)
        return self.profile.phi(u) * self.profile.phi(v)

    def direction(self, kind, idx):
        f = self._fam(kind, idx)[0]
        return f.vec("k") if kind == "theta" else f.vec("kbar")

    def potential(self, kind, idx, Phi):
        """U with curl_xi U(lam xi) / lam = W direction, evaluated at xi = Phi."""
        f, _, _, _ = self._fam(kind, idx)
        u, v = self._uv(kind, idx, Phi)
        amp = self.profile.Phi1(u) * self.profile.phi(v) / f.N
        if kind == "v":
            amp = -amp
        kk = f.vec("kbarbar")
        return kk.reshape((3,) + (1,) * amp.ndim) * amp[None]

    def index_set(self, kind, idx, J=None):
        """Integer vectors j = l A + m B (0 < |l|, |m| <= J) and coefficients b_{k,j}."""
        J = self.profile.J_trunc if J is None else J
        _, A, B, (c, d) = self._fam(kind, idx)
        ls = np.array([l for l in range(-J, J + 1) if l != 0])
        L, M = np.meshgrid(ls, ls, indexing="ij")
        L, M = L.ravel(), M.ravel()
        js = L[:, None] * A[None] + M[:, None] * B[None]
        b = self.profile.coeff(L) * self.profile.coeff(M) * np.exp(-2j * np.pi * (L * c + M * d))
        return js, b, L, M

    def _partial_sum(self, u, J):
        out = np.zeros(np.shape(u), dtype=complex)
        for l in range(1, J + 1):
            e = np.exp(2j * np.pi * l * u)
            out += self.profile.coeff(l) * e + self.profile.coeff(-l) * np.conj(e)
        return out

    def fourier_eval(self, kind, idx, Phi, J=None):
        """Truncated series sum_{j in I_k} b_{k,j} e^{2 pi i lam j.Phi}.

        b_{k,j} factorizes over (l, m), so the double sum is evaluated as a product
        of two one-dimensional partial sums.
        """
        J = self.profile.J_trunc if J is None else J
        u, v = self._uv(kind, idx, Phi)
        return np.real(self._partial_sum(u, J) * self._partial_sum(v, J))

    def decay_fit(self, J=None):
        """Fitted exponent p in |b_{k,j}| ~ |j|^{-p} over 2 <= |j| <= J (theta family 0)."""
        js, b, _, _ = self.index_set("theta", 0, J)
        r = np.linalg.norm(js, axis=1) / self.dirs.N
        m = (r >= 2) & (np.abs(b) > 0)
        return float(-np.polyfit(np.log(r[m]), np.log(np.abs(b[m])), 1)[0])

    def overlap_max(self, Phi):
        """Max over family pairs of sup |W_a W_b| at the given positions."""
        vals = [self.W(k, i, Phi) for k, i in self.families]
        worst = 0.0
        for a, b in itertools.combinations(range(len(vals)), 2):
            worst = max(worst, float(np.max(np.abs(vals[a] * vals[b]))))
        return worst

    @property
    def min_slack(self):
        return min(c[3] for c in self.certificate)


def _required_n(dirs, lam, J, dealias):
    kmax = 0
    for fr in dirs.theta_frames:
        kmax = max(kmax, int(np.max(np.abs(fr.ivec("kbar")) + np.abs(fr.ivec("kbarbar")))))
    for fr in dirs.v_frames:
        kmax = max(kmax, int(np.max(np.abs(fr.ivec("k")) + np.abs(fr.ivec("kbarbar")))))
    kmax *= lam * J
    n = 2
    while math.ceil(dealias * n / 2) - 1 < kmax:
        n += 2
    return n


def build_blocks(dirs=None, profile=None, lam=1, grid=None, s=None, lam1=None,
                 allow_underresolved=False, G=240, restarts=64):
    """Shifted building blocks at frequency lam with an exact disjointness certificate.

    s defaults to 1/(4 lam1) when lam1 is given, otherwise to 3/4 of the largest
    separable support.  A grid that cannot resolve lam * N * J_trunc is rejected
    unless allow_underresolved is set, in which case pointwise evaluation is
    still exact but Fourier-level identities are aliased.
    """
    dirs = default_directions() if dirs is None else dirs
    smax, worst = required_support(dirs)
    if profile is None:
        if s is None:
            s = 1.0 / (4 * lam1) if lam1 is not None else smax * 3 / 4
        profile = BuildingBlockProfile(s)
    if lam1 is not None and profile.s > 1.0 / lam1 + 1e-15:
        raise ValueError(f"profile support {profile.s:.4g} exceeds 1/lambda_1 = {1 / lam1:.4g}")
    if profile.s >= smax:
        raise DisjointnessError(f"support fraction {profile.s:.4g} cannot be separated: "
                                f"a family pair has |n|_1 = {worst}, need s < {smax:.4g}")
    phases, cert = place_shifts(dirs, profile.s, G=G, restarts=restarts)
    bad = [c for c in cert if c[3] <= 0]
    if bad:
        raise DisjointnessError(f"no disjoint placement found on the {G}x{G} phase grid: {bad[0]}")
    from fractions import Fraction
    dealias = grid.dealias if grid is not None else Fraction(2, 3)
    req = _required_n(dirs, lam, profile.J_trunc, dealias)
    under = grid is not None and grid.n < req
    if under and not allow_underresolved:
        raise ResolutionError(f"grid n = {grid.n} cannot resolve building blocks at lambda = {lam}"
                              f" (J_trunc = {profile.J_trunc}); required n >= {req}", req)
    return BuildingBlocks(dirs=dirs, profile=profile, lam=int(lam), phases=phases,
                          certificate=cert, required_n=req, underresolved=bool(under),
                          meta={"s": profile.s, "s_max": smax, "max_pair_norm": worst})
