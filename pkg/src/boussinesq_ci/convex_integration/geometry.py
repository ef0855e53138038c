"""Direction sets and the geometric decomposition R = sum_k a_k(R)^2 kbar (x) kbar."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Frame", "DirectionSet", "GeometryError", "default_directions", "geometric_coeffs",
           "sym_coords", "measure_M"]

_SQ2 = math.sqrt(2.0)


class GeometryError(ValueError):
    pass


def sym_coords(R):
    """Coordinates (xx, yy, zz, sqrt2 xy, sqrt2 yz, sqrt2 xz) of symmetric matrices (..., 3, 3)."""
    R = np.asarray(R, dtype=float)
    return np.stack([R[..., 0, 0], R[..., 1, 1], R[..., 2, 2], _SQ2 * R[..., 0, 1],
                     _SQ2 * R[..., 1, 2], _SQ2 * R[..., 0, 2]], axis=-1)


def _sym_from_storage(S):
    """Storage order (00, 11, 22, 01, 12, 02) along axis 0 to coordinates along axis 0."""
    S = np.asarray(S, dtype=float)
    return np.stack([S[0], S[1], S[2], _SQ2 * S[3], _SQ2 * S[4], _SQ2 * S[5]])


@dataclass(frozen=True)
class Frame:
    """Right-handed orthonormal frame (k, kbar, kbarbar) with integer multiples under N."""
    k: tuple
    kbar: tuple
    kbarbar: tuple
    N: int

    def vec(self, name):
        return np.array(getattr(self, name), dtype=float) / self.N

    def ivec(self, name):
        return np.array(getattr(self, name), dtype=int)


def _frame_for(kbar_int, N):
    kb = np.array(kbar_int, dtype=int)
    cands = []
    r = range(-N, N + 1)
    for m in itertools.product(r, r, r):
        m = np.array(m)
        if m @ m != N * N or m @ kb != 0 or np.count_nonzero(m) < 2:
            continue
        c = np.cross(m, kb)
        if np.any(c % N):
            continue
        cands.append((tuple(int(x) for x in -m), tuple(int(x) for x in m),
                      tuple(int(x) for x in c // N)))
    if not cands:
        raise GeometryError(f"no integer frame for kbar = {kbar_int}/{N}")
    cands.sort(reverse=True)
    _, m, c = cands[0]
    return Frame(k=m, kbar=tuple(int(x) for x in kb), kbarbar=c, N=N)


FAMILIES = {
    "pythag5": (5, [(3, 4, 0), (3, -4, 0), (0, 3, 4), (0, 3, -4), (4, 0, 3), (4, 0, -3)]),
    "pythag3": (3, [(1, -2, -2), (1, -2, 2), (2, -2, -1), (2, -1, 2), (2, 1, -2), (2, 2, 1)]),
}


@dataclass
class DirectionSet:
    N: int
    theta_frames: list
    v_frames: list
    G: np.ndarray = field(repr=False)
    Ginv: np.ndarray = field(repr=False)
    weights_id: np.ndarray
    margin: float
    eps_v: float
    M: float | None = None

    @classmethod
    def build(cls, family="pythag5"):
        N, kbars = FAMILIES[family]
        th = []
        for a in range(3):
            e = [np.eye(3, dtype=int)[(a + s) % 3] * N for s in range(3)]
            th.append(Frame(k=tuple(e[0]), kbar=tuple(e[1]), kbarbar=tuple(e[2]), N=N))
        vf = [_frame_for(kb, N) for kb in kbars]
        G = np.stack([sym_coords(np.outer(f.vec("kbar"), f.vec("kbar"))) for f in vf], axis=1)
        if abs(np.linalg.det(G)) < 1e-10:
            raise GeometryError("kbar (x) kbar do not span the symmetric matrices")
        Ginv = np.linalg.inv(G)
        w = Ginv @ sym_coords(np.eye(3))
        if np.any(w <= 0):
            raise GeometryError(f"weights at Id not positive: {w}")
        margin = float(min(w[k] / np.linalg.norm(Ginv[k]) for k in range(6)))
        ds = cls(N=N, theta_frames=th, v_frames=vf, G=G, Ginv=Ginv, weights_id=w,
                 margin=margin, eps_v=margin / 2)
        ds.validate()
        return ds

    def validate(self):
        th_k = {f.k for f in self.theta_frames}
        for f in self.v_frames:
            if f.k in th_k or tuple(-x for x in f.k) in th_k:
                raise GeometryError("Lambda_theta and Lambda_v intersect")
        for f in self.theta_frames + self.v_frames:
            B = np.stack([f.vec("k"), f.vec("kbar"), f.vec("kbarbar")])
            if np.abs(B @ B.T - np.eye(3)).max() > 1e-14:
                raise GeometryError(f"frame {f} not orthonormal")
            if np.abs(np.cross(B[0], B[1]) - B[2]).max() > 1e-14:
                raise GeometryError(f"frame {f} not right-handed")

    def weights(self, R_coords):
        """Linear-solve weights c_k for coordinates of shape (6, ...)."""
        return np.tensordot(self.Ginv, R_coords, axes=(1, 0))


_DEFAULT = {}


def default_directions(family="pythag5") -> DirectionSet:
    if family not in _DEFAULT:
        _DEFAULT[family] = DirectionSet.build(family)
    return _DEFAULT[family]


def geometric_coeffs(R, dirs: DirectionSet = None, storage=False, check=True):
    """a_{v,k}(R) with sum_k a_k^2 kbar (x) kbar = R.

    R is a (3, 3) matrix, a stack (..., 3, 3), or with ``storage`` a (6, ...) array in
    field storage order.  Returns an array with the 6 coefficients on the leading axis.
    """
    dirs = default_directions() if dirs is None else dirs
    if storage:
        X = _sym_from_storage(R)
    else:
        X = np.moveaxis(sym_coords(R), -1, 0)
    if check:
        dist = np.sqrt(np.sum((X - sym_coords(np.eye(3)).reshape((6,) + (1,) * (X.ndim - 1))) ** 2,
                              axis=0))
        worst = float(np.max(dist))
        if worst > dirs.eps_v * (1 + 1e-12):
            raise GeometryError(f"R outside the ball: |R - Id|_F = {worst:.4g} > eps_v = {dirs.eps_v:.4g}")
    c = dirs.weights(X)
    cmin = float(np.min(c))
    if cmin < 0:
        raise GeometryError(f"negative weight {cmin:.4g} (margin {dirs.margin:.4g})")
    return np.sqrt(c)


def measure_M(dirs: DirectionSet = None, radius=None, samples=400, seed=0, N=2):
    """Sampled sup over the ball of sum_{j<=N} sup_k |D^j a_k| (coordinate derivatives)."""
    dirs = default_directions() if dirs is None else dirs
    radius = dirs.eps_v if radius is None else radius
    rng = np.random.default_rng(seed)
    best = 0.0
    rows = np.linalg.norm(dirs.Ginv, axis=1)
    for _ in range(samples):
        E = rng.standard_normal(6)
        E *= radius * rng.uniform() ** (1 / 6) / np.linalg.norm(E)
        c = dirs.weights(sym_coords(np.eye(3)) + E)
        a = np.sqrt(c)
        parts = [a.max()]
        if N >= 1:
            parts.append(np.max(rows / (2 * a)))
        if N >= 2:
            parts.append(np.max(rows**2 / (4 * a**3)))
        best = max(best, float(sum(parts)))
    return best
