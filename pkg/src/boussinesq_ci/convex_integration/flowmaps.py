"""Inverse flow maps of the glued velocity by backward characteristics.

Phi_i(x, t) is the foot at time t_i of the characteristic through (x, t):
integrate dy/ds = v(y, s) from s = t to s = t_i and set Phi_i(x, t) = y(t_i).
The displacement D = Phi - x is periodic; it is computed on a coarse grid,
spectrally upsampled to the stage grid, and differentiated spectrally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter

from ..boussinesq_solver import _resample_arr
from ..spectral_core import TorusGrid

__all__ = ["FlowMap", "FlowMapSet", "flow_map", "solve_flow_maps"]


@dataclass
class FlowMap:
    i: int
    t: float
    t_i: float
    D: np.ndarray            # (3, n, n, n) displacement on the stage grid
    grad: np.ndarray         # (3, 3, n, n, n), grad[a, b] = d_b Phi_a
    grid: TorusGrid
    nsub: int
    meta: dict = field(default_factory=dict)

    @property
    def Phi(self):
        return np.asarray(self.grid.coords) + self.D

    def det(self):
        return np.linalg.det(np.moveaxis(self.grad, (0, 1), (-2, -1)))

    def det_error(self):
        return float(np.abs(self.det() - 1.0).max())

    def dist_from_id(self):
        """sup_x of the operator 2-norm of grad Phi - Id."""
        G = np.moveaxis(self.grad, (0, 1), (-2, -1)) - np.eye(3)
        return float(np.linalg.norm(G.reshape(-1, 3, 3), ord=2, axis=(1, 2)).max())

    def inv_grad(self):
        """(grad Phi)^{-1} pointwise, shape (3, 3, ...)."""
        G = np.moveaxis(self.grad, (0, 1), (-2, -1))
        return np.moveaxis(np.linalg.inv(G), (-2, -1), (0, 1))


class _VelocitySampler:
    def __init__(self, stage, n_interp, order=5):
        self.stage = stage
        self.m = n_interp
        self.order = order
        self._cache = {}

    def field(self, s):
        key = round(s, 14)
        if key not in self._cache:
            v = self.stage.velocity(s)
            n = v.shape[-1]
            v = _resample_arr(v, n, self.m) if n != self.m else v
            self._cache[key] = np.stack([spline_filter(v[a], order=self.order, mode="grid-wrap")
                                         for a in range(3)])
            if len(self._cache) > 8:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def __call__(self, y, s):
        vf = self.field(s)
        idx = np.mod(y, 1.0) * self.m
        return np.stack([map_coordinates(vf[a], idx, order=self.order, mode="grid-wrap",
                                         prefilter=False)
                         for a in range(3)])


def _spectral_grad(grid, D):
    Dh = grid.fft(D)
    out = np.empty((3, 3) + grid.shape)
    for a in range(3):
        for b in range(3):
            out[a, b] = grid.ifft(1j * grid.kd[b] * Dh[a])
        out[a, a] += 1.0
    return out


def flow_map(stage, i, t, t_i, n_c=32, interp_factor=2, cfl=0.25, min_sub=4, vmax=None):
    """Inverse flow map Phi_i(., t) on the stage grid.

    The substep is chosen so that one step moves a point by at most ``cfl``
    cells of the interpolation grid.
    """
    g = stage.grid
    n_c = min(n_c, g.n)
    gc = TorusGrid(n_c, g.dealias)
    m = interp_factor * n_c
    sampler = _VelocitySampler(stage, m)
    span = t_i - t
    if vmax is None:
        vmax = max(float(np.sqrt(np.sum(stage.velocity(s) ** 2, axis=0)).max())
                   for s in np.linspace(min(t, t_i), max(t, t_i), 5))
    nsub = max(min_sub, int(math.ceil(abs(span) * vmax * m / cfl))) if span != 0 else 0
    y = np.asarray(gc.coords, dtype=float).reshape(3, -1).copy()
    if nsub:
        h = span / nsub
        s = t
        for _ in range(nsub):
            k1 = sampler(y, s)
            k2 = sampler(y + 0.5 * h * k1, s + 0.5 * h)
            k3 = sampler(y + 0.5 * h * k2, s + 0.5 * h)
            k4 = sampler(y + h * k3, s + h)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            s += h
    Dc = (y - np.asarray(gc.coords).reshape(3, -1)).reshape((3,) + gc.shape)
    D = _resample_arr(Dc, n_c, g.n) if n_c != g.n else Dc
    return FlowMap(i=i, t=float(t), t_i=float(t_i), D=D, grad=_spectral_grad(g, D), grid=g,
                   nsub=nsub, meta={"n_c": n_c, "n_interp": m, "vmax": vmax})


@dataclass
class FlowMapSet:
    maps: dict               # (i, t) -> FlowMap

    def get(self, i, t):
        return self.maps[(i, round(t, 12))]

    def det_error(self):
        return max(m.det_error() for m in self.maps.values())

    def dist_from_id(self):
        return max(m.dist_from_id() for m in self.maps.values())


def solve_flow_maps(glued, times=None, samples=5, **kw) -> FlowMapSet:
    """Flow maps for every i at sample times covering supp eta_i (endpoints included)."""
    maps = {}
    for i in range(glued.i_max):
        a, b = glued.eta_support(i)
        ts = np.linspace(a, b, samples) if times is None else times[i]
        ti = glued.t[i]
        for t in ts:
            maps[(i, round(float(t), 12))] = flow_map(glued, i, float(t), ti, **kw)
    return FlowMapSet(maps)
