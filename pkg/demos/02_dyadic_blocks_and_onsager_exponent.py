"""Littlewood-Paley blocks and the 1/3 threshold on lacunary fields.

Run:  python demos/02_dyadic_blocks_and_onsager_exponent.py [n]

A lacunary field sum_m 2^{-m beta} cos(2 pi 2^m x) has exactly one octave per
dyadic block, so d_j = 2^{j/3} ||Delta_j f||_inf grows like 2^{j(1/3 - beta)}.
The kernel sum K*d(Q) that controls the flux decays in Q only when beta > 1/3,
but the decay rate 1/3 - beta is small, so on a desk grid only a handful of
blocks are available and the decrease is modest.
"""
import math
import sys

from boussinesq_ci.flux_diagnostics import fit_log2_slope, lacunary_field
from boussinesq_ci.littlewood_paley import _system, besov_norm, besov_sequence, k_kernel_convolve
from boussinesq_ci.spectral_core import TorusGrid

n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
g = TorusGrid(n)
ds = _system(g)
print(f"n = {n}: blocks j = -1..{ds.j_max} inside the dealiased ball, "
      f"partition error {ds.partition_error():.1e}")
for beta in (0.25, 0.40):
    f = lacunary_field(g, beta)
    seq = besov_sequence(f, math.inf)
    js = [j for j in seq.j if 3 <= j <= ds.j_max]
    slope = fit_log2_slope(js, [seq[j] for j in js])
    print(f"\nbeta = {beta}: log2-slope of d_j = {slope:+.4f} (1/3 - beta = {1 / 3 - beta:+.4f})")
    print("  j  " + "  ".join(f"{j:>7d}" for j in seq.j))
    print("  d  " + "  ".join(f"{seq[j]:7.3f}" for j in seq.j))
    d = (list(seq.j), [seq[j] for j in seq.j])
    print("  K*d(Q) " + "  ".join(f"Q={Q}:{k_kernel_convolve(d, Q):.3f}" for Q in range(ds.j_max + 1)))
    print(f"  B^(1/3)_(inf,inf) norm {besov_norm(f, 1 / 3, math.inf, math.inf):.4f}")
