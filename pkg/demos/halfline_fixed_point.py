"""A half-line is its own rearrangement.

Run:  python demos/halfline_fixed_point.py [s] [out.csv]

Rearranges the torsion function of {x >= s} and compares the result with
V(x) - V(s) at a few points.  With a second argument the (tau, f, D^-1)
table is written out for plotting.
"""
import sys

import numpy as np

from gausskj.rearrange import evaluate_dagger, fixed_point_check
from gausskj.special import halfspace_torsion_function

s = float(sys.argv[1]) if len(sys.argv) > 1 else 0.7
fp = fixed_point_check(s)
rp = fp["rearranged"]

print(f"s = {s},  s_dagger = {fp['s_dagger']:.8f}")
print(f"T(H_s) exact {fp['T_exact']:.10f}, from the mesh {fp['T_h']:.10f}, modified {fp['T_mod']:.10f}")
print(f"sup |u_dagger - u| / max u on x <= X - 1:  {fp['sup_error']:.2e}")

print("\n     x      u_dagger(x)      V(x) - V(s)")
for x in s + np.array([0.1, 0.5, 1.0, 2.0, 4.0]):
    print(f"{x:7.3f}  {float(evaluate_dagger(rp, x)):14.8f}  {float(halfspace_torsion_function(s, x)):14.8f}")

if len(sys.argv) > 2:
    with open(sys.argv[2], "w") as fh:
        fh.write(rp.to_csv())
    print(f"\nwrote {len(rp.tau_grid)} rows to {sys.argv[2]}")
