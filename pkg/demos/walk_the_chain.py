"""Walk the comparison chain by hand on one asymmetric interval.

Run:  python demos/walk_the_chain.py [a b]

Each stage prints the numbers it feeds into the next one, so the chain
Lambda(K) >= R(u_dagger) >= Lambda(K_dagger) >= Lambda(H) can be followed
without reading a JSON report.
"""
import sys

from gausskj.coarea import level_profile, modified_torsion
from gausskj.geometry import Interval, build_mesh, gaussian_measure
from gausskj.ou_solver import halfspace_frequency, solve_frequency, torsional_rigidity
from gausskj.rearrange import build_rearrangement, default_tables, rayleigh_dagger, verify_theorem_4_2
from gausskj.special import halfspace_torsion_inverse

a, b = (float(v) for v in sys.argv[1:3]) if len(sys.argv) > 2 else (-1.3, 0.9)
K = Interval(a, b)
mesh = build_mesh(K, 0.01)
print(f"K = ({a}, {b}),  gamma(K) = {gaussian_measure(K):.6f},  {mesh.n_nodes} nodes")

T, _ = torsional_rigidity(mesh)
eig = solve_frequency(mesh)
print(f"torsional rigidity T(K)       {T:.8f}")
print(f"principal frequency Lambda(K) {eig.eigenvalue:.8f}")

# level sets of the eigenfunction; T_mod cannot exceed T
prof = level_profile(mesh, eig.eigenfunction, 512)
t0 = modified_torsion(prof)
print(f"modified rigidity of u        {t0:.8f}   (T - T_mod = {T - t0:.2e})")

rp = build_rearrangement(prof, default_tables())
s_H = float(halfspace_torsion_inverse(T))
print(f"\nhalf-space with T(H) = T(K):        s_H      = {s_H:+.6f}")
print(f"half-space carrying u_dagger:       s_dagger = {rp.s_dagger:+.6f}   (inside H)")

print("\nintegrals before and after rearranging:")
for name, c in verify_theorem_4_2(prof, rp).items():
    rel = "=" if c.kind == "equality" else "<="
    print(f"  {name:12s} {c.left:14.8f} {rel} {c.right:14.8f}")

R, err = rayleigh_dagger(prof, rp)
lam_dag = halfspace_frequency(rp.s_dagger)
lam_H = halfspace_frequency(s_H)
print("\nthe chain:")
print(f"  Lambda(K)          {eig.eigenvalue:.6f}")
print(f"  R(u_dagger)        {R:.6f}  (+- {err:.1e})")
print(f"  Lambda(K_dagger)   {lam_dag:.6f}")
print(f"  Lambda(H)          {lam_H:.6f}")
