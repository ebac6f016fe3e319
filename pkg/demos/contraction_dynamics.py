"""Contraction dynamics of the synthesize-then-train loop.

Models one loop iteration as an affine map phi(M) = T(G(M)). When the
product of the two Lipschitz constants is below 1 the iterates converge
geometrically to a unique fixed point. A scalar system shows the closed
form matching simulation to machine precision; a random 6-dimensional
system is then checked against the formal guarantees.
"""

import tempfile
import warnings
from pathlib import Path

import numpy as np

from instill.convergence import (
    AffineSystem,
    iterate_self_distillation,
    make_affine_system,
    solve_fixed_point,
    verify_contraction,
    write_trajectory_csv,
)

# scalar case: phi(m) = 0.8 * (0.5 m + 0) + 1, rate 0.4, fixed point 5/3
scalar = AffineSystem(a_g=[[0.5]], b_g=[0.0], a_t=[[0.8]], c_t=[1.0])
fp = solve_fixed_point(scalar)
print(f"scalar system: rate {scalar.contraction_bound:.2f}, "
      f"fixed point {fp[0]:.6f} (exact 5/3 = {5 / 3:.6f})")

traj = iterate_self_distillation(scalar, m0=np.zeros(1), steps=8)
print("step  simulated distance   closed form (5/3) * 0.4^i")
for i, d in enumerate(traj.distances):
    closed = (5 / 3) * 0.4 ** i
    print(f"{i:4d}  {d:18.12f}   {closed:18.12f}")

# random 6-dimensional system with L_T = 0.9, L_G = 0.7
system = make_affine_system(seed=21, n=6, target_lt=0.9, target_lg=0.7)
print(f"\nrandom system: L_T * L_G = {system.contraction_bound:.4f}")

traj = iterate_self_distillation(system, m0=np.zeros(6), steps=40)
report = verify_contraction(traj, system)
print(f"verification: passed={report.passed}, "
      f"ratio violations {len(report.ratio_violations)}, "
      f"bound violations {len(report.bound_violations)}, "
      f"nash residual {report.nash_residual:.2e}")

csv_path = Path(tempfile.mkdtemp(prefix="contraction-")) / "trajectory.csv"
write_trajectory_csv(csv_path, traj, system)
print(f"trajectory written to {csv_path}")

# an expanding system has no fixed point to converge to; the report says so
bad = make_affine_system(seed=22, n=4, target_lt=1.5, target_lg=0.8)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    bad_traj = iterate_self_distillation(bad, m0=np.ones(4), steps=10)
bad_report = verify_contraction(bad_traj, bad)
print(f"\nexpanding system (rate {bad.contraction_bound:.2f}): "
      f"passed={bad_report.passed}, "
      f"non_contractive={bad_report.non_contractive}, "
      f"{len(bad_report.ratio_violations)} growing steps flagged")
