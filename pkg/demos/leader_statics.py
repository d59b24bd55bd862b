"""
Sizing the scaled leader arm
============================

A half-scale copy of the follower built from aluminium rod and hobby
servos has to be light enough to hold all day but heavy enough that it
does not feel like a toy. This walkthrough computes the handle force an
operator must supply to keep the leader still at a range of working
heights, then shows what two cheap torsion springs do to that force.
"""

import numpy as np

from minilead import (
    default_leader_setup,
    force_height_profile,
    holding_force,
    load_builtin_model,
    scale_model,
)
from minilead.statics import default_sweep_path, load_sweep

follower = load_builtin_model("ur5")
leader = scale_model(follower, 0.5)
print(f"follower: {follower.name}, {follower.dof} joints")
print(f"leader:   {leader.name}, links at half length")

# The shipped setup: rod and servo masses rescaled so the mean plain
# holding force over the shipped sweep lands on the documented target,
# plus fitted spring constants for the shoulder and elbow.
inertias, springs = default_leader_setup(leader)
total_mass = sum(i.mass for i in inertias)
print(f"\nmoving mass: {total_mass:.3f} kg across {len(inertias)} links")
for s in springs:
    print(f"spring on joint {s.joint_index}: "
          f"{s.stiffness:.2f} Nm/rad, rest {s.rest_angle:+.4f} rad")

sweep = load_sweep(default_sweep_path())
print(f"\nsweep: {len(sweep)} poses from low reach to high reach")

plain = force_height_profile(leader, inertias, [], sweep)
sprung = force_height_profile(leader, inertias, springs, sweep)

print(f"\n{'height m':>9} {'plain N':>8} {'sprung N':>9} {'residual Nm':>12}")
for p, s in zip(plain, sprung):
    print(f"{p.height_m:9.3f} {p.force_n:8.3f} {s.force_n:9.3f} "
          f"{s.residual_torque_nm:12.4f}")

mean_plain = float(np.mean([p.force_n for p in plain]))
mean_sprung = float(np.mean([p.force_n for p in sprung]))
print(f"\nmean holding force: {mean_plain:.3f} N plain, "
      f"{mean_sprung:.3f} N sprung")

# The springs carry the arm down low, where gravity loads the shoulder
# hardest. Up high they overshoot and add a little force instead; the
# rest pose sits right where the two profiles touch.
gaps = [s.force_n - p.force_n for p, s in zip(plain, sprung)]
worst = max(range(len(gaps)), key=lambda i: abs(gaps[i]))
print(f"largest change at {plain[worst].height_m:.3f} m: "
      f"{gaps[worst]:+.3f} N")

# One pose in detail: the direction of the required handle force.
hf = holding_force(leader, inertias, springs, sweep[len(sweep) // 2])
fx, fy, fz = hf.force_vector
print(f"\nmid-sweep handle force: {hf.force_n:.3f} N, "
      f"direction ({fx:+.2f}, {fy:+.2f}, {fz:+.2f})")
print(f"residual torque left for servo friction: "
      f"{hf.residual_torque_nm:.4f} Nm")
