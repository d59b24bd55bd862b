"""Record a demonstration with the pure library, replay it bit for bit.

No sockets here. The control pipeline and the follower simulator are
plain functions, so a demonstration can be produced deterministically,
written to a session file, and later replayed into a fresh simulator.
The replayed trajectory matches the original to floating point noise,
which is the property imitation-learning data collection depends on.
"""

import math
import tempfile
import time
from pathlib import Path

from minilead import (
    Record,
    ServoDynamics,
    SessionMeta,
    TeleopConfig,
    initial_sim_state,
    initial_state,
    load_builtin_model,
    replay,
    sim_step,
    step,
    write_session,
)

model = load_builtin_model("ur5")
config = TeleopConfig()
dynamics = ServoDynamics.from_model(model)
dt = 1.0 / config.rate_hz


def leader_pose(t: float) -> tuple[float, ...]:
    return tuple(0.2 * math.sin(2 * math.pi * (0.1 + 0.03 * i) * t + 0.7 * i)
                 for i in range(model.dof))


# Drive 600 ticks of the pipeline and keep what the recorder would keep.
state = initial_state()
sim = initial_sim_state(model)
records = []
for k in range(600):
    t = k * dt
    q_leader = leader_pose(t)
    state, cmd, status = step(state, q_leader, sim.q, dt, config, model)
    sim = sim_step(sim, cmd, dt, dynamics, model)
    records.append(Record(
        t_mono_us=(k + 1) * 10_000,
        leader_q=q_leader,
        cmd_q=tuple(cmd),
        follower_q=tuple(sim.q),
        gripper=0.0,
        safety_flags=status.flags_u32,
        phase=state.phase.value,
    ))

path = Path(tempfile.mkdtemp()) / "demo_take.jsonl"
meta = SessionMeta(robot_name=model.name, dof=model.dof, alpha_scale=0.5,
                   rate_hz=config.rate_hz, start_wall_iso8601="",
                   notes="deterministic replay demo")
count = write_session(path, meta, records)
print(f"wrote {count} records to {path}")
print(f"file size: {path.stat().st_size} bytes")

# Replay at 4x into a fresh simulator. The command stream is identical,
# so the fresh sim retraces the original follower trajectory exactly.
sim2 = initial_sim_state(model)
worst = 0.0
t0 = time.monotonic()
for k, rec in enumerate(replay(path, speed=4.0)):
    sim2 = sim_step(sim2, rec.cmd_q, dt, dynamics, model)
    worst = max(worst, max(abs(a - b)
                           for a, b in zip(sim2.q, records[k].follower_q)))
elapsed = time.monotonic() - t0

span_s = (records[-1].t_mono_us - records[0].t_mono_us) / 1e6
print(f"\nreplayed {count} records in {elapsed:.2f} s "
      f"(recorded span {span_s:.2f} s, speed 4x)")
print(f"worst deviation from the original trajectory: {worst:.2e} rad")
assert worst < 1e-9, "replay should retrace the demonstration"
print("replay retraces the demonstration")
