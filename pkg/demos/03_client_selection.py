"""Energy-aware client selection with fairness and model-size matching.

Each round the selector:
  1. estimates how many batches each client can afford from its domain's
     excess energy and its own spare compute,
  2. matches a model rate to that capacity (halving down the ladder),
  3. scores clients by participation fairness (clients far above the
     fleet-mean weighted participation are penalized) and by statistical
     utility (loss-weighted data informativeness),
  4. picks a rate-balanced slate, skipping anyone who trained within the
     exclusion window.

Run: python3 demos/03_client_selection.py
"""

import numpy as np

from greenfed import (
    ClientProfile,
    ClientState,
    HardwareClass,
    SelectionConfig,
    select_clients,
    selection_probability,
    statistical_utility,
    update_after_round,
)

cfg = SelectionConfig(min_clients=3, max_fraction=0.4, forecast_horizon=12)
steps = 12

print("capacity -> model rate (client needs 10 batches/epoch):")
profiles, spare, states = {}, {}, {}
spares = [10.0, 10.0, 2.0, 0.8, 0.5, 0.25, 10.0, 10.0, 0.05, 10.0]
for cid, s in enumerate(spares):
    profiles[cid] = ClientProfile(cid, 0, HardwareClass.default("small"),
                                  np.full(steps, s), cid, 10)
    spare[cid] = profiles[cid].spare_trace
    states[cid] = ClientState(cid, examples=100)
domain_energy = {0: np.full(steps, 50.0)}

result = select_clients(profiles, domain_energy, spare, states, 0, cfg, epochs=1)
for a in result.assignments:
    print(f"  client {a.client_id}: ~{a.estimated_batches:5.1f} affordable batches "
          f"-> rate {a.rate:g}")

print()
print("fairness over 12 rounds (exclusion window 1, everyone identical):")
for cid in states:
    profiles[cid].spare_trace[:] = 10.0
    spare[cid] = profiles[cid].spare_trace
    states[cid] = ClientState(cid, examples=100)
for r in range(12):
    res = select_clients(profiles, domain_energy, spare, states, r, cfg, epochs=1)
    picked = [a.client_id for a in res.assignments]
    losses = {a.client_id: [0.5] for a in res.assignments}
    update_after_round(states, res.assignments, losses, r)
    print(f"  round {r:2d}: {picked}")
wps = [s.wp for s in states.values()]
print(f"  weighted participation per client: {wps} (spread {max(wps) - min(wps):g})")

print()
print("the participation penalty only bites above the fleet mean:")
omega = 2.0
for wp in (1.0, 2.0, 2.9, 3.0, 4.0, 6.0):
    p = selection_probability(ClientState(0, 1, wp=wp), omega, alpha=1.0)
    print(f"  wp={wp:3.1f} (mean {omega:g}): P = {p:.3f}")

print()
print("statistical utility rewards informative (high-loss) data:")
for losses in ([0.1, 0.1], [1.0, 1.0], [3.0, 4.0]):
    u = statistical_utility(ClientState(0, examples=50, last_losses=losses))
    print(f"  50 examples, last losses {losses}: utility = {u:.1f}")
