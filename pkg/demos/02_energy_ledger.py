"""Power domains, solar traces, and the shared energy ledger.

Each power domain owns a trace of excess renewable energy (Wh per
5-minute timestep). Clients in a domain share that budget: training a
batch at model rate m on hardware with energy-per-batch e_p debits
e_p * m Wh from the earliest timesteps of the current round window.

Run: python3 demos/02_energy_ledger.py
"""

import numpy as np

from greenfed import EnergyLedger, HardwareClass, PowerDomain, synth_solar_trace
from greenfed.energy import watts_to_wh

trace = synth_solar_trace(seed=0, days=1, noise=0.05)
print("one synthetic day (5-minute steps, 800 W peak):")
for hour in (0, 6, 9, 12, 15, 18, 23):
    step = hour * 12
    print(f"  {hour:02d}:00  {trace.values[step]:8.2f} Wh/step")
print(f"  daily total: {trace.values.sum() / 1000:.2f} kWh "
      f"(cap per step: {watts_to_wh(800, 5):.2f} Wh)")

print()
print("hardware classes (max power draw, Wh per full-rate batch):")
for name in ("small", "medium", "large"):
    hw = HardwareClass.default(name)
    print(f"  {name:>6}: {hw.max_power:5.0f} W, {hw.energy_per_batch:4.1f} Wh/batch")

print()
print("a noon round window (12 steps) shared by two clients:")
ledger = EnergyLedger.from_domains({0: PowerDomain(0, trace)})
window = slice(12 * 12, 12 * 12 + 12)
print(f"  budget in window: {ledger.available(0, window):.1f} Wh")

small = HardwareClass.default("small")
large = HardwareClass.default("large")
for cid, hw, batches, rate in ((1, large, 30, 1.0), (2, small, 30, 1.0)):
    wh = hw.energy_per_batch * batches * rate
    shortfall = ledger.draw(0, window, wh, round_index=0, client_id=cid)
    print(f"  client {cid} ({hw.name}, {batches} batches @ rate {rate:g}): "
          f"asked {wh:.0f} Wh, shortfall {shortfall:.0f} Wh, "
          f"{ledger.available(0, window):.1f} Wh left")

print(f"  ledger history: {[(r, c, f'{wh:.0f} Wh') for r, c, _, wh in ledger.draws]}")
print("  greedy debit empties the earliest timesteps first:")
print("  remaining per step:", np.round(ledger.remaining[0][window], 1))
