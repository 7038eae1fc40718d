"""Power domains, excess-energy traces, hardware classes, energy ledger.

Traces store excess renewable energy per timestep in Wh, so that
``trace[t] / energy_per_batch`` is directly a batch count. Per-round
energy of a client is ``energy_per_batch * batches * rate``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAX_OUTPUT_W = 800.0
DEFAULT_STEP_MINUTES = 5.0

#: name -> (max power draw in W, Wh per batch at model rate 1)
HARDWARE_CLASSES = {
    "small": (70.0, 2.0),
    "medium": (300.0, 6.0),
    "large": (700.0, 12.0),
}


class TraceError(ValueError):
    pass


def watts_to_wh(watts: float, step_minutes: float) -> float:
    return watts * step_minutes / 60.0


@dataclass(frozen=True)
class HardwareClass:
    name: str
    max_power: float
    energy_per_batch: float

    def __post_init__(self):
        if self.name not in HARDWARE_CLASSES:
            raise ValueError(f"unknown hardware class {self.name!r}")
        if self.energy_per_batch <= 0:
            raise ValueError("energy_per_batch must be > 0")

    @classmethod
    def default(cls, name: str, energy_per_batch: float | None = None) -> "HardwareClass":
        max_power, e_p = HARDWARE_CLASSES[name]
        return cls(name, max_power, e_p if energy_per_batch is None else energy_per_batch)


@dataclass
class EnergyTrace:
    step_minutes: float
    values: np.ndarray  # Wh of excess energy per timestep

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if (self.values < 0).any():
            raise TraceError("trace values must be non-negative")

    def __len__(self):
        return len(self.values)


@dataclass
class PowerDomain:
    domain_id: int
    trace: EnergyTrace
    max_output: float = DEFAULT_MAX_OUTPUT_W

    def __post_init__(self):
        cap = watts_to_wh(self.max_output, self.trace.step_minutes)
        # 1e-6 Wh of slack absorbs the rounding of values written to
        # trace files with six decimal places
        if (self.trace.values > cap + 1e-6).any():
            raise TraceError(
                f"domain {self.domain_id}: trace exceeds max output "
                f"{self.max_output} W ({cap} Wh per step)"
            )


@dataclass
class ClientProfile:
    client_id: int
    domain_id: int
    hardware: HardwareClass
    spare_trace: np.ndarray  # batches per timestep the client can spare
    partition_id: int
    batches_per_epoch: int

    def __post_init__(self):
        self.spare_trace = np.asarray(self.spare_trace, dtype=float)
        if (self.spare_trace < 0).any():
            raise TraceError(f"client {self.client_id}: spare trace must be >= 0")


def energy_consumed(client: ClientProfile, batches: float, rate: float) -> float:
    """Wh consumed for ``batches`` at model rate ``rate``."""
    if batches < 0:
        raise ValueError("batches must be >= 0")
    return client.hardware.energy_per_batch * batches * rate


@dataclass
class EnergyLedger:
    """Shared per-domain, per-timestep energy budget with a draw history."""

    remaining: dict  # domain_id -> np.ndarray (Wh left per timestep)
    initial: dict
    draws: list = field(default_factory=list)  # (round, client_id, domain_id, wh)

    @classmethod
    def from_domains(cls, domains: dict) -> "EnergyLedger":
        remaining = {d: dom.trace.values.copy() for d, dom in domains.items()}
        initial = {d: dom.trace.values.copy() for d, dom in domains.items()}
        return cls(remaining=remaining, initial=initial)

    def available(self, domain_id: int, window: slice) -> float:
        if domain_id not in self.remaining:
            raise KeyError(f"unknown domain {domain_id}")
        return float(self.remaining[domain_id][window].sum())

    def draw(self, domain_id: int, window: slice, amount: float,
             round_index: int = -1, client_id: int = -1) -> float:
        """Greedily debit ``amount`` Wh from the earliest timesteps of the
        window. Returns the shortfall (0 when fully satisfied)."""
        if amount < 0:
            raise ValueError("amount must be >= 0")
        if domain_id not in self.remaining:
            raise KeyError(f"unknown domain {domain_id}")
        buckets = self.remaining[domain_id]
        left = amount
        for t in range(*window.indices(len(buckets))):
            if left <= 0:
                break
            take = min(buckets[t], left)
            buckets[t] -= take
            left -= take
        drawn = amount - left
        if drawn > 0:
            self.draws.append((round_index, client_id, domain_id, drawn))
        return left

    def total_drawn_wh(self) -> float:
        return sum(d[3] for d in self.draws)

    def usage(self, domain_id: int) -> np.ndarray:
        return self.initial[domain_id] - self.remaining[domain_id]


def synth_solar_trace(
    seed: int,
    days: int,
    step_minutes: float = DEFAULT_STEP_MINUTES,
    peak_w: float = DEFAULT_MAX_OUTPUT_W,
    noise: float = 0.1,
) -> EnergyTrace:
    """Deterministic diurnal half-sine excess-energy profile, zero at night.

    Daylight spans 06:00-18:00; values are clamped to [0, peak] before the
    W -> Wh conversion.
    """
    if peak_w > DEFAULT_MAX_OUTPUT_W:
        raise ValueError(f"peak_w must be <= {DEFAULT_MAX_OUTPUT_W}")
    rng = np.random.default_rng(seed)
    steps_per_day = int(round(24 * 60 / step_minutes))
    hours = (np.arange(days * steps_per_day) % steps_per_day) * step_minutes / 60.0
    daylight = (hours >= 6.0) & (hours < 18.0)
    profile = np.where(daylight, np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    jitter = 1.0 + noise * rng.standard_normal(len(profile))
    power = np.clip(peak_w * profile * jitter, 0.0, peak_w)
    power[~daylight] = 0.0
    return EnergyTrace(step_minutes, watts_to_wh(power, step_minutes))


# ---------------------------------------------------------------------------
# trace files

def _read_rows(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise TraceError(f"{path}: expected header {','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, row


def load_solar_csv(path, step_minutes: float = DEFAULT_STEP_MINUTES) -> dict:
    """Parse ``domain_id,timestep,energy_wh`` into EnergyTraces."""
    series: dict = {}
    for lineno, row in _read_rows(path, ["domain_id", "timestep", "energy_wh"]):
        try:
            domain, t, wh = int(row[0]), int(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if wh < 0:
            raise TraceError(f"{path}:{lineno}: negative energy value {wh}")
        series.setdefault(domain, {})[t] = wh
    traces = {}
    for domain, vals in series.items():
        if set(vals) != set(range(len(vals))):
            raise TraceError(f"{path}: domain {domain} has non-contiguous timesteps")
        traces[domain] = EnergyTrace(step_minutes, [vals[t] for t in range(len(vals))])
    return traces


def load_spare_csv(path) -> dict:
    """Parse ``client_id,timestep,batches`` into per-client arrays."""
    series: dict = {}
    for lineno, row in _read_rows(path, ["client_id", "timestep", "batches"]):
        try:
            client, t, batches = int(row[0]), int(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if batches < 0:
            raise TraceError(f"{path}:{lineno}: negative spare capacity {batches}")
        series.setdefault(client, {})[t] = batches
    out = {}
    for client, vals in series.items():
        if set(vals) != set(range(len(vals))):
            raise TraceError(f"{path}: client {client} has non-contiguous timesteps")
        out[client] = np.array([vals[t] for t in range(len(vals))])
    return out


def load_mapping_csv(path) -> dict:
    """Parse ``client_id,domain_id,hardware`` into (domain, hardware) pairs."""
    mapping = {}
    for lineno, row in _read_rows(path, ["client_id", "domain_id", "hardware"]):
        try:
            client, domain, hw = int(row[0]), int(row[1]), row[2].strip()
        except (ValueError, IndexError) as exc:
            raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if hw not in HARDWARE_CLASSES:
            raise TraceError(f"{path}:{lineno}: unknown hardware class {hw!r}")
        mapping[client] = (domain, hw)
    return mapping


def assign_domains(num_clients: int, domain_ids: list, seed: int) -> dict:
    """Seeded shuffle assignment of clients to domains (round-robin over a
    shuffled client order)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(num_clients)
    return {int(c): domain_ids[i % len(domain_ids)] for i, c in enumerate(order)}


def write_solar_csv(path, traces: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain_id", "timestep", "energy_wh"])
        for domain in sorted(traces):
            for t, wh in enumerate(traces[domain].values):
                writer.writerow([domain, t, f"{wh:.6f}"])


def write_spare_csv(path, spare: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "timestep", "batches"])
        for client in sorted(spare):
            for t, b in enumerate(spare[client]):
                writer.writerow([client, t, f"{b:.6f}"])


def write_mapping_csv(path, mapping: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "domain_id", "hardware"])
        for client in sorted(mapping):
            domain, hw = mapping[client]
            writer.writerow([client, domain, hw])
