"""Energy-aware client selection.

Selection favors clients that have participated less (weighted by the
model sizes they trained) and whose recent losses mark their data as
informative. Candidates get a model rate matched to the batches they can
afford from their domain's excess energy and their own spare capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .energy import ClientProfile
from .hetero import RATE_LADDER, validate_rate


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 1.0
    exclusion_factor: int = 1
    min_clients: int = 3
    max_fraction: float = 0.1
    forecast_horizon: int = 12
    max_loop_iters: int = 24
    default_rate: float = 0.0625

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 < self.max_fraction <= 1:
            raise ValueError("max_fraction must be in (0, 1]")
        if self.min_clients < 1 or self.max_loop_iters < 1:
            raise ValueError("min_clients and max_loop_iters must be >= 1")
        validate_rate(self.default_rate)


@dataclass
class ClientState:
    """Evolving per-client bookkeeping the selector reads."""

    client_id: int
    examples: int
    wp: float = 0.0  # sum of model rates over participated rounds
    last_round_participated: Optional[int] = None
    last_losses: Optional[list] = None


@dataclass(frozen=True)
class CandidateAssignment:
    client_id: int
    rate: float
    estimated_batches: float
    utility: float
    probability: float


@dataclass
class SelectionResult:
    assignments: list
    loop_iters: int
    warning: bool = False        # loop cap hit; best-so-far returned
    insufficient: bool = False   # no feasible candidates at all


def compute_omega(states: dict) -> float:
    """Mean weighted participation over all registered clients."""
    if not states:
        raise ValueError("no registered clients")
    return float(np.mean([s.wp for s in states.values()]))


def selection_probability(state: ClientState, omega: float, alpha: float) -> float:
    """1/(wp - omega)^alpha when wp - omega >= 1, else 1."""
    diff = state.wp - omega
    if diff >= 1.0:
        return 1.0 / diff**alpha
    return 1.0


def statistical_utility(state: ClientState, eligible: bool = True) -> float:
    """|B_c| * sqrt(mean squared loss) over the last observed losses.

    Falls back to 1 for clients that never trained or are not currently
    eligible (cannot run at least one batch)."""
    if not eligible or not state.last_losses:
        return 1.0
    losses = np.asarray(state.last_losses)
    return float(state.examples * math.sqrt(float(np.mean(losses**2))))


def estimate_batches(
    client: ClientProfile,
    domain_trace: np.ndarray,
    spare_trace: np.ndarray,
    horizon: int,
) -> float:
    """Sum over the horizon of min(spare capacity, affordable batches)."""
    delta = client.hardware.energy_per_batch
    if delta <= 0:
        raise ValueError("energy per batch must be > 0")
    steps = min(horizon, len(domain_trace), len(spare_trace))
    r = np.asarray(domain_trace[:steps], dtype=float)
    spare = np.asarray(spare_trace[:steps], dtype=float)
    return float(np.minimum(spare, r / delta).sum())


def determine_model_size(
    batches: float, client: ClientProfile, epochs: int, default: float
) -> float:
    """Walk the rate ladder from 1, halving, until the client's capacity
    covers the required batches; fall back to the default rate."""
    if batches < 0:
        raise ValueError("batches must be >= 0")
    b_c = client.batches_per_epoch * epochs
    mr = 1.0
    for _ in range(5):
        if batches >= b_c * mr:
            return mr
        mr /= 2
    return default


def is_excluded(state: ClientState, round_index: int, exclusion_factor: int) -> bool:
    return (
        state.last_round_participated is not None
        and round_index - state.last_round_participated <= exclusion_factor
    )


def _take_top(members: list, k: int, states: dict) -> list:
    """Deterministic pick: descending selection probability first, then
    descending statistical utility, then ascending weighted participation
    and client id.

    Fairness outranks utility: a multiplicative P*sigma weight lets large
    utilities of frequently-trained clients swamp the participation
    penalty and starve the rest, and a randomized draw accumulates
    binomial drift in the participation counts far beyond what the
    penalty can damp. With probability and participation first, utility
    settles the order among equally-participated candidates."""
    ranked = sorted(
        members,
        key=lambda a: (
            -a.probability,
            states[a.client_id].wp,
            -a.utility,
            a.client_id,
        ),
    )
    return ranked[:k]


def sort_select(
    candidates: list,
    cfg: SelectionConfig,
    total_clients: int,
    states: dict,
) -> list:
    """Pick the selection target, apportioning slots across rate groups
    proportionally to group sizes (largest-remainder rounding) so the
    selected mix of model sizes tracks the candidate mix."""
    if not candidates:
        return []
    upper = math.ceil(cfg.max_fraction * total_clients)
    k = min(len(candidates), upper)
    if k < cfg.min_clients:
        k = min(len(candidates), cfg.min_clients)

    groups: dict = {}
    for a in candidates:
        groups.setdefault(a.rate, []).append(a)
    rates = sorted(groups, reverse=True)
    exact = {r: k * len(groups[r]) / len(candidates) for r in rates}
    quota = {r: min(len(groups[r]), math.floor(exact[r])) for r in rates}
    # largest-remainder distribution of leftover slots
    while sum(quota.values()) < k:
        open_rates = [r for r in rates if quota[r] < len(groups[r])]
        if not open_rates:
            break
        nxt = max(open_rates, key=lambda r: (exact[r] - quota[r], r))
        quota[nxt] += 1

    selected = []
    for r in rates:
        selected.extend(_take_top(groups[r], quota[r], states))
    return sorted(selected, key=lambda a: a.client_id)


def select_clients(
    profiles: dict,
    domain_energy: dict,
    spare: dict,
    states: dict,
    round_index: int,
    cfg: SelectionConfig,
    epochs: int,
    rng: Optional[np.random.Generator] = None,
    full_model_only: bool = False,
) -> SelectionResult:
    """One round's selection. ``rng`` is accepted for interface stability
    but unused: the pick is fully deterministic.

    ``domain_energy`` and ``spare`` hold the current round window's
    forecast slices. Each iteration widens the domain-liveness filter
    window; estimation always uses the configured horizon. In
    ``full_model_only`` mode (the fixed-size baseline) only clients whose
    capacity covers the full model are candidates and all rates are 1.
    """
    window_len = max((len(v) for v in domain_energy.values()), default=0)
    omega = compute_omega(states)
    best: list = []
    best_count1 = -1
    iters = 0
    for i in range(1, cfg.max_loop_iters + 1):
        iters = i
        fw = min(i, window_len)
        live = {d for d, tr in domain_energy.items() if (np.asarray(tr[:fw]) > 0).any()}
        candidates = []
        for cid in sorted(profiles):
            prof = profiles[cid]
            if prof.domain_id not in live:
                continue
            state = states[cid]
            if is_excluded(state, round_index, cfg.exclusion_factor):
                continue
            est = estimate_batches(
                prof, domain_energy[prof.domain_id], spare[cid], cfg.forecast_horizon
            )
            if est < 1.0:
                continue  # cannot run a single batch this window
            if full_model_only:
                if est < prof.batches_per_epoch * epochs:
                    continue
                rate = 1.0
            else:
                rate = determine_model_size(est, prof, epochs, cfg.default_rate)
            sigma = statistical_utility(state)
            if sigma <= 0:
                continue
            prob = selection_probability(state, omega, cfg.alpha)
            candidates.append(CandidateAssignment(cid, rate, est, sigma, prob))
        count1 = sum(1 for a in candidates if a.rate == 1.0)
        if (len(candidates), count1) > (len(best), best_count1):
            best, best_count1 = candidates, count1
        if len(candidates) > cfg.min_clients and count1 > 2:
            return SelectionResult(
                sort_select(candidates, cfg, len(profiles), states), i
            )
        if fw == window_len:
            break  # wider filter windows cannot change the candidate set
    if not best:
        return SelectionResult([], iters, warning=True, insufficient=True)
    return SelectionResult(sort_select(best, cfg, len(profiles), states), iters, warning=True)


def update_after_round(
    states: dict, selected: list, losses_by_client: dict, round_index: int
) -> dict:
    """Record participation: wp grows by the rate used, losses stored."""
    for a in selected:
        state = states[a.client_id]
        state.wp += a.rate
        state.last_round_participated = round_index
        if a.client_id in losses_by_client:
            state.last_losses = list(losses_by_client[a.client_id])
    return states
