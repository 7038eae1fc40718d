"""Ordered-dropout submodel extraction and heterogeneous aggregation.

A submodel at rate m keeps the leading ceil(dim * m) channels of every
scaled axis, so smaller submodels are always nested inside larger ones.
Aggregation is a per-position weighted average over the client updates
whose view covers that position; the output layer additionally honors
per-client label masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import CnnArch, ParamSet

RATE_LADDER = (1.0, 0.5, 0.25, 0.125, 0.0625)


class AggregationShapeError(ValueError):
    def __init__(self, client_id, layer, expected, actual):
        self.client_id = client_id
        self.layer = layer
        super().__init__(
            f"client {client_id}, layer {layer!r}: expected shape "
            f"{tuple(expected)}, got {tuple(actual)}"
        )


def validate_rate(rate: float) -> float:
    if rate not in RATE_LADDER:
        raise ValueError(f"model rate {rate} not in ladder {RATE_LADDER}")
    return rate


def scaled_count(dim: int, rate: float) -> int:
    """Leading-channel count for a scaled axis; never rounds to zero."""
    return max(1, math.ceil(dim * rate))


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    rate: float
    params: ParamSet
    examples_seen: int
    label_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        validate_rate(self.rate)
        if self.examples_seen <= 0:
            raise ValueError("examples_seen must be positive")
        if not self.label_set:
            raise ValueError("label_set must be non-empty")


def submodel_view(arch: CnnArch, rate: float) -> dict:
    """Per-layer index ranges (tuples of slices) into the full param set."""
    validate_rate(rate)
    c1, c2 = arch.channels(rate)
    f = arch.feature_size
    full = slice(None)
    return {
        "conv1.w": (slice(0, c1), full, full, full),
        "conv1.b": (slice(0, c1),),
        "bn1.g": (slice(0, c1),),
        "bn1.b": (slice(0, c1),),
        "conv2.w": (slice(0, c2), slice(0, c1), full, full),
        "conv2.b": (slice(0, c2),),
        "bn2.g": (slice(0, c2),),
        "bn2.b": (slice(0, c2),),
        # channel-major flatten keeps the first c2 channels contiguous
        "fc.w": (full, slice(0, c2 * f * f)),
        "fc.b": (full,),
    }


def extract_submodel(arch: CnnArch, global_params: ParamSet, rate: float) -> ParamSet:
    view = submodel_view(arch, rate)
    return {name: global_params[name][view[name]].copy() for name in global_params}


def embed_submodel(
    arch: CnnArch, global_params: ParamSet, sub: ParamSet, rate: float
) -> ParamSet:
    """Write a submodel back into a copy of the global params at its view."""
    view = submodel_view(arch, rate)
    out = {name: v.copy() for name, v in global_params.items()}
    for name, v in sub.items():
        out[name][view[name]] = v
    return out


def output_row_mask(update: ClientUpdate, num_classes: int) -> np.ndarray:
    """Boolean coverage mask over output-layer rows from the label mask."""
    mask = np.zeros(num_classes, dtype=bool)
    for label in update.label_set:
        if not 0 <= label < num_classes:
            raise ValueError(f"label {label} outside [0, {num_classes})")
        mask[label] = True
    return mask


def aggregate(
    arch: CnnArch,
    global_params: ParamSet,
    updates: list,
    num_classes: int,
) -> ParamSet:
    """Example-count-weighted average over covering updates, per position.

    Positions no update covers keep their previous global value. Output
    layer rows count only for clients whose label set contains that row's
    label (the masking trick).
    """
    if not updates:
        raise ValueError("updates must be non-empty")
    result = {}
    ordered = sorted(updates, key=lambda u: u.client_id)
    views = {u.rate: submodel_view(arch, u.rate) for u in ordered}
    for name, g in global_params.items():
        num = np.zeros_like(g)
        den = np.zeros_like(g)
        for u in ordered:
            view = views[u.rate][name]
            vals = u.params[name]
            if vals.shape != g[view].shape:
                raise AggregationShapeError(u.client_id, name, g[view].shape, vals.shape)
            w = float(u.examples_seen)
            if name in ("fc.w", "fc.b"):
                rows = np.flatnonzero(output_row_mask(u, num_classes))
                if name == "fc.w":
                    cols = view[1]
                    num[rows, cols] += w * vals[rows, :]
                    den[rows, cols] += w
                else:
                    num[rows] += w * vals[rows]
                    den[rows] += w
            else:
                num[view] += w * vals
                den[view] += w
        covered = den > 0
        result[name] = np.where(covered, np.divide(num, den, out=np.zeros_like(g), where=covered), g)
    return result
