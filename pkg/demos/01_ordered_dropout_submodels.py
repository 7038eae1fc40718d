"""Ordered-dropout submodels: every smaller model is a prefix of the full one.

The CNN's hidden layers scale with a "model rate" from the ladder
(1, 0.5, 0.25, 0.125, 0.0625). Extracting a submodel at rate m keeps the
*leading* ceil(m * C) channels of every hidden dimension, so all smaller
submodels nest inside the larger ones and a trained slice can be embedded
straight back into the full parameter set.

Run: python3 demos/01_ordered_dropout_submodels.py
"""

import numpy as np

from greenfed import CnnArch, RATE_LADDER, extract_submodel
from greenfed.hetero import embed_submodel

arch = CnnArch(image_size=8, hidden_channels=16, num_classes=10)
params = arch.init_params(np.random.default_rng(0))

print("full architecture:", {k: v.shape for k, v in params.items()})
print()
print(f"{'rate':>8} {'conv1.w':>16} {'conv2.w':>16} {'fc.w':>14} {'params':>10}")
for rate in RATE_LADDER:
    sub = extract_submodel(arch, params, rate)
    n = sum(v.size for v in sub.values())
    print(f"{rate:>8g} {str(sub['conv1.w'].shape):>16} "
          f"{str(sub['conv2.w'].shape):>16} {str(sub['fc.w'].shape):>14} {n:>10}")

print()
print("nesting: the rate-0.25 slice of the full model equals the rate-0.5")
print("slice of the rate-0.5 submodel:")
half = extract_submodel(arch, params, 0.5)
half_arch = CnnArch(image_size=8, hidden_channels=arch.channels(0.5)[0], num_classes=10)
quarter_direct = extract_submodel(arch, params, 0.25)
quarter_nested = extract_submodel(half_arch, half, 0.5)
same = all(np.array_equal(quarter_direct[k], quarter_nested[k]) for k in quarter_direct)
print("  identical:", same)

print()
print("round trip: embedding an extracted slice back is the identity:")
restored = embed_submodel(arch, {k: v.copy() for k, v in params.items()}, half, 0.5)
print("  identical:", all(np.array_equal(restored[k], params[k]) for k in params))
