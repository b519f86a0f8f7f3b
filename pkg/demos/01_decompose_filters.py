"""Decompose a synthetic RGB filter bank and compare CP against Tucker.

Each synthetic filter is a colored separable pattern (plus a little noise),
so low-rank decompositions should capture it almost perfectly; the residual
error grows with the noise floor and shrinks with rank.
"""

import numpy as np

from hyperadapt.data import synth_filter_bank
from hyperadapt.decomp import decompose_bank

bank = synth_filter_bank(c_out=16, k=7, seed=0, noise=0.02)
print(f"bank: {bank.weights.shape}, bias: {bank.bias.shape}")
print()
print("mean relative reconstruction error per filter")
print(f"{'rank':>4}  {'cp':>12}  {'tucker':>12}")
for rank in (1, 2, 3):
    _, cp_err = decompose_bank(bank, "cp", rank)
    _, tk_err = decompose_bank(bank, "tucker", rank)
    print(f"{rank:>4}  {cp_err.mean():>12.3e}  {tk_err.mean():>12.3e}")

print()
print("Tucker never loses to CP at the same rank (it is the optimal")
print("channel-mode compression), and both errors fall as rank grows.")

decomps, errors = decompose_bank(bank, "cp", 2)
worst = int(np.argmax(errors))
d = decomps[worst]
print()
print(f"hardest filter for CP rank 2: #{worst} (error {errors[worst]:.3e})")
print(f"  spectral columns (scale owners): norms {np.linalg.norm(d.spectral, axis=0)}")
print(f"  spatial tap columns are unit norm: x {np.linalg.norm(d.x, axis=0)}, "
      f"y {np.linalg.norm(d.y, axis=0)}")
print(f"  ALS ran {len(d.sweep_errors)} sweeps, error monotone: "
      f"{bool(np.all(np.diff(d.sweep_errors) <= 1e-12))}")
