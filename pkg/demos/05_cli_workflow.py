"""The whole workflow through the command-line surface.

Writes a filter bank to disk, decomposes it, widens the spectral parts,
trains on the synthetic task, sweeps ranks, and exports filter images, all
via the same entry points the installed ``hyperadapt`` script exposes.
"""

import os
import tempfile

from hyperadapt.cli import main
from hyperadapt.data import synth_filter_bank
from hyperadapt.tensor import save_tensor

work = tempfile.mkdtemp(prefix="hyperadapt-demo-")
print(f"working in {work}\n")

bank = synth_filter_bank(c_out=8, k=5, seed=0, noise=0.02)
bank_path = os.path.join(work, "bank.tns")
bias_path = os.path.join(work, "bias.tns")
save_tensor(bank.weights, bank_path)
save_tensor(bank.bias, bias_path)

print("== decompose ==")
main(["decompose", "--bank", bank_path, "--bias", bias_path,
      "--kind", "tucker", "--rank", "2", "--out", os.path.join(work, "bank.dcp")])

print("\n== adapt ==")
main(["adapt", "--decomp", os.path.join(work, "bank.dcp"), "--channels", "64",
      "--bias", bias_path, "--out", os.path.join(work, "layer.adp")])

config = os.path.join(work, "run.cfg")
with open(config, "w") as f:
    f.write(f"""\
method = tucker
rank = 2
epochs = 20
bank = {bank_path}
bank_bias = {bias_path}
synth_channels = 64
synth_classes = 4
synth_samples = 200
out_model = {os.path.join(work, "model.mdl1")}
out_log = {os.path.join(work, "train_log.csv")}
""")

print("\n== train ==")
main(["train", "--config", config])

print("\n== rank-sweep ==")
main(["rank-sweep", "--config", config, "--ranks", "1,2", "--seeds", "2",
      "--out", os.path.join(work, "sweep.csv")])

print("\n== export-filters ==")
main(["export-filters", "--model", os.path.join(work, "model.mdl1"),
      "--out-dir", os.path.join(work, "filters")])

print("\n== gradcheck ==")
main(["gradcheck", "--config", config])

print(f"\nartifacts left in {work}")
