"""From RRMSE to accuracy: the analytic Gaussian-margin models and the
empirical sigmoid fitted to a handful of simulated points."""
# %%
import numpy as np

from softerr.campaigns import CampaignSpec, ber_sweep_standard
from softerr.faults import FaultSpec
from softerr.fixtures import load_fixture, load_mnist5k
from softerr.model_io import clean_accuracy
from softerr.stat_models import binary_accuracy, fit_empirical, multiclass_accuracy

for r in (0.1, 0.5, 1.0, 2.0, 10.0):
    print(f"rrmse {r:5.1f}: binary {binary_accuracy(r):.4f}  "
          + "  ".join(f"nc={nc} {multiclass_accuracy(r, nc):.4f}" for nc in (2, 5, 10)))

# %%
net, data = load_fixture("lenet5"), load_mnist5k("test")
spec = CampaignSpec(FaultSpec("weights"), tuple(np.geomspace(1e-3, 1e-1, 8)), trials=500)
sweep = ber_sweep_standard(net, data, spec)
model = fit_empirical(list(zip(sweep.rrmses, sweep.accuracies)), clean_accuracy(net, data), 10)
print(model)
for row in sweep.rows:
    print(f"ber {row.ber:.2e}  rrmse {row.rrmse_mean:.3f}  acc {row.accuracy:.3f}  "
          f"fit {model(row.rrmse_mean):.3f}")
