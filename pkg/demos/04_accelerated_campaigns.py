"""The two accelerated workflows: an accuracy-vs-BER curve from a few MSB
anchor runs, and fragile-layer selection from per-layer RRMSE."""
# %%
import numpy as np

from softerr.campaigns import (
    CampaignSpec,
    ber_sweep_accelerated,
    ber_sweep_standard,
    fragile_layers_accelerated,
    fragile_layers_bruteforce,
)
from softerr.faults import FaultSpec
from softerr.fixtures import load_fixture, load_mnist5k

net, data = load_fixture("lenet5"), load_mnist5k("test")
spec = CampaignSpec(FaultSpec("weights"), tuple(np.geomspace(1e-3, 1e-1, 16)), trials=500)
std = ber_sweep_standard(net, data, spec)
fast = ber_sweep_accelerated(net, data, spec, anchor_count=5, anchor_trials=100)
for a, b in zip(std.rows, fast.rows):
    print(f"ber {a.ber:.2e}  simulated {a.accuracy:.3f}  predicted {b.accuracy:.3f}")
print("MAE", np.mean(np.abs(std.accuracies - fast.accuracies)),
      "faulty inferences", std.faulty_inferences, "vs", fast.faulty_inferences)

# %%
brute = fragile_layers_bruteforce(net, data, 1e-2, k=3, trials=500)
quick = fragile_layers_accelerated(net, data, 1e-2, k=3, trials=200)
print("per-layer RRMSE", {l: round(v, 4) for l, v in quick.layer_scores.items()})
print("brute force top 3:", brute.ranking[:3])
print("accelerated pick:", quick.chosen, "-> brute-force accuracy", brute.score_of(quick.chosen))
print("faulty inferences", brute.faulty_inferences, "vs", quick.faulty_inferences)
