"""Relative error barely changes as it travels through the network, and
errors injected into several layers add up in quadrature."""
# %%
import numpy as np

from softerr.campaigns import aggregation_validation, layer_propagation_experiment
from softerr.fixtures import load_fixture, load_mnist5k

net = load_fixture("lenet5")
data = load_mnist5k("test")
print([f"{i}:{l.kind}" for i, l in enumerate(net.layers)])

# %%
# inject activation faults at one layer, look at RRMSE of every layer output
for site in net.quant_sites[:3]:
    r = layer_propagation_experiment(net, data, 1e-4, site, trials=1000)
    print(f"inject at {site}:", np.round(r, 4))

# %%
# random multi-layer combinations vs sqrt(sum of single-layer RRMSE^2)
rows = aggregation_validation(net, data, bers=(1e-3, 3e-3), n_combos=8, trials=400)
for r in rows:
    print(r.rates, f"measured {r.measured:.4f} predicted {r.predicted:.4f} ({100*r.relative_error:.1f}%)")
print("mean relative error", np.mean([r.relative_error for r in rows]))
