"""Simulate a landscape with known truth, fit the S-GAM and see what comes back.

Run from the repository root:  python demos/recover_truth.py
Takes about half a minute.
"""
import numpy as np

from propval.design import ModelSpec
from propval.model import extract_smooth, fit_model, monthly_inflation, summarize_parametric
from propval.synth import SynthConfig, recovery_error, simulate_dataset

# %% A synthetic market: four cities, towns and a sparse rural background.
data = simulate_dataset(SynthConfig(n=5000, seed=1))
subs, counts = np.unique([r.submarket for r in data.records], return_counts=True)
print("records per submarket:", dict(zip(subs.tolist(), counts.tolist())))

# %% Fit the submarket-specific additive model.
model = fit_model(data.records, ModelSpec("sgam"), data.graph)
print(f"total EDF {model.edf_total:.1f}, residual sd {np.sqrt(model.sigma2):.3f} (true 0.12)")

# %% How close are the fitted pieces to the generating ones?
err = recovery_error(model, data.truth, data.records)
smooth = {k: v for k, v in err.items() if k.startswith("smooth:")}
worst = max(smooth, key=smooth.get)
print(f"worst smooth RMSE {smooth[worst]:.4f} ({worst}); spatial corr {err['spatial_corr']:.3f}")

# The size effect in Dublin on the price-per-m2 scale, next to its truth.
c = extract_smooth(model, "size", "Dublin")
true = data.truth.smooth("size", "Dublin", c.x)
sizes = np.array([r.size for r in data.records if r.submarket == "Dublin"])
true = true - data.truth.smooth("size", "Dublin", sizes).mean()
for i in range(0, len(c.x), len(c.x) // 6):
    print(f"  size {c.x[i]:6.1f} m2  fitted {c.fit[i]:+.3f} [{c.lower[i]:+.3f}, {c.upper[i]:+.3f}]"
          f"  true {true[i]:+.3f}")

# %% Planted 0.3% monthly growth, read back per submarket.
for group, ratios in monthly_inflation(model).items():
    print(f"  {group:9s} mean monthly ratio {np.mean(ratios[1:]):.4f}")

# %% Multiplicative effects of a few listing features.
for row in summarize_parametric(model):
    if row.term == "features" and row.level in ("Period Property", "Garden", "Penthouse Apartment"):
        print(f"  {row.level:20s} {row.formatted()}")
