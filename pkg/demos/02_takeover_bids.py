"""Fit the takeover-bids regression and compare with a Poisson fit."""
from cmpmu import ModelSpec, compare, fit_model, load_takeover_bids, lrt_poisson, pit

data = load_takeover_bids()
terms = ("leglrest + rearest + finrest + whtknght + bidprem + insthold"
         " + size + size^2 + regulatn")

cmp_fit = fit_model(ModelSpec("numbids", terms), data)
pois_fit = fit_model(ModelSpec("numbids", terms, fixed_nu=1.0), data)

for name, b, t in zip(cmp_fit.labels, cmp_fit.beta, cmp_fit.tvalues):
    print(f"{name:>10} {b:8.3f} ({abs(t):.2f})")
print(f"nu = {cmp_fit.nu:.3f}, loglik = {cmp_fit.loglik:.2f}")

# nu > 1 here: the bid counts are underdispersed
print(lrt_poisson(cmp_fit, pois_fit))
for row in compare([cmp_fit, pois_fit], ["cmp_mu", "poisson"]):
    print(row)

# Randomized PIT; a KS statistic near 0 means the fit looks calibrated
sample = pit(cmp_fit, data["numbids"], seed=2024)
print("KS statistic", round(sample.ks_statistic, 4))
