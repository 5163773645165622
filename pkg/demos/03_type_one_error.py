"""A small Type I error study on resampled takeover covariates.

Slow-ish (about 30 s): 500 replicates, each fitting two models.
"""
from cmpmu import Generator, StudyConfig, load_takeover_bids, run_study

gen = Generator("whtknght + bidprem + leglrest", (1.157, 0.51, -0.808, 0.282), nu=1.52)
config = StudyConfig(
    gen,
    load_takeover_bids(),
    full_terms="whtknght + bidprem + leglrest + whtknght:bidprem"
               " + whtknght:leglrest + bidprem:leglrest",
    restricted_terms="whtknght + bidprem + leglrest",
    n_per_dataset=100,
    n_replicates=500,
    base_seed=800,
)
result = run_study(config)
for row in result.table():
    print(row)
