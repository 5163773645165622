"""A quick tour of the mean-parametrized distribution."""
import math

import numpy as np

from cmpmu import distribution as dist

# Same mean, three dispersions: over-, equi- and underdispersed.
for nu in (0.4, 1.0, 2.1):
    p = dist.CmpParams.from_mean(6.0, nu)
    mf = dist.moment_functionals(p)
    print(f"nu={nu}: log lambda={p.log_lambda:.4f}  variance={mf.variance:.4f}")

# The pmf at a few counts; the mean stays at 6 whatever nu is
p = dist.CmpParams.from_mean(6.0, 2.1)
ys = np.arange(0, 13)
print(np.round(dist.pmf(ys, p), 4))
print("mean check:", float(dist.pmf(p.support, p) @ p.support))

# The closed-form approximation is good for large rates, poor for small ones
for lam in (2.0, 200.0):
    exact = dist.mean_from_rate(math.log(lam), 2.1)
    approx = dist.approx_mean(math.log(lam), 2.1)
    print(f"lambda={lam}: exact {exact:.4f}, approx {approx:.4f}")

# Inversion sampling is reproducible from the seed
draws = dist.sample(p, 10_000, seed=1)
print("sample mean", draws.mean(), "sample var", draws.var())
