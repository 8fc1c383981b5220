# coding: utf-8

# # Bands over a time window
#
# Pointwise intervals are honest one time at a time. For statements about the
# whole curve we simulate Gaussian paths with the estimated covariance of the
# bound estimators and widen by the sup quantile.

# In[1]:

import numpy as np

from survsens import load_demo, make_folds
from survsens.estimation import bounds_on_grid, fit_cross
from survsens.inference import default_band_grid, pointwise_ci, uniform_band, uniform_test
from survsens.estimation import components_from_fits
from survsens.simulation import study_nuisance_config

data = load_demo()
folds = make_folds(data.n, 5, seed=0, dataset=data)
cross = fit_cross(data, folds, study_nuisance_config())
grid = default_band_grid(cross, n_points=25)
comp = components_from_fits(cross, grid)
print("grid", grid[0].round(3), "to", grid[-1].round(3))


# In[2]:

bg = bounds_on_grid(comp, 1e-3)
band = uniform_band(bg, n_paths=5000, seed=0)
tband = uniform_band(bg, n_paths=5000, seed=0, transformed=True)
crit = [pointwise_ci(bg[j]).critical for j in range(len(bg))]
print("band critical", round(band.critical, 3), ">= max pointwise", round(max(crit), 3))
for j in range(0, len(grid), 6):
    print(f"t={grid[j]:.2f}  plain [{band.lower_limit[j]:+.3f}, {band.upper_limit[j]:+.3f}]  "
          f"transformed [{tband.lower_limit[j]:+.3f}, {tband.upper_limit[j]:+.3f}]")


# The matching test of "zero lies inside the bounds at every t".

# In[3]:

for v in (0.0, 1e-3, 1e-2):
    res = uniform_test(bounds_on_grid(comp, v), 0.0, n_paths=5000)
    print(f"v={v:g}: T={res.statistic:.3f} q={res.critical:.3f} reject={res.reject} p={res.p_value:.3f}")
