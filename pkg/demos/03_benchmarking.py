# coding: utf-8

# # Calibrating against observed covariates
#
# Pretend one of the measured covariates was never recorded, and measure how
# much confounding it would have contributed. That gives a yardstick for the
# sensitivity parameters.

# In[1]:

import warnings

from survsens import load_demo, make_folds
from survsens.estimation import components_from_fits, fit_cross
from survsens.sensitivity import benchmark_from_fits, exceeds_threshold, leave_d_out_from_fits, robustness_value
from survsens.simulation import study_nuisance_config

warnings.simplefilter("ignore", RuntimeWarning)
data = load_demo()
folds = make_folds(data.n, 5, seed=0, dataset=data)
cross = fit_cross(data, folds, study_nuisance_config())
full = components_from_fits(cross, [1.0])


# In[2]:

for R in (["W1"], ["W2"], ["W1", "W2"]):
    r = benchmark_from_fits(cross, R, [1.0], full)[0]
    print(f"R={R}: s_T={r.s_T:.2e} s_A={r.s_A:.2e} s={r.s_combined:.2e} rho={r.rho:+.2f}")


# Average over all subsets of a given size, then compare with the RV.

# In[3]:

rv = robustness_value(float(full.theta[0]), float(full.psi_plus[0]), full.tau_plus)
res = leave_d_out_from_fits(cross, 1.0, d=1, full=full)
print("mean leave-one-out confounding:", f"{res.mean:.2e}", "quartiles", [f"{x:.1e}" for x in res.quartiles])
print("exceeds RV threshold:", exceeds_threshold(res.mean, rv))
