# coding: utf-8

# # Checking the estimators against a known truth
#
# The simulation design has a hidden confounder, so the true bounds are
# known. We compute them by quadrature, cross-check with Monte Carlo, and run
# a small replication study.

# In[1]:

import numpy as np

from survsens.simulation import StudyConfig, monte_carlo_truth, quadrature_truth, run_study, study_checks

truth = quadrature_truth([0.5, 1.0, 1.5, 2.0])
print(truth.to_frame().round(5).to_string(index=False))


# Monte Carlo with a million draws should agree within a few standard errors.

# In[2]:

mc = monte_carlo_truth([1.0], draws=1e6, n_inner=1000)
for key in ("theta_P", "psi_P", "s_cT"):
    q, m = getattr(truth, key)[1], getattr(mc, key)[0]
    print(f"{key}: quadrature {q:.5f}  monte carlo {m:.5f} +- {np.atleast_1d(mc.errors[key])[0]:.5f}")


# A 50-replication study at n = 500. The acceptance profile uses 200 at
# n = 500 and 1000.

# In[3]:

report = run_study(StudyConfig(sizes=(500,), replications=50, n_paths=1000))
for c in study_checks(report):
    print("PASS" if c.passed else "FAIL", c.name, c.detail)
