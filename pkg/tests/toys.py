"""Discrete populations with exactly known functionals."""
import itertools

import numpy as np

from survsens.data import Dataset, FoldAssignment
from survsens.nuisance import NuisanceConfig

T_HORIZON = 2.5
GRID_POINTS = 101              # spacing 0.025; event times sit at cell midpoints
T_SUPPORT = np.array([0.5125, 1.2625, 2.0125, 3.0])
T_PROBS = {(0, 0): [0.1, 0.2, 0.3, 0.4], (1, 0): [0.1, 0.1, 0.2, 0.6],
           (0, 1): [0.2, 0.3, 0.3, 0.2], (1, 1): [0.1, 0.2, 0.2, 0.5]}
C_SUPPORT = np.array([1.0, 5.0])
C_PROBS = [0.2, 0.8]
W_COUNTS = {0: 2000, 1: 2000}
PROPENSITY = {0: 0.3, 1: 0.6}
TOY_CONFIG = NuisanceConfig(survival="km", censoring="km", km_strata=("W",))


def toy_population(replicas: int = 5):
    """Each replica is the full product population; replica j is fold j+1, so
    every training complement has the population's empirical law."""
    rows = []
    for w, nw in W_COUNTS.items():
        for a in (0, 1):
            n_aw = round(nw * (PROPENSITY[w] if a else 1 - PROPENSITY[w]))
            for (ti, pt), (ci, pc) in itertools.product(enumerate(T_PROBS[(a, w)]), enumerate(C_PROBS)):
                m = round(n_aw * pt * pc)
                T, C = T_SUPPORT[ti], C_SUPPORT[ci]
                rows += [(min(T, C), int(T <= C), a, w)] * m
    rows = np.array(rows * replicas, dtype=float)
    fold_of = np.repeat(np.arange(1, replicas + 1), len(rows) // replicas)
    data = Dataset(rows[:, 0], rows[:, 1].astype(int), rows[:, 2].astype(int), rows[:, 3:4], ("W",))
    return data, FoldAssignment(replicas, fold_of, 0)


def toy_truth(t: float):
    """Direct enumeration over (W, A, T)."""
    total = sum(W_COUNTS.values())
    theta = psi = tau = gamma = phi = 0.0
    for w, nw in W_COUNTS.items():
        pw = nw / total
        pi = PROPENSITY[w]
        surv = {a: float(np.dot(T_PROBS[(a, w)], T_SUPPORT > t)) for a in (0, 1)}
        theta += pw * (surv[1] - surv[0])
        tau += pw / (pi * (1 - pi))
        m = np.minimum(T_SUPPORT, t)
        phi += pw * (np.dot(T_PROBS[(1, w)], m) - np.dot(T_PROBS[(0, w)], m))
        for a, pa in ((1, pi), (0, 1 - pi)):
            p = np.array(T_PROBS[(a, w)])
            psi += pw * pa * surv[a] * (1 - surv[a])
            gamma += pw * pa * (np.dot(p, m ** 2) - np.dot(p, m) ** 2)
    return {"theta": theta, "psi": psi, "tau": tau, "gamma": float(gamma), "phi": float(phi)}
