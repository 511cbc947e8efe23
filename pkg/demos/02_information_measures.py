# coding: utf-8

# # Predictive information of small Markov chains

# For a stationary chain `X` and a deterministic map `Y = f(X)` the
# informational-closure measure reduces to the predictive information of `Y`
# computed from the coarse pair law alone. Both sides are exact enumerations.

import numpy as np

from ncg import analysis as A

# A symmetric two-state chain that flips with probability 0.1.

flip = A.DiscreteProcess(np.array([[0.9, 0.1], [0.1, 0.9]]))
print("I_pred(flip 0.1) =", round(A.predictive_information(flip), 6))

# A sticky 4-state chain lumped onto 2 classes.

rng = np.random.default_rng(0)
P = 0.7 * np.eye(4) + 0.3 * rng.dirichlet(np.ones(4), size=4)
proc = A.DiscreteProcess(P, np.array([0, 0, 1, 1]))
print("map f:", proc.f)
print("ntic            =", A.ntic(proc))
print("H(Y') - H(Y'|Y) =", A.coarse_predictive_information(proc))

# The plug-in estimate from a simulated class sequence converges to the exact value.

x = [0]
for _ in range(200_000):
    x.append(rng.choice(4, p=proc.P[x[-1]]))
y = proc.f[np.array(x)]
print("empirical       =", A.empirical_ntic(y))
