# coding: utf-8

# # Reading a class sequence as a Markov chain

# After training, the argmax class at each step forms a symbolic sequence.
# Its empirical transition matrix, thresholded at 0.2, is the graph of
# frequent transitions.

import numpy as np

from ncg import analysis as A
from ncg.loss import ClassDistributionSeries

# A slow two-state switch like the envelope task produces long dwell times.

t = np.arange(20_000)
p0 = 0.5 * (1 + np.tanh(np.sin(2 * np.pi * t / 2000)))
s = ClassDistributionSeries(np.stack([p0, 1 - p0])[None])
g = A.transition_graph(s, threshold=0.2)
print(np.round(g.matrix, 4))
print(g.to_dot())

# A three-step cycle shows up as a permutation.

g = A.transition_graph(np.tile([0, 1, 2], 50))
print(g.matrix)
print("edges:", g.edges())
