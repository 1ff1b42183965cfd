# Averaging sampled paths of a random walk does not pin down the endpoint.
# An ideal one-step model of a +/-1 walk is rolled out N times and the
# endpoints averaged. The chance that the average lands far from the start
# stays bounded away from zero.

import numpy as np

from jointcast import lemma

N, j = 4, 8
paths = lemma.simulate_paths(lemma.WalkSpec(n_paths=N, horizon=j, seed=0))
print("paths shape:", paths.shape)
print("endpoints:", paths[:, -1], "average:", paths[:, -1].mean())

# E[Z] = j/N, where Z is the squared average deviation
print("moments (enumerated):", lemma.exact_moments(N, j // 2))
print("moments (closed form):", lemma.closed_form_moments(N, j // 2))

print("\n  eps    empirical  exact    bound")
for eps in lemma.eps_grid(N, j, 5):
    emp = lemma.deviation_prob(N, j, eps, trials=50_000, seed=1)
    exact = lemma.exact_probability(N, j, eps)
    print(f"{eps:6.3f}  {emp:8.4f}  {exact:7.4f}  {lemma.pz_bound(N, j, eps):7.4f}")

# a single path has a parity quirk: one step always lands at distance 1
for jj in (1, 2, 4, 8):
    print(f"N=1 j={jj} P(|dev|>0.5) =", round(lemma.exact_probability(1, jj, 0.5), 4))
