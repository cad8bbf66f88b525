"""Sweep training configs for the DP linear-regression reproduction."""

import itertools
import time

import numpy as np
from scipy.stats import spearmanr

from plislab import datasets, dpsgd, models, plis


def run_case(data_seed, train_seed, epochs, lr, clip, noise_sd):
    ds = datasets.make_regression(500, 16, {9}, noise_sd=noise_sd, seed=data_seed)
    spec = models.ModelSpec((models.Linear(16, 1, bias=False),), models.MSE)
    pairs = [(ds.X[i], np.array([ds.y[i]])) for i in range(ds.n)]
    config = dpsgd.DpSgdConfig(
        learning_rate=lr, epochs=epochs, batch_size=500, seed=train_seed,
        private=True, clip=clip, target_epsilon=0.2, target_delta=1e-3,
    )
    t0 = time.time()
    trace = dpsgd.train(spec, pairs, config)
    sigma_noise = trace.sigma_used * clip
    subjects = datasets.tabular_subjects(ds.X, ds.y)
    plis_abs = np.mean(
        [np.abs(plis.plis_direct(spec, trace.params, s, sigma=sigma_noise).plis) for s in subjects],
        axis=0,
    )
    fil_attr = np.mean(
        [plis.fim_subject(spec, trace.params, s, sigma=sigma_noise).fil_per_attribute
         for s in subjects],
        axis=0,
    )
    others = [j for j in range(16) if j != 9]
    ratio_p = plis_abs[9] / plis_abs[others].max()
    ratio_f = fil_attr[9] / fil_attr[others].max()
    rho = spearmanr(plis_abs, fil_attr).statistic
    took = time.time() - t0
    print(
        f"dseed={data_seed} tseed={train_seed} T={epochs} lr={lr} C={clip} nsd={noise_sd} "
        f"w*={ds.w_star[0]:+.2f} w9={trace.params.flat[9]:+.2f} "
        f"wmax={np.abs(trace.params.flat[others]).max():.3f} "
        f"Pratio={ratio_p:.1f} Fratio={ratio_f:.1f} rho={rho:.3f} {took:.0f}s"
    )
    return ratio_p, ratio_f, rho


for data_seed, (epochs, lr, clip) in itertools.product(
    [123, 4, 17], [(150, 0.15, 1.0), (200, 0.2, 0.5)]
):
    run_case(data_seed, 7, epochs, lr, clip, 0.1)
