"""Sweep train seeds and configs; find a frozen setting with margin."""

import sys

import numpy as np
from scipy.stats import spearmanr

from plislab import datasets, dpsgd, models, plis

spec = models.ModelSpec((models.Linear(16, 1, bias=False),), models.MSE)
layout = models.layout_for(spec)


def case(data_seed, train_seed, epochs, lr, clip, zero_init, quiet=True):
    ds = datasets.make_regression(500, 16, {9}, noise_sd=0.1, seed=data_seed)
    pairs = [(ds.X[i], np.array([ds.y[i]])) for i in range(ds.n)]
    config = dpsgd.DpSgdConfig(
        learning_rate=lr, epochs=epochs, batch_size=500, seed=train_seed,
        private=True, clip=clip, target_epsilon=0.2, target_delta=1e-3,
    )
    initial = models.ParamSet(np.zeros(16), layout) if zero_init else None
    trace = dpsgd.train(spec, pairs, config, initial=initial)
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
    rp = plis_abs[9] / plis_abs[others].max()
    rf = fil_attr[9] / fil_attr[others].max()
    rho = spearmanr(plis_abs, fil_attr).statistic
    print(f"dseed={data_seed} tseed={train_seed} T={epochs} lr={lr} C={clip} z={int(zero_init)}: "
          f"w9={trace.params.flat[9]:+.2f} wmax={np.abs(trace.params.flat[others]).max():.3f} "
          f"P={rp:.1f} F={rf:.1f} rho={rho:.3f}")
    sys.stdout.flush()
    return rp, rf, rho


for tseed in range(1, 13):
    case(123, tseed, 200, 0.2, 0.5, True)
