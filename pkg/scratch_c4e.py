"""Final seed sweep for criterion 4 with the widened coefficient range."""
import sys
import numpy as np
from scipy.stats import spearmanr
from plislab import datasets, dpsgd, models, plis

spec = models.ModelSpec((models.Linear(16, 1, bias=False),), models.MSE)
layout = models.layout_for(spec)

def case(data_seed, train_seed, epochs=200, lr=0.2, clip=0.5):
    ds = datasets.make_regression(500, 16, {9}, noise_sd=0.1, seed=data_seed)
    pairs = [(ds.X[i], np.array([ds.y[i]])) for i in range(ds.n)]
    config = dpsgd.DpSgdConfig(
        learning_rate=lr, epochs=epochs, batch_size=500, seed=train_seed,
        private=True, clip=clip, target_epsilon=0.2, target_delta=1e-3,
    )
    trace = dpsgd.train(spec, pairs, config, initial=models.ParamSet(np.zeros(16), layout))
    sn = trace.sigma_used * clip
    subjects = datasets.tabular_subjects(ds.X, ds.y)
    pa = np.mean([np.abs(plis.plis_direct(spec, trace.params, s, sigma=sn).plis) for s in subjects], axis=0)
    fa = np.mean([plis.fim_subject(spec, trace.params, s, sigma=sn).fil_per_attribute for s in subjects], axis=0)
    o = [j for j in range(16) if j != 9]
    rp, rf = pa[9]/pa[o].max(), fa[9]/fa[o].max()
    rho = spearmanr(pa, fa).statistic
    print(f"d={data_seed} t={train_seed}: w9={trace.params.flat[9]:+.2f} wmax={np.abs(trace.params.flat[o]).max():.2f} P={rp:.1f} F={rf:.1f} rho={rho:.3f}", flush=True)
    return rp, rf

for d in (32, 19):
    for t in range(1, 9):
        case(d, t)
