"""Calibration prototype for the DP linear-regression FIL/PLIS experiment."""

import time

import numpy as np
from scipy.stats import spearmanr

from plislab import accounting, datasets, dpsgd, models, plis

t0 = time.time()
ds = datasets.make_regression(500, 16, {9}, noise_sd=0.1, seed=123)
print("w_star:", ds.w_star)

spec = models.ModelSpec((models.Linear(16, 1, bias=False),), models.MSE)
pairs = [(ds.X[i], np.array([ds.y[i]])) for i in range(ds.n)]

epochs, clip = 50, 1.0
config = dpsgd.DpSgdConfig(
    learning_rate=0.05, epochs=epochs, batch_size=500, seed=7,
    private=True, clip=clip, target_epsilon=0.2, target_delta=1e-3,
)
trace = dpsgd.train(spec, pairs, config)
print(f"train {time.time()-t0:.1f}s sigma_mult={trace.sigma_used:.2f} eps={trace.final_epsilon:.4f}")
print("final loss:", trace.per_epoch_loss[-1], "weights:", trace.params.flat)

sigma_noise = trace.sigma_used * clip
subjects = datasets.tabular_subjects(ds.X, ds.y)
t1 = time.time()
plis_abs = np.mean(
    [np.abs(plis.plis_direct(spec, trace.params, s, sigma=sigma_noise).plis) for s in subjects],
    axis=0,
)
print(f"plis {time.time()-t1:.1f}s")
t2 = time.time()
fil_attr = np.mean(
    [plis.fim_subject(spec, trace.params, s, sigma=sigma_noise).fil_per_attribute for s in subjects],
    axis=0,
)
print(f"fil {time.time()-t2:.1f}s")

uninformative = [j for j in range(16) if j != 9]
print("plis feature9 ratio:", plis_abs[9] / plis_abs[uninformative].max())
print("fil  feature9 ratio:", fil_attr[9] / fil_attr[uninformative].max())
rho = spearmanr(plis_abs, fil_attr).statistic
print("spearman:", rho)
print("plis_abs:", np.array2string(plis_abs, precision=3))
print("fil_attr:", np.array2string(fil_attr, precision=3))
print(f"total {time.time()-t0:.1f}s")
