"""Prototype the CNN OOD-ranking experiment and measure runtime."""

import time

import numpy as np

from plislab import datasets, dpsgd, models, plis


def cnn_spec(h, w, classes=2):
    flat = 16 * (h - 4) * (w - 4)
    return models.ModelSpec(
        (
            models.Conv2d(1, 8, 3),
            models.Relu(),
            models.Conv2d(8, 16, 3),
            models.Relu(),
            models.Flatten(),
            models.Linear(flat, classes),
        ),
        models.CROSS_ENTROPY,
    )


def run_seed(seed, n=512, ood=5, epochs=12, lr=0.1, batch=64):
    t0 = time.time()
    ds = datasets.inject_ood(datasets.make_glyph_images(n, seed), ood, seed + 1000)
    spec = cnn_spec(28, 28)
    pairs = [(ds.images[i][None], int(ds.labels[i])) for i in range(ds.n)]
    config = dpsgd.DpSgdConfig(learning_rate=lr, epochs=epochs, batch_size=batch, seed=seed)
    trace = dpsgd.train(spec, pairs, config)
    t_train = time.time() - t0
    t1 = time.time()
    subjects = datasets.image_subjects(ds)
    ranked = plis.rank_subjects(subjects, spec, trace.params)
    t_rank = time.time() - t1
    ood_ids = {s.id for s, flag in zip(subjects, ds.ood_flags) if flag}
    positions = [i for i, e in enumerate(ranked) if e.subject_id in ood_ids]
    decile = len(ranked) // 10
    print(
        f"seed={seed} params={trace.params.count} loss[0]={trace.per_epoch_loss[0]:.4f} "
        f"loss[-1]={trace.per_epoch_loss[-1]:.5f} train={t_train:.0f}s rank={t_rank:.0f}s "
        f"ood_positions={positions} decile={decile} "
        f"pass={'Y' if max(positions) < decile else 'N'}"
    )
    return trace, ds, ranked, positions


if __name__ == "__main__":
    for seed in (0, 1):
        run_seed(seed)
