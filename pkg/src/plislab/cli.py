"""Command-line surface: training runs, analyses, attacks and reports.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every file is
written atomically (temp + rename) and CSV floats use shortest
round-trip repr, so identical flags and seeds give byte-identical
outputs.  PLIS_LOG={quiet|info|debug} controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import accounting, attack as attack_mod, datasets, dpsgd, models, plis
from .errors import PlisLabError
from .imagemetrics import psnr, ssim

log = logging.getLogger("plislab.cli")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 for usage problems, not argparse's 2
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# --------------------------------------------------------------------------
# atomic output helpers
# --------------------------------------------------------------------------


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _atomic_write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _csv_text(header: list[str], rows: list[list]) -> str:
    def cell(v) -> str:
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def emit_heatmap(matrix, base_path: str) -> None:
    """Write <base>.csv (raw values) and <base>.pgm (min-max normalized P5)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise PlisLabError(f"emit_heatmap expects a 2-d matrix, got shape {matrix.shape}")
    rows = [",".join(repr(float(v)) for v in row) for row in matrix]
    _atomic_write_text(base_path + ".csv", "\n".join(rows) + "\n")
    h, w = matrix.shape
    lo, hi = float(matrix.min()), float(matrix.max())
    if hi == lo:
        pixels = np.full(matrix.shape, 128, dtype=np.uint8)
    else:
        pixels = np.floor(255.0 * (matrix - lo) / (hi - lo) + 0.5).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write_bytes(base_path + ".pgm", header + pixels.tobytes())


def read_heatmap_csv(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return np.asarray(
            [[float(v) for v in line.split(",")] for line in fh.read().splitlines() if line]
        )


# --------------------------------------------------------------------------
# shared loading
# --------------------------------------------------------------------------


def _load_any_dataset(path: str):
    """(kind, payload): the PLDS magic selects images, anything else is CSV."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == datasets.PLDS_MAGIC:
        return "images", datasets.load_images(path)
    x, y = datasets.load_regression_csv(path)
    return "tabular", (x, y)


def _subjects_for(kind: str, payload):
    if kind == "images":
        return datasets.image_subjects(payload)
    x, y = payload
    return datasets.tabular_subjects(x, y)


def _build_spec(arch: str, kind: str, payload) -> models.ModelSpec:
    if arch == "auto":
        arch = "cnn" if kind == "images" else "linear"
    if kind == "images":
        ds = payload
        h, w = ds.images.shape[1:]
        if arch == "cnn":
            flat = 16 * (h - 4) * (w - 4)
            return models.ModelSpec(
                (
                    models.Conv2d(1, 8, 3),
                    models.Relu(),
                    models.Conv2d(8, 16, 3),
                    models.Relu(),
                    models.Flatten(),
                    models.Linear(flat, ds.classes),
                ),
                models.CROSS_ENTROPY,
            )
        if arch == "mlp":
            return models.ModelSpec(
                (
                    models.Flatten(),
                    models.Linear(h * w, 32),
                    models.Relu(),
                    models.Linear(32, ds.classes),
                ),
                models.CROSS_ENTROPY,
            )
        raise PlisLabError(f"architecture {arch!r} does not apply to image data")
    x, _ = payload
    d = x.shape[1]
    if arch == "linear":
        return models.ModelSpec((models.Linear(d, 1, bias=False),), models.MSE)
    if arch == "mlp":
        return models.ModelSpec(
            (models.Linear(d, 16), models.Tanh(), models.Linear(16, 1)), models.MSE
        )
    raise PlisLabError(f"architecture {arch!r} does not apply to tabular data")


def _dataset_pairs(kind: str, payload):
    if kind == "images":
        ds = payload
        return [(ds.images[i][None, :, :], int(ds.labels[i])) for i in range(ds.n)]
    x, y = payload
    return [(x[i], np.array([y[i]])) for i in range(len(y))]


def _parallel_map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    tmp = f"{args.out}.tmp.{os.getpid()}"
    if args.kind == "images":
        ds = datasets.make_glyph_images(args.n, args.seed, args.height, args.width)
        if args.ood:
            ds = datasets.inject_ood(ds, args.ood, args.seed)
        datasets.write_plds(ds, tmp)
        log.info("wrote %d images (%d OOD) to %s", ds.n, int(ds.ood_flags.sum()), args.out)
    else:
        informative = {int(tok) for tok in args.informative.split(",") if tok.strip() != ""}
        ds = datasets.make_regression(args.n, args.d, informative, args.noise_sd, args.seed)
        datasets.save_regression_csv(ds, tmp)
        log.info("wrote %d rows x %d features to %s", ds.n, ds.d, args.out)
    os.replace(tmp, args.out)
    return 0


def _cmd_train(args) -> int:
    config = dpsgd.load_config(args.config)
    kind, payload = _load_any_dataset(args.data)
    spec = _build_spec(args.arch, kind, payload)
    pairs = _dataset_pairs(kind, payload)
    trace = dpsgd.train(spec, pairs, config)
    tmp = args.out + ".tmp.train"
    models.save_checkpoint(tmp, spec, trace.params)
    os.replace(tmp, args.out)
    log.info(
        "trained %d epochs, final loss %.6g%s",
        config.epochs,
        trace.per_epoch_loss[-1] if trace.per_epoch_loss else math.nan,
        f", epsilon {trace.final_epsilon:.4g}" if trace.final_epsilon is not None else "",
    )
    if args.trace_out:
        rows = [[step, loss, eps] for step, loss, eps in trace.step_records]
        _atomic_write_text(args.trace_out, _csv_text(["step", "loss", "epsilon_so_far"], rows))
    if args.accountant_out:
        if trace.accountant is None:
            raise PlisLabError("--accountant-out needs a private training run")
        tmp = args.accountant_out + ".tmp.acct"
        accounting.write_report(trace.accountant, config.target_delta, tmp)
        os.replace(tmp, args.accountant_out)
    return 0


def _heatmap_matrix(plis_values: np.ndarray) -> np.ndarray:
    if plis_values.ndim == 3 and plis_values.shape[0] == 1:
        return plis_values[0]
    if plis_values.ndim == 1:
        return plis_values[None, :]
    if plis_values.ndim == 2:
        return plis_values
    raise PlisLabError(f"cannot render heatmap for PLIS shape {plis_values.shape}")


def _cmd_analyze_plis(args) -> int:
    spec, params = models.load_checkpoint(args.model)
    kind, payload = _load_any_dataset(args.data)
    subjects = _subjects_for(kind, payload)
    os.makedirs(args.out, exist_ok=True)

    def analyze(subject):
        report = plis.plis_direct(spec, params, subject, sigma=args.sigma, clip=args.clip)
        deviation = 0.0
        if args.compare_expanded:
            other = plis.plis_expanded(spec, params, subject, sigma=args.sigma, clip=args.clip)
            scale = np.abs(report.plis).max() + 1e-300
            deviation = float(np.abs(report.plis - other.plis).max() / scale)
        return report, deviation

    results = _parallel_map(analyze, subjects, args.jobs)
    rows = []
    for report, _ in results:
        rows.append(
            [
                report.subject_id,
                report.pl,
                report.subject_plis_norm,
                report.mode,
                "" if report.sigma is None else repr(float(report.sigma)),
            ]
        )
        emit_heatmap(
            _heatmap_matrix(report.plis), os.path.join(args.out, f"plis_{report.subject_id}")
        )
    _atomic_write_text(
        os.path.join(args.out, "plis_report.csv"),
        _csv_text(["subject_id", "pl", "plis_norm", "mode", "sigma"], rows),
    )
    if args.compare_expanded:
        worst = max(dev for _, dev in results)
        print(f"max relative deviation between direct and expanded PLIS: {worst:.3e}")
        if worst > 1e-8:
            raise PlisLabError(
                f"PLIS direct/expanded disagreement {worst:.3e} exceeds 1e-8"
            )
    log.info("analyzed %d subjects into %s", len(subjects), args.out)
    return 0


def _cmd_analyze_fil(args) -> int:
    spec, params = models.load_checkpoint(args.model)
    kind, payload = _load_any_dataset(args.data)
    subjects = _subjects_for(kind, payload)
    os.makedirs(args.out, exist_ok=True)
    reports = _parallel_map(
        lambda s: plis.fim_subject(spec, params, s, sigma=args.sigma), subjects, args.jobs
    )
    d = reports[0].fil_per_attribute.size
    header = ["subject_id", "fil_subject"] + [f"a{j}" for j in range(d)]
    rows = [
        [r.subject_id, r.fil_subject] + [float(v) for v in r.fil_per_attribute]
        for r in reports
    ]
    _atomic_write_text(os.path.join(args.out, "fil_report.csv"), _csv_text(header, rows))
    log.info("FIL for %d subjects into %s", len(subjects), args.out)
    return 0


def _cmd_analyze_jacsens(args) -> int:
    spec, params = models.load_checkpoint(args.model)
    kind, payload = _load_any_dataset(args.data)
    subjects = _subjects_for(kind, payload)
    os.makedirs(args.out, exist_ok=True)
    reports = _parallel_map(
        lambda s: plis.jacsens_subject(spec, params, s), subjects, args.jobs
    )
    rows = [[r.subject_id, r.spectral_norm, r.frobenius_norm] for r in reports]
    _atomic_write_text(
        os.path.join(args.out, "jacsens_report.csv"),
        _csv_text(["subject_id", "spectral_norm", "frobenius_norm"], rows),
    )
    return 0


def _cmd_rank(args) -> int:
    spec, params = models.load_checkpoint(args.model)
    kind, payload = _load_any_dataset(args.data)
    subjects = _subjects_for(kind, payload)
    entries = plis.rank_subjects(
        subjects, spec, params, sigma=args.sigma, clip=args.clip, jobs=args.jobs
    )
    rows = [[e.subject_id, e.pl, e.subject_plis_norm] for e in entries]
    _atomic_write_text(args.out, _csv_text(["subject_id", "pl", "plis_norm"], rows))
    return 0


def _cmd_attack(args) -> int:
    spec, params = models.load_checkpoint(args.model)
    kind, payload = _load_any_dataset(args.data)
    subjects = {s.id: s for s in _subjects_for(kind, payload)}
    if args.subject not in subjects:
        raise PlisLabError(f"subject {args.subject!r} not present in {args.data}")
    subject = subjects[args.subject]
    dp = None
    if args.dp_sigma is not None or args.dp_clip is not None:
        if args.dp_clip is None or args.dp_sigma is None:
            raise PlisLabError("--dp-clip and --dp-sigma must be given together")
        dp = attack_mod.DpRelease(args.dp_clip, args.dp_sigma, args.dp_seed)
    observed = attack_mod.observe_gradient(spec, params, subject, dp=dp)
    config = attack_mod.AttackConfig(
        iterations=args.iterations,
        learning_rate=args.lr,
        restarts=args.restarts,
        seed=args.seed,
        tv_weight=args.tv,
        match_loss=args.match,
        monotone=args.monotone,
    )
    result = attack_mod.reconstruct(
        spec, params, observed, subject.y, config, input_shape=subject.x.shape
    )
    os.makedirs(args.out, exist_ok=True)
    emit_heatmap(_heatmap_matrix(result.reconstruction), os.path.join(args.out, "reconstruction"))
    trace = result.traces[result.best_restart]
    _atomic_write_text(
        os.path.join(args.out, "trace.csv"),
        _csv_text(["iteration", "match_loss"], [[i, v] for i, v in enumerate(trace)]),
    )
    if kind == "images":
        original = subject.x[0]
        recon = _heatmap_matrix(result.reconstruction)
        rows = [[ssim(original, recon), psnr(original, recon)]]
        _atomic_write_text(os.path.join(args.out, "metrics.csv"), _csv_text(["ssim", "psnr"], rows))
    log.info("attack finished: best restart %d, match loss %.4g", result.best_restart, result.match_loss)
    return 0


# --------------------------------------------------------------------------
# argument wiring
# --------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="plislab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="generate a dataset file")
    gen.add_argument("--kind", choices=["images", "regression"], required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--height", type=int, default=28)
    gen.add_argument("--width", type=int, default=28)
    gen.add_argument("--ood", type=int, default=0, help="OOD samples to inject (images)")
    gen.add_argument("--d", type=int, default=16, help="feature count (regression)")
    gen.add_argument("--informative", default="9", help="comma list of informative columns")
    gen.add_argument("--noise-sd", type=float, default=0.1)
    gen.set_defaults(func=_cmd_gen_data)

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True, help="checkpoint path (.plck)")
    train.add_argument("--arch", choices=["auto", "linear", "mlp", "cnn"], default="auto")
    train.add_argument("--trace-out", default=None, help="per-step CSV trace")
    train.add_argument("--accountant-out", default=None, help="accountant CSV report")
    train.set_defaults(func=_cmd_train)

    def analysis_args(p, sigma_required=False):
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--jobs", type=int, default=1)
        if sigma_required:
            p.add_argument("--sigma", type=float, required=True)
        else:
            p.add_argument("--sigma", type=float, default=None)

    ap = sub.add_parser("analyze-plis", help="per-subject PLIS reports and heatmaps")
    analysis_args(ap)
    ap.add_argument("--clip", type=float, default=None, help="DP-mode clipped-gradient PLIS")
    ap.add_argument("--compare-expanded", action="store_true")
    ap.set_defaults(func=_cmd_analyze_plis)

    af = sub.add_parser("analyze-fil", help="per-subject Fisher information loss")
    analysis_args(af, sigma_required=True)
    af.set_defaults(func=_cmd_analyze_fil)

    aj = sub.add_parser("analyze-jacsens", help="per-subject gradient Jacobian norms")
    analysis_args(aj)
    aj.set_defaults(func=_cmd_analyze_jacsens)

    rank = sub.add_parser("rank", help="subjects ordered by PLIS norm")
    rank.add_argument("--model", required=True)
    rank.add_argument("--data", required=True)
    rank.add_argument("--out", required=True)
    rank.add_argument("--sigma", type=float, default=None)
    rank.add_argument("--clip", type=float, default=None)
    rank.add_argument("--jobs", type=int, default=1)
    rank.set_defaults(func=_cmd_rank)

    atk = sub.add_parser("attack", help="gradient-inversion reconstruction")
    atk.add_argument("--model", required=True)
    atk.add_argument("--data", required=True)
    atk.add_argument("--subject", required=True)
    atk.add_argument("--out", required=True)
    atk.add_argument("--iterations", type=int, default=300)
    atk.add_argument("--lr", type=float, default=0.1)
    atk.add_argument("--restarts", type=int, default=2)
    atk.add_argument("--seed", type=int, default=0)
    atk.add_argument("--tv", type=float, default=1e-3)
    atk.add_argument("--match", choices=["cosine", "l2"], default="cosine")
    atk.add_argument("--monotone", action="store_true")
    atk.add_argument("--dp-clip", type=float, default=None)
    atk.add_argument("--dp-sigma", type=float, default=None)
    atk.add_argument("--dp-seed", type=int, default=0)
    atk.set_defaults(func=_cmd_attack)

    return parser


_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("PLIS_LOG", "info").lower()
    if level not in _LOG_LEVELS:
        level = "info"
    logging.basicConfig(
        level=_LOG_LEVELS[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def run(argv) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse exits itself for --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (PlisLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
