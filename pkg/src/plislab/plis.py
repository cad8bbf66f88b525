"""Per-subject privacy loss, the PLIS matrix, FIM/FIL and JacSens.

The subject-level privacy loss is the squared per-sample parameter
gradient norm over the noise variance (the gradient signal alone in the
non-private setting).  Its Jacobian with respect to the subject's input
is computed by two independent routes that must agree:

  * direct:   double backpropagation of ||g||^2 / sigma^2 through the tape;
  * expanded: (2/sigma^2) * g^T (dg/dx) as a vector-Jacobian product with
    the left factor g detached (the constant cotangent).

The full input Jacobian J = dg/dx needed for the FIM and JacSens is only
materialized for desk-scale models (dimension guard), which is exactly
the cost contrast the PLIS route avoids.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import Tensor, backward, mul, reshape, tslice, tsum, square
from .dpsgd import clip_differentiable
from .errors import ConfigError, DimensionGuardError
from .models import AttachedSample, ModelSpec, ParamSet, attach_sample

MODE_PRIVATE = "private"
MODE_NON_PRIVATE = "non-private"

# largest dimension of any materialized Jacobian/FIM factor (J is p x d,
# the FIM is d x d; both dims must stay desk-scale)
DIMENSION_GUARD = 4096

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's input/label pair, identified for attribution."""

    id: str
    x: np.ndarray
    y: object

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))


@dataclass
class PlisReport:
    subject_id: str
    pl: float
    plis: np.ndarray  # same shape as the subject's input
    subject_plis_norm: float
    mode: str
    sigma: float | None


@dataclass
class FimReport:
    subject_id: str
    fim: np.ndarray  # d x d
    fil_subject: float  # largest singular value of J / sigma
    fil_per_attribute: np.ndarray  # sqrt of the FIM diagonal


@dataclass
class JacSensReport:
    subject_id: str
    jac: np.ndarray  # p x d
    spectral_norm: float
    frobenius_norm: float


def _check_sigma(sigma: float | None) -> None:
    if sigma is not None and not sigma > 0:
        raise ConfigError(f"sigma must be positive when given, got {sigma}")


def _attached_gradient(
    spec: ModelSpec, params: ParamSet, subject: SubjectRecord, clip: float | None
) -> tuple[AttachedSample, Tensor]:
    """Per-sample parameter gradient as a graph tensor (clipped if configured)."""
    sample = attach_sample(spec, params, subject.x, subject.y)
    (g,) = backward(sample.loss, [sample.theta], create_graph=True)
    if clip is not None:
        g = clip_differentiable(g, clip)
    return sample, g


def privacy_loss(
    spec: ModelSpec,
    params: ParamSet,
    subject: SubjectRecord,
    sigma: float | None = None,
    clip: float | None = None,
) -> float:
    """||g||^2 / sigma^2 (gradient signal alone when sigma is None)."""
    _check_sigma(sigma)
    sample = attach_sample(spec, params, subject.x, subject.y)
    g = backward(sample.loss, [sample.theta])[0].data
    if clip is not None:
        g = clip_differentiable(Tensor(g), clip).data
    value = float(g @ g)
    return value / (sigma * sigma) if sigma is not None else value


def plis_direct(
    spec: ModelSpec,
    params: ParamSet,
    subject: SubjectRecord,
    sigma: float | None = None,
    clip: float | None = None,
) -> PlisReport:
    """PLIS by double backpropagation of the privacy loss to the input."""
    _check_sigma(sigma)
    sample, g = _attached_gradient(spec, params, subject, clip)
    pl = tsum(square(g))
    if sigma is not None:
        pl = mul(pl, 1.0 / (sigma * sigma))
    (gx,) = backward(pl, [sample.x])
    return _report(subject, float(pl.data.reshape(())), gx.data, sigma)


def plis_expanded(
    spec: ModelSpec,
    params: ParamSet,
    subject: SubjectRecord,
    sigma: float | None = None,
    clip: float | None = None,
) -> PlisReport:
    """PLIS via the vector-Jacobian expansion with the left factor detached."""
    _check_sigma(sigma)
    sample, g = _attached_gradient(spec, params, subject, clip)
    cotangent = Tensor(g.data.copy())  # detached: the constant left factor
    (gx,) = backward(tsum(mul(g, cotangent)), [sample.x])
    scale = 2.0 / (sigma * sigma) if sigma is not None else 2.0
    pl = float(g.data @ g.data)
    if sigma is not None:
        pl /= sigma * sigma
    return _report(subject, pl, scale * gx.data, sigma)


def _report(subject: SubjectRecord, pl: float, plis: np.ndarray, sigma: float | None) -> PlisReport:
    return PlisReport(
        subject_id=subject.id,
        pl=pl,
        plis=plis,
        subject_plis_norm=float(np.linalg.norm(plis)),
        mode=MODE_NON_PRIVATE if sigma is None else MODE_PRIVATE,
        sigma=sigma,
    )


# --------------------------------------------------------------------------
# input Jacobian of the parameter gradient (FIM / JacSens)
# --------------------------------------------------------------------------


def _guard(p: int, d: int, what: str) -> None:
    if max(p, d) > DIMENSION_GUARD:
        raise DimensionGuardError(
            f"{what} would materialize a {p} x {d} Jacobian; the guard is "
            f"{DIMENSION_GUARD} per dimension. Use the PLIS routes instead: they "
            "only ever backpropagate scalars."
        )


def input_jacobian(spec: ModelSpec, params: ParamSet, subject: SubjectRecord) -> np.ndarray:
    """J = d(grad_theta loss)/dx, materialized column by column (p x d).

    Column j is recovered with one backward pass per input coordinate:
    with s = <g, w> for a dual leaf w, d/dw [ds/dx_j] is exactly J[:, j].
    """
    p = params.count
    d = int(np.prod(subject.x.shape, dtype=np.int64))
    _guard(p, d, "input_jacobian")
    sample = attach_sample(spec, params, subject.x, subject.y)
    (g,) = backward(sample.loss, [sample.theta], create_graph=True)
    w = sample.graph.leaf(np.ones(p))
    s = tsum(mul(g, w))
    (gx,) = backward(s, [sample.x], create_graph=True)
    gx_flat = reshape(gx, (d,))
    jac = np.empty((p, d))
    for j in range(d):
        entry = tslice(gx_flat, (j,))
        jac[:, j] = backward(entry, [w])[0].data
    return jac


def spectral_norm_sq(matrix: np.ndarray) -> float:
    """Largest eigenvalue of M^T M by power iteration (desk-scale sizes)."""
    gram = matrix.T @ matrix
    n = gram.shape[0]
    v = rng.gaussians(0x5EED, n, n)
    norm = np.linalg.norm(v)
    if norm == 0.0 or n == 0:
        return 0.0
    v /= norm
    lam = 0.0
    for _ in range(_POWER_MAX_ITER):
        w = gram @ v
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return 0.0
        v = w / wn
        new_lam = float(v @ (gram @ v))
        if abs(new_lam - lam) <= _POWER_TOL * max(1.0, abs(new_lam)):
            return new_lam
        lam = new_lam
    return lam


def fim_subject(
    spec: ModelSpec, params: ParamSet, subject: SubjectRecord, sigma: float
) -> FimReport:
    """Per-subject Fisher information sub-matrix J^T J / sigma^2."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    jac = input_jacobian(spec, params, subject)
    fim = (jac.T @ jac) / (sigma * sigma)
    fil = np.sqrt(spectral_norm_sq(jac)) / sigma
    diag = np.clip(np.diag(fim), 0.0, None)
    return FimReport(subject.id, fim, fil, np.sqrt(diag))


def jacsens_subject(spec: ModelSpec, params: ParamSet, subject: SubjectRecord) -> JacSensReport:
    """The raw input Jacobian of the parameter gradient with its two norms."""
    jac = input_jacobian(spec, params, subject)
    spectral = np.sqrt(spectral_norm_sq(jac))
    frob = float(np.linalg.norm(jac))
    return JacSensReport(subject.id, jac, spectral, frob)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def superpixel_norm(report: PlisReport, region: tuple[int, int, int, int]) -> float:
    """L2 norm of the PLIS over a (row, col, height, width) rectangle.

    One-dimensional PLIS vectors are treated as a single-row matrix.
    """
    matrix = report.plis
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    elif matrix.ndim == 3 and matrix.shape[0] == 1:
        matrix = matrix[0]
    if matrix.ndim != 2:
        raise ConfigError(f"superpixel_norm expects a 2-d PLIS, got shape {report.plis.shape}")
    r0, c0, h, w = (int(v) for v in region)
    rows, cols = matrix.shape
    if h < 1 or w < 1 or r0 < 0 or c0 < 0 or r0 + h > rows or c0 + w > cols:
        raise ConfigError(f"region {region} out of bounds for PLIS shape {matrix.shape}")
    return float(np.linalg.norm(matrix[r0 : r0 + h, c0 : c0 + w]))


@dataclass(frozen=True)
class RankEntry:
    subject_id: str
    pl: float
    subject_plis_norm: float


def rank_subjects(
    dataset,
    spec: ModelSpec,
    params: ParamSet,
    sigma: float | None = None,
    clip: float | None = None,
    jobs: int = 1,
) -> list[RankEntry]:
    """Subjects ordered by descending PLIS norm (ties broken by id)."""
    subjects = list(dataset)
    if not subjects:
        raise ConfigError("rank_subjects: empty dataset")

    def one(subject: SubjectRecord) -> RankEntry:
        report = plis_direct(spec, params, subject, sigma=sigma, clip=clip)
        return RankEntry(subject.id, report.pl, report.subject_plis_norm)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(one, subjects))
    else:
        entries = [one(s) for s in subjects]
    return sorted(entries, key=lambda e: (-e.subject_plis_norm, e.subject_id))
