"""Parameter sampling and finite-difference field Jacobians.

The expensive object in a design study is the *field* Jacobian batch: for N
parameter samples, the model output at every observable location together
with its forward-difference derivative with respect to every parameter.
Candidate designs are then priced by selecting rows out of this batch, so
the model is solved N * (n + 1) times total, not once per design.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

BATCH_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of admissible parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lower[i] < upper[i] for every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)


@dataclass
class SampleSet:
    """Parameter points plus the recipe that produced them."""

    points: np.ndarray  # (N, n)
    seed: int
    scheme: str = "uniform-random"

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def draw_samples(box: ParameterBox, count: int, seed: int) -> SampleSet:
    """Reproducible uniform samples in the box; same seed, same points."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    points = rng.uniform(box.lower, box.upper, size=(count, box.dim))
    return SampleSet(points=points, seed=seed, scheme="uniform-random")


def grid_samples(box: ParameterBox, per_axis: int) -> SampleSet:
    """Tensor grid of points, per_axis along each axis, corners included."""
    if per_axis < 2:
        raise ValueError("per_axis must be at least 2")
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return SampleSet(points=points, seed=0, scheme="tensor-grid")


class ModelEvaluationError(RuntimeError):
    """Forward model failed at a specific sample."""

    def __init__(self, sample_index: int, parameters, cause: str):
        self.sample_index = sample_index
        self.parameters = np.asarray(parameters, dtype=float)
        super().__init__(
            f"model evaluation failed at sample {sample_index}, "
            f"parameters {self.parameters.tolist()}: {cause}"
        )


@dataclass
class FieldJacobianBatch:
    """Outputs and forward-difference Jacobians at every observable location.

    ``outputs`` is (N, P) and ``jacobians`` is (N, P, n) where P is the
    number of observable field values (e.g. mesh nodes at the final time).
    """

    samples: SampleSet
    outputs: np.ndarray
    jacobians: np.ndarray
    fd_step: float
    model_id: str

    @property
    def count(self) -> int:
        return self.outputs.shape[0]

    @property
    def field_size(self) -> int:
        return self.outputs.shape[1]

    @property
    def n_params(self) -> int:
        return self.jacobians.shape[2]


@dataclass
class JacobianBatch:
    """Per-sample m x n design Jacobians for one candidate design."""

    matrices: np.ndarray  # (N, m, n)
    row_indices: tuple[int, ...]
    model_id: str = ""

    @property
    def count(self) -> int:
        return self.matrices.shape[0]

    @property
    def arity(self) -> int:
        return self.matrices.shape[1]


def _evaluate_checked(model, index, lam):
    try:
        out = np.asarray(model.evaluate(lam), dtype=float)
    except Exception as exc:  # propagate with the offending sample attached
        raise ModelEvaluationError(index, lam, repr(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError(index, lam, "model returned non-finite values")
    return out


def estimate_field_jacobians(
    model,
    samples: SampleSet,
    fd_step: float = 1e-5,
    workers: int | None = None,
) -> FieldJacobianBatch:
    """Forward-difference Jacobians of the full observable field.

    Uses one-sided differences with absolute step ``fd_step``: the base
    evaluation at each sample is shared across all n perturbations, so the
    model runs exactly n + 1 times per sample.  Samples are independent;
    ``workers`` > 1 evaluates them on a thread pool (the model must be safe
    to call concurrently), and results are assembled by sample index so the
    batch is identical regardless of completion order.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    points = samples.points
    n_samples, n_params = points.shape

    def one_sample(i):
        lam = points[i]
        base = _evaluate_checked(model, i, lam)
        jac = np.empty((base.size, n_params))
        for j in range(n_params):
            bumped = lam.copy()
            bumped[j] += fd_step
            jac[:, j] = (_evaluate_checked(model, i, bumped) - base) / fd_step
        return base, jac

    if workers is None or workers <= 1:
        results = [one_sample(i) for i in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_sample, range(n_samples)))

    outputs = np.stack([r[0] for r in results])
    jacobians = np.stack([r[1] for r in results])
    return FieldJacobianBatch(
        samples=samples,
        outputs=outputs,
        jacobians=jacobians,
        fd_step=fd_step,
        model_id=getattr(model, "model_id", type(model).__name__),
    )


def assemble_design_jacobian(batch: FieldJacobianBatch, row_indices) -> JacobianBatch:
    """Per-sample design Jacobians by row selection; no model solves.

    Duplicate indices are legal and produce rank-deficient designs on
    purpose (they score zero utility downstream).
    """
    rows = tuple(int(r) for r in row_indices)
    if len(rows) == 0:
        raise ValueError("need at least one row index")
    if any(r < 0 or r >= batch.field_size for r in rows):
        raise ValueError(f"row indices {rows} out of range for field size {batch.field_size}")
    if len(rows) > batch.n_params:
        raise ValueError(
            f"design arity {len(rows)} exceeds parameter dimension {batch.n_params}; "
            "criteria require m <= n"
        )
    matrices = batch.jacobians[:, rows, :]
    return JacobianBatch(matrices=matrices, row_indices=rows, model_id=batch.model_id)


def save_batch(batch: FieldJacobianBatch, path) -> None:
    """Persist a batch so criterion sweeps can re-run without model solves."""
    header = {
        "schema_version": BATCH_SCHEMA_VERSION,
        "model_id": batch.model_id,
        "seed": batch.samples.seed,
        "scheme": batch.samples.scheme,
        "fd_step": batch.fd_step,
        "N": batch.count,
        "P": batch.field_size,
        "n": batch.n_params,
    }
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header)),
        points=batch.samples.points,
        outputs=batch.outputs,
        jacobians=batch.jacobians,
    )


def load_batch(path) -> FieldJacobianBatch:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        points = data["points"]
        outputs = data["outputs"]
        jacobians = data["jacobians"]
    if header.get("schema_version") != BATCH_SCHEMA_VERSION:
        raise ValueError(f"unsupported batch schema: {header.get('schema_version')}")
    samples = SampleSet(points=points, seed=int(header["seed"]), scheme=header["scheme"])
    return FieldJacobianBatch(
        samples=samples,
        outputs=outputs,
        jacobians=jacobians,
        fd_step=float(header["fd_step"]),
        model_id=header["model_id"],
    )


def samples_to_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"lambda_{j + 1}" for j in range(samples.dim)])
        for row in samples.points:
            writer.writerow([f"{v:.17g}" for v in row])
