"""Data-consistent inversion: density-ratio updates of a parameter ensemble.

Given an observed density on the outputs of a chosen design and an initial
density on the parameters, the updated parameter density is the initial one
reweighted by

    r(lam) = observed(Q(lam)) / predicted(Q(lam)),

where the predicted density is the push-forward of the initial density
through the design map, estimated here with a Gaussian kernel density over
the sampled outputs.  Pushing the updated density back through Q reproduces
the observed density, which is the defining property of the update.

The sample mean of r doubles as a diagnostic: it estimates the integral of
the updated density and should be one.  A mean far from one means the
observed density puts mass where the model cannot predict, i.e. the
predictability assumption behind the construction is violated.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from .sampling import ParameterBox

# Densities below this are treated as underflow: the sample sits where the
# predicted density has no support worth the name.
UNDERFLOW_FLOOR = 1e-300

# |mean ratio - 1| beyond this trips the predictability warning.  Loose on
# purpose: kernel-density bias and Monte Carlo noise live well below it,
# genuine support mismatches far above.
DIAGNOSTIC_TOL = 0.2


class PredictabilityWarning(UserWarning):
    """Observed density is not dominated by the predicted density."""


class Density:
    """Evaluable (and sampleable) probability density on R^d."""

    kind: str = "density"
    dim: int = 0

    def pdf(self, points) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def _points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {pts.shape}")
        return pts


class GaussianDensity(Density):
    kind = "gaussian"

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.mean.size)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        self.cov = cov
        self.dim = self.mean.size
        # Raises on a non-SPD covariance, which is the validation we want.
        self._frozen = scipy.stats.multivariate_normal(mean=self.mean, cov=self.cov)

    def pdf(self, points) -> np.ndarray:
        return np.atleast_1d(self._frozen.pdf(self._points(points)))

    def sample(self, rng, count) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=count)


class UniformBoxDensity(Density):
    kind = "uniform-box"

    def __init__(self, box: ParameterBox):
        self.box = box
        self.dim = box.dim
        self._density = 1.0 / box.volume

    def pdf(self, points) -> np.ndarray:
        pts = self._points(points)
        return np.where(self.box.contains(pts), self._density, 0.0)

    def sample(self, rng, count) -> np.ndarray:
        return rng.uniform(self.box.lower, self.box.upper, size=(count, self.dim))


class KdeDensity(Density):
    """Gaussian-kernel density over samples; strictly positive everywhere."""

    kind = "kde-from-samples"

    def __init__(self, samples, bandwidth_rule="silverman", weights=None):
        pts = np.asarray(samples, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 2:
            raise ValueError("kernel density needs at least 2 samples")
        spread = pts.std(axis=0)
        dead = np.nonzero(spread == 0.0)[0]
        if dead.size:
            raise ValueError(
                f"zero variance in output dimension(s) {dead.tolist()}; "
                "a kernel density cannot be formed there"
            )
        self.dim = pts.shape[1]
        self.samples = pts
        self.bandwidth_rule = bandwidth_rule
        self._kde = scipy.stats.gaussian_kde(pts.T, bw_method=bandwidth_rule, weights=weights)

    def pdf(self, points) -> np.ndarray:
        return np.atleast_1d(self._kde(self._points(points).T))

    def sample(self, rng, count) -> np.ndarray:
        return self._kde.resample(count, seed=rng).T


def push_forward_density(qoi_samples, bandwidth_rule="silverman") -> KdeDensity:
    """Predicted-output density estimated from sampled design outputs."""
    return KdeDensity(qoi_samples, bandwidth_rule=bandwidth_rule)


@dataclass
class WeightedEnsemble:
    """Parameter samples with their density-ratio weights.

    ``mean_ratio`` is the average weight over the retained (non-underflow)
    samples and should sit near one when the observed density is reachable
    by the model.  ``accepted`` is filled in by rejection sampling and marks
    an unweighted draw from the updated density.
    """

    points: np.ndarray
    qoi: np.ndarray
    weights: np.ndarray
    mean_ratio: float
    stderr: float
    excluded: np.ndarray
    accepted: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.weights.size

    @property
    def excluded_count(self) -> int:
        return int(np.sum(self.excluded))

    @property
    def ratio_bound(self) -> float:
        """Largest observed ratio; the constant a rejection sampler divides by."""
        return float(self.weights.max())

    @property
    def acceptance_rate(self) -> float | None:
        if self.accepted is None:
            return None
        return float(np.mean(self.accepted))

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "sample_count": self.count,
            "mean_ratio": self.mean_ratio,
            "stderr": self.stderr,
            "acceptance_rate": self.acceptance_rate,
            "C_estimate": self.ratio_bound,
            "excluded_count": self.excluded_count,
        }


def update_weights(
    qoi_samples,
    observed: Density,
    predicted: Density,
    points=None,
    diagnostic_tol: float = DIAGNOSTIC_TOL,
) -> WeightedEnsemble:
    """Density-ratio weights observed/predicted at each sampled output.

    Samples where the predicted density underflows are excluded (weight
    zero) and counted; they sit outside the predicted support, where the
    ratio is meaningless.  Warns with :class:`PredictabilityWarning` when
    the mean ratio strays from one by more than ``diagnostic_tol``.
    """
    qoi = np.asarray(qoi_samples, dtype=float)
    if qoi.ndim == 1:
        qoi = qoi[:, None]
    pred = np.asarray(predicted.pdf(qoi), dtype=float)
    obs = np.asarray(observed.pdf(qoi), dtype=float)
    excluded = pred < UNDERFLOW_FLOOR
    weights = np.where(excluded, 0.0, obs / np.maximum(pred, UNDERFLOW_FLOOR))
    if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
        raise ValueError("density ratio produced invalid weights")

    kept = weights[~excluded]
    if kept.size == 0:
        raise ValueError("predicted density underflowed at every sample")
    mean_ratio = float(kept.mean())
    stderr = float(kept.std(ddof=1) / np.sqrt(kept.size)) if kept.size > 1 else 0.0
    if abs(mean_ratio - 1.0) > diagnostic_tol:
        warnings.warn(
            f"mean update ratio {mean_ratio:.4g} is far from 1; the observed "
            "density is likely not dominated by the predicted density",
            PredictabilityWarning,
            stacklevel=2,
        )

    if points is None:
        points = qoi
    points = np.asarray(points, dtype=float)
    return WeightedEnsemble(
        points=points,
        qoi=qoi,
        weights=weights,
        mean_ratio=mean_ratio,
        stderr=stderr,
        excluded=excluded,
    )


def rejection_sample(ensemble: WeightedEnsemble, seed: int) -> WeightedEnsemble:
    """Accept sample i with probability weight_i / max weight.

    The accepted subset is an unweighted draw from the updated density.
    """
    bound = ensemble.ratio_bound
    if bound <= 0.0:
        raise ValueError("rejection sampling needs at least one positive weight")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=ensemble.count)
    accepted = u <= ensemble.weights / bound
    return replace(ensemble, accepted=accepted)


def dci_solve(
    model,
    row_indices,
    init: Density,
    observed: Density,
    count: int,
    seed: int,
    bandwidth_rule="silverman",
) -> WeightedEnsemble:
    """End-to-end update for one design: sample, predict, weight, accept.

    Draws ``count`` parameters from ``init``, evaluates the model outputs
    at the design rows, estimates the predicted density by kernel density,
    computes the update weights and runs rejection sampling (with a seed
    derived from ``seed`` so the two random streams stay independent).
    """
    rows = tuple(int(r) for r in row_indices)
    if len(rows) > model.n_params:
        raise ValueError("design arity exceeds parameter dimension")
    rng = np.random.default_rng(seed)
    points = init.sample(rng, count)
    qoi = np.empty((count, len(rows)))
    for i in range(count):
        qoi[i] = model.evaluate(points[i])[list(rows)]
    predicted = push_forward_density(qoi, bandwidth_rule=bandwidth_rule)
    ensemble = update_weights(qoi, observed, predicted, points=points)
    return rejection_sample(ensemble, seed + 1)


def updated_density_grid(
    ensemble: WeightedEnsemble,
    box: ParameterBox,
    shape=(60, 60),
    bandwidth_rule="silverman",
):
    """Weighted kernel density of the updated ensemble on a 2-D grid.

    Returns (x_axis, y_axis, values) with values[i, j] at (x_axis[i],
    y_axis[j]).  Two parameters only; higher-dimensional marginals are out
    of scope here.
    """
    if ensemble.points.shape[1] != 2 or box.dim != 2:
        raise ValueError("density grids are supported for 2 parameters only")
    weights = ensemble.weights
    if np.sum(weights) <= 0.0:
        raise ValueError("cannot form a density from all-zero weights")
    kde = KdeDensity(ensemble.points, bandwidth_rule=bandwidth_rule, weights=weights)
    x = np.linspace(box.lower[0], box.upper[0], shape[0])
    y = np.linspace(box.lower[1], box.upper[1], shape[1])
    xx, yy = np.meshgrid(x, y, indexing="ij")
    values = kde.pdf(np.column_stack([xx.ravel(), yy.ravel()])).reshape(shape)
    return x, y, values


def density_grid_to_csv(path, x, y, values) -> None:
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda_1", "lambda_2", "density"])
        for i, xi in enumerate(x):
            for j, yj in enumerate(y):
                writer.writerow([f"{xi:.17g}", f"{yj:.17g}", f"{values[i, j]:.17g}"])


def ensemble_to_csv(path, ensemble: WeightedEnsemble) -> None:
    """Per-sample record: parameters, outputs, ratio, acceptance flag."""
    n_params = ensemble.points.shape[1]
    n_out = ensemble.qoi.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"lambda_{j + 1}" for j in range(n_params)]
        header += [f"q_{k + 1}" for k in range(n_out)]
        header += ["ratio", "accepted"]
        writer.writerow(header)
        accepted = ensemble.accepted
        for i in range(ensemble.count):
            row = [f"{v:.17g}" for v in ensemble.points[i]]
            row += [f"{v:.17g}" for v in ensemble.qoi[i]]
            row.append(f"{ensemble.weights[i]:.17g}")
            row.append("" if accepted is None else str(int(accepted[i])))
            writer.writerow(row)


def summary_to_json(path, ensemble: WeightedEnsemble) -> None:
    with open(path, "w") as fh:
        json.dump(ensemble.summary(), fh, indent=1)
        fh.write("\n")
