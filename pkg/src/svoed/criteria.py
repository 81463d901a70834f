"""Monte Carlo design criteria: expected scaling and skewness utilities.

Both global criteria are harmonic means of the local quantities over the
parameter space, which damps the +inf contributions of rank-deficient
samples.  What gets *reported* is the utility form, i.e. the reciprocal of
the harmonic mean, because the reciprocal of a harmonic mean is just the
plain mean of reciprocals: it is always finite, it is what a design search
maximizes, and each rank-deficient sample simply contributes zero.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import (
    RANK_TOL_DEFAULT,
    batch_scaling_reciprocal,
    batch_skewness_reciprocal,
)
from .sampling import JacobianBatch

logger = logging.getLogger(__name__)

HM_MEASURES = ("volume", "initial")


@dataclass
class CriterionReport:
    """Per-design Monte Carlo utilities with their sampling uncertainty.

    ``ese_inverse`` is the mean reciprocal local scaling (>= 0, unbounded
    above); ``esk_inverse`` is the mean reciprocal local skewness, which
    lives in [0, 1] because pointwise skewness is never below one.
    ``infinite_count`` is how many samples were rank deficient and scored
    +inf locally (contributing zero to both means).  ``hm_measure`` records
    which sampling measure the averages were taken under.
    """

    design_id: str
    ese_inverse: float
    esk_inverse: float
    stderr_ese: float
    stderr_esk: float
    sample_count: int
    infinite_count: int
    hm_measure: str = "volume"


def harmonic_mean(values) -> float:
    """Harmonic mean of positive values; +inf entries contribute zero.

    Returns +inf only when every value is +inf.  Zero or negative values
    are rejected: the mean is defined for positive quantities only.
    """
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("harmonic mean of an empty collection")
    if np.any(np.isnan(v)) or np.any(v <= 0.0):
        raise ValueError("harmonic mean requires values > 0 (or +inf)")
    reciprocals = np.where(np.isinf(v), 0.0, 1.0 / v)
    mean_recip = float(reciprocals.mean())
    return 1.0 / mean_recip if mean_recip > 0.0 else np.inf


def _mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def local_reciprocals(
    matrices: np.ndarray, rank_tol: float = RANK_TOL_DEFAULT
) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-sample (1/SE, 1/SK) for a (N, m, n) stack, with exclusions.

    Samples whose matrices contain non-finite entries cannot be scored;
    they are dropped from the returned arrays and counted (and logged)
    rather than aborting the reduction.
    """
    matrices = np.asarray(matrices, dtype=float)
    finite = np.all(np.isfinite(matrices), axis=(1, 2))
    excluded = int(np.sum(~finite))
    if excluded:
        logger.warning("excluding %d samples with non-finite Jacobians", excluded)
        matrices = matrices[finite]
    if matrices.shape[0] == 0:
        raise ValueError("no finite samples to average over")
    scal = batch_scaling_reciprocal(matrices, rank_tol=rank_tol)
    skew = batch_skewness_reciprocal(matrices, rank_tol=rank_tol)
    return scal, skew, excluded


def expected_criteria(
    batch: JacobianBatch,
    rank_tol: float = RANK_TOL_DEFAULT,
    design_id: str | None = None,
    hm_measure: str = "volume",
) -> CriterionReport:
    """Monte Carlo estimate of both utilities for one candidate design."""
    if hm_measure not in HM_MEASURES:
        raise ValueError(f"hm_measure must be one of {HM_MEASURES}")
    scal, skew, _ = local_reciprocals(batch.matrices, rank_tol=rank_tol)
    ese_inverse, stderr_ese = _mean_and_stderr(scal)
    esk_inverse, stderr_esk = _mean_and_stderr(skew)
    if design_id is None:
        design_id = "-".join(str(r) for r in batch.row_indices)
    return CriterionReport(
        design_id=design_id,
        ese_inverse=ese_inverse,
        esk_inverse=esk_inverse,
        stderr_ese=stderr_ese,
        stderr_esk=stderr_esk,
        sample_count=int(scal.size),
        infinite_count=int(np.sum(scal == 0.0)),
        hm_measure=hm_measure,
    )


def report_from_reciprocals(
    design_id: str,
    scaling_reciprocals: np.ndarray,
    skewness_reciprocals: np.ndarray,
    hm_measure: str = "volume",
) -> CriterionReport:
    """Assemble a report from precomputed per-sample reciprocals.

    Used by the design-space sweeps, which evaluate many candidates in one
    vectorized pass and reduce afterwards.
    """
    ese_inverse, stderr_ese = _mean_and_stderr(scaling_reciprocals)
    esk_inverse, stderr_esk = _mean_and_stderr(skewness_reciprocals)
    return CriterionReport(
        design_id=design_id,
        ese_inverse=ese_inverse,
        esk_inverse=esk_inverse,
        stderr_ese=stderr_ese,
        stderr_esk=stderr_esk,
        sample_count=int(scaling_reciprocals.size),
        infinite_count=int(np.sum(scaling_reciprocals == 0.0)),
        hm_measure=hm_measure,
    )


_CSV_FIELDS = (
    "design_id",
    "ese_inverse",
    "esk_inverse",
    "stderr_ese",
    "stderr_esk",
    "sample_count",
    "infinite_count",
    "hm_measure",
)


def reports_to_csv(path, reports, coordinates=None, coordinate_labels=None) -> None:
    """One CSV row per design; optional design coordinates come first.

    ``coordinates`` is an optional sequence (one row per report) of the
    geometric design coordinates, labelled ``coordinate_labels`` or c0, c1,
    ...  Float formatting is fixed so identical inputs give identical files.
    """
    coord_rows = None
    labels: list[str] = []
    if coordinates is not None:
        coord_rows = [np.atleast_1d(np.asarray(c, dtype=float)) for c in coordinates]
        if len(coord_rows) != len(reports):
            raise ValueError("coordinates and reports must have equal length")
        width = coord_rows[0].size
        labels = list(coordinate_labels or (f"c{i}" for i in range(width)))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(labels) + list(_CSV_FIELDS))
        for i, rep in enumerate(reports):
            row = []
            if coord_rows is not None:
                row.extend(f"{v:.17g}" for v in coord_rows[i])
            row.append(rep.design_id)
            row.extend(
                f"{getattr(rep, f):.17g}"
                for f in ("ese_inverse", "esk_inverse", "stderr_ese", "stderr_esk")
            )
            row.extend([str(rep.sample_count), str(rep.infinite_count), rep.hm_measure])
            writer.writerow(row)


def reports_to_json(path, reports) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(rep) for rep in reports], fh, indent=1)
        fh.write("\n")
