"""Design-space search: exhaustive ranking and greedy sequential selection.

A candidate design is a tuple of observable-row indices into a shared field
Jacobian batch, so an entire design space is priced with array slicing and
batched SVDs: no model solves happen here.

The greedy algorithm builds an m-component design one component per round.
The first component maximizes the expected-scaling utility over all scalar
candidates; every later round maximizes the expected-skewness utility of
the current design extended by one more scalar candidate, which rewards the
candidate adding the most non-redundant information.  It stops after m
rounds, or early when no candidate clears the skewness-utility tolerance.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .criteria import CriterionReport, report_from_reciprocals
from .geometry import (
    RANK_TOL_DEFAULT,
    batch_scaling_reciprocal,
    batch_skewness_reciprocal,
)
from .sampling import FieldJacobianBatch, assemble_design_jacobian

UTILITIES = ("ese_inverse", "esk_inverse")

# Candidate-chunk size for the vectorized sweeps; bounds peak memory at
# roughly chunk * N * m * n floats.
_CHUNK = 64


@dataclass
class DesignSpace:
    """Indexed list of candidate designs (tuples of observable-row indices).

    ``index_geometry`` optionally carries one coordinate row per candidate
    (e.g. sensor positions) for reporting; ``symmetric`` records that the
    tuples were canonicalized as unordered (component order is a relabeling
    of the measurement devices, not a different experiment).
    """

    candidates: list[tuple[int, ...]]
    index_geometry: np.ndarray | None = None
    symmetric: bool = False

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("design space must contain at least one candidate")
        arity = len(self.candidates[0])
        if any(len(c) != arity for c in self.candidates):
            raise ValueError("all candidates must have the same arity")
        if self.index_geometry is not None:
            geom = np.atleast_2d(np.asarray(self.index_geometry, dtype=float))
            if geom.shape[0] != len(self.candidates):
                raise ValueError("index_geometry must have one row per candidate")
            self.index_geometry = geom

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def arity(self) -> int:
        return len(self.candidates[0])


def scalar_space(field_size: int, coordinates=None) -> DesignSpace:
    """All single-row designs over a field of ``field_size`` observables."""
    candidates = [(p,) for p in range(field_size)]
    geometry = None
    if coordinates is not None:
        geometry = np.atleast_2d(np.asarray(coordinates, dtype=float))
        if geometry.shape[0] == 1 and field_size > 1:
            geometry = geometry.T
    return DesignSpace(candidates=candidates, index_geometry=geometry)


def pair_space(field_size: int, coordinates=None) -> DesignSpace:
    """All unordered pairs of distinct observables, canonicalized (i > j).

    Ordered pairs would score identically (swapping the two rows permutes
    the matrix rows, which changes no singular value), and the diagonal
    duplicates a row, so only the strict lower triangle is enumerated:
    field_size * (field_size - 1) / 2 candidates.
    """
    candidates = [(i, j) for i in range(field_size) for j in range(i)]
    geometry = None
    if coordinates is not None:
        coords = np.atleast_1d(np.asarray(coordinates, dtype=float))
        if coords.ndim == 1:
            geometry = np.array([(coords[i], coords[j]) for i, j in candidates])
        else:
            geometry = np.array([np.concatenate([coords[i], coords[j]]) for i, j in candidates])
    return DesignSpace(candidates=candidates, index_geometry=geometry, symmetric=True)


def _candidate_reciprocals(batch: FieldJacobianBatch, candidates, rank_tol):
    """Per-candidate arrays of per-sample (1/SE, 1/SK), chunked over candidates."""
    n_samples = batch.count
    cand = np.asarray([list(c) for c in candidates], dtype=np.int64)
    n_cand, arity = cand.shape
    scal = np.empty((n_cand, n_samples))
    skew = np.empty((n_cand, n_samples))
    for start in range(0, n_cand, _CHUNK):
        block = cand[start : start + _CHUNK]
        # (N, C, m, n) -> (C, N, m, n) so each candidate is contiguous.
        stack = batch.jacobians[:, block, :].transpose(1, 0, 2, 3)
        flat = stack.reshape(-1, arity, batch.n_params)
        scal[start : start + block.shape[0]] = batch_scaling_reciprocal(
            flat, rank_tol=rank_tol
        ).reshape(block.shape[0], n_samples)
        skew[start : start + block.shape[0]] = batch_skewness_reciprocal(
            flat, rank_tol=rank_tol
        ).reshape(block.shape[0], n_samples)
    return scal, skew


@dataclass
class ExhaustiveResult:
    """Every candidate's report plus the utility ranking."""

    space: DesignSpace
    reports: list[CriterionReport]  # aligned with space.candidates
    order: np.ndarray  # candidate indices, best first
    utility: str

    @property
    def best_index(self) -> int:
        return int(self.order[0])

    @property
    def best_candidate(self) -> tuple[int, ...]:
        return self.space.candidates[self.best_index]

    @property
    def best_report(self) -> CriterionReport:
        return self.reports[self.best_index]

    def values(self, utility: str | None = None) -> np.ndarray:
        name = utility or self.utility
        return np.array([getattr(r, name) for r in self.reports])


def _rank(values: np.ndarray) -> np.ndarray:
    # Descending by value; ties go to the lowest candidate index, which a
    # stable sort on the negated values provides.
    return np.argsort(-values, kind="stable")


def exhaustive_oed(
    space: DesignSpace,
    batch: FieldJacobianBatch,
    utility: str = "ese_inverse",
    rank_tol: float = RANK_TOL_DEFAULT,
    hm_measure: str = "volume",
) -> ExhaustiveResult:
    """Score every candidate design and rank by the chosen utility."""
    if utility not in UTILITIES:
        raise ValueError(f"utility must be one of {UTILITIES}")
    scal, skew = _candidate_reciprocals(batch, space.candidates, rank_tol)
    reports = [
        report_from_reciprocals(
            "-".join(str(r) for r in c), scal[i], skew[i], hm_measure=hm_measure
        )
        for i, c in enumerate(space.candidates)
    ]
    values = np.array([getattr(r, utility) for r in reports])
    return ExhaustiveResult(space=space, reports=reports, order=_rank(values), utility=utility)


_NEIGHBOR_OFFSETS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: tuple((di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)),
}


def local_maxima(grid, neighborhood: int = 8) -> list[tuple[int, int]]:
    """Grid cells at least as large as every defined neighbor.

    NaN cells are treated as undefined: they are never reported and never
    suppress a neighbor.  On a constant field every defined cell qualifies
    (degenerate but consistent).  Results are sorted by value, descending.
    """
    if neighborhood not in _NEIGHBOR_OFFSETS:
        raise ValueError("neighborhood must be 4 or 8")
    G = np.asarray(grid, dtype=float)
    if G.ndim != 2:
        raise ValueError("expected a 2-D score grid")
    ni, nj = G.shape
    found = []
    for i in range(ni):
        for j in range(nj):
            v = G[i, j]
            if np.isnan(v):
                continue
            ok = True
            for di, dj in _NEIGHBOR_OFFSETS[neighborhood]:
                a, b = i + di, j + dj
                if 0 <= a < ni and 0 <= b < nj and not np.isnan(G[a, b]) and G[a, b] > v:
                    ok = False
                    break
            if ok:
                found.append((i, j))
    found.sort(key=lambda ij: -G[ij])
    return found


def pair_score_grid(space: DesignSpace, values, size: int) -> np.ndarray:
    """Symmetric (size, size) grid of pair-design scores, NaN where undefined.

    Mirrors each unordered pair across the diagonal; the diagonal itself
    (duplicated observables) stays NaN unless a candidate defines it.
    """
    if space.arity != 2:
        raise ValueError("pair_score_grid needs an arity-2 design space")
    values = np.asarray(values, dtype=float)
    grid = np.full((size, size), np.nan)
    for (i, j), v in zip(space.candidates, values):
        grid[i, j] = v
        grid[j, i] = v
    return grid


@dataclass
class GreedyRound:
    """One round of the greedy search over the scalar candidate pool."""

    round_index: int  # 1-based dimension d of the candidate designs
    utility: str  # which utility was maximized this round
    scores: np.ndarray  # one score per scalar candidate
    chosen: int  # argmax candidate index (ties: lowest index)
    chosen_utility: float
    adopted: bool = True  # False for a final round that fell below tol


@dataclass
class GreedyTrace:
    rounds: list[GreedyRound] = field(default_factory=list)
    selected: tuple[int, ...] = ()
    stop_reason: str = ""
    tol: float = 0.0


def greedy_oed(
    space: DesignSpace,
    batch: FieldJacobianBatch,
    m_target: int,
    tol: float = 1e-3,
    rank_tol: float = RANK_TOL_DEFAULT,
) -> GreedyTrace:
    """Greedy component-by-component design over a scalar candidate pool.

    The candidate pool is the full scalar space every round; already-chosen
    rows need not be removed because re-adding one duplicates a row and
    scores exactly zero.  A round whose best skewness utility falls below
    ``tol`` is recorded for inspection but its component is not adopted:
    nothing on offer adds enough non-redundant information.
    """
    if space.arity != 1:
        raise ValueError("greedy_oed needs a scalar (arity-1) design space")
    if m_target < 1:
        raise ValueError("m_target must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m_target > batch.n_params:
        warnings.warn(
            f"m_target={m_target} exceeds the parameter dimension {batch.n_params}; "
            "every design beyond that dimension is rank deficient, so the run "
            "will stop early on the tolerance",
            stacklevel=2,
        )

    rows = np.asarray([c[0] for c in space.candidates], dtype=np.int64)
    trace = GreedyTrace(tol=tol)
    selected: list[int] = []

    for d in range(1, m_target + 1):
        if d == 1:
            stack = batch.jacobians[:, rows, :].transpose(1, 0, 2)[:, :, None, :]
            flat = stack.reshape(-1, 1, batch.n_params)
            scores = batch_scaling_reciprocal(flat, rank_tol=rank_tol)
            utility = "ese_inverse"
        elif d > batch.n_params:
            # More rows than parameters cannot be full rank; skip the SVDs.
            scores = np.zeros(rows.size * batch.count)
            utility = "esk_inverse"
        else:
            candidates = [tuple(selected) + (int(p),) for p in rows]
            _, skew = _candidate_reciprocals(batch, candidates, rank_tol)
            scores = skew
            utility = "esk_inverse"
        per_candidate = scores.reshape(rows.size, batch.count).mean(axis=1)
        best = int(_rank(per_candidate)[0])
        best_value = float(per_candidate[best])

        adopt = d == 1 or best_value >= tol or d == m_target
        trace.rounds.append(
            GreedyRound(
                round_index=d,
                utility=utility,
                scores=per_candidate,
                chosen=best,
                chosen_utility=best_value,
                adopted=adopt,
            )
        )
        if not adopt:
            trace.stop_reason = "below_tol"
            break
        selected.append(int(rows[best]))
        if d == m_target:
            trace.stop_reason = "reached_m"

    trace.selected = tuple(selected)
    return trace


def trace_to_json(trace: GreedyTrace, path, coordinates=None) -> None:
    """Full greedy record: per-round score tables, choices, stop cause.

    ``coordinates`` optionally maps scalar-candidate indices to geometric
    positions so the trace is plottable without the originating batch.
    """
    doc = {
        "schema_version": 1,
        "tol": trace.tol,
        "stop_reason": trace.stop_reason,
        "selected": list(trace.selected),
        "rounds": [
            {
                "round": r.round_index,
                "utility": r.utility,
                "chosen": r.chosen,
                "chosen_utility": r.chosen_utility,
                "adopted": r.adopted,
                "scores": [float(s) for s in r.scores],
            }
            for r in trace.rounds
        ],
    }
    if coordinates is not None:
        doc["candidate_coordinates"] = np.asarray(coordinates, dtype=float).tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def ranking_to_csv(path, result: ExhaustiveResult) -> None:
    """Ranked exhaustive results, best candidate first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        geom = result.space.index_geometry
        width = 0 if geom is None else geom.shape[1]
        header = ["rank", "design_id"] + [f"c{i}" for i in range(width)]
        header += ["ese_inverse", "esk_inverse", "stderr_ese", "stderr_esk", "infinite_count"]
        writer.writerow(header)
        for rank, idx in enumerate(result.order):
            rep = result.reports[idx]
            row = [str(rank), rep.design_id]
            if geom is not None:
                row.extend(f"{v:.17g}" for v in geom[idx])
            row.extend(
                f"{getattr(rep, f):.17g}"
                for f in ("ese_inverse", "esk_inverse", "stderr_ese", "stderr_esk")
            )
            row.append(str(rep.infinite_count))
            writer.writerow(row)
