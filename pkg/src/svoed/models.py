"""Forward models: welded-rod and welded-plate transient heat conduction,
plus analytic synthetic maps used as test fixtures.

Both heat models solve

    rho * c * du/dt = div(kappa * grad u) + S,   insulated boundary,
    u = 0 at t = 0,

with a fixed Gaussian source centred in the domain and a piecewise-constant
conductivity field whose pieces are the uncertain parameters.  ``evaluate``
returns the nodal temperatures at the final time; observation "sensors" are
mesh nodes, indexed by position through ``coordinates``.

Discretization: piecewise (bi)linear finite elements on a uniform mesh and
implicit-midpoint time stepping,

    (M + dt/2 K) u_next = (M - dt/2 K) u + dt b.

Material interfaces are aligned with element boundaries, so each element has
a single conductivity and the stiffness matrix splits as
K(lambda) = sum_r lambda_r * K_r with the unit-conductivity region matrices
K_r assembled once per mesh.  Only the factorization of (M + dt/2 K) depends
on lambda; M, K_r and the load vector are shared across evaluations, which
is what makes tens of thousands of solves per design study affordable.
"""

from __future__ import annotations

import csv

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .sampling import ParameterBox

# Inverse-square-root of 3: offsets of the two-point Gauss rule on (0, 1).
_GAUSS_PTS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class ForwardModel:
    """Deterministic map from parameters to an observable field.

    Subclasses set ``model_id``, ``n_params``, ``field_size`` and
    ``coordinates`` (one coordinate row per field value) and implement
    ``evaluate``.  Instances are immutable after construction and safe to
    evaluate concurrently at distinct parameter points.
    """

    model_id: str = "forward-model"
    n_params: int = 0
    field_size: int = 0
    coordinates: np.ndarray
    parameter_box: ParameterBox

    def evaluate(self, lam) -> np.ndarray:
        raise NotImplementedError

    def nearest_field_index(self, coordinate) -> int:
        """Index of the observable location closest to ``coordinate``."""
        coords = np.atleast_2d(self.coordinates.astype(float))
        if coords.shape[0] == 1:
            coords = coords.T
        target = np.atleast_1d(np.asarray(coordinate, dtype=float))
        return int(np.argmin(np.linalg.norm(coords - target, axis=1)))


def _check_conductivities(lam, n_params):
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (n_params,):
        raise ValueError(f"expected {n_params} conductivities, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        raise ValueError("conductivities must be finite and positive")
    return lam


class HeatRod1D(ForwardModel):
    """Unit rod welded from two halves, heated at the middle.

    Parameters are the conductivities of the left (x < 0.5) and right
    (x >= 0.5) halves; the element count must be even so a node sits
    exactly on the weld.
    """

    def __init__(
        self,
        elements: int = 40,
        time_steps: int = 20,
        t_final: float = 1.0,
        density: float = 1.5,
        heat_capacity: float = 1.5,
        source_amplitude: float = 50.0,
        source_width: float = 0.05,
    ):
        if elements < 2 or elements % 2:
            raise ValueError("elements must be even and >= 2 so a node sits on the weld")
        if time_steps < 1 or t_final <= 0:
            raise ValueError("need time_steps >= 1 and t_final > 0")
        if density <= 0 or heat_capacity <= 0:
            raise ValueError("density and heat capacity must be positive")

        self.model_id = f"heat-rod-1d-e{elements}-s{time_steps}"
        self.n_params = 2
        self.elements = elements
        self.time_steps = time_steps
        self.t_final = float(t_final)
        self.dt = self.t_final / time_steps
        self.parameter_box = ParameterBox([0.01, 0.01], [0.2, 0.2])

        nodes = np.linspace(0.0, 1.0, elements + 1)
        self.coordinates = nodes
        self.field_size = nodes.size
        h = 1.0 / elements

        rho_c = density * heat_capacity
        mass = np.zeros((self.field_size, self.field_size))
        stiff = [np.zeros_like(mass), np.zeros_like(mass)]
        load = np.zeros(self.field_size)

        m_local = rho_c * h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        k_local = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])

        def source(x):
            return source_amplitude * np.exp(-((0.5 - x) ** 2) / source_width)

        for e in range(elements):
            idx = [e, e + 1]
            region = 0 if 0.5 * (nodes[e] + nodes[e + 1]) < 0.5 else 1
            mass[np.ix_(idx, idx)] += m_local
            stiff[region][np.ix_(idx, idx)] += k_local
            for t in _GAUSS_PTS:
                x = nodes[e] + t * h
                w = 0.5 * h
                load[e] += w * source(x) * (1.0 - t)
                load[e + 1] += w * source(x) * t

        self._mass = mass
        self._stiff_regions = stiff
        self._load = load

    def evaluate(self, lam) -> np.ndarray:
        lam = _check_conductivities(lam, self.n_params)
        K = lam[0] * self._stiff_regions[0] + lam[1] * self._stiff_regions[1]
        A = self._mass + 0.5 * self.dt * K
        B = self._mass - 0.5 * self.dt * K
        factor = scipy.linalg.cho_factor(A)
        u = np.zeros(self.field_size)
        forcing = self.dt * self._load
        for _ in range(self.time_steps):
            u = scipy.linalg.cho_solve(factor, B @ u + forcing)
        return u

    def total_heat(self, u) -> float:
        """Discrete total heat content integral(rho c u); grows linearly in
        time under insulated boundaries."""
        return float(np.sum(self._mass @ np.asarray(u, dtype=float)))

    def source_integral(self) -> float:
        return float(np.sum(self._load))


class HeatPlate2D(ForwardModel):
    """Unit plate welded from nine square plates in a 3 x 3 layout.

    Parameters are the nine plate conductivities, numbered row-major from
    the bottom-left plate.  ``elements_per_axis`` must be a multiple of 3
    so the plate seams align with element boundaries.  Nodes are indexed
    row-major by y then x; ``coordinates`` is (P, 2).
    """

    def __init__(
        self,
        elements_per_axis: int = 30,
        time_steps: int = 40,
        t_final: float = 2.0,
        density: float = 1.5,
        heat_capacity: float = 1.5,
        source_amplitude: float = 50.0,
        source_width: float = 0.05,
    ):
        if elements_per_axis < 3 or elements_per_axis % 3:
            raise ValueError("elements_per_axis must be a positive multiple of 3")
        if time_steps < 1 or t_final <= 0:
            raise ValueError("need time_steps >= 1 and t_final > 0")
        if density <= 0 or heat_capacity <= 0:
            raise ValueError("density and heat capacity must be positive")

        self.model_id = f"heat-plate-2d-e{elements_per_axis}-s{time_steps}"
        self.n_params = 9
        self.elements_per_axis = elements_per_axis
        self.time_steps = time_steps
        self.t_final = float(t_final)
        self.dt = self.t_final / time_steps
        self.parameter_box = ParameterBox([0.01] * 9, [0.2] * 9)

        n_axis = elements_per_axis + 1
        axis = np.linspace(0.0, 1.0, n_axis)
        xx, yy = np.meshgrid(axis, axis, indexing="xy")  # row-major by y
        self.coordinates = np.column_stack([xx.ravel(), yy.ravel()])
        self.field_size = n_axis * n_axis
        h = 1.0 / elements_per_axis

        rho_c = density * heat_capacity
        # Bilinear square element, nodes counterclockwise (00, 10, 11, 01).
        k_local = (1.0 / 6.0) * np.array(
            [
                [4.0, -1.0, -2.0, -1.0],
                [-1.0, 4.0, -1.0, -2.0],
                [-2.0, -1.0, 4.0, -1.0],
                [-1.0, -2.0, -1.0, 4.0],
            ]
        )
        m_local = (rho_c * h * h / 36.0) * np.array(
            [
                [4.0, 2.0, 1.0, 2.0],
                [2.0, 4.0, 2.0, 1.0],
                [1.0, 2.0, 4.0, 2.0],
                [2.0, 1.0, 2.0, 4.0],
            ]
        )

        def source(x, y):
            return source_amplitude * np.exp(-((0.5 - x) ** 2 + (0.5 - y) ** 2) / source_width)

        n_elems = elements_per_axis * elements_per_axis
        rows = np.empty(16 * n_elems, dtype=np.int64)
        cols = np.empty_like(rows)
        mass_vals = np.empty(16 * n_elems)
        stiff_vals = np.empty(16 * n_elems)
        regions = np.empty(n_elems, dtype=np.int64)
        load = np.zeros(self.field_size)

        e = 0
        for ey in range(elements_per_axis):
            for ex in range(elements_per_axis):
                n00 = ey * n_axis + ex
                conn = np.array([n00, n00 + 1, n00 + n_axis + 1, n00 + n_axis])
                xc = (ex + 0.5) * h
                yc = (ey + 0.5) * h
                regions[e] = 3 * min(2, int(3 * yc)) + min(2, int(3 * xc))
                sl = slice(16 * e, 16 * (e + 1))
                rows[sl] = np.repeat(conn, 4)
                cols[sl] = np.tile(conn, 4)
                mass_vals[sl] = m_local.ravel()
                stiff_vals[sl] = k_local.ravel()
                for ta in _GAUSS_PTS:
                    for tb in _GAUSS_PTS:
                        x = ex * h + ta * h
                        y = ey * h + tb * h
                        w = 0.25 * h * h
                        shapes = np.array(
                            [(1 - ta) * (1 - tb), ta * (1 - tb), ta * tb, (1 - ta) * tb]
                        )
                        load[conn] += w * source(x, y) * shapes
                e += 1

        shape = (self.field_size, self.field_size)
        self._mass = scipy.sparse.coo_matrix((mass_vals, (rows, cols)), shape=shape).tocsc()
        self._stiff_regions = []
        for r in range(9):
            mask = np.repeat(regions == r, 16)
            K_r = scipy.sparse.coo_matrix(
                (stiff_vals[mask], (rows[mask], cols[mask])), shape=shape
            ).tocsc()
            self._stiff_regions.append(K_r)
        self._load = load
        self.plate_of_node = self._assign_plates()

    def _assign_plates(self) -> np.ndarray:
        # Seam nodes go with the higher plate, mirroring the conductivity
        # convention that the right/upper side owns the interface.
        col = np.minimum(2, np.floor(3 * self.coordinates[:, 0]).astype(int))
        row = np.minimum(2, np.floor(3 * self.coordinates[:, 1]).astype(int))
        return 3 * row + col

    def evaluate(self, lam) -> np.ndarray:
        lam = _check_conductivities(lam, self.n_params)
        K = lam[0] * self._stiff_regions[0]
        for r in range(1, 9):
            K = K + lam[r] * self._stiff_regions[r]
        A = (self._mass + 0.5 * self.dt * K).tocsc()
        B = (self._mass - 0.5 * self.dt * K).tocsr()
        solve = scipy.sparse.linalg.factorized(A)
        u = np.zeros(self.field_size)
        forcing = self.dt * self._load
        for _ in range(self.time_steps):
            u = solve(B @ u + forcing)
        return u

    def total_heat(self, u) -> float:
        return float(np.sum(self._mass @ np.asarray(u, dtype=float)))

    def source_integral(self) -> float:
        return float(np.sum(self._load))


class SyntheticModel(ForwardModel):
    """Analytic map carrying its exact Jacobian, for oracle tests."""

    def __init__(self, model_id, n_params, func, jacobian, box=None):
        self.model_id = model_id
        self.n_params = n_params
        self._func = func
        self._jacobian = jacobian
        self.parameter_box = box or ParameterBox([0.0] * n_params, [1.0] * n_params)
        probe = np.asarray(func(self.parameter_box.midpoint), dtype=float)
        self.field_size = probe.size
        self.coordinates = np.arange(self.field_size, dtype=float)

    def evaluate(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if lam.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {lam.shape}")
        return np.asarray(self._func(lam), dtype=float)

    def exact_jacobian(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return np.asarray(self._jacobian(lam), dtype=float)


def linear_model(matrix, model_id: str = "linear", box=None) -> SyntheticModel:
    """Q(lam) = A lam; the Jacobian is A everywhere."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    return SyntheticModel(model_id, A.shape[1], lambda lam: A @ lam, lambda lam: A, box=box)


def identity_model(n: int = 2, box=None) -> SyntheticModel:
    return linear_model(np.eye(n), model_id=f"identity{n}", box=box)


def quadratic_model() -> SyntheticModel:
    """Q(lam) = (lam1^2, lam1 * lam2) with Jacobian [[2 lam1, 0], [lam2, lam1]]."""

    def func(lam):
        return np.array([lam[0] ** 2, lam[0] * lam[1]])

    def jac(lam):
        return np.array([[2.0 * lam[0], 0.0], [lam[1], lam[0]]])

    return SyntheticModel("quadratic", 2, func, jac, box=ParameterBox([0.5, 0.5], [2.0, 2.0]))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_linear_model(theta: float, matrix, model_id: str | None = None) -> SyntheticModel:
    """Q(lam) = R(theta) A lam; criteria should not depend on theta."""
    A = rotation_matrix(theta) @ np.atleast_2d(np.asarray(matrix, dtype=float))
    return linear_model(A, model_id=model_id or f"rotated-linear-{theta:.3f}")


def synthetic_maps() -> dict:
    """Catalog of named analytic models usable from run configs."""
    return {
        "identity2": identity_model(2),
        "identity3": identity_model(3),
        "quadratic": quadratic_model(),
        "anisotropic": linear_model(np.diag([2.0, 4.0]), model_id="anisotropic"),
        "shear": linear_model([[1.0, 0.0], [1.0, 1.0]], model_id="shear"),
        "rotated-anisotropic": rotated_linear_model(np.pi / 6.0, np.diag([2.0, 4.0])),
    }


def field_to_csv(model: ForwardModel, lam, path) -> None:
    """Export one field snapshot as CSV (x[, y], u) for plotting elsewhere."""
    u = model.evaluate(lam)
    coords = np.atleast_2d(model.coordinates.astype(float))
    if coords.shape[0] == 1:
        coords = coords.T
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(coords.shape[1])] + ["u"])
        for row, value in zip(coords, u):
            writer.writerow([f"{v:.17g}" for v in row] + [f"{value:.17g}"])
