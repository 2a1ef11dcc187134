"""2-D synthetic datasets and energy-surface export.

A cross is two axis-aligned bars sharing a center: position along the arm is
uniform over its length, position across it is Gaussian. Each bar is its own
class, so a single cross gives 2 classes and the 3x3 grid of crosses gives
18. Energy surfaces are sampled on a regular lattice and exported as CSV or
a tensor file; rendering is left to external tools.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .featurestore import FeatureSet
from .tensorio import write_tensor

KINDS = ("cross", "grid_crosses")


class GridEvaluationError(RuntimeError):
    def __init__(self, x: float, y: float, value: float):
        super().__init__(f"non-finite score {value!r} at grid point ({x}, {y})")
        self.point = (x, y)


@dataclass(frozen=True)
class ToySpec:
    kind: str = "cross"
    samples_per_class: int = 1000
    arm_length: float = 2.0
    arm_thickness: float = 0.05
    grid_pitch: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown toy kind {self.kind!r}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be at least 1")
        if self.arm_length <= 0 or self.arm_thickness <= 0 or self.grid_pitch <= 0:
            raise ValueError("geometry parameters must be positive")

    @property
    def centers(self) -> np.ndarray:
        if self.kind == "cross":
            return np.zeros((1, 2))
        ticks = np.array([-self.grid_pitch, 0.0, self.grid_pitch])
        return np.array([(x, y) for y in ticks for x in ticks])

    @property
    def num_classes(self) -> int:
        return 2 * self.centers.shape[0]

    @property
    def extent(self) -> float:
        """Largest |coordinate| of a cross center plus its arm reach."""
        reach = self.grid_pitch if self.kind == "grid_crosses" else 0.0
        return reach + self.arm_length


def gen_toy(spec: ToySpec, rng: np.random.Generator | None = None) -> FeatureSet:
    """Sample the crossed dataset; one class per bar, deterministic per seed."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = spec.samples_per_class
    blocks, labels = [], []
    label = 0
    for cx, cy in spec.centers:
        along_h = rng.uniform(-spec.arm_length, spec.arm_length, n)
        across_h = rng.normal(0.0, spec.arm_thickness, n)
        blocks.append(np.column_stack([cx + along_h, cy + across_h]))
        labels.append(np.full(n, label))
        label += 1
        along_v = rng.uniform(-spec.arm_length, spec.arm_length, n)
        across_v = rng.normal(0.0, spec.arm_thickness, n)
        blocks.append(np.column_stack([cx + across_v, cy + along_v]))
        labels.append(np.full(n, label))
        label += 1
    return FeatureSet(np.concatenate(blocks), np.concatenate(labels), spec.num_classes)


@dataclass(frozen=True)
class EnergyGrid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    values: np.ndarray  # (R, R), values[i, j] = score at (x_i, y_j)

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid bounds must be well-ordered")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.resolution)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.resolution)


def _eval_points(score_fn, points: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(score_fn(points), dtype=np.float64)
        if out.shape == (points.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(score_fn(p)) for p in points])


def energy_grid(score_fn, bounds, resolution: int, n_threads: int = 1) -> EnergyGrid:
    """Evaluate a score function on an endpoint-inclusive R x R lattice.

    ``bounds`` is (x_min, x_max, y_min, y_max); ``score_fn`` may be batched
    (mapping (n, 2) to (n,)) or plain point-wise.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    x_min, x_max, y_min, y_max = map(float, bounds)
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])

    if n_threads > 1:
        chunks = np.array_split(np.arange(points.shape[0]), n_threads * 4)
        flat = np.empty(points.shape[0])
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for idx, vals in zip(chunks, pool.map(lambda c: _eval_points(score_fn, points[c]), chunks)):
                flat[idx] = vals
    else:
        flat = _eval_points(score_fn, points)

    bad = ~np.isfinite(flat)
    if bad.any():
        i = int(np.argmax(bad))
        raise GridEvaluationError(points[i, 0], points[i, 1], float(flat[i]))
    return EnergyGrid(x_min, x_max, y_min, y_max, flat.reshape(resolution, resolution))


def save_grid_csv(path, grid: EnergyGrid) -> None:
    """Rows of (x, y, energy) in row-major lattice order."""
    xs, ys = grid.xs, grid.ys
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "energy"])
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(grid.values[i, j]))])


def save_grid_tensor(path, grid: EnergyGrid) -> None:
    write_tensor(path, grid.values.astype(np.float32))
