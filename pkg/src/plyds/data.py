"""Demonstration sets: on-disk format, validation, preprocessing, noise
injection, train/test splits, and synthetic oracle generators.

A dataset on disk is a directory with a ``manifest.json`` and one CSV per
demonstration. The manifest carries the schema tag ``plyds-data/1``, the state
dimension, the common sample count and target, the sample spacing ``dt``, and
the demonstration names; each ``<name>.csv`` has header ``x1..xn,v1..vn`` and
one row per sample, written in full round-trip decimal.

All trajectories must share the sample count, end at the common target, and
have zero final velocity (up to a tolerance relative to the workspace scale).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError, ValidationError

SCHEMA = "plyds-data/1"

# Endpoint and final-velocity tolerance, relative to the workspace scale.
TARGET_RTOL = 1e-3

SYNTH_KINDS = ("linear", "sine", "cubic")


@dataclass(frozen=True)
class DemonstrationSet:
    """An immutable stack of expert trajectories sharing a common target.

    ``positions`` and ``velocities`` have shape (n_demos, n_samples, n); the
    implicit sample spacing ``dt`` is used when velocities must be recomputed
    from perturbed positions.
    """

    positions: np.ndarray
    velocities: np.ndarray
    target: np.ndarray
    names: tuple[str, ...] = ()
    dt: float = 1.0
    units: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        vel = np.array(self.velocities, dtype=float)
        if pos.ndim != 3:
            raise InputError(f"positions must be (n_demos, n_samples, n), got {pos.shape}")
        if vel.shape != pos.shape:
            raise InputError(f"velocities shape {vel.shape} != positions shape {pos.shape}")
        target = np.array(self.target, dtype=float).reshape(-1)
        if target.shape[0] != pos.shape[2]:
            raise InputError(f"target dimension {target.shape[0]} != state dimension {pos.shape[2]}")
        names = tuple(self.names) if self.names else tuple(
            f"demo_{i:02d}" for i in range(pos.shape[0]))
        if len(names) != pos.shape[0]:
            raise InputError(f"{len(names)} names for {pos.shape[0]} demonstrations")
        for arr in (pos, vel, target):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.positions.shape[2]

    @property
    def n_demos(self) -> int:
        return self.positions.shape[0]

    @property
    def n_samples(self) -> int:
        return self.positions.shape[1]

    @property
    def n_total(self) -> int:
        return self.n_demos * self.n_samples

    @property
    def scale(self) -> float:
        """Largest coordinate range of the set; the unit for tolerances."""
        spans = self.positions.reshape(-1, self.n)
        extent = spans.max(axis=0) - spans.min(axis=0)
        return float(max(extent.max(), 1e-12))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.positions.reshape(-1, self.n)
        return flat.min(axis=0).copy(), flat.max(axis=0).copy()

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples as (N_t, n) position and velocity arrays."""
        return (self.positions.reshape(-1, self.n).copy(),
                self.velocities.reshape(-1, self.n).copy())

    def subset(self, indices) -> "DemonstrationSet":
        indices = list(indices)
        return DemonstrationSet(
            positions=self.positions[indices],
            velocities=self.velocities[indices],
            target=self.target,
            names=tuple(self.names[i] for i in indices),
            dt=self.dt, units=self.units, metadata=dict(self.metadata))

    def replace(self, **kwargs) -> "DemonstrationSet":
        fields = dict(positions=self.positions, velocities=self.velocities,
                      target=self.target, names=self.names, dt=self.dt,
                      units=self.units, metadata=dict(self.metadata))
        fields.update(kwargs)
        return DemonstrationSet(**fields)


def validate(dataset: DemonstrationSet) -> None:
    """Check the shared-target and zero-final-velocity assumptions."""
    tol = TARGET_RTOL * dataset.scale
    for d in range(dataset.n_demos):
        if not np.all(np.isfinite(dataset.positions[d])) or \
                not np.all(np.isfinite(dataset.velocities[d])):
            raise ValidationError("contains non-finite samples", demo_index=d)
        end_gap = float(np.linalg.norm(dataset.positions[d, -1] - dataset.target))
        if end_gap > tol:
            raise ValidationError(
                f"ends {end_gap:.4g} from the common target (tolerance {tol:.4g})",
                demo_index=d)
        end_speed = float(np.linalg.norm(dataset.velocities[d, -1]))
        if end_speed > tol:
            raise ValidationError(
                f"final velocity {end_speed:.4g} exceeds tolerance {tol:.4g}",
                demo_index=d)


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

def save_demonstrations(dataset: DemonstrationSet, path) -> None:
    """Write a dataset directory (manifest + one CSV per demonstration)."""
    from pathlib import Path
    from . import __version__
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": SCHEMA,
        "version": __version__,
        "n": dataset.n,
        "n_samples": dataset.n_samples,
        "target": [repr(v) for v in dataset.target.tolist()],
        "dt": dataset.dt,
        "units": dataset.units,
        "names": list(dataset.names),
        "metadata": dataset.metadata,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    header = ",".join([f"x{i + 1}" for i in range(dataset.n)] +
                      [f"v{i + 1}" for i in range(dataset.n)])
    for d, name in enumerate(dataset.names):
        lines = [header]
        for s in range(dataset.n_samples):
            row = list(dataset.positions[d, s]) + list(dataset.velocities[d, s])
            lines.append(",".join(repr(float(v)) for v in row))
        (root / f"{name}.csv").write_text("\n".join(lines) + "\n")


def load_demonstrations(path, lenient: bool = False) -> DemonstrationSet:
    """Load and validate a dataset directory.

    In lenient mode an assumption violation is downgraded to a warning: the
    target is re-pinned to the mean trajectory endpoint and every final sample
    is snapped onto it with zero velocity.
    """
    from pathlib import Path
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not root.is_dir():
        raise ParseError("not a dataset directory", path=str(root))
    if not manifest_path.exists():
        raise ParseError("missing manifest.json", path=str(root))
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid manifest: {exc}", path=str(manifest_path)) from exc
    if manifest.get("schema") != SCHEMA:
        raise ParseError(f"unsupported schema {manifest.get('schema')!r}, "
                         f"expected {SCHEMA!r}", path=str(manifest_path))
    try:
        n = int(manifest["n"])
        n_samples = int(manifest["n_samples"])
        target = np.array([float(v) for v in manifest["target"]], dtype=float)
        names = list(manifest["names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed manifest field: {exc}", path=str(manifest_path)) from exc
    if not names:
        raise ParseError("manifest lists no demonstrations", path=str(manifest_path))

    positions = np.empty((len(names), n_samples, n))
    velocities = np.empty((len(names), n_samples, n))
    for d, name in enumerate(names):
        csv_path = root / f"{name}.csv"
        if not csv_path.exists():
            raise ParseError("missing demonstration file", path=str(csv_path))
        lines = csv_path.read_text().splitlines()
        body = [(i + 1, ln) for i, ln in enumerate(lines)
                if ln.strip() and not ln.startswith("#")]
        if not body:
            raise ParseError("empty file", path=str(csv_path))
        header_no, header = body[0]
        expected_header = ",".join([f"x{i + 1}" for i in range(n)] +
                                   [f"v{i + 1}" for i in range(n)])
        if header.strip() != expected_header:
            raise ParseError(f"bad header {header.strip()!r}", path=str(csv_path),
                             line=header_no)
        rows = body[1:]
        if len(rows) != n_samples:
            raise ParseError(f"expected {n_samples} data rows, found {len(rows)}",
                             path=str(csv_path))
        for s, (line_no, line) in enumerate(rows):
            parts = line.split(",")
            if len(parts) != 2 * n:
                raise ParseError(f"expected {2 * n} columns, found {len(parts)}",
                                 path=str(csv_path), line=line_no)
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"non-numeric value: {exc}", path=str(csv_path),
                                 line=line_no) from exc
            positions[d, s] = values[:n]
            velocities[d, s] = values[n:]

    dataset = DemonstrationSet(
        positions=positions, velocities=velocities, target=target,
        names=tuple(names), dt=float(manifest.get("dt", 1.0)),
        units=manifest.get("units", ""), metadata=manifest.get("metadata", {}))
    try:
        validate(dataset)
    except ValidationError as exc:
        if not lenient:
            raise
        warnings.warn(f"dataset violates trajectory assumptions ({exc}); "
                      "re-pinning final samples to the mean endpoint")
        endpoint = positions[:, -1, :].mean(axis=0)
        positions[:, -1, :] = endpoint
        velocities[:, -1, :] = 0.0
        dataset = dataset.replace(positions=positions, velocities=velocities,
                                  target=endpoint)
    return dataset


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def preprocess(dataset: DemonstrationSet, normalize_velocities: bool = False
               ) -> DemonstrationSet:
    """Shift positions so the target sits at the origin; optionally rescale
    every nonzero velocity to unit norm (zero samples stay zero)."""
    positions = dataset.positions - dataset.target
    velocities = dataset.velocities.copy()
    if normalize_velocities:
        norms = np.linalg.norm(velocities, axis=2, keepdims=True)
        # leave zero samples at zero and already-unit samples untouched, so
        # the operation is exactly idempotent
        divide = (norms > 1e-12) & (np.abs(norms - 1.0) > 1e-12)
        safe = np.where(divide, norms, 1.0)
        velocities = np.where(norms > 1e-12, velocities / safe, 0.0)
    return dataset.replace(positions=positions, velocities=velocities,
                           target=np.zeros(dataset.n))


def add_uniform_noise(dataset: DemonstrationSet, level: float, seed: int = 0
                      ) -> DemonstrationSet:
    """Perturb each position coordinate by an independent uniform draw in
    [-level, level] and recompute velocities by finite differences of the
    noisy positions over the sample spacing.

    Final samples stay pinned to the target (position and velocity untouched),
    preserving the trajectory assumptions.
    """
    if level < 0:
        raise InputError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return dataset
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-level, level, size=dataset.positions.shape)
    noise[:, -1, :] = 0.0
    positions = dataset.positions + noise
    velocities = np.empty_like(positions)
    dt = dataset.dt
    velocities[:, 0] = (positions[:, 1] - positions[:, 0]) / dt
    velocities[:, 1:-1] = (positions[:, 2:] - positions[:, :-2]) / (2 * dt)
    velocities[:, -1] = dataset.velocities[:, -1]
    return dataset.replace(positions=positions, velocities=velocities)


def split_train_test(dataset: DemonstrationSet, test_fraction: float, seed: int = 0
                     ) -> tuple[DemonstrationSet, DemonstrationSet]:
    """Split at trajectory granularity into disjoint, exhaustive subsets."""
    if not 0 < test_fraction < 1:
        raise InputError(f"test fraction must be in (0, 1), got {test_fraction}")
    if dataset.n_demos < 2:
        raise InputError("need at least 2 demonstrations to split; "
                         "single-demonstration runs train and test on the same data")
    n_test = int(round(test_fraction * dataset.n_demos))
    n_test = min(max(n_test, 1), dataset.n_demos - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.n_demos)
    test_idx = sorted(order[:n_test].tolist())
    train_idx = sorted(order[n_test:].tolist())
    return dataset.subset(train_idx), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# Synthetic oracle generators
# ---------------------------------------------------------------------------

def synthetic_field(kind: str, n: int, radius: float = 10.0):
    """The ground-truth vector field used by ``synth_generate``."""
    if kind == "linear":
        return lambda x: -np.asarray(x, dtype=float)
    if kind == "cubic":
        return lambda x: -np.asarray(x, dtype=float) - 0.1 * np.asarray(x, dtype=float) ** 3
    if kind == "sine":
        if n != 2:
            raise InputError("sine motions are planar (n = 2)")
        amp = 0.25 * radius
        freq = 4.0 * math.pi / radius
        gain = 2.0

        def fld(x):
            x = np.asarray(x, dtype=float)
            curve = amp * np.sin(freq * x[..., 0])
            slope = amp * freq * np.cos(freq * x[..., 0])
            dx1 = -x[..., 0]
            dx2 = slope * dx1 - gain * (x[..., 1] - curve)
            return np.stack([dx1, dx2], axis=-1)

        return fld
    raise InputError(f"unsupported synthetic kind {kind!r}; choose from {SYNTH_KINDS}")


def synth_generate(kind: str, n: int = 2, n_demos: int = 7, n_samples: int = 200,
                   seed: int = 0, radius: float = 10.0) -> DemonstrationSet:
    """Generate demonstrations by integrating a known globally stable field
    from randomized starts near radius ``radius``.

    Velocities are the exact field values at the sampled positions, the final
    sample is pinned to the origin with zero velocity, and the generator kind
    and parameters are recorded in the metadata as ground truth.
    """
    if kind not in SYNTH_KINDS:
        raise InputError(f"unsupported synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if n_samples < 2 or n_demos < 1:
        raise InputError("need n_samples >= 2 and n_demos >= 1")
    fld = synthetic_field(kind, n, radius)
    rng = np.random.default_rng(seed)

    duration = 14.0  # e^-14 decay leaves endpoints ~1e-6 of the start radius
    dt = duration / (n_samples - 1)

    # Substep the integrator to stay inside RK4's stability region for stiff
    # fields; the Lipschitz bound is probed by finite differences.
    probe = np.random.default_rng(12345).uniform(-radius, radius, size=(64, n))
    h = 1e-5 * radius
    lip = 1.0
    for j in range(n):
        step = np.zeros(n)
        step[j] = h
        jac_col = (np.array([fld(p + step) for p in probe])
                   - np.array([fld(p - step) for p in probe])) / (2 * h)
        lip = max(lip, float(np.abs(jac_col).sum(axis=1).max()))
    substeps = max(1, int(math.ceil(dt * lip / 0.5)))
    sub_dt = dt / substeps

    positions = np.empty((n_demos, n_samples, n))
    velocities = np.empty((n_demos, n_samples, n))
    for d in range(n_demos):
        if kind == "sine":
            x1 = radius * rng.uniform(0.85, 1.0) * rng.choice([-1.0, 1.0])
            amp = 0.25 * radius
            x2 = amp * math.sin(4.0 * math.pi / radius * x1) + rng.uniform(-0.1, 0.1) * radius
            x = np.array([x1, x2])
        else:
            direction = rng.normal(size=n)
            direction /= np.linalg.norm(direction)
            x = direction * radius * rng.uniform(0.7, 1.0)
        for s in range(n_samples):
            positions[d, s] = x
            velocities[d, s] = fld(x)
            # classical RK4 keeps the sampled states on the true flow
            for _ in range(substeps):
                k1 = fld(x)
                k2 = fld(x + 0.5 * sub_dt * k1)
                k3 = fld(x + 0.5 * sub_dt * k2)
                k4 = fld(x + sub_dt * k3)
                x = x + (sub_dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        positions[d, -1] = 0.0
        velocities[d, -1] = 0.0

    return DemonstrationSet(
        positions=positions, velocities=velocities, target=np.zeros(n),
        names=tuple(f"{kind}_{d:02d}" for d in range(n_demos)),
        dt=dt, units="synthetic",
        metadata={"generator": {"kind": kind, "radius": radius, "seed": seed,
                                "duration": duration}})
