"""Deterministic forward simulation of learned policies: single rollouts,
perturbed rollouts, streamline fields for figures, and CSV/SVG export.

The integrator is explicit Euler by default, matching the discrete
velocity-command semantics of a robot's low-level controller; a classical
4-stage Runge-Kutta option exists for descent checks at coarse steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .policy import PolicyModel

CONVERGED = "converged"
STEP_LIMIT = "step_limit"
ESCAPED_BOX = "escaped_box"


@dataclass(frozen=True)
class RolloutConfig:
    dt: float = 1e-2
    max_steps: int = 100_000
    convergence_radius: float = 1e-2
    box: tuple | None = None  # (lo, hi) divergence-detection box, None = unbounded
    method: str = "euler"  # "euler" | "rk4"

    def __post_init__(self):
        if self.dt <= 0:
            raise InputError(f"dt must be positive, got {self.dt}")
        if self.convergence_radius <= 0:
            raise InputError("convergence radius must be positive")
        if self.max_steps < 1:
            raise InputError("max_steps must be >= 1")
        if self.method not in ("euler", "rk4"):
            raise InputError(f"unknown integrator {self.method!r}")


@dataclass(frozen=True)
class Trajectory:
    """An integrated path: states with uniformly spaced timestamps and the
    reason integration stopped."""

    states: np.ndarray     # (k+1, n) including the start
    timestamps: np.ndarray  # (k+1,)
    status: str

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _default_box(policy: PolicyModel, config: RolloutConfig):
    if config.box is None:
        return None, None
    lo = np.asarray(config.box[0], dtype=float)
    hi = np.asarray(config.box[1], dtype=float)
    if lo.shape != (policy.n,) or hi.shape != (policy.n,):
        raise InputError("divergence box must match the state dimension")
    return lo, hi


def integrate_rollout(policy: PolicyModel, x0, config: RolloutConfig,
                      perturbations=()) -> Trajectory:
    """Integrate from one start until convergence to the target, the step
    limit, or escape from the divergence box.

    ``perturbations`` is a list of (step, offset) pairs applied to the state
    just before that step's update.
    """
    trajectories = integrate_batch(policy, np.asarray(x0, dtype=float)[None, :],
                                   config, perturbations=perturbations)
    return trajectories[0]


def perturbed_rollout(policy: PolicyModel, x0, config: RolloutConfig,
                      perturbations) -> Trajectory:
    """Rollout with mid-flight pushes; per-step semantics as integrate_rollout."""
    perturbations = list(perturbations)
    for step, _ in perturbations:
        if step >= config.max_steps:
            raise InputError(f"perturbation step {step} beyond max_steps")
    return integrate_rollout(policy, x0, config, perturbations=perturbations)


def integrate_batch(policy: PolicyModel, starts, config: RolloutConfig,
                    perturbations=()) -> list[Trajectory]:
    """Integrate many starts in lockstep (one batched field evaluation per
    step); per-trajectory results are identical to one-at-a-time integration."""
    starts = np.asarray(starts, dtype=float)
    if starts.ndim != 2 or starts.shape[1] != policy.n:
        raise InputError(f"expected starts of shape (m, {policy.n}), got {starts.shape}")
    lo, hi = _default_box(policy, config)
    pushes: dict[int, np.ndarray] = {}
    for step, offset in perturbations:
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (policy.n,):
            raise InputError("perturbation offset must match the state dimension")
        pushes[int(step)] = pushes.get(int(step), 0.0) + offset

    m = starts.shape[0]
    paths: list[list[np.ndarray]] = [[starts[i].copy()] for i in range(m)]
    status = np.array([""] * m, dtype=object)
    x = starts.copy()
    active = np.ones(m, dtype=bool)

    def arrived(points):
        return np.linalg.norm(points - policy.target, axis=1) <= config.convergence_radius

    done = arrived(x)
    status[done] = CONVERGED
    active &= ~done

    for step in range(config.max_steps):
        if not active.any():
            break
        if step in pushes:
            x[active] = x[active] + pushes[step]
            for i in np.flatnonzero(active):
                paths[i][-1] = x[i].copy()
        xa = x[active]
        va = policy.predict_many(xa)
        if config.method == "rk4":
            dt = config.dt
            k2 = policy.predict_many(xa + 0.5 * dt * va)
            k3 = policy.predict_many(xa + 0.5 * dt * k2)
            k4 = policy.predict_many(xa + dt * k3)
            xa_next = xa + (dt / 6.0) * (va + 2 * k2 + 2 * k3 + k4)
        else:
            xa_next = xa + config.dt * va
        if not np.all(np.isfinite(xa_next)):
            bad = np.flatnonzero(active)[~np.all(np.isfinite(xa_next), axis=1)]
            raise ArithmeticError(
                f"field produced a non-finite value at step {step + 1} "
                f"(trajectory {bad[0]})")
        x[active] = xa_next
        for i, xi in zip(np.flatnonzero(active), xa_next):
            paths[i].append(xi.copy())

        converged = arrived(x) & active
        status[converged] = CONVERGED
        active &= ~converged
        if lo is not None:
            escaped = active & (np.any(x < lo, axis=1) | np.any(x > hi, axis=1))
            status[escaped] = ESCAPED_BOX
            active &= ~escaped

    status[active] = STEP_LIMIT
    out = []
    for i in range(m):
        states = np.vstack(paths[i])
        times = config.dt * np.arange(states.shape[0])
        out.append(Trajectory(states=states, timestamps=times, status=str(status[i])))
    return out


def streamline_field(policy: PolicyModel, bbox, resolution: int,
                     config: RolloutConfig):
    """One rollout per point of a regular grid over the box, plus the raw
    field sampled on the grid for arrow plots (planar systems only)."""
    if resolution < 2:
        raise InputError("grid resolution must be >= 2 per axis")
    if policy.n != 2:
        raise InputError("streamline grids are only supported for n = 2; "
                         "use integrate_batch for higher dimensions")
    lo = np.asarray(bbox[0], dtype=float)
    hi = np.asarray(bbox[1], dtype=float)
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    XX, YY = np.meshgrid(xs, ys)
    seeds = np.column_stack([XX.ravel(), YY.ravel()])
    trajectories = integrate_batch(policy, seeds, config)
    field = policy.predict_many(seeds)
    return trajectories, seeds, field


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _provenance_comment(meta: dict | None) -> str:
    from . import __version__
    info = {"tool": "plyds", "version": __version__}
    if meta:
        info.update(meta)
    return "# " + json.dumps(info)


def export_trajectory_csv(trajectory: Trajectory, path, meta: dict | None = None) -> None:
    n = trajectory.states.shape[1]
    lines = [_provenance_comment(meta)]
    lines.append(",".join(["t"] + [f"x{i + 1}" for i in range(n)]))
    for t, state in zip(trajectory.timestamps, trajectory.states):
        lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in state]))
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def export_streamlines_csv(trajectories, path, meta: dict | None = None) -> None:
    lines = [_provenance_comment(meta)]
    n = trajectories[0].states.shape[1]
    lines.append(",".join(["trajectory", "status", "t"] + [f"x{i + 1}" for i in range(n)]))
    for idx, trajectory in enumerate(trajectories):
        for t, state in zip(trajectory.timestamps, trajectory.states):
            lines.append(",".join([str(idx), trajectory.status, repr(float(t))] +
                                  [repr(float(v)) for v in state]))
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def export_streamlines_svg(trajectories, seeds, field, bbox, path,
                           demonstrations=None, meta: dict | None = None,
                           size: int = 640) -> None:
    """Self-contained SVG: field arrows, rollout polylines, and an optional
    demonstration overlay in distinct stroke classes."""
    lo = np.asarray(bbox[0], dtype=float)
    hi = np.asarray(bbox[1], dtype=float)
    span = np.maximum(hi - lo, 1e-12)
    width = size
    height = int(size * span[1] / span[0]) or size

    def to_px(p):
        u = (p[0] - lo[0]) / span[0] * width
        v = height - (p[1] - lo[1]) / span[1] * height
        return f"{u:.2f},{v:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<desc>{_provenance_comment(meta)[2:]}</desc>",
        "<style>.field{stroke:#b0b0b0;stroke-width:1}"
        ".rollout{stroke:#c23b22;stroke-width:1.2;fill:none}"
        ".demo{stroke:#2c5aa0;stroke-width:1.8;fill:none}</style>",
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    arrow = 0.04 * float(min(span))
    for seed, vec in zip(seeds, field):
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            continue
        tip = seed + arrow * vec / norm
        parts.append(f'<line class="field" x1="{to_px(seed).split(",")[0]}" '
                     f'y1="{to_px(seed).split(",")[1]}" '
                     f'x2="{to_px(tip).split(",")[0]}" y2="{to_px(tip).split(",")[1]}"/>')
    for trajectory in trajectories:
        states = trajectory.states
        if states.shape[0] > 400:  # thin long paths for readable files
            idx = np.unique(np.linspace(0, states.shape[0] - 1, 400).astype(int))
            states = states[idx]
        points = " ".join(to_px(p) for p in states)
        parts.append(f'<polyline class="rollout" points="{points}"/>')
    if demonstrations is not None:
        for demo in demonstrations:
            points = " ".join(to_px(p) for p in demo)
            parts.append(f'<polyline class="demo" points="{points}"/>')
    parts.append("</svg>")
    with open(path, "w") as handle:
        handle.write("\n".join(parts) + "\n")
