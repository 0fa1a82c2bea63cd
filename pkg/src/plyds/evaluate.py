"""Desk-scale evaluation protocol: test MSE, multi-seed statistics, degree
sweeps, and noise sweeps.

Every protocol run splits at trajectory granularity, learns, certifies, and
measures prediction MSE on the held-out split, repeated over independent
seeds; aggregates are always derived from the per-seed rows.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .data import DemonstrationSet, add_uniform_noise, preprocess, split_train_test
from .errors import InputError, PlydsError
from .learn import LearnConfig, learn_policy
from .policy import PolicyModel

REPORT_SCHEMA = "plyds-report/1"


@dataclass(frozen=True)
class ProtocolConfig:
    """Evaluation protocol settings wrapped around the learner's own config."""

    learn: LearnConfig = field(default_factory=LearnConfig)
    test_fraction: float = 2.0 / 7.0
    normalize_velocities: bool = False

    def to_dict(self) -> dict:
        return {"learn": self.learn.to_dict(), "test_fraction": self.test_fraction,
                "normalize_velocities": self.normalize_velocities}


@dataclass(frozen=True)
class SeedResult:
    seed: int
    status: str  # "ok" | "failed"
    test_mse: float
    certified: bool
    seconds: float
    error: str = ""


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[SeedResult, ...]
    config: dict
    train_test_overlap: bool = False

    @property
    def ok_rows(self) -> tuple[SeedResult, ...]:
        return tuple(r for r in self.rows if r.status == "ok")

    @property
    def mean_mse(self) -> float:
        values = [r.test_mse for r in self.ok_rows]
        return float(np.mean(values)) if values else float("nan")

    @property
    def std_mse(self) -> float:
        values = [r.test_mse for r in self.ok_rows]
        if len(values) < 2:
            return 0.0 if values else float("nan")
        return float(np.std(values, ddof=1))

    @property
    def median_mse(self) -> float:
        values = [r.test_mse for r in self.ok_rows]
        return float(np.median(values)) if values else float("nan")

    @property
    def certification_rate(self) -> float:
        if not self.rows:
            return float("nan")
        return sum(1 for r in self.rows if r.certified) / len(self.rows)

    @property
    def mean_seconds(self) -> float:
        values = [r.seconds for r in self.ok_rows]
        return float(np.mean(values)) if values else float("nan")

    def to_summary(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": __version__,
            "config": self.config,
            "train_test_overlap": self.train_test_overlap,
            "rows": [vars(r) for r in self.rows],
            "mean_mse": self.mean_mse,
            "std_mse": self.std_mse,
            "median_mse": self.median_mse,
            "certification_rate": self.certification_rate,
            "mean_seconds": self.mean_seconds,
        }

    def save_csv(self, path) -> None:
        lines = ["# " + json.dumps({"tool": "plyds", "version": __version__,
                                    "schema": REPORT_SCHEMA, "config": self.config})]
        lines.append("seed,status,test_mse,certified,seconds,error")
        for r in self.rows:
            lines.append(f"{r.seed},{r.status},{repr(r.test_mse)},"
                         f"{int(r.certified)},{repr(r.seconds)},{r.error}")
        with open(path, "w") as handle:
            handle.write("\n".join(lines) + "\n")

    def save_summary(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_summary(), handle, indent=2, default=float)


def test_mse(policy: PolicyModel, test: DemonstrationSet) -> float:
    """Prediction error (1 / (2 N_d N_s)) sum ||f(x) - xdot||^2 over the test
    split, which must be preprocessed identically to the training data."""
    if test.n != policy.n:
        raise InputError(f"test dimension {test.n} != policy dimension {policy.n}")
    X, Y = test.stacked()
    residual = policy.predict_many(X) - Y
    return 0.5 * float(np.sum(residual ** 2)) / X.shape[0]


def derive_seed(run_seed: int, index: int) -> int:
    """Per-seed derivation: reports stay extendable without recomputation."""
    return run_seed ^ index


def _single_seed(dataset: DemonstrationSet, protocol: ProtocolConfig,
                 seed: int) -> SeedResult:
    started = time.perf_counter()
    try:
        if dataset.n_demos > 1:
            train, test = split_train_test(dataset, protocol.test_fraction, seed=seed)
        else:
            train = test = dataset
        train = preprocess(train, normalize_velocities=protocol.normalize_velocities)
        test = preprocess(test, normalize_velocities=protocol.normalize_velocities)
        config = replace(protocol.learn, seed=seed)
        policy, _, cert, _ = learn_policy(train, config)
        mse = test_mse(policy, test)
        return SeedResult(seed=seed, status="ok", test_mse=mse,
                          certified=cert.certified,
                          seconds=time.perf_counter() - started)
    except PlydsError as exc:
        return SeedResult(seed=seed, status="failed", test_mse=float("nan"),
                          certified=False, seconds=time.perf_counter() - started,
                          error=f"{type(exc).__name__}: {exc}")


def run_protocol(dataset: DemonstrationSet, protocol: ProtocolConfig,
                 seeds: int) -> EvalReport:
    """Split, learn, certify, and measure test MSE once per seed."""
    if seeds < 1:
        raise InputError("need at least one seed")
    rows = [_single_seed(dataset, protocol, derive_seed(protocol.learn.seed, i))
            for i in range(seeds)]
    return EvalReport(rows=tuple(rows), config=protocol.to_dict(),
                      train_test_overlap=dataset.n_demos == 1)


def degree_sweep(dataset: DemonstrationSet, alphas, betas,
                 protocol: ProtocolConfig, seeds: int) -> dict:
    """Protocol matrix over (alpha, beta); per-cell failures are recorded,
    never raised."""
    cells = {}
    for alpha in alphas:
        for beta in betas:
            try:
                cfg = replace(protocol, learn=replace(protocol.learn,
                                                      alpha=alpha, beta=beta))
                report = run_protocol(dataset, cfg, seeds)
                cells[(alpha, beta)] = {
                    "mean_mse": report.mean_mse,
                    "median_mse": report.median_mse,
                    "std_mse": report.std_mse,
                    "certification_rate": report.certification_rate,
                    "mean_seconds": report.mean_seconds,
                    "status": "ok",
                }
            except PlydsError as exc:
                cells[(alpha, beta)] = {"status": f"failed: {exc}"}
    return cells


def noise_sweep(dataset: DemonstrationSet, levels, protocol: ProtocolConfig,
                seeds: int) -> dict:
    """Protocol repeated with uniform additive position noise at each level;
    noise is applied before the split so train and test share the corruption."""
    out = {}
    for level in levels:
        noisy = add_uniform_noise(dataset, level, seed=protocol.learn.seed + 7919)
        report = run_protocol(noisy, protocol, seeds)
        out[level] = report
    return out
