"""Versioned JSON serialization of learned models.

A model file carries the policy, potential, and derivative Gram blocks
(row-major upper-triangular), the certificate margins and audit box, the
resolved learning configuration, and training metrics, under the schema tag
``plyds-model/1``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParseError
from .lyapunov import LyapunovModel, StabilityCertificate
from .policy import PolicyModel
from .poly import BasisSpec, GramPolynomial

SCHEMA = "plyds-model/1"


def _blocks_to_json(blocks):
    return [[repr(float(v)) for v in b.upper_vector()] for b in blocks]


def _blocks_from_json(spec: BasisSpec, data):
    return tuple(GramPolynomial.from_upper(spec, [float(v) for v in entry])
                 for entry in data)


def save_model(path, policy: PolicyModel, lyap: LyapunovModel,
               cert: StabilityCertificate, config: dict | None = None,
               metrics: dict | None = None) -> None:
    payload = {
        "schema": SCHEMA,
        "version": __version__,
        "n": policy.n,
        "alpha": policy.alpha,
        "beta": lyap.beta,
        "basis_mode": policy.basis_mode,
        "lpf_mode": lyap.mode,
        "target": [repr(float(v)) for v in policy.target],
        "policy_blocks": _blocks_to_json(policy.blocks),
        "lpf_blocks": _blocks_to_json(lyap.blocks),
        "decrease_blocks": _blocks_to_json(cert.decrease_blocks),
        "eps_decrease": cert.eps_decrease,
        "eps_pd": cert.eps_pd,
        "certificate": cert.to_report(),
        "config": config or {},
        "metrics": metrics or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_model(path) -> tuple[PolicyModel, LyapunovModel, StabilityCertificate, dict]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError("model file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model JSON: {exc}", path=str(path)) from exc
    if payload.get("schema") != SCHEMA:
        raise ParseError(f"unsupported schema {payload.get('schema')!r}, "
                         f"expected {SCHEMA!r}", path=str(path))
    try:
        n = int(payload["n"])
        alpha = int(payload["alpha"])
        beta = int(payload["beta"])
        basis_mode = payload["basis_mode"]
        lpf_mode = payload["lpf_mode"]
        target = np.array([float(v) for v in payload["target"]])
        policy_spec = BasisSpec(n, alpha, include_constant=True, mode=basis_mode)
        lpf_spec = BasisSpec(n, beta, include_constant=False, mode=basis_mode)
        deriv_spec = BasisSpec(n, alpha + beta, include_constant=False, mode=basis_mode)
        policy = PolicyModel(n=n, alpha=alpha,
                             blocks=_blocks_from_json(policy_spec, payload["policy_blocks"]),
                             target=target, basis_mode=basis_mode)
        lyap = LyapunovModel(n=n, beta=beta, mode=lpf_mode,
                             blocks=_blocks_from_json(lpf_spec, payload["lpf_blocks"]),
                             target=target, basis_mode=basis_mode)
        report = payload.get("certificate", {})
        cert = StabilityCertificate(
            decrease_blocks=_blocks_from_json(deriv_spec, payload["decrease_blocks"]),
            eps_decrease=float(payload["eps_decrease"]),
            eps_pd=float(payload["eps_pd"]),
            matching_residual=float(report.get("matching_residual", np.nan)),
            lpf_min_eigs=tuple(report.get("lpf_min_eigenvalues", ())),
            decrease_max_eigs=tuple(report.get("decrease_max_eigenvalues", ())),
            audit_box=(tuple(report["audit_box"][0]), tuple(report["audit_box"][1])),
            n_audit=int(report.get("n_audit", 1000)),
            audit_positivity_passes=int(report.get("audit_positivity_passes", 0)),
            audit_decrease_passes=int(report.get("audit_decrease_passes", 0)),
            verdict=report.get("verdict", "unknown"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model field: {exc}", path=str(path)) from exc
    meta = {"config": payload.get("config", {}), "metrics": payload.get("metrics", {}),
            "version": payload.get("version", "")}
    return policy, lyap, cert, meta
