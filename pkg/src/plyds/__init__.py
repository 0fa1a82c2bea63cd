"""Globally stable polynomial dynamical-system policies learned from
demonstrations, certified by sum-of-squares Lyapunov conditions."""

__version__ = "0.1.0"

from .data import (  # noqa: E402,F401
    DemonstrationSet,
    add_uniform_noise,
    load_demonstrations,
    preprocess,
    save_demonstrations,
    split_train_test,
    synth_generate,
)
from .learn import LearnConfig, assemble_objective, learn_policy  # noqa: F401
from .lyapunov import (  # noqa: F401
    LyapunovModel,
    StabilityCertificate,
    aggregate_lpf,
    build_matching_system,
    certify,
    check_certificate,
    lpf_time_derivative,
    lpf_value,
)
from .model_io import load_model, save_model  # noqa: F401
from .policy import PolicyModel  # noqa: F401
from .poly import (  # noqa: F401
    BasisSpec,
    GramPolynomial,
    MonomialPoly,
    basis_vector,
    differentiate,
    eval_gram,
    expand_gram,
    gram_support,
    multiply,
)
from .evaluate import EvalReport, ProtocolConfig, run_protocol, test_mse  # noqa: F401
from .rollout import (  # noqa: F401
    RolloutConfig,
    Trajectory,
    integrate_rollout,
    perturbed_rollout,
    streamline_field,
)
