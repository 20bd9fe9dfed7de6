"""Neural observer certification, synthesis and simulation toolkit."""

__version__ = "0.1.0"

from .nn import (
    Activation,
    IsolationForm,
    NeuralNet,
    ShapedNN,
    SignalStack,
    isolate,
    isolate_vector,
)
from .lmi import (
    LmiInstance,
    assemble_corollary2,
    assemble_theorem1,
    assemble_theorem2,
    assemble_theorem3,
    assemble_theorem4,
    qc_matrices,
    qc_value,
)
from .sdp import (
    Certificate,
    eig_sym,
    hurwitz_check,
    lyapunov_solve,
    solve_feasibility,
    verify_certificate,
)
