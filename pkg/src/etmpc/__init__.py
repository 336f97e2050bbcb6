"""Event-triggered networked MPC toolkit.

Condenses linear MPC problems to dense QPs, solves them with an active-set
method on a central node, ships regional affine feedback laws to local
nodes under four wire encodings, and accounts for every transmitted bit
and every local flop against exact closed-form cost models.
"""

from .costmodel import (
    BITS_PER_REAL,
    CostReport,
    Dims,
    FlopCounter,
    INV_MAT_RATIO_BOUND,
    VARIANTS,
    check_ratio_bound,
    compare_encodings,
    inv_mat_ratio,
    predicted_bits,
    predicted_flops,
    split_flops,
)
from .errors import (
    CentralInfeasible,
    DareDivergence,
    DegenerateActiveSet,
    EncodingRangeError,
    EtmpcError,
    FramingError,
    Infeasible,
    RankDeficient,
    TransportError,
    TransportTimeout,
    ValidationError,
)
from .netio import CentralNode, CentralServer, LoopbackTransport, NodeClient, SocketTransport
from .problem import (
    CondensedQp,
    MpcProblem,
    bundled_problem_names,
    condense,
    discretize_zoh,
    load_problem,
    solve_dare,
    validate,
)
from .protocol import (
    Half,
    WireMessage,
    decode_a1,
    decode_a2,
    decode_a3,
    decode_a4,
    encode_a1,
    encode_a2,
    encode_a3,
    encode_a4,
    gram_inverse,
)
from .qp import QpSolution, identify_active_set, is_feasible, solve
from .region import (
    ActiveSet,
    BACKENDS,
    Region,
    build_region,
    build_region_from_inverse,
    contains,
    evaluate_law,
    region_multipliers,
)
from .sim import (
    BatchReport,
    SimConfig,
    Trajectory,
    max_state_deviation,
    run_batch,
    sample_feasible_states,
    simulate_classical,
    simulate_event_triggered,
)

__version__ = "0.1.0"
