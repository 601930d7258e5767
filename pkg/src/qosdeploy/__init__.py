"""Two-stage deployment of heterogeneous service agents over dense targets.

Stage 1 estimates the target density as a Gaussian mixture on every node of a
communication graph (consensus-based distributed EM); stage 2 assigns each
agent to a mixture component by minimal Gaussian-divergence cost (distributed
simplex over the assignment LP) and transports it there with a finite-time
minimum-energy controller on feedback-linearized unicycle dynamics.
"""

from .assignment import (
    AssignmentPlan,
    AssignmentProblem,
    Basis,
    LPColumn,
    build_problem,
    distributed_simplex,
    extract_assignment,
    hungarian_oracle,
    lex_simplex,
)
from .consensus import ConsensusInput, ConsensusState, consensus_step, run_consensus
from .control import (
    LinearSystem,
    Trajectory,
    TransportTask,
    UnicycleState,
    compensator_step,
    double_integrator_2d,
    gramian,
    linearize_unicycle,
    min_energy_input,
    plan_transport,
    simulate_linear,
    state_transition,
    unicycle_from_chi,
)
from .divergence import (
    AxisForm,
    Pose,
    ServiceProfile,
    axes_from_cov,
    cost_at_pose,
    cov_from_axes,
    kld_gaussian,
    optimal_pose,
)
from .estimators import CentralizedGMM, DistributedGMM
from .exceptions import NumericalError, QosDeployError, ScenarioError, SpeedSingularityError
from .gmm import (
    GaussianComponent,
    Mixture,
    TargetSet,
    centralized_em,
    distributed_em,
    e_step,
    gaussian_pdf,
    local_stats,
    mixture_pdf,
)
from .network import Graph, RoundMailbox, is_connected, neighbors, sync_round
from .render import render
from .simulator import (
    Scenario,
    collective_qos,
    generate_targets,
    load_scenario,
    mc_kld,
    partition_targets,
    run_pipeline,
)

__version__ = "0.1.0"
