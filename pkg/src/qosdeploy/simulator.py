"""Scenario model and the end-to-end deployment pipeline.

A scenario bundles the ground-truth target density, the agent fleet (initial
unicycle states, service profiles, active flags), the communication graph and
the run parameters. The pipeline is the two-stage process: (1) sample and
partition targets, estimate their density on every node by distributed EM;
(2) price every agent/region pair by the pose-optimal divergence cost, solve
the assignment over the network, and transport each agent to its assigned
pose with the minimum-energy controller. Deployment quality is scored by a
Monte-Carlo divergence between the estimated density and the collective
service footprint before and after the move.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import LPColumn, distributed_simplex, extract_assignment
from .control import V_MIN, UnicycleState, plan_transport
from .divergence import Pose, ServiceProfile, agent_covariance, optimal_pose
from .exceptions import ScenarioError
from .gmm import Mixture, TargetSet, distributed_em, sample_mixture
from .network import Graph, is_connected
from .validation import as_points

LOG_DENSITY_FLOOR = -700.0
_STREAMS = {"targets": 0, "init": 1, "mc": 2}


def substream(seed, label):
    """Independent, reproducible RNG for one pipeline stage."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), _STREAMS[label])))


@dataclass(frozen=True)
class Arena:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ScenarioError("arena box must have positive extent")

    @property
    def low(self):
        return np.array([self.xmin, self.ymin])

    @property
    def high(self):
        return np.array([self.xmax, self.ymax])

    @property
    def diag(self):
        return float(np.linalg.norm(self.high - self.low))


@dataclass(frozen=True)
class AgentSpec:
    state: UnicycleState
    profile: ServiceProfile
    is_active: bool


@dataclass(frozen=True)
class PipelineParams:
    consensus_loops: int = 20
    em_loops: int = 50
    delta_c: float = 0.05
    tau: float = 10.0
    dt: float = 0.01
    arrival_speed: float = 1.0
    mc_samples: int = 50000

    def __post_init__(self):
        if self.consensus_loops < 1 or self.em_loops < 1:
            raise ScenarioError("consensus_loops and em_loops must be >= 1")
        if self.delta_c <= 0:
            raise ScenarioError("delta_c must be positive")
        if self.tau <= 0:
            raise ScenarioError("tau must be positive")
        if self.dt <= 0 or self.dt > self.tau / 100:
            raise ScenarioError("dt must be positive and at most tau/100")
        if self.arrival_speed <= 0:
            raise ScenarioError("arrival_speed must be positive")
        if self.mc_samples < 1:
            raise ScenarioError("mc_samples must be >= 1")


@dataclass(frozen=True)
class Scenario:
    seed: int
    arena: Arena
    truth: Mixture
    n_targets: int
    agents: tuple
    graph: Graph
    params: PipelineParams
    quotas: tuple = None

    def __post_init__(self):
        if self.n_targets < 1:
            raise ScenarioError("n_targets must be >= 1")
        if self.graph.n != len(self.agents):
            raise ScenarioError(
                f"graph has {self.graph.n} nodes but {len(self.agents)} agents are defined"
            )
        if not any(a.is_active for a in self.agents):
            raise ScenarioError("at least one agent must be active")
        if not is_connected(self.graph):
            raise ScenarioError("the communication graph must be connected")
        if self.n_targets < len(self.agents):
            raise ScenarioError("need at least as many targets as agents")
        for idx, agent in enumerate(self.agents):
            if abs(agent.state.speed) < V_MIN:
                raise ScenarioError(
                    f"agent {idx} initial speed {agent.state.speed} below v_min={V_MIN}"
                )
        if self.quotas is not None:
            quotas = tuple(int(q) for q in self.quotas)
            if len(quotas) != len(self.agents):
                raise ScenarioError("quotas must list one count per agent")
            if any(q < 0 for q in quotas):
                raise ScenarioError("quotas must be nonnegative")
            if sum(quotas) != self.n_targets:
                raise ScenarioError(
                    f"quotas sum to {sum(quotas)} but n_targets is {self.n_targets}"
                )
            for idx, q in enumerate(quotas):
                if q > 0 and not self.agents[idx].is_active:
                    raise ScenarioError(f"agent {idx} has a quota but is not active")
            object.__setattr__(self, "quotas", quotas)

    @property
    def n_agents(self):
        return len(self.agents)

    def active_ids(self):
        return [i for i, a in enumerate(self.agents) if a.is_active]

    def run_id(self):
        digest = hashlib.sha256(
            json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        ).hexdigest()
        return digest[:12]


def _mixture_from_dict(obj, what):
    try:
        comps = obj["components"]
        weights = [c["weight"] for c in comps]
        means = np.array([c["mean"] for c in comps], dtype=float)
        covs = np.array([c["cov"] for c in comps], dtype=float)
        return Mixture.from_arrays(weights, means, covs)
    except (KeyError, TypeError, ValueError) as err:
        raise ScenarioError(f"invalid {what}: {err}") from err


def _mixture_to_dict(m: Mixture):
    return {
        "components": [
            {"weight": c.weight, "mean": list(c.mean), "cov": [list(r) for r in c.cov]}
            for c in m.components
        ]
    }


def scenario_to_dict(s: Scenario):
    return {
        "seed": s.seed,
        "arena": {"xmin": s.arena.xmin, "ymin": s.arena.ymin,
                  "xmax": s.arena.xmax, "ymax": s.arena.ymax},
        "truth": _mixture_to_dict(s.truth),
        "n_targets": s.n_targets,
        "agents": [
            {
                "position": list(a.state.position),
                "heading": a.state.heading,
                "speed": a.state.speed,
                "active": a.is_active,
                "profile": {"scale": a.profile.scale, "sigma_x": a.profile.sigma_x,
                            "sigma_y": a.profile.sigma_y},
            }
            for a in s.agents
        ],
        "adjacency": [[int(v) for v in row] for row in s.graph.adj],
        "quotas": list(s.quotas) if s.quotas is not None else None,
        "params": {
            "consensus_loops": s.params.consensus_loops,
            "em_loops": s.params.em_loops,
            "delta_c": s.params.delta_c,
            "tau": s.params.tau,
            "dt": s.params.dt,
            "arrival_speed": s.params.arrival_speed,
            "mc_samples": s.params.mc_samples,
        },
    }


def scenario_from_dict(raw) -> Scenario:
    try:
        arena = Arena(**{k: float(raw["arena"][k]) for k in ("xmin", "ymin", "xmax", "ymax")})
        truth = _mixture_from_dict(raw["truth"], "truth mixture")
        agents = []
        scales = [float(a["profile"]["scale"]) for a in raw["agents"]]
        total_scale = sum(scales)
        if total_scale <= 0:
            raise ScenarioError("profile scales must be positive")
        for a, z in zip(raw["agents"], scales):
            profile = ServiceProfile(
                scale=z,
                rel_weight=z / total_scale,
                sigma_x=float(a["profile"]["sigma_x"]),
                sigma_y=float(a["profile"]["sigma_y"]),
            )
            state = UnicycleState(
                position=np.array(a["position"], dtype=float),
                heading=float(a.get("heading", 0.0)),
                speed=float(a.get("speed", 1.0)),
            )
            agents.append(AgentSpec(state=state, profile=profile, is_active=bool(a["active"])))
        graph = Graph.from_adjacency(raw["adjacency"])
        params = PipelineParams(**raw.get("params", {}))
        quotas = raw.get("quotas")
        return Scenario(
            seed=int(raw["seed"]),
            arena=arena,
            truth=truth,
            n_targets=int(raw["n_targets"]),
            agents=tuple(agents),
            graph=graph,
            params=params,
            quotas=tuple(quotas) if quotas is not None else None,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ScenarioError(f"invalid scenario: {err}") from err


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario JSON file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ScenarioError(f"cannot read scenario file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {err}") from err
    return scenario_from_dict(raw)


def generate_targets(truth: Mixture, n_targets, seed):
    """Draw n_targets i.i.d. positions from the truth mixture."""
    rng = np.random.default_rng(seed)
    return sample_mixture(truth, int(n_targets), rng)


def partition_targets(targets, active_agents, quotas=None, rng=None) -> TargetSet:
    """Assign every target to exactly one active agent.

    With quotas (one count per active agent, summing to the target count) a
    seeded shuffle is block-partitioned to match the counts exactly; without
    quotas each target goes to the nearest active agent's initial position
    (ties to the lowest id). `active_agents` maps detector slots to
    (agent_id, position) pairs.
    """
    pts = as_points(targets, "targets")
    if not active_agents:
        raise ScenarioError("at least one active agent is required")
    ids = np.array([a[0] for a in active_agents], dtype=np.int64)
    owner = np.empty(len(pts), dtype=np.int64)
    if quotas is not None:
        quotas = [int(q) for q in quotas]
        if len(quotas) != len(active_agents):
            raise ScenarioError("need one quota per active agent")
        if sum(quotas) != len(pts):
            raise ScenarioError(f"quotas sum to {sum(quotas)}, expected {len(pts)}")
        rng = np.random.default_rng(rng)
        perm = rng.permutation(len(pts))
        start = 0
        for agent_id, quota in zip(ids, quotas):
            owner[perm[start:start + quota]] = agent_id
            start += quota
    else:
        positions = np.stack([np.asarray(a[1], dtype=float) for a in active_agents])
        dists = np.linalg.norm(pts[:, None, :] - positions[None, :, :], axis=2)
        owner = ids[np.argmin(dists, axis=1)]
    return TargetSet(points=pts, owner=owner)


@dataclass(frozen=True)
class McKld:
    """Monte-Carlo divergence estimate with its standard error."""

    value: float
    stderr: float
    n_samples: int
    n_floored: int = 0

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr,
                "n_samples": self.n_samples, "n_floored": self.n_floored}


def mc_kld(p: Mixture, q: Mixture, n_samples, seed) -> McKld:
    """Estimate D(p || q) by sampling from p.

    Sample log-densities of q are floored at -700 (underflow guard); floored
    samples are counted in the result.
    """
    rng = np.random.default_rng(seed)
    x = sample_mixture(p, int(n_samples), rng)
    log_p = p.logpdf(x)
    log_q = q.logpdf(x)
    floored = int(np.count_nonzero(log_q < LOG_DENSITY_FLOOR))
    log_q = np.maximum(log_q, LOG_DENSITY_FLOOR)
    terms = log_p - log_q
    value = float(terms.mean())
    stderr = float(terms.std(ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else 0.0
    return McKld(value=value, stderr=stderr, n_samples=int(n_samples), n_floored=floored)


def collective_qos(poses, profiles) -> Mixture:
    """Team service density: capability-weighted footprints at the poses."""
    if len(poses) != len(profiles) or not poses:
        raise ValueError("need one pose per profile")
    weights = np.array([p.rel_weight for p in profiles], dtype=float)
    weights = weights / weights.sum()
    means = np.stack([np.asarray(pose.position, dtype=float) for pose in poses])
    covs = np.stack([
        agent_covariance(profile, pose.heading)
        for pose, profile in zip(poses, profiles)
    ])
    return Mixture.from_arrays(weights, means, covs)


def initial_mixture(arena: Arena, n_components, seed) -> Mixture:
    """Deterministic shared EM initialisation over the arena box."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(arena.low, arena.high, size=(n_components, 2))
    scale = (arena.diag / 4.0) ** 2
    covs = np.stack([scale * np.eye(2)] * n_components)
    return Mixture.from_arrays(np.full(n_components, 1.0 / n_components), means, covs)


@dataclass
class RunReport:
    """Everything one pipeline run produced; later-stage fields may be None."""

    scenario: Scenario
    run_id: str
    stage: str
    targets: np.ndarray = None
    target_owner: np.ndarray = None
    estimates: list = None
    consensus_residual: float = None
    agreement_spread: float = None
    trace: list = None
    cost_matrix: np.ndarray = None
    pose_positions: np.ndarray = None
    pose_headings: np.ndarray = None
    plan: object = None
    assignment_value: float = None
    trajectories: list = None
    metrics: dict = field(default_factory=dict)


_STAGE_ORDER = {"stage1": 1, "assign": 2, "transport": 3, "run": 4}


def run_pipeline(scenario: Scenario, stage="run", shared_estimate=False,
                 trace=False, mc_samples=None) -> RunReport:
    """Execute the deployment pipeline up to `stage`.

    Stages: "stage1" (density estimation), "assign" (+ costs and the common
    assignment), "transport" (+ trajectories), "run" (+ deployment metrics).
    `shared_estimate` makes every agent price its costs with node 0's mixture
    instead of its own. `mc_samples` overrides the scenario's sample budget
    for the metric stage. Identical inputs produce identical reports.
    """
    if stage not in _STAGE_ORDER:
        raise ScenarioError(f"unknown stage {stage!r}")
    depth = _STAGE_ORDER[stage]
    params = scenario.params
    n = scenario.n_agents
    report = RunReport(scenario=scenario, run_id=scenario.run_id(), stage=stage)

    # Stage 1: targets, partition, distributed density estimation.
    rng_targets = substream(scenario.seed, "targets")
    targets = sample_mixture(scenario.truth, scenario.n_targets, rng_targets)
    active = [(i, scenario.agents[i].state.position) for i in scenario.active_ids()]
    quotas = None
    if scenario.quotas is not None:
        quotas = [scenario.quotas[i] for i, _ in active]
    tset = partition_targets(targets, active, quotas=quotas, rng=rng_targets)
    report.targets = tset.points
    report.target_owner = tset.owner

    init = initial_mixture(scenario.arena, n, substream(scenario.seed, "init"))
    trace_sink = [] if trace else None
    estimates, diag = distributed_em(
        scenario.graph, tset, n, params.em_loops, params.consensus_loops,
        delta_c=params.delta_c, init=init,
        cov_floor=1e-6 * scenario.arena.diag ** 2,
        trace_sink=trace_sink, return_diagnostics=True,
    )
    report.estimates = estimates
    report.consensus_residual = diag["weight_sum_error"]
    report.agreement_spread = diag["mean_spread"]
    report.trace = trace_sink
    if depth < 2:
        return report

    # Stage 2a: pose-optimal costs and the network-wide assignment.
    cost = np.empty((n, n))
    pose_pos = np.empty((n, n, 2))
    pose_head = np.empty((n, n))
    for i in range(n):
        source = estimates[0] if shared_estimate else estimates[i]
        for k in range(n):
            pose, c_star = optimal_pose(scenario.agents[i].profile, source.components[k])
            cost[i, k] = c_star
            pose_pos[i, k] = pose.position
            pose_head[i, k] = pose.heading
    pools = [
        [LPColumn.make(n, i, k, cost[i, k]) for k in range(n)]
        for i in range(n)
    ]
    bases = distributed_simplex(scenario.graph, pools)
    plan = extract_assignment(bases[0])
    report.cost_matrix = cost
    report.pose_positions = pose_pos
    report.pose_headings = pose_head
    report.plan = plan
    report.assignment_value = bases[0].objective
    if depth < 3:
        return report

    # Stage 2b: minimum-energy transport to the assigned poses.
    trajectories = []
    for i in range(n):
        k = plan.assignment[i]
        target = Pose(position=pose_pos[i, k], heading=pose_head[i, k])
        trajectories.append(plan_transport(
            scenario.agents[i].state, target, v_star=params.arrival_speed,
            tau=params.tau, dt=params.dt,
        ))
    report.trajectories = trajectories
    if depth < 4:
        return report

    # Metrics: divergence of the estimated density from the collective
    # footprint, before and after the move.
    n_mc = int(mc_samples if mc_samples is not None else params.mc_samples)
    profiles = [a.profile for a in scenario.agents]
    pre_poses = [a.state.pose() for a in scenario.agents]
    post_poses = [
        Pose(position=traj.states[-1, :2], heading=traj.states[-1, 2])
        for traj in trajectories
    ]
    qos_pre = collective_qos(pre_poses, profiles)
    qos_post = collective_qos(post_poses, profiles)
    p_hat = estimates[0]
    rng_mc = substream(scenario.seed, "mc")
    report.metrics = {
        "mc_kld_pre": mc_kld(p_hat, qos_pre, n_mc, rng_mc).to_dict(),
        "mc_kld_post": mc_kld(p_hat, qos_post, n_mc, rng_mc).to_dict(),
        "mc_kld_pre_truth": mc_kld(scenario.truth, qos_pre, n_mc, rng_mc).to_dict(),
        "mc_kld_post_truth": mc_kld(scenario.truth, qos_post, n_mc, rng_mc).to_dict(),
        "consensus_residual": report.consensus_residual,
        "agreement_spread": report.agreement_spread,
        "assignment_value": report.assignment_value,
    }
    return report
