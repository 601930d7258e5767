"""Active weighted-average consensus.

Only a subset of nodes injects a reference signal r^i with a positive weight
eta^i; passive nodes run the same recursion with eta = 0 and r = 0. On a
connected graph every node's output y^i tracks the weighted average
sum_i(eta^i r^i) / sum_i(eta^i), and for static inputs the tracking error
vanishes as the round count grows.

Per round l each node computes

    y(l)   = z(l) + eta * r(l)
    z(l+1) = z(l) - dc*eta*(y(l) - r(l))
                  - dc * sum_j a_ij (y_i(l) - y_j(l))
                  - dc * sum_j a_ij (v_i(l) - v_j(l))
    v(l+1) = v(l) + dc * sum_j a_ij (y_i(l) - y_j(l))

where dc > 0 is a common step size. The (y, v) pairs are the only quantities
exchanged with neighbours.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError
from .network import Graph, is_connected, sync_round
from .validation import as_float_array

DEFAULT_STEP = 0.05
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class ConsensusState:
    """One node's protocol state: output y, integrator z, auxiliary v."""

    y: np.ndarray
    z: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        y = as_float_array(self.y, "y")
        z = as_float_array(self.z, "z", shape=y.shape)
        v = as_float_array(self.v, "v", shape=y.shape)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, dim):
        zero = np.zeros(dim)
        return cls(y=zero.copy(), z=zero.copy(), v=zero.copy())


@dataclass(frozen=True)
class ConsensusInput:
    """Per-node injection: weight eta >= 0 and reference vector r.

    Passive nodes use eta = 0 and r = 0.
    """

    eta: float
    r: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValueError(f"eta must be a finite nonnegative real, got {self.eta}")
        object.__setattr__(self, "r", as_float_array(self.r, "r"))

    @classmethod
    def passive(cls, dim):
        return cls(eta=0.0, r=np.zeros(dim))


def consensus_step(state_i, input_i, neighbor_y, neighbor_v, delta_c):
    """Advance one node by one round given its neighbours' (y, v) values.

    Returns a ConsensusState holding the current output y(l) together with the
    next-round states z(l+1) and v(l+1).
    """
    if delta_c <= 0:
        raise ValueError("delta_c must be positive")
    dim = state_i.z.shape
    if input_i.r.shape != dim:
        raise ValueError(f"reference dim {input_i.r.shape} != state dim {dim}")
    for vec in (*neighbor_y, *neighbor_v):
        if np.shape(vec) != dim:
            raise ValueError("neighbor vector dimension mismatch")

    y = state_i.z + input_i.eta * input_i.r
    sum_dy = sum((y - np.asarray(yj) for yj in neighbor_y), start=np.zeros(dim))
    sum_dv = sum((state_i.v - np.asarray(vj) for vj in neighbor_v), start=np.zeros(dim))
    z_next = state_i.z - delta_c * input_i.eta * (y - input_i.r) - delta_c * sum_dy - delta_c * sum_dv
    v_next = state_i.v + delta_c * sum_dy
    return ConsensusState(y=y, z=z_next, v=v_next)


def run_consensus(g: Graph, inputs, init=None, n_rounds=1, delta_c=DEFAULT_STEP,
                  normalize_weights=True, return_trace=False):
    """Run `n_rounds` synchronous consensus rounds on graph g.

    Parameters
    ----------
    inputs : sequence of ConsensusInput, one per node (static over the run).
    init : optional sequence of (z0, v0) pairs; defaults to zeros. The final
        (z, v) states are returned so a later call can warm-start from them.
    normalize_weights : rescale all eta by their maximum before iterating.
        The tracked weighted average is invariant under a common positive
        rescaling of the weights, and bounded weights keep the fixed step
        size stable regardless of the raw weight magnitudes.

    Returns the list of per-node final ConsensusState (y(L), z(L+1), v(L+1)),
    plus the per-round y trace when `return_trace` is set.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if not is_connected(g):
        raise ValueError("consensus requires a connected graph")
    if len(inputs) != g.n:
        raise ValueError(f"expected {g.n} inputs, got {len(inputs)}")
    dim = inputs[0].r.shape
    for inp in inputs:
        if inp.r.shape != dim:
            raise ValueError("all references must share one dimension")

    eta_max = max(inp.eta for inp in inputs)
    if eta_max == 0:
        raise ValueError("all-passive input set: the weighted average is undefined")
    scale = eta_max if normalize_weights else 1.0
    scaled = [ConsensusInput(eta=inp.eta / scale, r=inp.r) for inp in inputs]

    if init is None:
        states = [ConsensusState.zeros(dim) for _ in range(g.n)]
    else:
        states = [ConsensusState(y=np.zeros(dim), z=z0, v=v0) for z0, v0 in init]

    trace = [] if return_trace else None
    for _ in range(n_rounds):
        outputs = [st.z + inp.eta * inp.r for st, inp in zip(states, scaled)]
        mailbox = sync_round(g, [(y, st.v) for y, st in zip(outputs, states)])
        new_states = []
        for i in range(g.n):
            inbox = mailbox[i]
            ny = [inbox[j][0] for j in sorted(inbox)]
            nv = [inbox[j][1] for j in sorted(inbox)]
            new_states.append(consensus_step(states[i], scaled[i], ny, nv, delta_c))
        states = new_states
        if trace is not None:
            trace.append(np.stack([st.y for st in states]))
        peak = max(float(np.max(np.abs(st.y))) for st in states)
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise NumericalError(
                f"consensus diverged (max |y| = {peak:g}); reduce delta_c"
            )
    if return_trace:
        return states, np.stack(trace)
    return states


def run_consensus_batch(adj, eta, refs, z, v, n_rounds, delta_c=DEFAULT_STEP, trace=None):
    """Vectorised consensus over many independent streams on one graph.

    Each column of the (n_nodes, n_streams) weight matrix `eta` together with
    the matching column block of `refs` defines one consensus instance; all
    instances advance in lockstep with shared round barriers. `refs`, `z`, `v`
    have shape (n_nodes, n_streams, dim). Weights are normalised per stream by
    their maximum; streams whose weights are all zero are left untouched (their
    y output is reported as NaN so callers can skip them). When `trace` is a
    list, the per-round y array is appended to it.

    Returns (y, z_next, v_next) with the shapes of `refs`. The arithmetic per
    stream matches `run_consensus` on the same inputs.
    """
    adj = np.asarray(adj, dtype=float)
    deg = adj.sum(axis=1)
    eta = np.asarray(eta, dtype=float)
    n_nodes, n_streams = eta.shape
    refs = np.asarray(refs, dtype=float)
    dim = refs.shape[2]

    scale = eta.max(axis=0)
    live = scale > 0
    eta_n = np.zeros_like(eta)
    eta_n[:, live] = eta[:, live] / scale[live]
    w = eta_n[:, :, None]

    z = z.copy()
    v = v.copy()
    y = np.full_like(refs, np.nan)
    for _ in range(n_rounds):
        y_all = z + w * refs
        flat_y = y_all.reshape(n_nodes, n_streams * dim)
        flat_v = v.reshape(n_nodes, n_streams * dim)
        lap_y = (deg[:, None] * flat_y - adj @ flat_y).reshape(n_nodes, n_streams, dim)
        lap_v = (deg[:, None] * flat_v - adj @ flat_v).reshape(n_nodes, n_streams, dim)
        z_new = z - delta_c * w * (y_all - refs) - delta_c * lap_y - delta_c * lap_v
        v_new = v + delta_c * lap_y
        z[:, live] = z_new[:, live]
        v[:, live] = v_new[:, live]
        y[:, live] = y_all[:, live]
        if trace is not None:
            trace.append(y.copy())
        peak = np.max(np.abs(y[:, live])) if live.any() else 0.0
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise NumericalError(
                f"consensus diverged (max |y| = {peak:g}); reduce delta_c"
            )
    return y, z, v
