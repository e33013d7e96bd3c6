"""Flow-based water network model.

Tanks integrate controlled flows and consumer demand; mixing nodes impose
storage-free flow conservation. With tank volumes x (m^3), controlled flow
set-points u (m^3/s) and demand-sector flows d (m^3/s), the discrete-time
model over a sampling interval dt is

    x[k+1] = A x[k] + B u[k] + Gd d[k]
    0      = E u[k] + Ed d[k]

All flows are unidirectional, so u_min = 0 and u_max is the pumping or
valve capacity. Instances are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Raised when a network topology is internally inconsistent."""


@dataclass(frozen=True)
class Tank:
    """Storage tank with volume bounds and a soft safety level (m^3).

    ``inflows``/``outflows`` are indices of controlled flows filling or
    draining the tank; ``demands`` are indices of demand sectors drawing
    directly from it.
    """

    v_min: float
    v_max: float
    v_safe: float
    inflows: tuple[int, ...] = ()
    outflows: tuple[int, ...] = ()
    demands: tuple[int, ...] = ()


@dataclass(frozen=True)
class ControlledFlow:
    """Pump or valve with capacity q_max (m^3/s) and production price alpha0."""

    kind: str
    q_max: float
    alpha0: float = 0.0


@dataclass(frozen=True)
class MixingNode:
    """Storage-free junction; net inflow must equal net outflow."""

    inflows: tuple[int, ...] = ()
    outflows: tuple[int, ...] = ()
    demands: tuple[int, ...] = ()


@dataclass(frozen=True)
class NetworkTopology:
    """Element-level description of a flow-based network."""

    tanks: tuple[Tank, ...]
    flows: tuple[ControlledFlow, ...]
    n_demands: int
    mixing_nodes: tuple[MixingNode, ...] = ()


@dataclass
class NetworkModel:
    """Discrete-time LTI network model with box bounds and prices.

    Matrices follow the mass-balance structure produced by
    :func:`build_lti`: A is the identity for pure storage tanks, B columns
    hold +dt/-dt entries for flows entering/leaving a tank, Gd holds -dt
    entries for tank-attached demands, and E/Ed encode the mixing-node
    conservation rows with +1/-1 coefficients. Generality beyond that
    structure (for example a non-identity A) is accepted when loading a
    model from file.
    """

    A: np.ndarray
    B: np.ndarray
    Gd: np.ndarray
    E: np.ndarray
    Ed: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    x_safe: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    alpha0: np.ndarray
    dt: float
    tank_names: tuple[str, ...] = field(default=())
    flow_names: tuple[str, ...] = field(default=())

    @property
    def n_tanks(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_demands(self) -> int:
        return self.Gd.shape[1]

    @property
    def n_mixing(self) -> int:
        return self.E.shape[0]

    def validate(self) -> None:
        """Check dimensional consistency and bound ordering; raise ValueError."""
        nt, nu, nd, ns = self.n_tanks, self.n_inputs, self.n_demands, self.n_mixing
        if self.A.shape != (nt, nt):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape != (nt, nu):
            raise ValueError(f"B shape {self.B.shape} inconsistent with {nt} tanks")
        if self.Gd.shape != (nt, nd):
            raise ValueError(f"Gd shape {self.Gd.shape} inconsistent with {nt} tanks")
        if self.E.shape != (ns, nu) or self.Ed.shape != (ns, nd):
            raise ValueError(
                f"coupling shapes E{self.E.shape}, Ed{self.Ed.shape} inconsistent"
            )
        for name, vec, n in (
            ("x_min", self.x_min, nt),
            ("x_max", self.x_max, nt),
            ("x_safe", self.x_safe, nt),
            ("u_min", self.u_min, nu),
            ("u_max", self.u_max, nu),
            ("alpha0", self.alpha0, nu),
        ):
            if vec.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {vec.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(self.x_min > self.x_max):
            raise ValueError("x_min must not exceed x_max")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")

    def step_dynamics(self, x: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        """One exact step A x + B u + Gd d, without any clamping."""
        x, u, d = np.asarray(x, float), np.asarray(u, float), np.asarray(d, float)
        if x.shape != (self.n_tanks,):
            raise ValueError(f"state must have shape ({self.n_tanks},), got {x.shape}")
        if u.shape != (self.n_inputs,):
            raise ValueError(f"input must have shape ({self.n_inputs},), got {u.shape}")
        if d.shape != (self.n_demands,):
            raise ValueError(f"demand must have shape ({self.n_demands},), got {d.shape}")
        return self.A @ x + self.B @ u + self.Gd @ d

    def coupling_residual(self, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Mixing-node residual E u + Ed d; zero iff mass balance holds."""
        u, d = np.asarray(u, float), np.asarray(d, float)
        if u.shape != (self.n_inputs,):
            raise ValueError(f"input must have shape ({self.n_inputs},), got {u.shape}")
        if d.shape != (self.n_demands,):
            raise ValueError(f"demand must have shape ({self.n_demands},), got {d.shape}")
        return self.E @ u + self.Ed @ d


def _check_topology(top: NetworkTopology) -> None:
    nt, nu, nd = len(top.tanks), len(top.flows), top.n_demands
    if nt < 1 or nu < 1 or nd < 1:
        raise TopologyError("need at least one tank, one controlled flow and one demand")
    for j, tank in enumerate(top.tanks):
        if not tank.v_min <= tank.v_safe <= tank.v_max:
            raise TopologyError(
                f"tank {j}: require v_min <= v_safe <= v_max, "
                f"got ({tank.v_min}, {tank.v_safe}, {tank.v_max})"
            )
        overlap = set(tank.inflows) & set(tank.outflows)
        if overlap:
            raise TopologyError(
                f"tank {j}: flow {sorted(overlap)[0]} is both inflow and outflow"
            )
    for i, flow in enumerate(top.flows):
        if flow.q_max <= 0:
            raise TopologyError(f"flow {i}: q_max must be positive")
        if flow.kind not in ("pump", "valve"):
            raise TopologyError(f"flow {i}: kind must be 'pump' or 'valve'")
    referenced: set[int] = set()
    for tank in top.tanks:
        referenced.update(tank.inflows)
        referenced.update(tank.outflows)
    for s, node in enumerate(top.mixing_nodes):
        if not node.inflows:
            raise TopologyError(f"mixing node {s} has no incoming flow")
        if not node.outflows and not node.demands:
            raise TopologyError(f"mixing node {s} has no outgoing flow")
        referenced.update(node.inflows)
        referenced.update(node.outflows)
    bad = [i for i in referenced if not 0 <= i < nu]
    if bad:
        raise TopologyError(f"controlled flow index {sorted(bad)[0]} out of range [0, {nu})")
    missing = set(range(nu)) - referenced
    if missing:
        raise TopologyError(
            f"controlled flow {sorted(missing)[0]} appears in no incidence list"
        )
    demand_refs: set[int] = set()
    for tank in top.tanks:
        demand_refs.update(tank.demands)
    for node in top.mixing_nodes:
        demand_refs.update(node.demands)
    bad = [i for i in demand_refs if not 0 <= i < nd]
    if bad:
        raise TopologyError(f"demand index {bad[0]} out of range [0, {nd})")


def build_lti(topology: NetworkTopology, dt: float) -> NetworkModel:
    """Assemble the discrete-time model from an element-level topology.

    Tanks are pure integrators, so exact discretization gives A = I and
    forward flow sums scaled by dt. A flow may connect two tanks directly,
    producing one +dt and one -dt entry in the same B column.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_topology(topology)
    nt, nu, nd = len(topology.tanks), len(topology.flows), topology.n_demands
    ns = len(topology.mixing_nodes)

    A = np.eye(nt)
    B = np.zeros((nt, nu))
    Gd = np.zeros((nt, nd))
    for j, tank in enumerate(topology.tanks):
        for i in tank.inflows:
            B[j, i] += dt
        for i in tank.outflows:
            B[j, i] -= dt
        for i in tank.demands:
            Gd[j, i] -= dt

    E = np.zeros((ns, nu))
    Ed = np.zeros((ns, nd))
    for s, node in enumerate(topology.mixing_nodes):
        for i in node.inflows:
            E[s, i] += 1.0
        for i in node.outflows:
            E[s, i] -= 1.0
        for i in node.demands:
            Ed[s, i] -= 1.0

    model = NetworkModel(
        A=A,
        B=B,
        Gd=Gd,
        E=E,
        Ed=Ed,
        x_min=np.array([t.v_min for t in topology.tanks], float),
        x_max=np.array([t.v_max for t in topology.tanks], float),
        x_safe=np.array([t.v_safe for t in topology.tanks], float),
        u_min=np.zeros(nu),
        u_max=np.array([f.q_max for f in topology.flows], float),
        alpha0=np.array([f.alpha0 for f in topology.flows], float),
        dt=float(dt),
    )
    model.validate()
    return model
