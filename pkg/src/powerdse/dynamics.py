"""Classical-model rotor dynamics and fault-scenario simulation.

State per machine is the internal emf angle (rad, machine order) and the
per-unit rotor speed, nominally 1.  A scenario is a solid three-phase fault
at one bus, cleared after a fixed number of cycles by opening one line, so
three network topologies govern the trajectory in sequence.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cases import NetworkCase, without_branch
from .powerflow import PowerFlowSolution
from .reduction import (
    MachineInit,
    ReducedNetwork,
    extend_network,
    kron_reduce,
    machine_init,
    remove_bus,
)

SPEED_LIMIT = 0.2  # per-unit speed deviation treated as loss of synchronism


class ScenarioError(ValueError):
    """The fault scenario is inconsistent with the case."""


class InstabilityError(RuntimeError):
    """A machine left the stable speed band during simulation."""

    def __init__(self, machine: int, t: float, omega: float):
        super().__init__(
            f"machine {machine} lost synchronism at t={t:.4f}s "
            f"(speed {omega:.4f} pu)")
        self.machine = machine
        self.t = t
        self.omega = omega


@dataclass(frozen=True)
class DynamicState:
    """Rotor angles (rad) and per-unit speeds for all machines."""

    delta: np.ndarray
    omega: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "DynamicState":
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 2
        return cls(delta=vec[:n].copy(), omega=vec[n:].copy())


@dataclass(frozen=True)
class MachineParams:
    """Per-machine constants for the swing dynamics."""

    h: np.ndarray
    d: np.ndarray
    e_mag: np.ndarray
    p_mech: np.ndarray
    omega0: float

    @classmethod
    def from_case(cls, case: NetworkCase, init: MachineInit) -> "MachineParams":
        return cls(
            h=np.array([m.h for m in case.machines]),
            d=np.array([m.d for m in case.machines]),
            e_mag=init.e_mag.copy(),
            p_mech=init.p_mech.copy(),
            omega0=2.0 * math.pi * case.frequency,
        )

    @property
    def n_machines(self) -> int:
        return self.h.size


def electrical_power(delta: np.ndarray, e_mag: np.ndarray,
                     net: ReducedNetwork) -> np.ndarray:
    """Per-machine electrical power over the reduced network, in per unit."""
    angles = delta[:, None] - delta[None, :] - net.y_ang
    return e_mag * np.sum(net.y_mag * e_mag[None, :] * np.cos(angles), axis=1)


def swing_derivatives(x: DynamicState, params: MachineParams,
                      net: ReducedNetwork) -> DynamicState:
    """Time derivatives of the rotor states.

    Angles advance with the speed deviation scaled to electrical rad/s;
    speeds accelerate with the per-unit power imbalance over twice the
    inertia constant, less speed-proportional damping.
    """
    p_e = electrical_power(x.delta, params.e_mag, net)
    dev = x.omega - 1.0
    return DynamicState(
        delta=params.omega0 * dev,
        omega=(params.p_mech - p_e - params.d * dev) / (2.0 * params.h),
    )


def step_process(x: DynamicState, params: MachineParams, net: ReducedNetwork,
                 dt: float, noise: np.ndarray | None = None) -> DynamicState:
    """One forward-Euler step of the swing dynamics, the estimators' model.

    ``noise`` is an optional stacked (angles, speeds) additive disturbance.
    """
    deriv = swing_derivatives(x, params, net)
    delta = x.delta + dt * deriv.delta
    omega = x.omega + dt * deriv.omega
    if noise is not None:
        w = np.asarray(noise, dtype=float)
        n = delta.size
        delta = delta + w[:n]
        omega = omega + w[n:]
    return DynamicState(delta=delta, omega=omega)


class Regime(Enum):
    PreFault = "pre_fault"
    FaultOn = "fault_on"
    PostFault = "post_fault"


@dataclass(frozen=True)
class FaultScenario:
    """Solid fault at ``fault_bus`` at ``t_fault``, cleared after
    ``clearing_cycles`` cycles by opening ``cleared_line``."""

    fault_bus: int
    t_fault: float
    clearing_cycles: float
    cleared_line: tuple[int, int]
    t_end: float
    dt: float

    def t_clear(self, frequency: float) -> float:
        return self.t_fault + self.clearing_cycles / frequency

    def regime(self, t: float, frequency: float) -> Regime:
        if t < self.t_fault:
            return Regime.PreFault
        if t < self.t_clear(frequency):
            return Regime.FaultOn
        return Regime.PostFault


def validate_scenario(case: NetworkCase, scenario: FaultScenario) -> None:
    problems: list[str] = []
    if scenario.fault_bus not in {b.id for b in case.buses}:
        problems.append(f"fault bus {scenario.fault_bus} not in case")
    if not case.has_branch(*scenario.cleared_line):
        problems.append(f"cleared line {scenario.cleared_line} not in case")
    if not scenario.t_fault > 0:
        problems.append("fault time must be positive")
    if not scenario.clearing_cycles > 0:
        problems.append("clearing time must be positive")
    if not scenario.dt > 0:
        problems.append("sample interval must be positive")
    if (scenario.t_fault < scenario.t_end
            and scenario.t_clear(case.frequency) > scenario.t_end):
        problems.append("fault must clear before the end of the window")
    if problems:
        raise ScenarioError("; ".join(problems))


@dataclass(frozen=True)
class ScenarioNetworks:
    """Reduced networks for the three scenario topologies."""

    pre: ReducedNetwork
    fault: ReducedNetwork
    post: ReducedNetwork

    def for_regime(self, regime: Regime) -> ReducedNetwork:
        if regime is Regime.PreFault:
            return self.pre
        if regime is Regime.FaultOn:
            return self.fault
        return self.post


def _machine_islanded(case: NetworkCase) -> bool:
    """True when the machine terminal buses no longer share one component."""
    adjacency: dict[int, set[int]] = {b.id: set() for b in case.buses}
    for br in case.branches:
        adjacency[br.from_bus].add(br.to_bus)
        adjacency[br.to_bus].add(br.from_bus)
    terminals = set(case.machine_buses())
    start = next(iter(terminals))
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                queue.append(other)
    return not terminals <= seen


def scenario_networks(case: NetworkCase, pf: PowerFlowSolution,
                      scenario: FaultScenario) -> ScenarioNetworks:
    """Build the pre-fault, fault-on, and post-clearing reduced networks.

    The fault-on network deletes the faulted bus from the extended system
    (its voltage is pinned to zero); the post network rebuilds the system
    without the cleared line, keeping load admittances at pre-fault voltages.
    """
    validate_scenario(case, scenario)
    ext = extend_network(case, pf)
    pre = kron_reduce(ext)
    fault = kron_reduce(remove_bus(ext, scenario.fault_bus))
    post_case = without_branch(case, *scenario.cleared_line)
    if _machine_islanded(post_case):
        raise ScenarioError(
            f"clearing line {scenario.cleared_line} islands a machine")
    post = kron_reduce(extend_network(post_case, pf))
    return ScenarioNetworks(pre=pre, fault=fault, post=post)


@dataclass
class Trajectory:
    """Sampled rotor states with the regime active at each sample."""

    times: np.ndarray
    states: list[DynamicState]
    regime: list[Regime]

    def delta_matrix(self) -> np.ndarray:
        return np.stack([s.delta for s in self.states])

    def omega_matrix(self) -> np.ndarray:
        return np.stack([s.omega for s in self.states])

    def __len__(self) -> int:
        return len(self.states)


def _rk4_span(state: DynamicState, params: MachineParams, net: ReducedNetwork,
              span: float, n_sub: int) -> DynamicState:
    """Integrate the swing dynamics over one fixed-topology span.

    The hot loop computes electrical power through the complex admittance
    (same value as the cosine sum to rounding) to keep per-step cost low.
    """
    h = span / n_sub
    e_mag = params.e_mag
    y_red = net.y_red
    p_mech = params.p_mech
    d_coef = params.d
    inv_2h = 0.5 / params.h
    omega0 = params.omega0
    delta, omega = state.delta, state.omega

    def f(d: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        emf = e_mag * np.exp(1j * d)
        p_e = (emf * np.conj(y_red @ emf)).real
        dev = w - 1.0
        return omega0 * dev, (p_mech - p_e - d_coef * dev) * inv_2h

    for _ in range(n_sub):
        kd1, kw1 = f(delta, omega)
        kd2, kw2 = f(delta + 0.5 * h * kd1, omega + 0.5 * h * kw1)
        kd3, kw3 = f(delta + 0.5 * h * kd2, omega + 0.5 * h * kw2)
        kd4, kw4 = f(delta + h * kd3, omega + h * kw3)
        delta = delta + (h / 6.0) * (kd1 + 2.0 * (kd2 + kd3) + kd4)
        omega = omega + (h / 6.0) * (kw1 + 2.0 * (kw2 + kw3) + kw4)
    return DynamicState(delta=delta, omega=omega)


def simulate(case: NetworkCase, pf: PowerFlowSolution, scenario: FaultScenario,
             substeps: int = 10) -> Trajectory:
    """Reference trajectory through the fault, sampled every ``scenario.dt``.

    Integrates with classical RK4 using ``substeps`` substeps per sample
    interval, splitting any interval that contains the fault or clearing
    instant so every integration span sees a single topology.  Raises
    InstabilityError if any machine's speed leaves the stable band.
    """
    nets = scenario_networks(case, pf, scenario)
    init = machine_init(case, pf, net=nets.pre)
    params = MachineParams.from_case(case, init)

    n_steps = int(round(scenario.t_end / scenario.dt))
    times = np.arange(n_steps + 1) * scenario.dt
    switch_times = (scenario.t_fault, scenario.t_clear(case.frequency))

    state = DynamicState(delta=init.delta0.copy(),
                         omega=np.ones_like(init.delta0))
    states = [state]
    regimes = [scenario.regime(float(times[0]), case.frequency)]

    for k in range(n_steps):
        t0, t1 = float(times[k]), float(times[k + 1])
        cuts = [t0] + [s for s in switch_times if t0 < s < t1] + [t1]
        for a, b in zip(cuts[:-1], cuts[1:]):
            net = nets.for_regime(scenario.regime(a, case.frequency))
            n_sub = max(1, math.ceil(substeps * (b - a) / scenario.dt))
            state = _rk4_span(state, params, net, b - a, n_sub)
        worst = int(np.argmax(np.abs(state.omega - 1.0)))
        if abs(state.omega[worst] - 1.0) > SPEED_LIMIT:
            raise InstabilityError(machine=worst + 1, t=t1,
                                   omega=float(state.omega[worst]))
        states.append(state)
        regimes.append(scenario.regime(t1, case.frequency))

    return Trajectory(times=times, states=states, regime=regimes)
