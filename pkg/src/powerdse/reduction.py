"""Reduction of the network to machine internal nodes.

Loads become constant admittances at their power-flow voltages, every machine
adds an internal emf node behind its transient reactance, and all network
buses are then eliminated, leaving a dense machine-to-machine admittance plus
a linear map that reconstructs network bus voltages from the internal emfs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cases import NetworkCase
from .powerflow import PowerFlowSolution, build_ybus


class ReductionError(RuntimeError):
    """The network block to eliminate is singular or disconnected."""


@dataclass(frozen=True)
class ExtendedAdmittance:
    """Block admittance of the network augmented with machine internal nodes.

    Block rows/columns are (network buses, machine nodes): y11 couples buses,
    y22 couples machine nodes, y12/y21 tie each machine to its terminal bus.
    """

    y11: np.ndarray
    y12: np.ndarray
    y21: np.ndarray
    y22: np.ndarray
    bus_order: tuple[int, ...]
    machine_order: tuple[int, ...]


@dataclass(frozen=True)
class ReducedNetwork:
    """Machine-node equivalent left after eliminating all network buses."""

    y_red: np.ndarray
    y_mag: np.ndarray
    y_ang: np.ndarray
    r_v: np.ndarray
    bus_order: tuple[int, ...]
    machine_order: tuple[int, ...]

    @property
    def n_machines(self) -> int:
        return self.y_red.shape[0]


def extend_network(case: NetworkCase, pf: PowerFlowSolution) -> ExtendedAdmittance:
    """Augment the bus admittance matrix with loads and machine internal nodes.

    Loads enter as fixed shunt admittances conj(S_load)/|V|^2 at their
    power-flow voltage magnitudes; each machine contributes 1/(j xd') between
    its internal node and its terminal bus.  Loads sharing a machine's
    terminal bus stay on the bus side.
    """
    idx = case.bus_index()
    nb = len(case.buses)
    nm = len(case.machines)

    y11 = build_ybus(case)
    for pos, bus in enumerate(case.buses):
        if bus.p_load != 0.0 or bus.q_load != 0.0:
            vm = pf.v_mag[pos]
            y11[pos, pos] += complex(bus.p_load, -bus.q_load) / (vm * vm)

    y12 = np.zeros((nb, nm), dtype=complex)
    y22 = np.zeros((nm, nm), dtype=complex)
    for col, m in enumerate(case.machines):
        ym = 1.0 / complex(0.0, m.xd_prime)
        pos = idx[m.bus]
        y11[pos, pos] += ym
        y22[col, col] = ym
        y12[pos, col] = -ym

    return ExtendedAdmittance(
        y11=y11, y12=y12, y21=y12.T.copy(), y22=y22,
        bus_order=tuple(b.id for b in case.buses),
        machine_order=case.machine_buses(),
    )


def remove_bus(ext: ExtendedAdmittance, bus_id: int) -> ExtendedAdmittance:
    """Extended system with one network bus deleted (a solid fault to ground)."""
    if bus_id not in ext.bus_order:
        raise ReductionError(f"bus {bus_id} is not part of the extended network")
    pos = ext.bus_order.index(bus_id)
    keep = [i for i in range(len(ext.bus_order)) if i != pos]
    return ExtendedAdmittance(
        y11=ext.y11[np.ix_(keep, keep)],
        y12=ext.y12[keep, :],
        y21=ext.y21[:, keep],
        y22=ext.y22,
        bus_order=tuple(b for b in ext.bus_order if b != bus_id),
        machine_order=ext.machine_order,
    )


def kron_reduce(ext: ExtendedAdmittance) -> ReducedNetwork:
    """Eliminate all network buses, keeping only machine internal nodes.

    Also returns the reconstruction matrix r_v mapping internal emfs to the
    eliminated bus voltages.  Raises ReductionError when the bus block is
    numerically singular.
    """
    cond = np.linalg.cond(ext.y11)
    if not np.isfinite(cond) or cond > 1e12:
        raise ReductionError(
            f"bus admittance block is numerically singular (cond {cond:.3e})")
    solved = np.linalg.solve(ext.y11, ext.y12)
    y_red = ext.y22 - ext.y21 @ solved
    return ReducedNetwork(
        y_red=y_red,
        y_mag=np.abs(y_red),
        y_ang=np.angle(y_red),
        r_v=-solved,
        bus_order=ext.bus_order,
        machine_order=ext.machine_order,
    )


@dataclass(frozen=True)
class MachineInit:
    """Internal emf magnitudes, equilibrium rotor angles, mechanical powers."""

    e_mag: np.ndarray
    delta0: np.ndarray
    p_mech: np.ndarray


def machine_init(case: NetworkCase, pf: PowerFlowSolution,
                 net: ReducedNetwork | None = None) -> MachineInit:
    """Back out machine internal states from a converged power flow.

    The emf is the terminal voltage plus the transient-reactance drop at the
    machine's net generated power (bus injection plus local load).  Mechanical
    power is set to the electrical power at the equilibrium angles, so an
    unfaulted simulation started here stays put.
    """
    if net is None:
        net = kron_reduce(extend_network(case, pf))
    idx = case.bus_index()
    emf = np.zeros(len(case.machines), dtype=complex)
    for k, m in enumerate(case.machines):
        pos = idx[m.bus]
        v = pf.v_mag[pos] * np.exp(1j * pf.v_ang[pos])
        bus = case.buses[pos]
        s_gen = complex(pf.p_inj[pos] + bus.p_load, pf.q_inj[pos] + bus.q_load)
        current = np.conj(s_gen / v)
        emf[k] = v + 1j * m.xd_prime * current
    delta0 = np.angle(emf)
    e_mag = np.abs(emf)
    # Mirror the electrical-power expression of the dynamics module exactly,
    # evaluated at the polar (delta0, e_mag) pair: the equilibrium is then a
    # bitwise fixed point of the discrete process model.
    angles = delta0[:, None] - delta0[None, :] - net.y_ang
    p_mech = e_mag * np.sum(net.y_mag * e_mag[None, :] * np.cos(angles), axis=1)
    return MachineInit(e_mag=e_mag, delta0=delta0, p_mech=p_mech)
