"""Synthetic sensor model: machine powers and bus voltages from rotor states.

A frame stacks generator active power, generator reactive power, then bus
voltage magnitude and angle for the buses present in its layout.  While a
fault is on, the faulted bus is simply absent from the layout, so frame
length varies with the network regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    DynamicState,
    MachineParams,
    ScenarioNetworks,
    Trajectory,
    electrical_power,
)
from .reduction import ReducedNetwork


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations of the sensor noise and process disturbance."""

    sigma_p: float = 0.01
    sigma_q: float = 0.01
    sigma_vmag: float = 0.005
    sigma_vang: float = 0.005
    q_delta: float = 1e-6
    q_omega: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        bad = [name for name in ("sigma_p", "sigma_q", "sigma_vmag",
                                 "sigma_vang", "q_delta", "q_omega")
               if getattr(self, name) < 0]
        if bad:
            raise ValueError(f"negative noise levels: {', '.join(bad)}")


@dataclass(frozen=True)
class MeasurementFrame:
    """One measurement sample; voltage entries follow ``bus_ids`` order."""

    t: float
    p_g: np.ndarray
    q_g: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    bus_ids: tuple[int, ...]

    def z_vector(self) -> np.ndarray:
        return np.concatenate([self.p_g, self.q_g, self.v_mag, self.v_ang])

    @property
    def size(self) -> int:
        return 2 * self.p_g.size + 2 * len(self.bus_ids)


def reactive_power(delta: np.ndarray, e_mag: np.ndarray,
                   net: ReducedNetwork) -> np.ndarray:
    """Per-machine reactive power over the reduced network, in per unit."""
    angles = delta[:, None] - delta[None, :] - net.y_ang
    return e_mag * np.sum(net.y_mag * e_mag[None, :] * np.sin(angles), axis=1)


def bus_voltages(delta: np.ndarray, e_mag: np.ndarray,
                 net: ReducedNetwork) -> np.ndarray:
    """Complex voltages of the eliminated buses, reconstructed from the emfs."""
    return net.r_v @ (e_mag * np.exp(1j * delta))


def continuous_voltage_angles(delta: np.ndarray, e_mag: np.ndarray,
                              net: ReducedNetwork) -> np.ndarray:
    """Bus voltage angles tracking the rotor angles' common mode.

    Plain ``np.angle`` folds everything into (-pi, pi], which breaks the
    angle series once the rotor angles drift a full turn.  Referencing the
    phasors to the mean rotor angle first keeps each bus angle a continuous
    function of the state; the result agrees with ``np.angle`` modulo 2pi
    and has the same Jacobian.
    """
    ref = float(np.mean(delta))
    centered = net.r_v @ (e_mag * np.exp(1j * (delta - ref)))
    return ref + np.angle(centered)


def measure(x: DynamicState, params: MachineParams, net: ReducedNetwork,
            t: float = 0.0) -> MeasurementFrame:
    """Noise-free measurement frame for one rotor state."""
    v = bus_voltages(x.delta, params.e_mag, net)
    return MeasurementFrame(
        t=t,
        p_g=electrical_power(x.delta, params.e_mag, net),
        q_g=reactive_power(x.delta, params.e_mag, net),
        v_mag=np.abs(v),
        v_ang=continuous_voltage_angles(x.delta, params.e_mag, net),
        bus_ids=net.bus_order,
    )


def _unwrap_voltage_angles(frames: list[MeasurementFrame]) -> list[MeasurementFrame]:
    """Remove 2-pi jumps from each bus's angle series over time.

    Buses that drop out and return (the faulted bus) are unwrapped per
    contiguous run.  Series that never jump come back bit-identical.
    """
    locations: dict[int, list[tuple[int, int]]] = {}
    for i, fr in enumerate(frames):
        for pos, bus in enumerate(fr.bus_ids):
            locations.setdefault(bus, []).append((i, pos))

    new_vang = [fr.v_ang.copy() for fr in frames]
    for locs in locations.values():
        runs: list[list[tuple[int, int]]] = [[locs[0]]]
        for loc in locs[1:]:
            if loc[0] == runs[-1][-1][0] + 1:
                runs[-1].append(loc)
            else:
                runs.append([loc])
        for run in runs:
            series = np.array([frames[i].v_ang[pos] for i, pos in run])
            for (i, pos), val in zip(run, np.unwrap(series)):
                new_vang[i][pos] = val

    return [
        MeasurementFrame(t=fr.t, p_g=fr.p_g, q_g=fr.q_g, v_mag=fr.v_mag,
                         v_ang=va, bus_ids=fr.bus_ids)
        for fr, va in zip(frames, new_vang)
    ]


def synthesize(traj: Trajectory, nets: ScenarioNetworks, params: MachineParams,
               noise: NoiseSpec) -> list[MeasurementFrame]:
    """Noisy measurement frames along a trajectory, one per sample.

    Angle series are unwrapped before noise is added.  The generator is
    seeded from ``noise.seed`` and consumed in a fixed order (per frame:
    active powers, reactive powers, magnitudes, angles), so equal seeds give
    identical frames.
    """
    clean = [
        measure(state, params, nets.for_regime(regime), t=float(t))
        for state, regime, t in zip(traj.states, traj.regime, traj.times)
    ]
    clean = _unwrap_voltage_angles(clean)

    rng = np.random.default_rng(noise.seed)
    frames = []
    for fr in clean:
        nm = fr.p_g.size
        nb = len(fr.bus_ids)
        frames.append(MeasurementFrame(
            t=fr.t,
            p_g=fr.p_g + noise.sigma_p * rng.standard_normal(nm),
            q_g=fr.q_g + noise.sigma_q * rng.standard_normal(nm),
            v_mag=fr.v_mag + noise.sigma_vmag * rng.standard_normal(nb),
            v_ang=fr.v_ang + noise.sigma_vang * rng.standard_normal(nb),
            bus_ids=fr.bus_ids,
        ))
    return frames


def measurement_variances(noise: NoiseSpec, n_machines: int,
                          n_buses: int) -> np.ndarray:
    """Diagonal of the measurement covariance for a given frame layout."""
    return np.concatenate([
        np.full(n_machines, noise.sigma_p ** 2),
        np.full(n_machines, noise.sigma_q ** 2),
        np.full(n_buses, noise.sigma_vmag ** 2),
        np.full(n_buses, noise.sigma_vang ** 2),
    ])


def process_variances(noise: NoiseSpec, n_machines: int) -> np.ndarray:
    """Diagonal of the process covariance (angles then speeds)."""
    return np.concatenate([
        np.full(n_machines, noise.q_delta),
        np.full(n_machines, noise.q_omega),
    ])


def measurement_indices(all_bus_ids: tuple[int, ...],
                        frame_bus_ids: tuple[int, ...],
                        n_machines: int) -> np.ndarray:
    """Positions of a frame's entries inside the full intact-layout vector.

    Lets a covariance defined over the intact layout be subset to a frame
    whose bus list is smaller (fault-on frames).
    """
    pos = {bus: i for i, bus in enumerate(all_bus_ids)}
    nb = len(all_bus_ids)
    keep = list(range(2 * n_machines))
    keep += [2 * n_machines + pos[b] for b in frame_bus_ids]
    keep += [2 * n_machines + nb + pos[b] for b in frame_bus_ids]
    return np.array(keep, dtype=int)
