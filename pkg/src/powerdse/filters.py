"""Gaussian state estimators: an extended and an unscented Kalman filter.

Both filters are generic over a process model and a measurement model given
as plain callables on flat state vectors, so the same code runs the rotor
estimation problem and ordinary linear-Gaussian systems.  Swing-specific
bindings build those models from machine parameters and a reduced network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cases import NetworkCase
from .dynamics import (
    DynamicState,
    FaultScenario,
    MachineParams,
    Trajectory,
    electrical_power,
    scenario_networks,
    step_process,
)
from .measurement import (
    MeasurementFrame,
    continuous_voltage_angles,
    measurement_indices,
    reactive_power,
)
from .powerflow import PowerFlowSolution
from .reduction import ReducedNetwork, machine_init


class FilterNumericsError(RuntimeError):
    """A covariance factorization or solve broke down."""


@dataclass(frozen=True)
class GaussianBelief:
    """State estimate with covariance."""

    x_hat: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class ProcessModel:
    """One-step state transition: ``step`` maps x to x', ``jacobian`` gives
    its derivative at x.  ``step_many`` optionally maps (k, n) stacks."""

    step: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    step_many: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class MeasurementModel:
    """Observation map: ``observe`` maps x to the predicted measurement."""

    observe: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    observe_many: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class FilterConfig:
    """Which filter to run and its tuning.

    ``q`` and ``r`` are the process and measurement covariances; ``r`` spans
    the intact measurement layout and is subset per frame.  ``sigma_scheme``
    selects the symmetric equal-weight point set (default) or the scaled
    alternative with its three tuning constants.
    """

    kind: str
    q: np.ndarray
    r: np.ndarray
    jitter: float = 1e-9
    jacobian_mode: str = "analytic"
    sigma_scheme: str = "symmetric"
    ut_alpha: float = 1e-3
    ut_beta: float = 2.0
    ut_kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ekf", "ukf"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.jacobian_mode not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.sigma_scheme not in ("symmetric", "scaled"):
            raise ValueError(f"unknown sigma scheme {self.sigma_scheme!r}")


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def init_belief(x0: np.ndarray, p0: np.ndarray) -> GaussianBelief:
    """Validated initial belief: p0 must be symmetric positive semidefinite."""
    x0 = np.asarray(x0, dtype=float).copy()
    p0 = np.asarray(p0, dtype=float).copy()
    if x0.ndim != 1 or p0.shape != (x0.size, x0.size):
        raise ValueError(f"shape mismatch: state {x0.shape}, covariance {p0.shape}")
    if np.max(np.abs(p0 - p0.T)) > 1e-9:
        raise ValueError("initial covariance is not symmetric")
    eigs = np.linalg.eigvalsh(_symmetrize(p0))
    if eigs.min() < -1e-10:
        raise ValueError(f"initial covariance has negative eigenvalue {eigs.min():.3e}")
    return GaussianBelief(x_hat=x0, p=_symmetrize(p0))


def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray],
                               x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``func`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        step = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        cols.append((func(xp) - func(xm)) / (2.0 * step))
    return np.stack(cols, axis=1)


# --- extended filter ---------------------------------------------------------


def ekf_predict(belief: GaussianBelief, model: ProcessModel,
                q: np.ndarray) -> GaussianBelief:
    """Propagate the belief through the process model and inflate by q."""
    jac = model.jacobian(belief.x_hat)
    x = model.step(belief.x_hat)
    p = jac @ belief.p @ jac.T + q
    return GaussianBelief(x_hat=x, p=_symmetrize(p))


def ekf_update(belief: GaussianBelief, z: np.ndarray, model: MeasurementModel,
               r: np.ndarray) -> GaussianBelief:
    """Condition the belief on one measurement via the linearized gain."""
    jac = model.jacobian(belief.x_hat)
    innovation = z - model.observe(belief.x_hat)
    s = jac @ belief.p @ jac.T + r
    try:
        gain = np.linalg.solve(s, jac @ belief.p).T
    except np.linalg.LinAlgError as exc:
        raise FilterNumericsError(
            f"singular innovation covariance (cond {np.linalg.cond(s):.3e})") from exc
    x = belief.x_hat + gain @ innovation
    p = (np.eye(belief.x_hat.size) - gain @ jac) @ belief.p
    return GaussianBelief(x_hat=x, p=_symmetrize(p))


# --- unscented filter --------------------------------------------------------


def _psd_sqrt(mat: np.ndarray, jitter: float) -> np.ndarray:
    """Lower-triangular factor of a nominally PSD matrix, with one retry."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise FilterNumericsError(
            "covariance is not positive semidefinite within jitter") from exc


def sigma_points(belief: GaussianBelief, jitter: float = 1e-9) -> np.ndarray:
    """Symmetric equal-weight point set: 2n points at x +- the columns of a
    factor of n P, each carrying weight 1/(2n).  No point sits at the mean."""
    n = belief.x_hat.size
    root = _psd_sqrt(n * belief.p, jitter)
    return np.concatenate([belief.x_hat + root.T, belief.x_hat - root.T])


def _sigma_set(belief: GaussianBelief,
               cfg: "FilterConfig") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(points, mean weights, covariance weights) for the configured scheme."""
    n = belief.x_hat.size
    if cfg.sigma_scheme == "symmetric":
        pts = sigma_points(belief, cfg.jitter)
        w = np.full(2 * n, 1.0 / (2 * n))
        return pts, w, w
    lam = cfg.ut_alpha ** 2 * (n + cfg.ut_kappa) - n
    root = _psd_sqrt((n + lam) * belief.p, cfg.jitter)
    pts = np.concatenate([
        belief.x_hat[None, :],
        belief.x_hat + root.T,
        belief.x_hat - root.T,
    ])
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wm[0] = lam / (n + lam)
    wc = wm.copy()
    wc[0] += 1.0 - cfg.ut_alpha ** 2 + cfg.ut_beta
    return pts, wm, wc


def _through(points: np.ndarray, one: Callable, many: Callable | None) -> np.ndarray:
    if many is not None:
        return many(points)
    return np.array([one(p) for p in points])


def ukf_predict(belief: GaussianBelief, model: ProcessModel, q: np.ndarray,
                cfg: "FilterConfig") -> tuple[GaussianBelief, np.ndarray]:
    """Propagate sigma points through the process model.

    Returns the predicted belief and the propagated points (the update stage
    draws a fresh set from the predicted belief rather than reusing these).
    """
    pts, wm, wc = _sigma_set(belief, cfg)
    prop = _through(pts, model.step, model.step_many)
    x = wm @ prop
    dev = prop - x
    p = (dev * wc[:, None]).T @ dev + q
    return GaussianBelief(x_hat=x, p=_symmetrize(p)), prop


def ukf_update(belief: GaussianBelief, z: np.ndarray, model: MeasurementModel,
               r: np.ndarray, cfg: "FilterConfig") -> GaussianBelief:
    """Condition the predicted belief on a measurement via fresh sigma points."""
    pts, wm, wc = _sigma_set(belief, cfg)
    obs = _through(pts, model.observe, model.observe_many)
    z_hat = wm @ obs
    dz = obs - z_hat
    dx = pts - belief.x_hat
    p_zz = (dz * wc[:, None]).T @ dz + r
    p_xz = (dx * wc[:, None]).T @ dz
    try:
        gain = np.linalg.solve(p_zz, p_xz.T).T
    except np.linalg.LinAlgError as exc:
        raise FilterNumericsError(
            f"singular innovation covariance (cond {np.linalg.cond(p_zz):.3e})") from exc
    x = belief.x_hat + gain @ (z - z_hat)
    p = belief.p - gain @ p_zz @ gain.T
    return GaussianBelief(x_hat=x, p=_symmetrize(p))


# --- swing-model bindings ----------------------------------------------------


def electrical_power_jacobian(delta: np.ndarray, e_mag: np.ndarray,
                              net: ReducedNetwork) -> np.ndarray:
    """Derivative of per-machine electrical power with respect to the angles."""
    angles = delta[:, None] - delta[None, :] - net.y_ang
    cross = (e_mag[:, None] * e_mag[None, :]) * net.y_mag * np.sin(angles)
    np.fill_diagonal(cross, 0.0)
    jac = cross.copy()
    np.fill_diagonal(jac, -cross.sum(axis=1))
    return jac


def reactive_power_jacobian(delta: np.ndarray, e_mag: np.ndarray,
                            net: ReducedNetwork) -> np.ndarray:
    """Derivative of per-machine reactive power with respect to the angles."""
    angles = delta[:, None] - delta[None, :] - net.y_ang
    cross = (e_mag[:, None] * e_mag[None, :]) * net.y_mag * np.cos(angles)
    np.fill_diagonal(cross, 0.0)
    jac = -cross
    np.fill_diagonal(jac, cross.sum(axis=1))
    return jac


def process_jacobian(x: DynamicState, params: MachineParams,
                     net: ReducedNetwork, dt: float) -> np.ndarray:
    """Derivative of the one-step Euler transition with respect to the state.

    Block form: identity on angles plus dt-scaled speed coupling; the speed
    rows carry the electrical-power sensitivity and the damping decay.
    """
    nm = params.n_machines
    dp = electrical_power_jacobian(x.delta, params.e_mag, net)
    jac = np.zeros((2 * nm, 2 * nm))
    jac[:nm, :nm] = np.eye(nm)
    jac[:nm, nm:] = dt * params.omega0 * np.eye(nm)
    jac[nm:, :nm] = -dt * dp / (2.0 * params.h)[:, None]
    jac[nm:, nm:] = np.diag(1.0 - dt * params.d / (2.0 * params.h))
    return jac


def measurement_jacobian(x: DynamicState, params: MachineParams,
                         net: ReducedNetwork) -> np.ndarray:
    """Derivative of the stacked observation map with respect to the state.

    Rows follow the frame layout (active power, reactive power, voltage
    magnitudes, voltage angles); speed columns are identically zero.  Raises
    ValueError if a reconstructed bus voltage is zero, where the angle
    derivative is undefined.
    """
    nm = params.n_machines
    nb = len(net.bus_order)
    emf = params.e_mag * np.exp(1j * x.delta)
    v = net.r_v @ emf
    vm = np.abs(v)
    dead = np.flatnonzero(vm < 1e-12)
    if dead.size:
        bus = net.bus_order[int(dead[0])]
        raise ValueError(f"reconstructed voltage at bus {bus} is zero; "
                         "angle derivative undefined")
    dv = net.r_v * (1j * emf)[None, :]
    inner = np.conj(v)[:, None] * dv
    jac = np.zeros((2 * nm + 2 * nb, 2 * nm))
    jac[:nm, :nm] = electrical_power_jacobian(x.delta, params.e_mag, net)
    jac[nm:2 * nm, :nm] = reactive_power_jacobian(x.delta, params.e_mag, net)
    jac[2 * nm:2 * nm + nb, :nm] = inner.real / vm[:, None]
    jac[2 * nm + nb:, :nm] = inner.imag / (vm * vm)[:, None]
    return jac


def swing_process_model(params: MachineParams, net: ReducedNetwork, dt: float,
                        use_fd: bool = False) -> ProcessModel:
    """Forward-Euler rotor transition bound to one network topology."""
    nm = params.n_machines

    def step(vec: np.ndarray) -> np.ndarray:
        x = DynamicState(delta=vec[:nm], omega=vec[nm:])
        return step_process(x, params, net, dt).as_vector()

    def step_many(stack: np.ndarray) -> np.ndarray:
        delta = stack[:, :nm]
        omega = stack[:, nm:]
        angles = delta[:, :, None] - delta[:, None, :] - net.y_ang[None, :, :]
        p_e = params.e_mag[None, :] * np.einsum(
            "kij,j->ki", np.cos(angles) * net.y_mag[None, :, :], params.e_mag)
        dev = omega - 1.0
        return np.concatenate([
            delta + dt * params.omega0 * dev,
            omega + dt * (params.p_mech[None, :] - p_e - params.d[None, :] * dev)
            / (2.0 * params.h[None, :]),
        ], axis=1)

    if use_fd:
        def jacobian(vec: np.ndarray) -> np.ndarray:
            return finite_difference_jacobian(step, vec)
    else:
        def jacobian(vec: np.ndarray) -> np.ndarray:
            x = DynamicState(delta=vec[:nm], omega=vec[nm:])
            return process_jacobian(x, params, net, dt)

    return ProcessModel(step=step, jacobian=jacobian, step_many=step_many)


def swing_measurement_model(params: MachineParams, net: ReducedNetwork,
                            use_fd: bool = False) -> MeasurementModel:
    """Power-and-voltage observation map bound to one network topology.

    Voltage angles use the continuous convention of ``measure``, so predicted
    measurements stay comparable to unwrapped frames without residual fixups.
    """
    nm = params.n_machines

    def observe(vec: np.ndarray) -> np.ndarray:
        delta = vec[:nm]
        v = net.r_v @ (params.e_mag * np.exp(1j * delta))
        return np.concatenate([
            electrical_power(delta, params.e_mag, net),
            reactive_power(delta, params.e_mag, net),
            np.abs(v),
            continuous_voltage_angles(delta, params.e_mag, net),
        ])

    def observe_many(stack: np.ndarray) -> np.ndarray:
        delta = stack[:, :nm]
        angles = delta[:, :, None] - delta[:, None, :] - net.y_ang[None, :, :]
        p_g = params.e_mag[None, :] * np.einsum(
            "kij,j->ki", np.cos(angles) * net.y_mag[None, :, :], params.e_mag)
        q_g = params.e_mag[None, :] * np.einsum(
            "kij,j->ki", np.sin(angles) * net.y_mag[None, :, :], params.e_mag)
        ref = delta.mean(axis=1)
        centered = (params.e_mag[None, :]
                    * np.exp(1j * (delta - ref[:, None]))) @ net.r_v.T
        v_ang = ref[:, None] + np.angle(centered)
        return np.concatenate([p_g, q_g, np.abs(centered), v_ang], axis=1)

    if use_fd:
        def jacobian(vec: np.ndarray) -> np.ndarray:
            return finite_difference_jacobian(observe, vec)
    else:
        def jacobian(vec: np.ndarray) -> np.ndarray:
            x = DynamicState(delta=vec[:nm], omega=vec[nm:])
            return measurement_jacobian(x, params, net)

    return MeasurementModel(observe=observe, jacobian=jacobian,
                            observe_many=observe_many)


# --- full scenario run -------------------------------------------------------


def run_filter(cfg: FilterConfig, case: NetworkCase, pf: PowerFlowSolution,
               scenario: FaultScenario, frames: list[MeasurementFrame],
               b0: GaussianBelief) -> tuple[Trajectory, list[GaussianBelief]]:
    """Run the configured filter over a scenario's measurement frames.

    The first frame seeds nothing: the estimate at its time is ``b0``.  Each
    later frame triggers one predict with the topology in force at the start
    of the interval, then one update with the topology at the frame time.
    Returns the estimate trajectory and the belief after every frame.
    """
    nets = scenario_networks(case, pf, scenario)
    init = machine_init(case, pf, net=nets.pre)
    params = MachineParams.from_case(case, init)
    nm = params.n_machines
    all_bus_ids = tuple(b.id for b in case.buses)
    freq = case.frequency

    def unpack(belief: GaussianBelief) -> DynamicState:
        return DynamicState(delta=belief.x_hat[:nm].copy(),
                            omega=belief.x_hat[nm:].copy())

    times = np.array([fr.t for fr in frames])
    use_fd = cfg.jacobian_mode == "finite_difference"
    process_cache: dict = {}
    observe_cache: dict = {}
    r_cache: dict = {}

    def process_for(regime, dt: float) -> ProcessModel:
        key = (regime, dt)
        if key not in process_cache:
            process_cache[key] = swing_process_model(
                params, nets.for_regime(regime), dt, use_fd)
        return process_cache[key]

    def observe_for(regime) -> MeasurementModel:
        if regime not in observe_cache:
            observe_cache[regime] = swing_measurement_model(
                params, nets.for_regime(regime), use_fd)
        return observe_cache[regime]

    def r_for(layout: tuple[int, ...]) -> np.ndarray:
        if layout not in r_cache:
            idx = measurement_indices(all_bus_ids, layout, nm)
            r_cache[layout] = cfg.r[np.ix_(idx, idx)]
        return r_cache[layout]

    belief = b0
    beliefs = [belief]
    states = [unpack(belief)]
    regimes = [scenario.regime(float(times[0]), freq)]

    for k in range(1, len(frames)):
        t_prev, t_now = float(times[k - 1]), float(times[k])
        frame = frames[k]
        regime_now = scenario.regime(t_now, freq)
        try:
            model = process_for(scenario.regime(t_prev, freq), t_now - t_prev)
            if cfg.kind == "ekf":
                belief = ekf_predict(belief, model, cfg.q)
            else:
                belief, _ = ukf_predict(belief, model, cfg.q, cfg)

            obs_model = observe_for(regime_now)
            r = r_for(frame.bus_ids)
            if cfg.kind == "ekf":
                belief = ekf_update(belief, frame.z_vector(), obs_model, r)
            else:
                belief = ukf_update(belief, frame.z_vector(), obs_model, r, cfg)
        except FilterNumericsError as exc:
            raise FilterNumericsError(
                f"frame {k} (t={t_now:.4f}s): {exc}") from exc
        beliefs.append(belief)
        states.append(unpack(belief))
        regimes.append(regime_now)

    return Trajectory(times=times, states=states, regime=regimes), beliefs
