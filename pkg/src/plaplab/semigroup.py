"""Time evolution ``T(t, gamma) v`` by the iterated resolvent.

Implicit Euler with ``m`` uniform steps computes ``(Id + (t/m) a(gamma))^{-m} v``,
the exponential formula at finite ``m``.  For a sampled weight ``g(omega)`` and
datum ``u(omega)`` the same call is the random solution along that path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, WeightField, average, lq_norm
from .plap import FlowParams, energy
from .resolvent import ResolventError, resolve


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniform-step evolution with per-step ledgers.

    ``times``, ``mass_ledger``, ``energy_ledger`` and ``dissipation_ledger``
    hold one entry per completed step (index 0 is the initial datum).
    ``snapshots`` are the fields at the realised ``snapshot_times``.
    """

    times: np.ndarray
    mass_ledger: np.ndarray
    energy_ledger: np.ndarray
    dissipation_ledger: np.ndarray
    snapshot_times: tuple
    snapshots: tuple
    gamma: WeightField
    params: FlowParams
    tau: float

    @property
    def final(self) -> ScalarField:
        return self.snapshots[-1]

    def snapshot_at(self, t: float) -> ScalarField:
        k = int(np.argmin(np.abs(np.asarray(self.snapshot_times) - t)))
        return self.snapshots[k]


def deviation_energy(u: ScalarField) -> float:
    """``int (u - mean u)^2``."""
    return lq_norm(u - average(u), 2) ** 2


def evolve(gamma: WeightField, u0: ScalarField, t_end: float, m: int, params: FlowParams, snapshot_times=None) -> Trajectory:
    """Run ``m`` implicit Euler steps of size ``t_end / m``.

    Requested snapshot times snap to the nearest completed step and are
    reported as realised (``k * tau``).  With ``snapshot_times=None`` every
    step is kept.
    """
    if not t_end > 0:
        raise ValueError(f"t_end must be positive (got {t_end})")
    if int(m) != m or m < 1:
        raise ValueError(f"step count must be a positive integer (got {m})")
    m = int(m)
    tau = t_end / m
    if snapshot_times is None:
        snap_steps = list(range(m + 1))
    else:
        snap_steps = sorted({min(m, max(0, int(round(t / tau)))) for t in snapshot_times})
    wanted = set(snap_steps)

    u = u0
    times = np.arange(m + 1) * tau
    mass = np.empty(m + 1)
    en = np.empty(m + 1)
    dis = np.empty(m + 1)
    snaps = []

    def record(k, field_):
        mass[k] = average(field_)
        en[k] = deviation_energy(field_)
        dis[k] = 2.0 * params.p * energy(gamma, field_, params)
        if k in wanted:
            snaps.append(field_)

    record(0, u)
    for k in range(1, m + 1):
        try:
            u = resolve(gamma, tau, u, params)
        except ResolventError as exc:
            raise ResolventError(f"step {k}/{m}: {exc}", exc.residual, exc.iterations) from exc
        record(k, u)
    return Trajectory(
        times=times,
        mass_ledger=mass,
        energy_ledger=en,
        dissipation_ledger=dis,
        snapshot_times=tuple(k * tau for k in snap_steps),
        snapshots=tuple(snaps),
        gamma=gamma,
        params=params,
        tau=tau,
    )


def solve_at(gamma: WeightField, u0: ScalarField, t: float, m: int, params: FlowParams) -> ScalarField:
    """``(Id + (t/m) a)^{-m} u0``; returns ``u0`` for ``t == 0``."""
    if t == 0:
        return u0
    return evolve(gamma, u0, t, m, params, snapshot_times=[t]).final


def exponential_formula_study(gamma, u0, t, m_list, params, m_ref=None):
    """L1 distance of the m-step scheme to a finer reference, for each m."""
    m_list = [int(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be increasing")
    m_ref = 8 * max(m_list) if m_ref is None else int(m_ref)
    ref = solve_at(gamma, u0, t, m_ref, params)
    return [(m, lq_norm(solve_at(gamma, u0, t, m, params) - ref, 1)) for m in m_list]


def dissipation_mismatches(traj: Trajectory) -> np.ndarray:
    """Per-step ``|(E_k - E_{k+1}) / tau - D_{k+1}| / (1 + D_{k+1})``."""
    e, d = traj.energy_ledger, traj.dissipation_ledger
    if e.size < 3:
        raise ValueError("dissipation check needs at least 2 steps")
    return np.abs((e[:-1] - e[1:]) / traj.tau - d[1:]) / (1.0 + d[1:])


def dissipation_identity_check(traj: Trajectory) -> float:
    return float(dissipation_mismatches(traj).max())


def lipschitz_bound(p: float, eps: float, h: float, u0: ScalarField) -> float:
    """``h * 2 / (|p - 2| eps) * ||u0||_1``."""
    return h * 2.0 / (abs(p - 2.0) * eps) * lq_norm(u0, 1)


def lipschitz_time_check(gamma, u0, eps, t, h, params, tau=None) -> float:
    """Slack of the integrated Lipschitz bound on ``[t, t + h]``, ``t >= eps``.

    The step divides ``h`` and is at most ``0.1 * eps`` unless ``tau`` is
    given; ``t`` snaps to the step grid but never below ``eps``.
    """
    if not (eps > 0 and t >= eps and h > 0):
        raise ValueError("need t >= eps > 0 and h > 0")
    target = 0.1 * eps if tau is None else tau
    n_h = max(1, math.ceil(h / target - 1e-9))
    tau = h / n_h
    n_t = max(math.ceil(eps / tau - 1e-9), int(round(t / tau)))
    traj = evolve(gamma, u0, (n_t + n_h) * tau, n_t + n_h, params, snapshot_times=[n_t * tau, (n_t + n_h) * tau])
    at_t, at_th = traj.snapshots
    return lipschitz_bound(params.p, eps, h, u0) - lq_norm(at_th - at_t, 1)
