"""Planar constant-velocity Kalman filtering and re-association after occlusion."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class FilterDivergence(RuntimeError):
    """Covariance lost positive definiteness; the track must be reset."""


@dataclass(frozen=True)
class MotionParams:
    process_noise: tuple = (0.012, 0.012, 0.012, 0.012)  # per second, scaled by T_s
    # Cluster centroids wander by about 0.1 m as the visible part of an object changes.
    measurement_noise: tuple = (0.1**2, 0.1**2)
    initial_covariance: tuple = (0.4, 0.4, 8.0, 8.0)
    reassociation_gate: float = 3.0  # Mahalanobis distance
    occlusion_keepalive: float = 2.0

    def __post_init__(self):
        if len(self.process_noise) != 4 or len(self.measurement_noise) != 2 or len(self.initial_covariance) != 4:
            raise ValueError("noise diagonals must have lengths 4, 2 and 4")
        if min(self.process_noise) < 0 or min(self.measurement_noise) < 0 or min(self.initial_covariance) <= 0:
            raise ValueError("noise terms must be non-negative, initial covariance positive")
        if not self.reassociation_gate > 0 or not self.occlusion_keepalive > 0:
            raise ValueError("gate and keepalive must be positive")

    def Q(self, T_s: float) -> np.ndarray:
        return np.diag(self.process_noise) * T_s

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.measurement_noise)


H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def transition(T_s: float) -> np.ndarray:
    A = np.eye(4)
    A[0, 2] = A[1, 3] = T_s
    return A


@dataclass(frozen=True)
class KalmanTrack:
    state: np.ndarray
    covariance: np.ndarray
    last_update: float
    owner: int = -1
    last_measured: float = field(default=np.nan)

    @classmethod
    def initial(cls, xy, now: float, params: MotionParams, owner: int = -1) -> "KalmanTrack":
        state = np.array([xy[0], xy[1], 0.0, 0.0], dtype=float)
        return cls(state, np.diag(np.asarray(params.initial_covariance, dtype=float)), now, owner, now)

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[2:]

    @property
    def position_covariance(self) -> np.ndarray:
        return self.covariance[:2, :2]


def _check_pd(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)):
        raise FilterDivergence("covariance is not finite")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("covariance is not positive definite") from exc


def kf_predict(track: KalmanTrack, T_s: float, params: MotionParams) -> KalmanTrack:
    if not T_s > 0:
        raise ValueError("T_s must be positive")
    A = transition(T_s)
    P = A @ track.covariance @ A.T + params.Q(T_s)
    P = 0.5 * (P + P.T)
    _check_pd(P)
    return replace(track, state=A @ track.state, covariance=P, last_update=track.last_update + T_s)


def kf_update(track: KalmanTrack, z, params: MotionParams) -> KalmanTrack:
    """Measurement update with ``z = (x, y)`` at the track's current time."""
    z = np.asarray(z, dtype=float)[:2]
    P = track.covariance
    S = H @ P @ H.T + params.R
    K = np.linalg.solve(S, H @ P).T
    x = track.state + K @ (z - H @ track.state)
    IKH = np.eye(4) - K @ H
    P = IKH @ P @ IKH.T + K @ params.R @ K.T
    P = 0.5 * (P + P.T)
    _check_pd(P)
    return replace(track, state=x, covariance=P, last_measured=track.last_update)


def kf_step(track: KalmanTrack, z, T_s: float, params: MotionParams) -> KalmanTrack:
    """Predict over ``T_s`` seconds, then update with ``z = (x, y)`` if given."""
    track = kf_predict(track, T_s, params)
    return track if z is None else kf_update(track, z, params)


def mahalanobis(track: KalmanTrack, point) -> float:
    d = np.asarray(point, dtype=float)[:2] - track.position
    S = track.position_covariance
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("degenerate position covariance") from exc
    y = np.linalg.solve(L, d)
    return float(np.sqrt(y @ y))


def gaussian_density(point, mean, cov) -> float:
    cov = np.asarray(cov, dtype=float)
    det = np.linalg.det(cov)
    if not det > 0 or not np.isfinite(det):
        raise FilterDivergence("degenerate position covariance")
    d = np.asarray(point, dtype=float)[:2] - np.asarray(mean, dtype=float)[:2]
    m2 = float(d @ np.linalg.solve(cov, d))
    return float(np.exp(-0.5 * m2) / (2 * np.pi * np.sqrt(det)))


def reassociation_probability(lost: KalmanTrack, candidate_centroid) -> float:
    """Bivariate normal density of the candidate under the predicted position."""
    return gaussian_density(candidate_centroid, lost.position, lost.position_covariance)


def density_threshold(lost: KalmanTrack, gate: float) -> float:
    """Density at Mahalanobis distance ``gate`` under the track's position covariance."""
    det = np.linalg.det(lost.position_covariance)
    return float(np.exp(-0.5 * gate * gate) / (2 * np.pi * np.sqrt(det)))


def handle_lost_tracks(lost_tracks: dict, new_tracks: dict, params: MotionParams, now: float) -> list:
    """Pair new tracks with lost ones by predicted-position density.

    ``lost_tracks`` maps track id to a :class:`KalmanTrack` already predicted
    to ``now``; ``new_tracks`` maps track id to its first centroid. Returns
    ``(new_id, lost_id)`` merges; every id appears at most once.
    """
    cands = []
    for lid, kt in lost_tracks.items():
        if now - kt.last_measured > params.occlusion_keepalive:
            continue
        thr = density_threshold(kt, params.reassociation_gate)
        for nid, c in new_tracks.items():
            p = reassociation_probability(kt, c)
            if p >= thr:
                cands.append((-p, nid, lid))
    cands.sort()
    used_new, used_lost, merges = set(), set(), []
    for _, nid, lid in cands:
        if nid in used_new or lid in used_lost:
            continue
        used_new.add(nid)
        used_lost.add(lid)
        merges.append((nid, lid))
    return merges


_SAME_TIME = 1e-9


class MotionEstimator:
    """Keeps one filter per cluster track and steps it once per frame."""

    def __init__(self, params: MotionParams):
        self.params = params
        self.filters: dict[int, KalmanTrack] = {}

    def observe(self, track_id: int, xy, now: float) -> KalmanTrack:
        kt = self.filters.get(track_id)
        try:
            if kt is None or now < kt.last_update - _SAME_TIME:
                kt = KalmanTrack.initial(xy, now, self.params, track_id)
            elif now <= kt.last_update + _SAME_TIME:
                kt = kf_update(kt, xy, self.params)
            else:
                kt = kf_step(kt, xy, now - kt.last_update, self.params)
            kt = replace(kt, last_update=now, last_measured=now)
        except FilterDivergence:
            kt = KalmanTrack.initial(xy, now, self.params, track_id)
        self.filters[track_id] = kt
        return kt

    def coast(self, track_id: int, now: float) -> Optional[KalmanTrack]:
        kt = self.filters.get(track_id)
        if kt is None or now <= kt.last_update + _SAME_TIME:
            return kt
        try:
            kt = replace(kf_predict(kt, now - kt.last_update, self.params), last_update=now)
        except FilterDivergence:
            self.filters.pop(track_id, None)
            return None
        self.filters[track_id] = kt
        return kt

    def drop(self, track_id: int) -> None:
        self.filters.pop(track_id, None)

    def adopt(self, new_id: int, lost_id: int) -> None:
        """The lost filter survives; the provisional one of ``new_id`` is discarded."""
        self.filters.pop(new_id, None)
