"""CLEAR-MOT tracking metrics and cloud-to-cloud distance statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MotParams:
    match_threshold: float = 0.4

    def __post_init__(self):
        if not self.match_threshold > 0:
            raise ValueError("match_threshold must be positive")


@dataclass
class MotReport:
    motp: Optional[float]
    mota: Optional[float]
    gt_count: int
    matches: int
    false_negatives: int
    false_positives: int
    mismatches: int
    total_distance: float
    per_frame: list = field(default_factory=list)

    @property
    def fn_rate(self) -> Optional[float]:
        return self.false_negatives / self.gt_count if self.gt_count else None

    @property
    def fp_rate(self) -> Optional[float]:
        return self.false_positives / self.gt_count if self.gt_count else None

    @property
    def mismatch_rate(self) -> Optional[float]:
        return self.mismatches / self.gt_count if self.gt_count else None

    def summary(self) -> dict:
        return {
            "motp": self.motp, "mota": self.mota, "gt_count": self.gt_count, "matches": self.matches,
            "false_negatives": self.false_negatives, "false_positives": self.false_positives,
            "mismatches": self.mismatches, "fn_rate": self.fn_rate, "fp_rate": self.fp_rate,
            "mismatch_rate": self.mismatch_rate,
        }


def _xy(p) -> np.ndarray:
    return np.asarray(p, dtype=float)[:2]


def clear_mot(gt_frames: dict, hyp_frames: dict, params: MotParams = MotParams()) -> MotReport:
    """CLEAR-MOT over frames.

    Both inputs map a frame key to ``{object_id: position}``; positions are
    compared in the x-y plane. Per frame, correspondences from earlier frames
    are kept while within the threshold, then the remaining pairs are matched
    greedily by increasing distance. A mismatch is counted whenever a ground
    truth object is matched to a hypothesis other than the one it was last
    matched to.
    """
    thr = params.match_threshold
    last: dict = {}
    fn = fp = mm = matches = gt_count = 0
    total = 0.0
    per_frame = []
    for key in sorted(set(gt_frames) | set(hyp_frames)):
        gts = {k: _xy(v) for k, v in gt_frames.get(key, {}).items()}
        hyps = {k: _xy(v) for k, v in hyp_frames.get(key, {}).items()}
        gt_count += len(gts)
        pairs = {}
        for g, h in last.items():
            if g in gts and h in hyps and h not in pairs.values():
                d = float(np.linalg.norm(gts[g] - hyps[h]))
                if d <= thr:
                    pairs[g] = h
        free_g = [g for g in gts if g not in pairs]
        free_h = [h for h in hyps if h not in pairs.values()]
        cand = []
        for gi, g in enumerate(free_g):
            for hi, h in enumerate(free_h):
                d = float(np.linalg.norm(gts[g] - hyps[h]))
                if d <= thr:
                    cand.append((d, gi, hi))
        cand.sort()
        ug, uh = set(), set()
        switched = []
        for d, gi, hi in cand:
            if gi in ug or hi in uh:
                continue
            ug.add(gi)
            uh.add(hi)
            g, h = free_g[gi], free_h[hi]
            if g in last and last[g] != h:
                switched.append(g)
            pairs[g] = h
        frame_d = [float(np.linalg.norm(gts[g] - hyps[h])) for g, h in pairs.items()]
        f_fn = len(gts) - len(pairs)
        f_fp = len(hyps) - len(pairs)
        fn += f_fn
        fp += f_fp
        mm += len(switched)
        matches += len(pairs)
        total += sum(frame_d)
        last.update(pairs)
        per_frame.append({"frame": key, "matches": dict(pairs), "distances": frame_d,
                          "fn": f_fn, "fp": f_fp, "mismatches": switched})
    motp = total / matches if matches else None
    mota = 1.0 - (fn + fp + mm) / gt_count if gt_count else None
    return MotReport(motp, mota, gt_count, matches, fn, fp, mm, total, per_frame)


def static_precision(m_s, m_l, l_e: float = 0.4) -> Optional[float]:
    """Fraction of ``m_s`` points closer than ``l_e`` to the reference cloud ``m_l``."""
    s = np.asarray(m_s, dtype=float).reshape(-1, 3)
    ref = np.asarray(m_l, dtype=float).reshape(-1, 3)
    if len(s) == 0:
        return None
    if len(ref) == 0:
        raise ValueError("reference cloud is empty")
    d, _ = cKDTree(ref).query(s, k=1)
    return float(np.mean(d < l_e))


@dataclass
class CloudHistograms:
    edges: np.ndarray
    accuracy: np.ndarray
    completeness: np.ndarray
    accuracy_distances: np.ndarray
    completeness_distances: np.ndarray

    def within_limit(self, l_c: float = 0.8) -> bool:
        return bool(np.all(self.accuracy_distances < l_c))


def _histogram(d: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts = np.bincount(np.minimum((d / (edges[1] - edges[0])).astype(np.int64), len(edges) - 2),
                         minlength=len(edges) - 1)
    return counts / max(len(d), 1)


def cloud_accuracy_completeness(camera_cloud, reference_cloud, bin_width: float = 0.02) -> CloudHistograms:
    """Normalised nearest-neighbour distance histograms, camera->reference and back."""
    cam = np.asarray(camera_cloud, dtype=float).reshape(-1, 3)
    ref = np.asarray(reference_cloud, dtype=float).reshape(-1, 3)
    if len(cam) == 0 or len(ref) == 0:
        raise ValueError("both clouds must be non-empty")
    acc, _ = cKDTree(ref).query(cam, k=1)
    comp, _ = cKDTree(cam).query(ref, k=1)
    top = max(acc.max(), comp.max())
    nbins = int(np.floor(top / bin_width)) + 1
    edges = np.arange(nbins + 1) * bin_width
    return CloudHistograms(edges, _histogram(acc, edges), _histogram(comp, edges), acc, comp)


def write_histograms_csv(path, hist: CloudHistograms) -> None:
    lines = ["bin_start,bin_end,accuracy,completeness"]
    for i in range(len(hist.edges) - 1):
        lines.append(f"{hist.edges[i]:.4f},{hist.edges[i + 1]:.4f},{hist.accuracy[i]:.6f},{hist.completeness[i]:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
