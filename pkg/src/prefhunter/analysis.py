"""Preference tiers, rank agreement and the final report."""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateRanking
from .mdp import FEATURE_ABBREV, FEATURES

SHIFT_TOL = 1e-6


def mean_shift_tiers(w_normalized, bandwidth: float = 0.2, names=FEATURES) -> list:
    """Group features by 1-D flat-kernel mean shift.

    Each point moves to the mean of the original points within
    ``bandwidth`` until no point moves more than 1e-6.  As usual for mean
    shift, modes closer than one bandwidth are merged, keeping the one with
    more points in its window, and every feature joins its nearest surviving
    mode.  Tiers come back highest mode first, each a sorted list of names.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(w_normalized, dtype=float)
    if x.shape != (len(names),):
        raise ValueError(f"expected {len(names)} weights, got shape {x.shape}")
    pts = x.copy()
    for _ in range(10_000):
        nxt = np.array([x[np.abs(x - p) <= bandwidth].mean() for p in pts])
        moved = np.abs(nxt - pts).max()
        pts = nxt
        if moved < SHIFT_TOL:
            break
    modes = []
    for p in pts:
        if all(abs(p - m) >= 10 * SHIFT_TOL for m in modes):
            modes.append(p)
    density = {m: int((np.abs(x - m) <= bandwidth).sum()) for m in modes}
    kept = []
    for m in sorted(modes, key=lambda m: (-density[m], -m)):
        if all(abs(m - k) > bandwidth for k in kept):
            kept.append(m)
    label = [int(np.argmin([abs(v - k) for k in kept])) for v in x]
    order = sorted(range(len(kept)), key=lambda k: -kept[k])
    return [sorted(names[i] for i in range(len(names)) if label[i] == k) for k in order]


def abbreviate(tiers) -> list:
    return [sorted(FEATURE_ABBREV.get(n, n) for n in tier) for tier in tiers]


def format_tiers(tiers) -> str:
    """``{Att, Dis} ≻ {Dur, Eva, Imp, Sop}``; singletons go without braces."""
    parts = []
    for tier in abbreviate(tiers):
        parts.append(tier[0] if len(tier) == 1 else "{" + ", ".join(tier) + "}")
    return " ≻ ".join(parts)


def _rho(ra, rb) -> float:
    da, db = ra - ra.mean(), rb - rb.mean()
    return float((da @ db) / np.sqrt((da @ da) * (db @ db)))


def spearman(wa, wb) -> tuple[float, float]:
    """Rank correlation with average ranks and an exact permutation p-value.

    The two-sided p-value counts the permutations of the second ranking
    whose |rho| reaches the observed |rho|.
    """
    a, b = np.asarray(wa, dtype=float), np.asarray(wb, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("spearman needs two equal-length 1-D vectors")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateRanking("rank correlation is undefined for a constant vector")
    ra, rb = rankdata(a), rankdata(b)
    rho = _rho(ra, rb)
    hits = total = 0
    for perm in itertools.permutations(rb):
        total += 1
        if abs(_rho(ra, np.array(perm))) >= abs(rho) - 1e-12:
            hits += 1
    return rho, hits / total


@dataclass
class PreferenceProfile:
    label: str
    weights: dict  # method -> raw w (list, FEATURES order)
    normalized: dict  # method -> max-|w| normalized
    tiers: dict  # method -> list of tiers
    spearman_rho: float | None = None
    p_value: float | None = None
    ile: dict = field(default_factory=dict)  # method -> (mean, sd)

    def ordering(self, method: str) -> str:
        return format_tiers(self.tiers[method])

    def top_tier(self, method: str) -> set:
        return set(abbreviate(self.tiers[method])[0])


def build_profile(label: str, results, bandwidth: float = 0.2) -> PreferenceProfile:
    """Profile from one or two IrlResults for the same trajectory."""
    weights, normalized, tiers, ile = {}, {}, {}, {}
    for r in results:
        weights[r.method] = [float(x) for x in r.w]
        normalized[r.method] = [float(x) for x in r.normalized_w]
        tiers[r.method] = mean_shift_tiers(r.normalized_w, bandwidth)
        if r.ile is not None:
            ile[r.method] = (float(r.ile[0]), float(r.ile[1]))
    rho = p = None
    if len(results) == 2:
        try:
            rho, p = spearman(results[0].w, results[1].w)
        except DegenerateRanking:
            pass
    return PreferenceProfile(label, weights, normalized, tiers, rho, p, ile)


CSV_FIELDS = ("dataset", "method") + tuple(FEATURE_ABBREV[f] for f in FEATURES)


def build_report(profiles, trajectories=None, bandwidth: float = 0.2) -> tuple[dict, str]:
    """JSON-ready report and a CSV of normalized weights per dataset and method."""
    if not profiles:
        raise ValueError("build_report needs at least one profile")
    trajs = {t.label: t for t in (trajectories or [])}
    rows = []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for prof in profiles:
        row = {
            "dataset": prof.label,
            "weights": {m: dict(zip(FEATURES, w)) for m, w in sorted(prof.weights.items())},
            "normalized_weights": {m: dict(zip(FEATURES, w)) for m, w in sorted(prof.normalized.items())},
            "ordering": {m: prof.ordering(m) for m in sorted(prof.tiers)},
            "top_tier": {m: sorted(prof.top_tier(m)) for m in sorted(prof.tiers)},
            "spearman": {"rho": prof.spearman_rho, "p_value": prof.p_value},
            "ile": {m: {"mean": v[0], "sd": v[1]} for m, v in sorted(prof.ile.items())},
        }
        t = trajs.get(prof.label)
        if t is not None:
            row["trajectory_length"] = len(t)
            row["ioc_files"] = list(t.ioc_files)
            row["c2_addrs"] = list(t.c2_addrs)
        rows.append(row)
        for method, w in sorted(prof.normalized.items()):
            writer.writerow([prof.label, method] + [repr(float(x)) for x in w])
    report = {
        "features": list(FEATURES),
        "bandwidth": bandwidth,
        "datasets": rows,
    }
    return report, buf.getvalue()


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
