"""Routing candidate enumeration and the normalized compute-cost table.

A candidate is a (sampling interval, starting offset, resolution) triple.
Two enumeration modes exist: ``with_offsets`` emits every offset variant of
each interval (2^M - 1 subsequence candidates), ``length_only`` emits one
candidate per length class. The resolution extension adds a reserved
full-sequence candidate at the lowest resolution that reuses the global
branch (its only marginal cost is the global recognition head).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

MODES = ("with_offsets", "length_only")


@dataclass(frozen=True)
class Candidate:
    interval: int          # power-of-two sampling stride
    offset: int            # starting index, 0 <= offset < interval
    resolution: int        # input side length fed to the extractor
    uses_global: bool = False  # reserved low-res full-sequence candidate

    @property
    def fraction(self):
        return 1.0 / self.interval

    def label(self):
        frac = "1" if self.interval == 1 else f"1/{self.interval}"
        tag = f"{frac}R{self.resolution}"
        if self.interval > 1:
            tag += f"+{self.offset}"
        if self.uses_global:
            tag += "*"
        return tag


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple
    M: int
    R: int
    mode: str
    cost_table: np.ndarray = None  # filled by attach_costs

    def __len__(self):
        return len(self.candidates)

    def records(self):
        """Serializable per-candidate records for evaluation reports."""
        costs = self.cost_table if self.cost_table is not None else [None] * len(self)
        return [
            {
                "label": c.label(),
                "interval": c.interval,
                "offset": c.offset,
                "resolution": c.resolution,
                "uses_global": c.uses_global,
                "cost": None if s is None else float(s),
            }
            for c, s in zip(self.candidates, costs)
        ]


def _length_variants(m, resolution, mode):
    out = []
    for k in range(1, m + 1):
        interval = 2 ** (k - 1)
        offsets = range(interval) if mode == "with_offsets" else (0,)
        for off in offsets:
            out.append(Candidate(interval=interval, offset=off, resolution=resolution))
    return out


def _proxy_cost(c):
    # extractor work dominates: frames fraction times per-frame cost ~ eta^2;
    # the reserved candidate only pays the (cheap) global head
    if c.uses_global:
        return 0.0
    return c.fraction * c.resolution ** 2


def _ordered(cands, m, r, mode):
    cands = sorted(cands, key=lambda c: (_proxy_cost(c), c.interval, c.offset, c.resolution))
    return CandidateSet(candidates=tuple(cands), M=m, R=r, mode=mode)


def enumerate_length_candidates(m, resolution, mode="with_offsets"):
    """Length-fraction candidates at a single resolution.

    ``with_offsets`` yields 2^m - 1 candidates (2^(k-1) offset variants for
    each length class k); ``length_only`` yields m.
    """
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    if mode not in MODES:
        raise ValueError(f"unknown candidate mode {mode!r}")
    return _ordered(_length_variants(m, resolution, mode), m, 1, mode)


def enumerate_plus_candidates(m, resolutions, mode="with_offsets"):
    """Length x resolution candidates.

    The lowest resolution is reserved for the always-run global scan: it
    contributes a single full-sequence candidate. Every higher resolution
    carries the full set of length candidates, so the total is
    (R-1) * (2^M - 1) + 1 with offsets, or (R-1) * M + 1 without.
    """
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    resolutions = sorted(set(int(r) for r in resolutions))
    r = len(resolutions)
    if r < 2:
        raise ValueError("resolution mode needs at least 2 resolutions")
    if mode not in MODES:
        raise ValueError(f"unknown candidate mode {mode!r}")
    cands = [Candidate(interval=1, offset=0, resolution=resolutions[0], uses_global=True)]
    for res in resolutions[1:]:
        cands.extend(_length_variants(m, res, mode))
    return _ordered(cands, m, r, mode)


def select_frames(t, cand):
    """Frame indices {offset, offset+interval, ...} within [0, t)."""
    if t < cand.interval:
        raise ValueError(f"sequence of length {t} too short for interval {cand.interval}")
    idx = list(range(cand.offset, t, cand.interval))
    if not idx:
        raise ValueError(f"empty frame selection (t={t}, candidate={cand.label()})")
    return idx


def n_frames(t, cand):
    return math.ceil((t - cand.offset) / cand.interval)


def attach_costs(cset, arch, t_ref):
    """Compute the normalized analytic cost table for a reference length.

    `arch` supplies analytic multiply-add counts:
      local_flops_per_frame(resolution), local_head_flops(n_frames),
      global_head_flops(n_frames).
    The always-paid global extractor scan is sunk and excluded. Costs are
    normalized so the most expensive candidate is exactly 1; candidates are
    re-sorted ascending by cost (ties: interval, offset, resolution).
    """
    costs = []
    for c in cset.candidates:
        if c.uses_global:
            costs.append(float(arch.global_head_flops(t_ref)))
        else:
            n = n_frames(t_ref, c)
            costs.append(float(n * arch.local_flops_per_frame(c.resolution) + arch.local_head_flops(n)))
    order = sorted(
        range(len(costs)),
        key=lambda i: (
            costs[i],
            cset.candidates[i].interval,
            cset.candidates[i].offset,
            cset.candidates[i].resolution,
        ),
    )
    table = np.array([costs[i] for i in order], dtype=np.float64)
    table /= table.max()
    return replace(
        cset,
        candidates=tuple(cset.candidates[i] for i in order),
        cost_table=table,
    )
