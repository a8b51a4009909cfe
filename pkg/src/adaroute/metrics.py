"""Evaluation: word error rate, compute accounting, behavior reports.

WER is the minimal number of substitutions, insertions and deletions that
turn the predicted sentence into the reference, divided by the reference
length. Evaluation runs a trained model over a split under one of four
selection policies and produces a machine-readable report.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import candidates as cand_mod
from . import ctc, numeric, training
from .ctc import InfeasibleAlignmentError

MODES = ("adaptive", "random", "gaussian", "fixed")


@dataclass(frozen=True)
class WerResult:
    sub: int
    ins: int
    dels: int
    ref_len: int

    @property
    def errors(self):
        return self.sub + self.ins + self.dels

    @property
    def wer(self):
        return self.errors / self.ref_len


def wer(hyp, ref):
    """Levenshtein alignment of hyp onto ref with unit costs.

    Tie-break while backtracking prefers substitution over deletion over
    insertion, so the decomposition is deterministic.
    """
    hyp, ref = tuple(hyp), tuple(ref)
    if len(ref) < 1:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)   # deletions: ref tokens missing from hyp
    d[0, :] = np.arange(m + 1)   # insertions: extra hyp tokens
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            d[i, j] = min(d[i - 1, j - 1] + (0 if same else 1),
                          d[i - 1, j] + 1,
                          d[i, j - 1] + 1)
    sub = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            sub += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerResult(sub=sub, ins=ins, dels=dels, ref_len=n)


def _n_threads():
    try:
        return max(1, int(os.environ.get("ADAROUTE_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    """Map preserving order; fan-out controlled by ADAROUTE_THREADS."""
    n = _n_threads()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# model evaluation


def _gaussian_weights(n):
    mid = (n - 1) / 2.0
    sigma = max(n / 4.0, 1e-9)
    w = np.exp(-0.5 * ((np.arange(n) - mid) / sigma) ** 2)
    return w / w.sum()


def _choose(mode, z, n, rng, fixed_k):
    if mode == "adaptive":
        return int(np.argmax(z))
    if mode == "random":
        return int(rng.integers(0, n))
    if mode == "gaussian":
        return int(rng.choice(n, p=_gaussian_weights(n)))
    if mode == "fixed":
        if fixed_k is None or not 0 <= fixed_k < n:
            raise ValueError(f"fixed mode needs a candidate index in [0, {n})")
        return fixed_k
    raise ValueError(f"unknown evaluation mode {mode!r}")


def forward_candidate(bundle, cset, sample, k, fuse="decode_vote", reuse_global=True):
    """Posterior for one sample routed through candidate k (no tape).

    Returns (log posterior, flops dict) or raises InfeasibleAlignmentError.
    """
    cand = cset.candidates[k]
    t = sample.t
    fg_cost = t * bundle.global_flops_per_frame()
    with numeric.no_grad():
        xg = bundle.extract_global(sample.frames)
        pg = bundle.e_g.forward(xg).data
        if cand.uses_global:
            return pg, {
                "total": fg_cost + bundle.global_head_flops(t),
                "extractor": fg_cost,
            }
        idx = cand_mod.select_frames(t, cand)
        xl = bundle.extract_local(sample.frames, cand, idx)
        pl = bundle.e_l.forward(xl).data
    n = len(idx)
    flops = {
        "total": fg_cost + n * bundle.local_flops_per_frame(cand.resolution)
        + bundle.local_head_flops(n),
        "extractor": fg_cost + n * bundle.local_flops_per_frame(cand.resolution),
    }
    post = training.fuse_predictions(pg, pl, fuse) if reuse_global else pl
    return post, flops


def policy_logits(bundle, sample):
    with numeric.no_grad():
        xg = bundle.extract_global(sample.frames)
        return bundle.decide(xg).data


@dataclass
class EvalReport:
    mode: str
    n_samples: int
    wer: float
    sub: int
    ins: int
    dels: int
    ref_len: int
    selection_ratios: list
    conditional_wer: list          # aggregate WER per chosen candidate (None if unused)
    expected_cost: float           # selection ratios dotted with the cost table
    absolute_flops: float          # sum over samples: global scan + chosen candidate
    extractor_flops: float
    infeasible: int
    candidate_records: list
    vs_full: dict = field(default_factory=dict)   # per-video win/tie/loss vs the full candidate
    wer_by_difficulty: dict = field(default_factory=dict)
    throughput: float = 0.0        # videos/s, wall clock; excluded from determinism checks
    notes: dict = field(default_factory=dict)

    def deterministic_payload(self):
        d = self.to_dict()
        d.pop("throughput")
        return d

    def to_dict(self):
        return {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "wer": self.wer,
            "errors": {"sub": self.sub, "ins": self.ins, "del": self.dels},
            "ref_len": self.ref_len,
            "selection_ratios": self.selection_ratios,
            "conditional_wer": self.conditional_wer,
            "expected_cost": self.expected_cost,
            "absolute_flops": self.absolute_flops,
            "extractor_flops": self.extractor_flops,
            "infeasible": self.infeasible,
            "candidates": self.candidate_records,
            "vs_full": self.vs_full,
            "wer_by_difficulty": self.wer_by_difficulty,
            "throughput": self.throughput,
            "notes": self.notes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self):
        lines = [
            f"mode={self.mode}  samples={self.n_samples}  "
            f"WER={100 * self.wer:.2f}%  (sub {self.sub} / ins {self.ins} / del {self.dels})",
            f"expected cost E[c.s]={self.expected_cost:.4f}  "
            f"absolute MACs={self.absolute_flops:.3e}  extractor MACs={self.extractor_flops:.3e}",
            f"throughput={self.throughput:.2f} videos/s  infeasible={self.infeasible}",
            f"{'candidate':>14} {'cost':>8} {'ratio':>8} {'cond WER':>10}",
        ]
        for rec, ratio, cw in zip(self.candidate_records, self.selection_ratios, self.conditional_wer):
            label = f"{rec['interval']}/{rec['offset']}@{rec['resolution']}" + (
                "*" if rec["uses_global"] else ""
            )
            cws = "-" if cw is None else f"{100 * cw:.2f}%"
            lines.append(f"{label:>14} {rec['cost']:>8.4f} {ratio:>8.3f} {cws:>10}")
        if self.vs_full:
            lines.append(
                "vs full candidate: win {win} / tie {tie} / loss {loss}".format(**self.vs_full)
            )
        return "\n".join(lines)


def evaluate(state, samples, mode="adaptive", fixed_k=None, seed=0,
             fuse="decode_vote", reuse_global=True, compare_full=True):
    """Run a split under a selection policy and collect an EvalReport.

    adaptive: deterministic argmax of the policy logits (no noise).
    random: uniform over candidates. gaussian: discretized normal centered
    on the middle candidate (sigma = n/4). fixed: always candidate
    `fixed_k`.
    """
    bundle, cset = state.bundle, state.cset
    n = len(cset)
    rng = np.random.default_rng([seed, 0xE7A1])
    full_k = int(np.argmax(cset.cost_table))
    counts = np.zeros(n, dtype=np.int64)
    errs = np.zeros((n, 2), dtype=np.int64)  # per-candidate (errors, ref tokens)
    sub = ins = dels = ref_len = infeasible = 0
    abs_flops = ext_flops = 0.0
    vs = {"win": 0, "tie": 0, "loss": 0}
    by_diff = {}
    t0 = time.perf_counter()
    # choices are drawn sequentially so results do not depend on thread count
    ks = [
        _choose(mode, policy_logits(bundle, s), n, rng, fixed_k) for s in samples
    ]

    def one(pair):
        s, k = pair
        try:
            post, flops = forward_candidate(bundle, cset, s, k, fuse, reuse_global)
            hyp = ctc.greedy_decode(post)
            bad = False
        except InfeasibleAlignmentError:
            hyp, flops, bad = (), {"total": 0.0, "extractor": 0.0}, True
        r = wer(hyp, s.label)
        rf = None
        if compare_full:
            post_f, _ = forward_candidate(bundle, cset, s, full_k, fuse, reuse_global)
            rf = wer(ctc.greedy_decode(post_f), s.label)
        return r, rf, flops, bad

    results = _parallel_map(one, list(zip(samples, ks)))
    for s, k, (r, rf, flops, bad) in zip(samples, ks, results):
        counts[k] += 1
        infeasible += int(bad)
        sub, ins, dels, ref_len = sub + r.sub, ins + r.ins, dels + r.dels, ref_len + r.ref_len
        errs[k] += (r.errors, r.ref_len)
        abs_flops += flops["total"]
        ext_flops += flops["extractor"]
        dd = by_diff.setdefault(s.difficulty, [0, 0])
        dd[0] += r.errors
        dd[1] += r.ref_len
        if rf is not None:
            key = "tie" if r.errors == rf.errors else ("win" if r.errors < rf.errors else "loss")
            vs[key] += 1
    elapsed = time.perf_counter() - t0
    ratios = counts / counts.sum()
    cond = [
        None if errs[k, 1] == 0 else float(errs[k, 0] / errs[k, 1]) for k in range(n)
    ]
    return EvalReport(
        mode=mode if mode != "fixed" else f"fixed:{fixed_k}",
        n_samples=len(samples),
        wer=(sub + ins + dels) / ref_len,
        sub=sub, ins=ins, dels=dels, ref_len=ref_len,
        selection_ratios=[float(x) for x in ratios],
        conditional_wer=cond,
        expected_cost=float(ratios @ cset.cost_table),
        absolute_flops=abs_flops,
        extractor_flops=ext_flops,
        infeasible=infeasible,
        candidate_records=cset.records(),
        vs_full=vs if compare_full else {},
        wer_by_difficulty={
            k: v[0] / v[1] for k, v in sorted(by_diff.items())
        },
        throughput=len(samples) / elapsed if elapsed > 0 else 0.0,
        notes={
            "gaussian_baseline": "discretized normal over candidate indices; construction is a recorded guess"
        } if mode == "gaussian" else {},
    )


def candidate_matrix(state, samples, fuse="decode_vote", reuse_global=True):
    """Mean WER grid: rows = policy-chosen candidate, cols = forced candidate.

    Cells with no samples are None.
    """
    n = len(state.cset)
    errors = np.zeros((n, n))
    refs = np.zeros((n, n))
    row_counts = np.zeros(n, dtype=np.int64)
    for s in samples:
        chosen = int(np.argmax(policy_logits(state.bundle, s)))
        row_counts[chosen] += 1
        for k in range(n):
            try:
                post, _ = forward_candidate(state.bundle, state.cset, s, k, fuse, reuse_global)
                r = wer(ctc.greedy_decode(post), s.label)
            except InfeasibleAlignmentError:
                r = wer((), s.label)
            errors[chosen, k] += r.errors
            refs[chosen, k] += r.ref_len
    grid = [
        [None if refs[i, k] == 0 else float(errors[i, k] / refs[i, k]) for k in range(n)]
        for i in range(n)
    ]
    return {"grid": grid, "row_counts": [int(c) for c in row_counts]}
