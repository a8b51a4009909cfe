"""CTC alignment: collapse map, log-space forward-backward loss, decoding.

The loss marginalizes over every frame-level path that collapses (merge
adjacent repeats, then drop blanks) to the target sequence. All recursions
run in log space; the gradient with respect to the per-frame log
probabilities is registered on the tape analytically.
"""

from dataclasses import dataclass

import numpy as np

from . import numeric
from .numeric import Tensor

BLANK = 0  # reserved index


class InfeasibleAlignmentError(ValueError):
    """Target cannot be aligned: too few frames for the label sequence."""


@dataclass(frozen=True)
class Vocabulary:
    glosses: tuple

    @property
    def size(self):
        """Number of output classes including the blank at index 0."""
        return len(self.glosses) + 1

    def index(self, gloss):
        return self.glosses.index(gloss) + 1

    def gloss(self, idx):
        if idx == BLANK:
            raise ValueError("blank has no gloss")
        return self.glosses[idx - 1]


def collapse(path):
    """Merge adjacent repeats, then delete blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev:
            out.append(sym)
        prev = sym
    return tuple(s for s in out if s != BLANK)


def extend_with_blanks(target):
    ext = [BLANK]
    for g in target:
        ext.append(g)
        ext.append(BLANK)
    return ext


def min_frames(target):
    """Shortest posterior length that can emit `target`."""
    target = tuple(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


NEG_INF = -np.inf


def _logaddexp(*xs):
    return np.logaddexp.reduce(np.array(xs))


def _forward_backward(logp, ext):
    t_len, _ = logp.shape
    s_len = len(ext)
    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, t_len):
        for s in range(s_len):
            a = alpha[t - 1, s]
            if s >= 1:
                a = np.logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != BLANK and ext[s] != ext[s - 2]:
                a = np.logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, ext[s]]
    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = logp[-1, ext[-1]]
    if s_len > 1:
        beta[-1, -2] = logp[-1, ext[-2]]
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len - 1, -1, -1):
            b = beta[t + 1, s]
            if s + 1 < s_len:
                b = np.logaddexp(b, beta[t + 1, s + 1])
            if s + 2 < s_len and ext[s] != BLANK and ext[s] != ext[s + 2]:
                b = np.logaddexp(b, beta[t + 1, s + 2])
            beta[t, s] = b + logp[t, ext[s]]
    log_z = alpha[-1, -1]
    if s_len > 1:
        log_z = np.logaddexp(log_z, alpha[-1, -2])
    return alpha, beta, log_z


def ctc_loss(log_probs, target):
    """Negative log probability of `target` under the path posterior.

    log_probs: (T', K) tensor of normalized per-frame log distributions
    (blank at column 0). Gradient w.r.t. log_probs is exact.
    """
    lp = numeric.as_tensor(log_probs)
    target = tuple(int(g) for g in target)
    if len(target) == 0:
        raise ValueError("empty target sequence")
    if any(g == BLANK or g < 0 or g >= lp.data.shape[1] for g in target):
        raise ValueError("target contains blank or out-of-range index")
    t_len = lp.data.shape[0]
    need = min_frames(target)
    if t_len < need:
        raise InfeasibleAlignmentError(
            f"{t_len} frames cannot align a target needing {need}"
        )
    ext = extend_with_blanks(target)
    alpha, beta, log_z = _forward_backward(lp.data, ext)

    def backward(g):
        if not lp.requires_grad:
            return
        # occupancy: gamma[t, s] = alpha + beta - logp[t, ext_s]; summing
        # exp(gamma - log_z) over states with label k gives -dL/dlogp[t, k]
        grad = np.zeros_like(lp.data)
        lab = np.array(ext)
        gamma = alpha + beta
        for t in range(lp.data.shape[0]):
            occ = gamma[t] - lp.data[t, lab] - log_z
            np.add.at(grad[t], lab, -np.exp(occ))
        lp._accumulate(np.asarray(g).reshape(()) * grad)

    return Tensor(np.array(-log_z), parents=(lp,), backward=backward)


def sequence_score(log_probs, target):
    """Log probability of a collapsed label sequence under a posterior.

    Pure forward score (no gradient); the empty sequence scores the all-blank
    path; an infeasible target scores -inf.
    """
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    target = tuple(int(g) for g in target)
    if len(target) == 0:
        return float(data[:, BLANK].sum())
    if data.shape[0] < min_frames(target):
        return float("-inf")
    _, _, log_z = _forward_backward(data, extend_with_blanks(target))
    return float(log_z)


def greedy_decode(log_probs):
    """Best-path decoding: collapse the per-frame argmax sequence."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return collapse(int(i) for i in data.argmax(axis=-1))


def check_posterior(log_probs, tol=1e-9):
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    lse = np.log(np.exp(data).sum(axis=-1))
    if np.any(np.abs(lse) > tol):
        raise numeric.ContractError("rows of a path posterior must normalize")
