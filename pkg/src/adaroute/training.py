"""Two-stage training: branch warm-up, then cooperative adaptive routing.

Stage 1 trains the global branch (lowest resolution) and the local branch
(full resolution) independently under the sequence alignment loss. Stage 2
routes every sample through one candidate chosen by the policy via the
straight-through Gumbel estimator and jointly minimizes both branch
alignment losses, the efficiency loss (routing weights dotted with the
candidate cost table) and the feature distillation loss.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import candidates as cand_mod
from . import ctc, gumbel, numeric
from .ctc import InfeasibleAlignmentError
from .models import ModelBundle, resize
from .numeric import Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.04   # efficiency weight
    beta: float = 25.0    # feature distillation weight
    gamma: float = 8.0    # distillation softening temperature

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma <= 0:
            raise ValueError("need alpha >= 0, beta >= 0, gamma > 0")


class Adam:
    """Adaptive moment estimation with L2 weight decay."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class TrainState:
    bundle: ModelBundle
    cset: cand_mod.CandidateSet
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    stage: str = "init"    # init | warmup | cooperate
    infeasible: int = 0
    history: list = field(default_factory=list)


def _lr_at(base_lr, epoch, milestones, factor):
    lr = base_lr
    for m in milestones:
        if epoch >= m:
            lr *= factor
    return lr


def new_state(config, seed=None):
    seed = config["seed"] if seed is None else seed
    cset = build_candidate_set(config)
    rng = np.random.default_rng([seed, 0x7247])
    bundle = ModelBundle(config, len(cset), np.random.default_rng([seed, 0x696E]))
    cset = cand_mod.attach_costs(cset, bundle, config["t_ref"])
    opt = Adam(bundle.params, lr=config["lr"], weight_decay=config["weight_decay"])
    return TrainState(bundle=bundle, cset=cset, optimizer=opt, rng=rng)


def build_candidate_set(config):
    mode = config["candidate_mode"]
    resolutions = sorted(set(int(r) for r in config["resolutions"]))
    if len(resolutions) >= 2:
        return cand_mod.enumerate_plus_candidates(config["M"], resolutions, mode)
    return cand_mod.enumerate_length_candidates(config["M"], resolutions[0], mode)


# ---------------------------------------------------------------------------
# loss pieces


def efficiency_loss(w, s):
    """Routing weights dotted with the normalized cost table."""
    w = numeric.as_tensor(w)
    s = np.asarray(s, dtype=np.float64)
    if w.data.shape != s.shape:
        raise numeric.ShapeError(f"weights {w.data.shape} vs cost table {s.shape}")
    return numeric.reduce_sum(w * Tensor(s))


def alignment_loss(x_global_sel, x_local, gamma):
    """Per-timestep KL from the softened local features (teacher, no
    gradient) to the softened global features (student)."""
    if x_global_sel.data.shape != x_local.data.shape:
        raise numeric.ContractError(
            f"alignment shapes differ: {x_global_sel.data.shape} vs {x_local.data.shape}"
        )
    lp_g = numeric.log_softmax(x_global_sel * (1.0 / gamma), axis=-1)
    lp_l = numeric.stop_gradient(numeric.log_softmax(x_local * (1.0 / gamma), axis=-1))
    kl_rows = numeric.reduce_sum(numeric.exp(lp_g) * (lp_g - lp_l), axis=-1)
    return numeric.reduce_mean(kl_rows)


def fuse_predictions(p_global, p_local, mode="interp_log_mean"):
    """Combine branch posteriors (numpy log-prob arrays) for decoding.

    interp_log_mean: interpolate the local posterior to the global length,
    average log probabilities, renormalize. decode_vote: decode each branch,
    rescore both hypothesis sequences under both posteriors, and keep the
    posterior of the winning hypothesis — a branch with no preference between
    the hypotheses contributes equal scores and cannot veto the other.
    """
    pg = np.asarray(p_global, dtype=np.float64)
    pl = np.asarray(p_local, dtype=np.float64)
    if mode == "decode_vote":
        yg, yl = ctc.greedy_decode(pg), ctc.greedy_decode(pl)
        if yg == yl:
            return pg if pg.max(axis=1).mean() >= pl.max(axis=1).mean() else pl
        score_g = ctc.sequence_score(pg, yg) + ctc.sequence_score(pl, yg)
        score_l = ctc.sequence_score(pg, yl) + ctc.sequence_score(pl, yl)
        return pg if score_g > score_l else pl
    if mode != "interp_log_mean":
        raise ValueError(f"unknown fusion mode {mode!r}")
    tg, tl = pg.shape[0], pl.shape[0]
    if tg != tl:
        # interpolate in probability space: linear interpolation of log
        # probabilities would geometrically shrink sharp single-frame peaks
        # that fall between grid points
        src = (np.arange(tl) + 0.5) / tl
        dst = (np.arange(tg) + 0.5) / tg
        probs = np.exp(pl)
        probs = np.stack(
            [np.interp(dst, src, probs[:, k]) for k in range(pl.shape[1])], axis=1
        )
        probs /= probs.sum(axis=1, keepdims=True)
        pl = np.log(np.maximum(probs, 1e-300))
    avg = 0.5 * (pg + pl)
    m = avg.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(avg - m).sum(axis=1, keepdims=True))
    return avg - lse


# ---------------------------------------------------------------------------
# stage 1


def stage1_sample_losses(bundle, sample, full_res):
    xg = bundle.extract_global(sample.frames)
    pg = bundle.e_g.forward(xg)
    xl = bundle.f_l.forward(resize(sample.frames, full_res))
    pl = bundle.e_l.forward(xl)
    return ctc.ctc_loss(pg, sample.label) + ctc.ctc_loss(pl, sample.label)


def stage1_warmup(state, train_samples, config, epochs=None, on_epoch=None):
    """Independent branch pretraining under the alignment loss only."""
    epochs = config["stage1_epochs"] if epochs is None else epochs
    full_res = max(state.bundle.local_resolutions)
    state.stage = "warmup"
    end_epoch = state.epoch + epochs
    while state.epoch < end_epoch:
        state.optimizer.lr = _lr_at(
            config["lr"], state.epoch, config["lr_milestones"], config["lr_factor"]
        )
        order = state.rng.permutation(len(train_samples))
        total, used = 0.0, 0
        for i in order:
            s = train_samples[int(i)]
            state.bundle.zero_grad()
            try:
                loss = stage1_sample_losses(state.bundle, s, full_res)
            except InfeasibleAlignmentError:
                state.infeasible += 1
                continue
            loss.backward()
            state.optimizer.step()
            total += loss.item()
            used += 1
        state.epoch += 1
        rec = {"stage": 1, "epoch": state.epoch, "ctc": total / max(1, used)}
        state.history.append(rec)
        if on_epoch:
            on_epoch(rec)
    return state


# ---------------------------------------------------------------------------
# stage 2


def stage2_sample_loss(state, sample, tau, weights, noise=None, routing="hard"):
    """Single-sample stage-2 objective.

    routing="hard" spends compute on exactly one candidate (straight-through
    forward); routing="soft" scales the chosen branch by the relaxed weight
    instead, which makes the whole objective smooth for gradient
    diagnostics. Returns (loss, info dict).
    """
    bundle, cset = state.bundle, state.cset
    n = len(cset)
    if noise is None:
        noise = gumbel.sample_gumbel_noise(n, state.rng)
    xg = bundle.extract_global(sample.frames)
    z = bundle.decide(xg)
    gs = gumbel.gumbel_softmax(z, noise, tau)
    w = gumbel.straight_through(gs) if routing == "hard" else gs.soft
    k = gs.index
    cand = cset.candidates[k]
    w_col = numeric.reshape(w, (n, 1))
    w_k = numeric.take_rows(w_col, [k])  # (1, 1) scalar weight of the choice

    loss = efficiency_loss(w, cset.cost_table) * weights.alpha
    info = {"k": k, "cand": cand, "infeasible": False, "eff": float(cset.cost_table[k])}

    if cand.uses_global:
        # reuse the global scan; no local pass, so the routing weights touch
        # the loss only through the efficiency term
        pg = bundle.e_g.forward(xg)
        loss = loss + ctc.ctc_loss(pg, sample.label)
        info["p_global"] = pg.data
        info["p_local"] = None
        return loss, info

    pg = bundle.e_g.forward(xg)
    loss = loss + ctc.ctc_loss(pg, sample.label)
    info["p_global"] = pg.data
    info["p_local"] = None
    idx = cand_mod.select_frames(sample.t, cand)
    try:
        xl = bundle.extract_local(sample.frames, cand, idx)
        pl = bundle.e_l.forward(xl * w_k)
        loss = loss + ctc.ctc_loss(pl, sample.label)
    except InfeasibleAlignmentError:
        # chosen candidate cannot align this sample: keep the global and
        # efficiency terms, count and move on
        info["infeasible"] = True
        return loss, info
    if weights.beta > 0:
        xg_sel = numeric.take_rows(xg, idx)
        loss = loss + alignment_loss(xg_sel, xl, weights.gamma) * weights.beta
    info["p_local"] = pl.data
    return loss, info


def stage2_cooperate(state, train_samples, config, epochs=None, on_epoch=None):
    """Joint adaptive training of all five networks."""
    if state.stage not in ("warmup", "cooperate"):
        raise ValueError("stage-2 training requires a warmed-up state")
    epochs = config["stage2_epochs"] if epochs is None else epochs
    weights = LossWeights(config["alpha"], config["beta"], config["gamma"])
    schedule = gumbel.TemperatureSchedule(
        config["tau_init"], config["tau_min"], config["tau_decay"]
    )
    if state.stage == "warmup":
        state.stage = "cooperate"
        state.epoch = 0
    end_epoch = state.epoch + epochs
    while state.epoch < end_epoch:
        tau = schedule.tau(state.epoch)
        state.optimizer.lr = _lr_at(
            config["lr"], state.epoch, config["lr_milestones"], config["lr_factor"]
        )
        order = state.rng.permutation(len(train_samples))
        total, chosen_cost, infeasible = 0.0, 0.0, 0
        for i in order:
            s = train_samples[int(i)]
            state.bundle.zero_grad()
            loss, info = stage2_sample_loss(state, s, tau, weights)
            loss.backward()
            state.optimizer.step()
            total += loss.item()
            chosen_cost += info["eff"]
            infeasible += int(info["infeasible"])
        state.infeasible += infeasible
        state.epoch += 1
        rec = {
            "stage": 2,
            "epoch": state.epoch,
            "loss": total / len(train_samples),
            "mean_cost": chosen_cost / len(train_samples),
            "tau": tau,
            "infeasible": infeasible,
        }
        state.history.append(rec)
        if on_epoch:
            on_epoch(rec)
    return state
