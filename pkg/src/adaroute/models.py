"""The five parameterized networks and the frame resize.

Global extractor (cheap, lowest resolution), local extractor (larger,
per-candidate resolution), recurrent policy over global features, and two
recognition heads mapping frame features to per-step gloss log
distributions. All analytic FLOP counts are multiply-add counts and pure
functions of the configuration.
"""

import numpy as np

from . import numeric
from .ctc import InfeasibleAlignmentError
from .numeric import Tensor


# ---------------------------------------------------------------------------
# frame resize


_AREA_CACHE = {}


def _area_matrix(n_in, n_out):
    """Row-stochastic matrix averaging n_in cells into n_out (exact overlap)."""
    key = (n_in, n_out)
    if key not in _AREA_CACHE:
        a = np.zeros((n_out, n_in))
        scale = n_in / n_out
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            for j in range(int(np.floor(lo)), int(np.ceil(hi))):
                a[i, j] = min(hi, j + 1) - max(lo, j)
        _AREA_CACHE[key] = a / scale
    return _AREA_CACHE[key]


def resize(frames, eta_out):
    """Area-average downsampling of square frames.

    frames: (eta, eta) or (T, eta, eta). Upsampling is refused.
    """
    frames = np.asarray(frames, dtype=np.float64)
    eta_in = frames.shape[-1]
    if frames.shape[-2] != eta_in:
        raise ValueError("frames must be square")
    if eta_out > eta_in:
        raise ValueError(f"refusing to upsample {eta_in} -> {eta_out}")
    if eta_out == eta_in:
        return frames.copy()
    a = _area_matrix(eta_in, eta_out)
    return np.einsum("oi,...ij,pj->...op", a, frames, a)


# ---------------------------------------------------------------------------
# parameter initialization


def _dense_init(rng, n_in, n_out, params, name):
    w = numeric.parameter(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), name=name + ".w")
    b = numeric.parameter(np.zeros(n_out), name=name + ".b")
    params[w.name] = w
    params[b.name] = b
    return w, b


class GRUCell:
    """Single-direction gated recurrent cell (update/reset/candidate gates)."""

    def __init__(self, rng, n_in, n_hidden, params, name):
        self.n_hidden = n_hidden
        self.n_in = n_in
        self.wz, self.bz = _dense_init(rng, n_in + n_hidden, n_hidden, params, name + ".z")
        self.wr, self.br = _dense_init(rng, n_in + n_hidden, n_hidden, params, name + ".r")
        self.wn, self.bn = _dense_init(rng, n_in + n_hidden, n_hidden, params, name + ".n")

    def step(self, x_row, h):
        xh = numeric.concat([x_row, h], axis=1)
        z = numeric.sigmoid(xh @ self.wz + self.bz)
        r = numeric.sigmoid(xh @ self.wr + self.br)
        xrh = numeric.concat([x_row, r * h], axis=1)
        n = numeric.tanh(xrh @ self.wn + self.bn)
        return (1.0 - z) * n + z * h

    def run(self, x, reverse=False):
        """x: (T, n_in). Returns (stacked hidden states (T, H), final state)."""
        t = x.data.shape[0]
        h = Tensor(np.zeros((1, self.n_hidden)))
        order = range(t - 1, -1, -1) if reverse else range(t)
        outs = [None] * t
        for i in order:
            h = self.step(numeric.take_rows(x, [i]), h)
            outs[i] = h
        return numeric.concat(outs, axis=0), h

    def flops_per_step(self):
        return 3 * (self.n_in + self.n_hidden) * self.n_hidden


class BiGRU:
    def __init__(self, rng, n_in, n_hidden, params, name):
        self.fw = GRUCell(rng, n_in, n_hidden, params, name + ".fw")
        self.bw = GRUCell(rng, n_in, n_hidden, params, name + ".bw")

    def run(self, x):
        """Returns ((T, 2H) outputs, (1, 2H) concatenated final states)."""
        of, hf = self.fw.run(x)
        ob, hb = self.bw.run(x, reverse=True)
        return numeric.concat([of, ob], axis=1), numeric.concat([hf, hb], axis=1)

    def flops_per_step(self):
        return self.fw.flops_per_step() + self.bw.flops_per_step()


# ---------------------------------------------------------------------------
# frame extractors


class FrameExtractor:
    """Per-frame stack: resolution-specific input layer, shared output layer.

    Each supported resolution eta owns a dense eta^2 -> hidden projection;
    a shared hidden -> d layer produces the frame feature. The per-frame
    cost therefore scales with eta^2, mirroring a convolutional backbone.
    """

    def __init__(self, rng, resolutions, hidden, out_dim, params, name):
        self.resolutions = tuple(sorted(set(int(r) for r in resolutions)))
        self.hidden = hidden
        self.out_dim = out_dim
        self.input_layers = {}
        for res in self.resolutions:
            self.input_layers[res] = _dense_init(
                rng, res * res, hidden, params, f"{name}.in{res}"
            )
        self.w2, self.b2 = _dense_init(rng, hidden, out_dim, params, name + ".out")

    def forward(self, frames):
        """frames: (T, eta, eta) numpy array already at a supported resolution."""
        frames = np.asarray(frames, dtype=np.float64)
        res = frames.shape[-1]
        if res not in self.input_layers:
            raise ValueError(f"no input layer for resolution {res}")
        w1, b1 = self.input_layers[res]
        x = Tensor(frames.reshape(frames.shape[0], res * res))
        h = numeric.tanh(x @ w1 + b1)
        return h @ self.w2 + self.b2

    def flops_per_frame(self, res):
        if res not in self.input_layers:
            raise ValueError(f"no input layer for resolution {res}")
        return res * res * self.hidden + self.hidden * self.out_dim


# ---------------------------------------------------------------------------
# recognition head


class RecognitionHead:
    """{K5, P2, K5, P2} temporal convolutions, a bidirectional recurrent
    layer and a classifier to per-step log distributions.

    Output length is floor(floor(T'/2)/2); inputs shorter than 4 steps are
    rejected.
    """

    K = 5

    def __init__(self, rng, in_dim, conv_dim, rnn_dim, n_classes, params, name):
        self.in_dim = in_dim
        self.conv_dim = conv_dim
        self.rnn_dim = rnn_dim
        self.n_classes = n_classes
        k = self.K
        self.w_c1 = numeric.parameter(
            rng.normal(0.0, 1.0 / np.sqrt(k * in_dim), (k, in_dim, conv_dim)), name=name + ".c1.w"
        )
        self.b_c1 = numeric.parameter(np.zeros(conv_dim), name=name + ".c1.b")
        self.w_c2 = numeric.parameter(
            rng.normal(0.0, 1.0 / np.sqrt(k * conv_dim), (k, conv_dim, conv_dim)), name=name + ".c2.w"
        )
        self.b_c2 = numeric.parameter(np.zeros(conv_dim), name=name + ".c2.b")
        for p in (self.w_c1, self.b_c1, self.w_c2, self.b_c2):
            params[p.name] = p
        self.rnn = BiGRU(rng, conv_dim, rnn_dim, params, name + ".rnn")
        self.w_out, self.b_out = _dense_init(rng, 2 * rnn_dim, n_classes, params, name + ".clf")

    def out_len(self, t_in):
        return (t_in // 2) // 2

    def forward(self, x):
        """x: (T', d) feature tensor -> (out_len, n_classes) log distributions."""
        if x.data.shape[0] < 4:
            raise InfeasibleAlignmentError(
                f"recognition head needs >= 4 steps, got {x.data.shape[0]}"
            )
        h = numeric.tanh(numeric.conv1d_same(x, self.w_c1, self.b_c1))
        h = numeric.maxpool1d(h, 2)
        h = numeric.tanh(numeric.conv1d_same(h, self.w_c2, self.b_c2))
        h = numeric.maxpool1d(h, 2)
        outs, _ = self.rnn.run(h)
        logits = outs @ self.w_out + self.b_out
        return numeric.log_softmax(logits, axis=-1)

    def flops(self, t_in):
        t1 = t_in // 2
        t2 = self.out_len(t_in)
        conv1 = t_in * self.K * self.in_dim * self.conv_dim
        conv2 = t1 * self.K * self.conv_dim * self.conv_dim
        rnn = t2 * self.rnn.flops_per_step()
        clf = t2 * 2 * self.rnn_dim * self.n_classes
        return conv1 + conv2 + rnn + clf


# ---------------------------------------------------------------------------
# policy network


class PolicyNet:
    """Bidirectional recurrent aggregator over global features plus a
    two-layer decision head producing one logit per candidate."""

    def __init__(self, rng, in_dim, hidden, n_candidates, params, name="policy"):
        self.n_candidates = n_candidates
        self.rnn = BiGRU(rng, in_dim, hidden, params, name + ".rnn")
        self.w1, self.b1 = _dense_init(rng, 2 * hidden, hidden, params, name + ".h")
        self.w2, self.b2 = _dense_init(rng, hidden, n_candidates, params, name + ".out")

    def decide(self, x_global):
        """x_global: (T, d) tensor -> 1-d logits over candidates."""
        _, final = self.rnn.run(x_global)
        h = numeric.tanh(final @ self.w1 + self.b1)
        z = h @ self.w2 + self.b2
        return numeric.reshape(z, (self.n_candidates,))


# ---------------------------------------------------------------------------
# bundle


class ModelBundle:
    """All trainable networks plus the analytic cost hooks used by the
    candidate cost table."""

    def __init__(self, cfg, n_candidates, rng):
        self.params = {}
        self.cfg = cfg
        resolutions = sorted(set(int(r) for r in cfg["resolutions"]))
        self.low_res = resolutions[0]
        self.local_resolutions = resolutions[1:] if len(resolutions) > 1 else resolutions
        d = cfg["feature_dim"]
        self.f_g = FrameExtractor(
            rng, [self.low_res], cfg["global_hidden"], d, self.params, "f_g"
        )
        self.f_l = FrameExtractor(
            rng, self.local_resolutions, cfg["local_hidden"], d, self.params, "f_l"
        )
        n_classes = cfg["vocab_size"] + 1
        self.e_g = RecognitionHead(
            rng, d, cfg["global_head_conv"], cfg["global_head_rnn"], n_classes, self.params, "e_g"
        )
        self.e_l = RecognitionHead(
            rng, d, cfg["local_head_conv"], cfg["local_head_rnn"], n_classes, self.params, "e_l"
        )
        self.policy = PolicyNet(
            rng, d, cfg["policy_hidden"], n_candidates, self.params, "policy"
        )

    # --- forward passes ----------------------------------------------------
    def extract_global(self, frames):
        """Resize to the lowest resolution, then the global extractor."""
        return self.f_g.forward(resize(frames, self.low_res))

    def extract_local(self, frames, cand, frame_indices):
        sel = np.asarray(frames, dtype=np.float64)[frame_indices]
        return self.f_l.forward(resize(sel, cand.resolution))

    def decide(self, x_global):
        return self.policy.decide(x_global)

    # --- analytic cost hooks (multiply-add counts) --------------------------
    def global_flops_per_frame(self):
        return self.f_g.flops_per_frame(self.low_res)

    def local_flops_per_frame(self, res):
        return self.f_l.flops_per_frame(res)

    def local_head_flops(self, n):
        return self.e_l.flops(n)

    def global_head_flops(self, n):
        return self.e_g.flops(n)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
