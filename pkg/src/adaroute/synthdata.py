"""Synthetic gloss-video generator with controllable routing difficulty.

Each gloss renders as a moving coarse glyph on a small single-channel
grid. "Easy" glosses have mutually distinct coarse glyphs readable at low
resolution and short lengths. "Hard" glosses come in pairs that share one
coarse glyph and differ only by the phase of a pixel-scale checkerboard
overlay shown in a short burst of frames: area-average downsampling
cancels the overlay exactly, and aggressive frame skipping tends to miss
the burst, so telling pair members apart needs full resolution and most
frames.

Dataset container format (magic "ABDS", little-endian; see docs/formats.md).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .models import resize

MAGIC = b"ABDS"
VERSION = 1

_GLYPH_SALT = 0x617274  # rng stream salts
_SAMPLE_SALT = 0x646174


class FormatError(ValueError):
    """Corrupt or truncated dataset file; message names the byte offset."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_easy_glosses: int = 3
    n_hard_groups: int = 2        # hard glosses come in coarse-identical pairs
    sentence_len: tuple = (2, 3)
    frames_per_gloss: tuple = (10, 14)
    gap_frames: int = 2           # near-blank transition frames between glosses
    eta_max: int = 16
    easy_ratio: float = 0.5
    noise: float = 0.02
    burst_len: int = 3            # frames per segment carrying the fine detail
    detail_amp: float = 0.22
    seed: int = 0
    n_train: int = 200
    n_dev: int = 48
    n_test: int = 96

    @property
    def vocab_size(self):
        return self.n_easy_glosses + 2 * self.n_hard_groups

    def validate(self):
        if self.sentence_len[0] < 1 or self.sentence_len[0] > self.sentence_len[1]:
            raise ValueError("empty sentence length range")
        if self.frames_per_gloss[0] < 1 or self.frames_per_gloss[0] > self.frames_per_gloss[1]:
            raise ValueError("empty frames-per-gloss range")
        if self.eta_max % 4 != 0:
            raise ValueError("eta_max must be a multiple of the glyph block size (4)")
        if self.vocab_size < 2:
            raise ValueError("need at least two glosses")


@dataclass
class VideoSample:
    sample_id: int
    frames: np.ndarray   # (T, eta_max, eta_max) float32 in [0, 1]
    label: tuple         # vocabulary indices, 1-based (0 is the CTC blank)
    difficulty: str      # "easy" | "hard"; generator metadata only

    @property
    def t(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# glyph bank


def _glyphs(cfg):
    """Coarse 4px-block glyphs: one per easy gloss, one per hard group."""
    rng = np.random.default_rng([cfg.seed, _GLYPH_SALT])
    blocks = cfg.eta_max // 4
    n = cfg.n_easy_glosses + cfg.n_hard_groups
    coarse = 0.15 + 0.55 * rng.random((n, blocks, blocks))
    return np.kron(coarse, np.ones((4, 4)))


def _gloss_glyph(cfg, glyphs, gloss):
    """Map a 1-based gloss index to (coarse glyph, checkerboard phase | None)."""
    g = gloss - 1
    if g < cfg.n_easy_glosses:
        return glyphs[g], None
    q = g - cfg.n_easy_glosses
    return glyphs[cfg.n_easy_glosses + q // 2], q % 2


def _checkerboard(eta, phase):
    i, j = np.indices((eta, eta))
    return np.where((i + j + phase) % 2 == 0, 1.0, -1.0)


def _render_segment(cfg, glyphs, gloss, n, rng):
    coarse, phase = _gloss_glyph(cfg, glyphs, gloss)
    eta = cfg.eta_max
    frames = np.empty((n, eta, eta))
    dx = dy = 0
    if phase is not None:
        burst0 = int(rng.integers(0, max(1, n - cfg.burst_len + 1)))
        detail = cfg.detail_amp * _checkerboard(eta, phase)
    for t in range(n):
        dx = int(np.clip(dx + rng.integers(-1, 2), -2, 2))
        dy = int(np.clip(dy + rng.integers(-1, 2), -2, 2))
        f = np.roll(coarse, (dx, dy), axis=(0, 1))
        if phase is not None and burst0 <= t < burst0 + cfg.burst_len:
            f = f + detail  # overlay is not translated: phase stays put
        f = f + rng.normal(0.0, cfg.noise, (eta, eta))
        frames[t] = np.clip(f, 0.0, 1.0)
    return frames


def _gap(cfg, rng):
    eta = cfg.eta_max
    f = 0.05 + rng.normal(0.0, cfg.noise, (cfg.gap_frames, eta, eta))
    return np.clip(f, 0.0, 1.0)


def _easy_pool(cfg):
    return list(range(1, cfg.n_easy_glosses + 1))


def _hard_pool(cfg):
    return list(range(cfg.n_easy_glosses + 1, cfg.vocab_size + 1))


def make_sample(cfg, glyphs, sample_id):
    rng = np.random.default_rng([cfg.seed, _SAMPLE_SALT, sample_id])
    hard = bool(rng.random() >= cfg.easy_ratio)
    pool = _hard_pool(cfg) if hard else _easy_pool(cfg)
    u = int(rng.integers(cfg.sentence_len[0], cfg.sentence_len[1] + 1))
    label = []
    for _ in range(u):
        choices = [g for g in pool if not label or g != label[-1]]
        label.append(int(choices[rng.integers(0, len(choices))]))
    chunks = []
    for i, g in enumerate(label):
        if i > 0 and cfg.gap_frames > 0:
            chunks.append(_gap(cfg, rng))
        n = int(rng.integers(cfg.frames_per_gloss[0], cfg.frames_per_gloss[1] + 1))
        chunks.append(_render_segment(cfg, glyphs, g, n, rng))
    frames = np.concatenate(chunks, axis=0).astype(np.float32)
    return VideoSample(
        sample_id=sample_id,
        frames=frames,
        label=tuple(label),
        difficulty="hard" if hard else "easy",
    )


def generate(cfg):
    """Deterministic train/dev/test splits with disjoint sample ids."""
    cfg.validate()
    glyphs = _glyphs(cfg)
    sizes = {"train": cfg.n_train, "dev": cfg.n_dev, "test": cfg.n_test}
    splits, next_id = {}, 0
    for name, size in sizes.items():
        splits[name] = [make_sample(cfg, glyphs, next_id + i) for i in range(size)]
        next_id += size
    return splits


# ---------------------------------------------------------------------------
# container format


def write_dataset(path, samples, vocab_size):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, vocab_size, len(samples)))
        for s in samples:
            eta = s.frames.shape[-1]
            fh.write(struct.pack("<IIII", s.sample_id, s.t, eta, len(s.label)))
            fh.write(struct.pack(f"<{len(s.label)}I", *s.label))
            fh.write(struct.pack("<B", 1 if s.difficulty == "hard" else 0))
            fh.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())


def _read_exactly(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what} at byte offset {fh.tell() - len(data)}")
    return data


def read_dataset(path):
    """Returns (samples, vocab_size). Round trip with write_dataset is bit-exact."""
    with open(path, "rb") as fh:
        magic = _read_exactly(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte offset 0")
        version, vocab_size, count = struct.unpack("<III", _read_exactly(fh, 12, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported dataset version {version} at byte offset 4")
        samples = []
        for _ in range(count):
            sid, t, eta, ulen = struct.unpack("<IIII", _read_exactly(fh, 16, "sample header"))
            label = struct.unpack(f"<{ulen}I", _read_exactly(fh, 4 * ulen, "label"))
            (diff,) = struct.unpack("<B", _read_exactly(fh, 1, "difficulty"))
            raw = _read_exactly(fh, 4 * t * eta * eta, "frames")
            frames = np.frombuffer(raw, dtype="<f4").reshape(t, eta, eta).copy()
            samples.append(VideoSample(sid, frames, label, "hard" if diff else "easy"))
        extra = fh.read(1)
        if extra:
            raise FormatError(f"trailing bytes at byte offset {fh.tell() - 1}")
    return samples, vocab_size


# ---------------------------------------------------------------------------
# calibration harness


def calibrate(cfg, low_res, interval=4, clips_per_gloss=(30, 15)):
    """Difficulty separation check for the generator.

    Trains a nearest-centroid classifier on subsampled (every
    `interval`-th frame), low-resolution single-gloss clips and reports
    (easy accuracy, hard accuracy). Calibrated generators keep easy
    accuracy high while hard-pair members stay unresolvable.
    """
    cfg.validate()
    glyphs = _glyphs(cfg)
    rng = np.random.default_rng([cfg.seed, 0xCA11])
    n_train, n_test = clips_per_gloss

    def feature(gloss):
        n = int(rng.integers(cfg.frames_per_gloss[0], cfg.frames_per_gloss[1] + 1))
        clip = _render_segment(cfg, glyphs, gloss, n, rng)
        small = resize(clip[::interval], low_res)
        return small.mean(axis=0).ravel()

    glosses = list(range(1, cfg.vocab_size + 1))
    centroids = {
        g: np.mean([feature(g) for _ in range(n_train)], axis=0) for g in glosses
    }
    keys = np.array(glosses)
    mat = np.stack([centroids[g] for g in glosses])

    def accuracy(pool):
        hits = total = 0
        for g in pool:
            for _ in range(n_test):
                d = np.linalg.norm(mat - feature(g), axis=1)
                hits += int(keys[int(d.argmin())] == g)
                total += 1
        return hits / total

    return accuracy(_easy_pool(cfg)), accuracy(_hard_pool(cfg))
