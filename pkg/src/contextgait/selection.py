"""Parameter-segment selection for inference-time context adaptation.

A library of overlapping subsequences is cut from one or more trained
flat parameter vectors.  Each segment is embedded once at build time;
per action, every segment is scored against the current context state,
the argmax segment is temporarily written into the live policy, the
command is computed, and the original parameters are restored bitwise.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .encoders import Observation
from .layers import BiRecurrent, Dense, Module
from .params import ParamVector


@dataclass
class SelectionConfig:
    l_min: int = 5
    l_max: int = 20
    overlap: float = 0.5
    embed_dim: int = 128
    embed_hidden: int = 16
    head_hidden: int = 64
    context_dim: int = 512
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.overlap < 1):
            raise ValueError("overlap must be in (0, 1)")
        if self.l_min > self.l_max or self.l_min < 1:
            raise ValueError("need 1 <= l_min <= l_max")


@dataclass(frozen=True)
class Segment:
    source_id: str
    start: int
    length: int
    values: np.ndarray


def segment_stride(length: int, overlap: float) -> int:
    return max(1, int(np.floor(length * (1.0 - overlap))))


def segment_starts(n: int, length: int, overlap: float) -> np.ndarray:
    """Start indices for one (source, length): 0, s, 2s, ... while i+l <= n."""
    if length > n:
        return np.empty(0, dtype=int)
    s = segment_stride(length, overlap)
    return np.arange(0, n - length + 1, s)


class SegmentEmbedder(Module):
    """Scalar-sequence encoder: bidirectional GRU, projection, unit norm."""

    def __init__(self, cfg: SelectionConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rnn = BiRecurrent(1, cfg.embed_hidden, "gru", rng)
        self.proj = Dense(2 * cfg.embed_hidden, cfg.embed_dim, "identity", rng)

    def embed_batch(self, values: np.ndarray) -> np.ndarray:
        """Embed a (B, L) batch of equal-length segments to unit vectors."""
        x = np.asarray(values, float)[:, :, None]
        z = self.proj(self.rnn(Tensor(x))).data
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        degenerate = norms[:, 0] < 1e-12
        if np.any(degenerate):
            # all-zero segments project to zero; pin them to a fixed unit vector
            z[degenerate] = 0.0
            z[degenerate, 0] = 1.0
            norms[degenerate] = 1.0
        return z / norms

    def embed(self, segment_values: np.ndarray) -> np.ndarray:
        return self.embed_batch(np.asarray(segment_values, float)[None])[0]


@dataclass
class SegmentLibrary:
    """All segments plus their precomputed embeddings.

    Segments are ordered by (source_id, length, start); argmax selection
    therefore tie-breaks to the lexicographically lowest triple.
    """

    cfg: SelectionConfig
    source_ids: list
    seg_source: np.ndarray     # (n,) index into source_ids
    seg_start: np.ndarray      # (n,)
    seg_len: np.ndarray        # (n,)
    values_flat: np.ndarray    # concatenated segment values
    values_off: np.ndarray     # (n+1,) offsets into values_flat
    embeddings: np.ndarray     # (n, embed_dim), unit rows
    skipped_sources: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.seg_start)

    def segment(self, i: int) -> Segment:
        a, b = self.values_off[i], self.values_off[i + 1]
        return Segment(self.source_ids[self.seg_source[i]], int(self.seg_start[i]),
                       int(self.seg_len[i]), self.values_flat[a:b])

    def restrict(self, max_len: int) -> "SegmentLibrary":
        """Drop segments whose index range exceeds a live parameter length."""
        keep = (self.seg_start + self.seg_len) <= max_len
        if keep.all():
            return self
        kidx = np.flatnonzero(keep)
        off = np.zeros(len(kidx) + 1, dtype=int)
        chunks = []
        for j, i in enumerate(kidx):
            a, b = self.values_off[i], self.values_off[i + 1]
            chunks.append(self.values_flat[a:b])
            off[j + 1] = off[j] + (b - a)
        return SegmentLibrary(
            self.cfg, self.source_ids, self.seg_source[keep], self.seg_start[keep],
            self.seg_len[keep], np.concatenate(chunks) if chunks else np.empty(0),
            off, self.embeddings[keep], list(self.skipped_sources),
        )

    # -- persistence ----------------------------------------------------------
    def save(self, path) -> None:
        counts = np.bincount(self.seg_source, minlength=len(self.source_ids))
        manifest = {
            "version": 1,
            "params": {"l_min": self.cfg.l_min, "l_max": self.cfg.l_max,
                       "overlap": self.cfg.overlap, "embed_dim": self.cfg.embed_dim,
                       "embed_hidden": self.cfg.embed_hidden,
                       "head_hidden": self.cfg.head_hidden,
                       "context_dim": self.cfg.context_dim, "seed": self.cfg.seed},
            "sources": [{"id": s, "segments": int(c)}
                        for s, c in zip(self.source_ids, counts)],
            "skipped": self.skipped_sources,
            "total_segments": len(self),
        }
        with open(path, "wb") as f:
            f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
            for arr, dt in ((self.seg_source, "<i8"), (self.seg_start, "<i8"),
                            (self.seg_len, "<i8"), (self.values_off, "<i8"),
                            (self.values_flat, "<f8"),
                            (self.embeddings.ravel(), "<f8")):
                f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())

    @staticmethod
    def load(path) -> "SegmentLibrary":
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        manifest = json.loads(raw[:nl].decode())
        cfg = SelectionConfig(**{k: v for k, v in manifest["params"].items()})
        n = manifest["total_segments"]
        pos = nl + 1

        def take(count, dt):
            nonlocal pos
            arr = np.frombuffer(raw, dtype=dt, count=count, offset=pos).copy()
            pos += count * 8
            return arr

        seg_source = take(n, "<i8")
        seg_start = take(n, "<i8")
        seg_len = take(n, "<i8")
        values_off = take(n + 1, "<i8")
        values_flat = take(int(values_off[-1]), "<f8")
        embeddings = take(n * cfg.embed_dim, "<f8").reshape(n, cfg.embed_dim)
        return SegmentLibrary(cfg, [s["id"] for s in manifest["sources"]],
                              seg_source, seg_start, seg_len, values_flat,
                              values_off, embeddings, manifest.get("skipped", []))


def build_library(checkpoints, cfg: SelectionConfig | None = None,
                  embedder: SegmentEmbedder | None = None) -> SegmentLibrary:
    """Cut overlapping segments from named flat vectors and embed them.

    ``checkpoints`` is a sequence of (source_id, vector) pairs; vectors
    may be ParamVectors or plain 1-D arrays.  Sources shorter than
    ``l_min`` are skipped with a warning record.
    """
    cfg = cfg or SelectionConfig()
    cfg.validate()
    embedder = embedder or SegmentEmbedder(cfg)

    sources, skipped = [], []
    for sid, vec in checkpoints:
        arr = vec.values if isinstance(vec, ParamVector) else np.asarray(vec, float)
        if arr.size < cfg.l_min:
            skipped.append({"id": str(sid),
                            "reason": f"length {arr.size} < l_min {cfg.l_min}"})
            warnings.warn(f"segment source {sid!r} shorter than l_min; skipped")
            continue
        sources.append((str(sid), arr))
    sources.sort(key=lambda p: p[0])

    src_idx, starts, lens, chunks = [], [], [], []
    by_len: dict[int, list] = {}
    for si, (sid, arr) in enumerate(sources):
        for length in range(cfg.l_min, cfg.l_max + 1):
            for i in segment_starts(arr.size, length, cfg.overlap):
                src_idx.append(si)
                starts.append(int(i))
                lens.append(length)
                vals = arr[i : i + length]
                chunks.append(vals)
                by_len.setdefault(length, []).append((len(src_idx) - 1, vals))

    n = len(src_idx)
    embeddings = np.empty((n, cfg.embed_dim))
    for length, items in by_len.items():
        idx = np.array([i for i, _ in items])
        batch = np.stack([v for _, v in items])
        embeddings[idx] = embedder.embed_batch(batch)

    off = np.zeros(n + 1, dtype=int)
    np.cumsum(lens, out=off[1:]) if n else None
    return SegmentLibrary(
        cfg, [sid for sid, _ in sources], np.array(src_idx, dtype=int),
        np.array(starts, dtype=int), np.array(lens, dtype=int),
        np.concatenate(chunks) if chunks else np.empty(0), off,
        embeddings, skipped,
    )


class ScoringHead(Module):
    """Bilinear-tanh compatibility score between a segment and a context."""

    def __init__(self, cfg: SelectionConfig | None = None, seed: int | None = None):
        super().__init__()
        self.cfg = cfg or SelectionConfig()
        rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        h = self.cfg.head_hidden
        in_dim = self.cfg.embed_dim + self.cfg.context_dim
        lim = np.sqrt(6.0 / (h + in_dim))
        self.w_c = self.register("w_c", rng.uniform(-lim, lim, size=(h, in_dim)))
        self.v = self.register("v", rng.uniform(-lim, lim, size=h))

    def score(self, embedding: np.ndarray, context: np.ndarray) -> float:
        embedding = np.asarray(embedding, float)
        context = np.asarray(context, float)
        if embedding.shape != (self.cfg.embed_dim,) or \
                context.shape != (self.cfg.context_dim,):
            raise ValueError(
                f"score expects ({self.cfg.embed_dim},) and "
                f"({self.cfg.context_dim},), got {embedding.shape}, {context.shape}"
            )
        x = np.concatenate([embedding, context])
        return float(self.v.data @ np.tanh(self.w_c.data @ x))

    def score_all(self, embeddings: np.ndarray, context: np.ndarray,
                  dtype=np.float64) -> np.ndarray:
        """Score every embedding row against one context (vectorized)."""
        d = self.cfg.embed_dim
        wz = self.w_c.data[:, :d].T.astype(dtype)
        ws = self.w_c.data[:, d:].astype(dtype)
        bias = ws @ np.asarray(context, dtype)
        return np.tanh(np.asarray(embeddings, dtype) @ wz + bias) @ \
            self.v.data.astype(dtype)


def select_segment(library: SegmentLibrary, context: np.ndarray,
                   head: ScoringHead):
    """Argmax-scored segment; ties resolve to the build order's first."""
    if len(library) == 0:
        raise ValueError("cannot select from an empty library")
    scores = head.score_all(library.embeddings, context)
    best = int(np.argmax(scores))
    return library.segment(best), float(scores[best])


def apply_segment(flat: np.ndarray, segment: Segment, offset: int = 0) -> np.ndarray:
    """Overwrite flat[offset+start : offset+start+len]; returns prior values."""
    a = offset + segment.start
    b = a + segment.length
    if b > flat.size:
        raise ValueError(f"segment [{a}:{b}] out of range for length {flat.size}")
    prior = flat[a:b].copy()
    flat[a:b] = segment.values
    return prior


def restore_segment(flat: np.ndarray, segment: Segment, prior: np.ndarray,
                    offset: int = 0) -> None:
    a = offset + segment.start
    flat[a : a + segment.length] = prior


def act_with_selection(policy, library: SegmentLibrary, obs: Observation,
                       head: ScoringHead, scope_offset: int = 0):
    """Select, temporarily apply, evaluate, and restore.

    ``scope_offset`` maps segment indices onto the policy's flat vector
    (segments are cut from the command-head region of the checkpoint).
    Returns (command, segment, score).
    """
    state = policy.encoder.build_context_state(obs)
    vec = policy.get_params()
    library = library.restrict(len(vec) - scope_offset)
    segment, score = select_segment(library, state.s_hat, head)
    prior = apply_segment(vec.values, segment, scope_offset)
    try:
        policy.set_params(vec)
        command = policy.command_from_context(state.s_hat)
    finally:
        restore_segment(vec.values, segment, prior, scope_offset)
        policy.set_params(vec)
    return command, segment, score


def benchmark_selection(library_size: int, trials: int,
                        cfg: SelectionConfig | None = None, seed: int = 0,
                        dtype=np.float32) -> dict:
    """Wall-time report for score-all + argmax over a synthetic library."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    cfg = cfg or SelectionConfig()
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((library_size, cfg.embed_dim)).astype(dtype)
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    head = ScoringHead(cfg)
    contexts = rng.standard_normal((trials, cfg.context_dim))
    head.score_all(emb[: min(1024, library_size)], contexts[0], dtype)  # warm-up
    times = []
    for k in range(trials):
        t0 = time.perf_counter()
        scores = head.score_all(emb, contexts[k], dtype)
        int(np.argmax(scores))
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    return {
        "library_size": int(library_size),
        "trials": int(trials),
        "dtype": np.dtype(dtype).name,
        "mean_ms": float(times.mean() * 1e3),
        "p95_ms": float(np.percentile(times, 95) * 1e3),
        "max_ms": float(times.max() * 1e3),
    }


# -- scoring-head training ----------------------------------------------------

def train_scoring_head(head: ScoringHead, library: SegmentLibrary,
                       contexts: np.ndarray, source_labels: np.ndarray,
                       epochs: int = 100, lr: float = 0.02, momentum: float = 0.9,
                       segments_per_source: int = 200, batch_size: int = 32,
                       weight_decay: float = 1e-3, seed: int = 0) -> dict:
    """Fit the scoring head so segment sources separate by context.

    ``source_labels[i]`` is the index (into ``library.source_ids``) of
    the checkpoint whose training distribution matches context ``i``.
    The loss is cross-entropy over per-source log-sum-exp scores: a
    smooth maximum, so minimizing it drives the argmax selection toward
    the labeled source.

    Training runs in a per-dimension RMS-rescaled input space so the
    tanh pre-activations start at a useful magnitude; the scales are
    folded back into ``w_c`` afterwards, so scoring raw inputs with the
    returned head reproduces the trained behaviour exactly.
    """
    rng = np.random.default_rng(seed)
    contexts = np.asarray(contexts, float)
    source_labels = np.asarray(source_labels, int)
    n_src = len(library.source_ids)
    d = head.cfg.embed_dim
    emb_scale = np.sqrt(np.mean(library.embeddings ** 2, axis=0))
    ctx_scale = np.sqrt(np.mean(contexts ** 2, axis=0))
    emb_scale = np.where(emb_scale > 1e-9, emb_scale, 1.0)
    ctx_scale = np.where(ctx_scale > 1e-9, ctx_scale, 1.0)
    vel = {name: np.zeros_like(t.data) for name, t in head.named_parameters()}
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(contexts))
        epoch_losses = []
        for lo in range(0, len(contexts), batch_size):
            idx = order[lo : lo + batch_size]
            ctx = contexts[idx] / ctx_scale
            # subsample an equal number of segments per source
            seg_idx, seg_src = [], []
            for si in range(n_src):
                pool = np.flatnonzero(library.seg_source == si)
                pick = rng.choice(pool, size=min(segments_per_source, pool.size),
                                  replace=False)
                seg_idx.append(pick)
                seg_src.append(np.full(pick.size, si))
            seg_idx = np.concatenate(seg_idx)
            seg_src = np.concatenate(seg_src)
            emb = library.embeddings[seg_idx] / emb_scale

            head.zero_grad()
            wz = head.w_c[:, :d]
            ws = head.w_c[:, d:]
            a = Tensor(emb) @ wz.transpose()            # (M, H)
            b = Tensor(ctx) @ ws.transpose()            # (B, H)
            hid = (a.reshape(1, len(seg_idx), -1) + b.reshape(len(idx), 1, -1)).tanh()
            scores = hid @ head.v                        # (B, M)
            # Smooth-max per source: a tempered log-sum-exp tracks the
            # best-scoring segment, which is what argmax selection uses.
            tau = 0.2
            logits = []
            for si in range(n_src):
                mask = np.flatnonzero(seg_src == si)
                sub = scores[:, mask]
                top = sub.data.max(axis=1, keepdims=True)
                lse = ((sub - Tensor(top)) * (1.0 / tau)).exp().sum(axis=1).log()
                logits.append(lse * tau + Tensor(top[:, 0]))
            from .autodiff import stack as t_stack
            logits = t_stack(logits, axis=1)             # (B, n_src)
            shift = logits - Tensor(logits.data.max(axis=1, keepdims=True))
            logz = shift.exp().sum(axis=1).log()
            picked = shift[np.arange(len(idx)), source_labels[idx]]
            loss = (logz - picked).mean()
            loss.backward()
            for name, t in head.named_parameters():
                g = (t.grad if t.grad is not None else 0.0) + weight_decay * t.data
                v = vel[name]
                v *= momentum
                v -= lr * g
                t.data += v
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
    head.w_c.data[:, :d] /= emb_scale
    head.w_c.data[:, d:] /= ctx_scale
    return {"epoch_loss": losses}
