"""The five headline-incongruence detectors and their building blocks.

All models are dual encoders: a headline representation and a body
representation are compared by a bilinear scorer sigma(u_H' M u_B + b).

  rde   word-level GRU over the flattened body and over the headline
  cde   convolutional encoder (filter widths 3/4/5, max-over-time)
  hrde  word-level GRU per paragraph, second GRU over paragraph states
  ahde  hrde with a bidirectional paragraph GRU and attention pooling
        of paragraph states against the headline state
  hre   paragraph vectors = mean word embedding, one GRU over them;
        headline = mean word embedding

With the independent-paragraph (IP) flag each paragraph is scored
against the headline on its own (hierarchical kinds then treat
sentences as the lower unit) and the article score is the maximum.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import (
    Node,
    ShapeError,
    add,
    concat,
    constant,
    matmul,
    mean,
    mul,
    node_max,
    node_slice,
    node_sum,
    parameter,
    reshape,
    sigmoid,
    softmax,
    sub,
    tanh,
)
from .textcorpus import PAD_ID, Article, split_sentences_by_ids

KINDS = ("rde", "cde", "hrde", "ahde", "hre")
HIERARCHICAL_KINDS = frozenset({"hrde", "ahde", "hre"})
CONV_WIDTHS = (3, 4, 5)

_NEG = 1e9  # added with a minus sign to mask scores/windows out of max/softmax


class ModelError(ValueError):
    """Bad model configuration or input that violates an encoder contract."""


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def _xavier(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class GruParams:
    """Gate parameters of one GRU cell.

    Update: z = sigma(x W_z + h U_z + b_z), reset r likewise,
    candidate c = tanh(x W_h + (r*h) U_h + b_h), new state
    h' = (1-z)*h + z*c. Inputs are row vectors or (batch, dim) blocks.
    """

    GATES = ("z", "r", "h")

    def __init__(self, arrays: dict[str, np.ndarray]):
        for gate in self.GATES:
            setattr(self, f"w_{gate}", parameter(arrays[f"w_{gate}"], arrays[f"w_{gate}"].dtype))
            setattr(self, f"u_{gate}", parameter(arrays[f"u_{gate}"], arrays[f"u_{gate}"].dtype))
            setattr(self, f"b_{gate}", parameter(arrays[f"b_{gate}"], arrays[f"b_{gate}"].dtype))
        self.d_in = arrays["w_z"].shape[0]
        self.d_h = arrays["w_z"].shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_h: int, dtype) -> "GruParams":
        arrays = {}
        for gate in cls.GATES:
            arrays[f"w_{gate}"] = _xavier(rng, (d_in, d_h), dtype)
            arrays[f"u_{gate}"] = _xavier(rng, (d_h, d_h), dtype)
            arrays[f"b_{gate}"] = np.zeros(d_h, dtype=dtype)
        return cls(arrays)

    def named(self, prefix: str) -> dict[str, Node]:
        out = {}
        for gate in self.GATES:
            for kind in ("w", "u", "b"):
                out[f"{prefix}/{kind}_{gate}"] = getattr(self, f"{kind}_{gate}")
        return out


def gru_step(p: GruParams, h_prev: Node, x: Node) -> Node:
    """One GRU update; accepts (d,) vectors or (batch, d) blocks."""
    if x.shape[-1] != p.d_in or h_prev.shape[-1] != p.d_h:
        raise ShapeError(f"gru_step: x {x.shape}, h {h_prev.shape}, cell ({p.d_in}->{p.d_h})")
    z = sigmoid(add(add(matmul(x, p.w_z), matmul(h_prev, p.u_z)), p.b_z))
    r = sigmoid(add(add(matmul(x, p.w_r), matmul(h_prev, p.u_r)), p.b_r))
    cand = tanh(add(add(matmul(x, p.w_h), matmul(mul(r, h_prev), p.u_h)), p.b_h))
    one = constant(np.asarray(1.0, dtype=x.dtype))
    return add(mul(sub(one, z), h_prev), mul(z, cand))


def encode_tokens(
    gru: GruParams, embedding: Node, tokens: Sequence[int]
) -> tuple[Node, list[Node]]:
    """Run a GRU over one embedded token sequence from h = 0.

    Trailing padding tokens are skipped. Returns the final hidden state
    and the per-step states.
    """
    end = len(tokens)
    while end > 0 and tokens[end - 1] == PAD_ID:
        end -= 1
    if end == 0:
        raise ModelError("empty sequence")
    h = constant(np.zeros(gru.d_h, dtype=embedding.dtype))
    hiddens: list[Node] = []
    for tok in tokens[:end]:
        x = node_slice(embedding, int(tok))
        h = gru_step(gru, h, x)
        hiddens.append(h)
    return h, hiddens


class ConvParams:
    """k filters per width; weights are stored as (width*d_emb, k) blocks."""

    def __init__(self, arrays: dict[str, np.ndarray], widths=CONV_WIDTHS):
        self.widths = tuple(widths)
        self.weights = {w: parameter(arrays[f"w{w}"], arrays[f"w{w}"].dtype) for w in self.widths}
        self.biases = {w: parameter(arrays[f"b{w}"], arrays[f"b{w}"].dtype) for w in self.widths}
        self.n_filters = arrays[f"w{self.widths[0]}"].shape[1]
        self.d_emb = arrays[f"w{self.widths[0]}"].shape[0] // self.widths[0]

    @classmethod
    def init(cls, rng, d_emb: int, n_filters: int, dtype, widths=CONV_WIDTHS) -> "ConvParams":
        arrays = {}
        for w in widths:
            arrays[f"w{w}"] = _xavier(rng, (w * d_emb, n_filters), dtype)
            arrays[f"b{w}"] = np.zeros(n_filters, dtype=dtype)
        return cls(arrays, widths)

    @property
    def min_length(self) -> int:
        return max(self.widths)

    @property
    def out_dim(self) -> int:
        return len(self.widths) * self.n_filters

    def named(self, prefix: str) -> dict[str, Node]:
        out = {}
        for w in self.widths:
            out[f"{prefix}/w{w}"] = self.weights[w]
            out[f"{prefix}/b{w}"] = self.biases[w]
        return out


def conv_encode(p: ConvParams, emb_seq: Node) -> Node:
    """Valid convolution then max-over-time per width, concatenated.

    ``emb_seq`` is one embedded (T, d_emb) sequence already padded to at
    least the largest filter width.
    """
    t_len = emb_seq.shape[0]
    if t_len < p.min_length:
        raise ShapeError(f"conv_encode: sequence length {t_len} < width {p.min_length}")
    pooled = []
    for w in p.widths:
        windows = [
            reshape(node_slice(emb_seq, slice(s, s + w)), (1, w * p.d_emb))
            for s in range(t_len - w + 1)
        ]
        resp = add(matmul(concat(windows, axis=0), p.weights[w]), p.biases[w])
        pooled.append(node_max(resp, axis=0))
    return concat(pooled, axis=0)


class AttentionParams:
    """Additive attention of body states against the headline state."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.w_body = parameter(arrays["w_body"], arrays["w_body"].dtype)
        self.w_head = parameter(arrays["w_head"], arrays["w_head"].dtype)
        self.v = parameter(arrays["v"], arrays["v"].dtype)
        self.d_u = arrays["w_body"].shape[0]
        self.d_a = arrays["w_body"].shape[1]

    @classmethod
    def init(cls, rng, d_u: int, d_a: int, dtype) -> "AttentionParams":
        return cls(
            {
                "w_body": _xavier(rng, (d_u, d_a), dtype),
                "w_head": _xavier(rng, (d_u, d_a), dtype),
                "v": _xavier(rng, (d_a, 1), dtype).reshape(-1),
            }
        )

    def named(self, prefix: str) -> dict[str, Node]:
        return {
            f"{prefix}/w_body": self.w_body,
            f"{prefix}/w_head": self.w_head,
            f"{prefix}/v": self.v,
        }


def attention_pool(p: AttentionParams, u_body: Node, u_head: Node) -> tuple[Node, Node]:
    """Softmax-pool a (U, d_u) state sequence against one (d_u,) state.

    Returns (weights, pooled context).
    """
    if u_body.value.ndim != 2 or u_body.value.shape[0] == 0:
        raise ModelError("attention_pool: need a non-empty (U, d_u) sequence")
    scores = matmul(tanh(add(matmul(u_body, p.w_body), matmul(u_head, p.w_head))), p.v)
    weights = softmax(scores, axis=0)
    context = matmul(weights, u_body)
    return weights, context


class BilinearScorer:
    """sigma(u_H' M u_B + b); M is square unless the towers differ (hre)."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.m = parameter(arrays["m"], arrays["m"].dtype)
        self.b = parameter(arrays["b"], arrays["b"].dtype)

    @classmethod
    def init(cls, rng, d_head: int, d_body: int, dtype) -> "BilinearScorer":
        return cls(
            {
                "m": _xavier(rng, (d_head, d_body), dtype),
                "b": np.zeros((), dtype=dtype),
            }
        )

    def named(self, prefix: str = "scorer") -> dict[str, Node]:
        return {f"{prefix}/m": self.m, f"{prefix}/b": self.b}


def bilinear_logit(scorer: BilinearScorer, u_head: Node, u_body: Node) -> Node:
    if u_head.value.ndim == 1:
        return add(matmul(u_head, matmul(scorer.m, u_body)), scorer.b)
    # batched rows: (B, d_head) x (B, d_body) -> (B,)
    return add(node_sum(mul(matmul(u_head, scorer.m), u_body), axis=1), scorer.b)


def bilinear_score(u_head: Node, u_body: Node, scorer: BilinearScorer) -> Node:
    """Probability in (0, 1) that the pair is incongruent."""
    return sigmoid(bilinear_logit(scorer, u_head, u_body))


@dataclass
class TruncationLimits:
    """Desk-scale caps applied before encoding."""

    max_unit_tokens: int = 200
    max_units: int = 40


@dataclass
class Instance:
    """One scoring unit: a headline against a list of lower-level units."""

    headline: list[int]
    units: list[list[int]]
    label: int | None = None


@dataclass
class ScoredPrediction:
    score: float
    paragraph_scores: list[float]
    top_paragraph_index: int
    model_version: str


class ModelParameters:
    """Named parameter collection for one detector."""

    def __init__(
        self,
        kind: str,
        ip: bool,
        embedding: np.ndarray,
        parts: dict,
        scorer: BilinearScorer,
        sentence_delims: Sequence[int] = (),
        limits: TruncationLimits | None = None,
    ):
        if kind not in KINDS:
            raise ModelError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.ip = bool(ip)
        embedding = np.array(embedding, copy=True)
        embedding[PAD_ID] = 0.0
        self.embedding = parameter(embedding, embedding.dtype)
        self.parts = parts
        self.scorer = scorer
        self.sentence_delims = tuple(int(d) for d in sentence_delims)
        self.limits = limits or TruncationLimits()

    @property
    def dtype(self):
        return self.embedding.dtype

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def d_emb(self) -> int:
        return self.embedding.shape[1]

    def params(self) -> dict[str, Node]:
        out: dict[str, Node] = {"embedding": self.embedding}
        for name, part in self.parts.items():
            out.update(part.named(name))
        out.update(self.scorer.named())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: node.value for name, node in self.params().items()}

    def version(self) -> str:
        """Content hash over all tensors (at float32, the storage precision)."""
        digest = hashlib.sha256()
        for name, value in self.state_arrays().items():
            digest.update(name.encode())
            digest.update(str(value.shape).encode())
            digest.update(np.ascontiguousarray(value, dtype="<f4").tobytes())
        return digest.hexdigest()[:16]

    def clone(self, dtype=None) -> "ModelParameters":
        arrays = {k: v.copy() for k, v in self.state_arrays().items()}
        return model_from_tensors(
            self.kind,
            self.ip,
            arrays,
            sentence_delims=self.sentence_delims,
            dtype=dtype or self.dtype,
            limits=self.limits,
        )


def build_model(
    kind: str,
    vocab_size: int,
    d_emb: int = 300,
    d_h: int = 64,
    ip: bool = False,
    seed: int = 0,
    dtype=np.float32,
    sentence_delims: Sequence[int] = (),
    conv_filters: int = 32,
    d_attn: int | None = None,
    limits: TruncationLimits | None = None,
) -> ModelParameters:
    """Randomly initialize a model of the given kind."""
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(seed)
    embedding = rng.uniform(-0.1, 0.1, size=(vocab_size, d_emb)).astype(dtype)

    parts: dict = {}
    if kind == "rde":
        parts["head_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        parts["body_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        scorer = BilinearScorer.init(rng, d_h, d_h, dtype)
    elif kind == "cde":
        parts["head_conv"] = ConvParams.init(rng, d_emb, conv_filters, dtype)
        parts["body_conv"] = ConvParams.init(rng, d_emb, conv_filters, dtype)
        dim = parts["head_conv"].out_dim
        scorer = BilinearScorer.init(rng, dim, dim, dtype)
    elif kind == "hrde":
        parts["head_word_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        parts["body_word_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        parts["head_para_gru"] = GruParams.init(rng, d_h, d_h, dtype)
        parts["body_para_gru"] = GruParams.init(rng, d_h, d_h, dtype)
        scorer = BilinearScorer.init(rng, d_h, d_h, dtype)
    elif kind == "ahde":
        parts["head_word_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        parts["body_word_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        for tower in ("head", "body"):
            parts[f"{tower}_para_fwd"] = GruParams.init(rng, d_h, d_h, dtype)
            parts[f"{tower}_para_bwd"] = GruParams.init(rng, d_h, d_h, dtype)
        d_u = 2 * d_h
        parts["attention"] = AttentionParams.init(rng, d_u, d_attn or d_u, dtype)
        scorer = BilinearScorer.init(rng, d_u, d_u, dtype)
    else:  # hre
        parts["para_gru"] = GruParams.init(rng, d_emb, d_h, dtype)
        scorer = BilinearScorer.init(rng, d_emb, d_h, dtype)

    return ModelParameters(
        kind, ip, embedding, parts, scorer, sentence_delims, limits
    )


# ---------------------------------------------------------------------------
# instance preparation


def _flatten(units: Iterable[Sequence[int]]) -> list[int]:
    return [tok for unit in units for tok in unit]


def _truncate_units(units: list[list[int]], limits: TruncationLimits) -> list[list[int]]:
    return [list(u[: limits.max_unit_tokens]) for u in units[: limits.max_units]]


def paragraph_units(
    kind: str, paragraph: Sequence[int], sentence_delims: Sequence[int]
) -> list[list[int]]:
    """Lower-level decomposition of one paragraph under the IP method."""
    if kind in HIERARCHICAL_KINDS:
        return split_sentences_by_ids(paragraph, sentence_delims)
    return [list(paragraph)]


def article_to_instances(model: ModelParameters, article: Article) -> list[Instance]:
    """Instances in scoring order: one per article, or one per paragraph (IP)."""
    limits = model.limits
    headline = list(article.headline[: limits.max_unit_tokens])
    if not headline or not article.paragraphs:
        raise ModelError(f"article {article.id!r} has an empty headline or body")
    paragraphs = _truncate_units([list(p) for p in article.paragraphs], limits)
    if model.ip:
        out = []
        for paragraph in paragraphs:
            units = _truncate_units(
                paragraph_units(model.kind, paragraph, model.sentence_delims), limits
            )
            out.append(Instance(headline=headline, units=units, label=article.label))
        return out
    if model.kind in HIERARCHICAL_KINDS:
        units = paragraphs
    else:
        units = [_flatten(paragraphs)]
    return [Instance(headline=headline, units=units, label=article.label)]


class Packed:
    """Padded id/mask arrays for one batch of instances."""

    def __init__(self, kind: str, instances: Sequence[Instance], dtype):
        if not instances:
            raise ModelError("empty batch")
        self.size = len(instances)
        self.dtype = dtype
        min_len = max(CONV_WIDTHS) if kind == "cde" else 1
        heads = [inst.headline for inst in instances]
        self.head_ids, self.head_mask, self.head_len = _pad_rows(heads, dtype, min_len)
        if kind in ("rde", "cde"):
            bodies = [_flatten(inst.units) for inst in instances]
            if any(not b for b in bodies):
                raise ModelError("empty sequence")
            self.body_ids, self.body_mask, self.body_len = _pad_rows(bodies, dtype, min_len)
        else:
            rows: list[Sequence[int]] = []
            index = np.zeros((self.size, max(len(i.units) for i in instances)), dtype=np.int64)
            mask = np.zeros(index.shape, dtype=dtype)
            for b, inst in enumerate(instances):
                if not inst.units or any(not u for u in inst.units):
                    raise ModelError("empty sequence")
                for j, unit in enumerate(inst.units):
                    index[b, j] = len(rows)
                    mask[b, j] = 1.0
                    rows.append(unit)
            # sentinel row len(rows) maps padding slots to an all-zero state
            index[mask == 0.0] = len(rows)
            self.unit_ids, self.unit_word_mask, _ = _pad_rows(rows, dtype, 1)
            self.unit_index = index
            self.unit_mask = mask


def _pad_rows(rows: Sequence[Sequence[int]], dtype, min_len: int):
    lengths = np.array([max(len(r), min_len) for r in rows], dtype=np.int64)
    width = int(lengths.max())
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=dtype)
    for i, row in enumerate(rows):
        if not row:
            raise ModelError("empty sequence")
        ids[i, : len(row)] = row
        mask[i, : len(row)] = 1.0
    return ids, mask, lengths


# ---------------------------------------------------------------------------
# batched forward passes


def _gru_over_time(
    gru: GruParams, seq: Node, mask: np.ndarray, reverse: bool = False, collect: bool = False
) -> tuple[Node, list[Node]]:
    """Masked GRU over a (N, T, d) sequence; padded steps carry the state."""
    n, t_len, _ = seq.value.shape
    dtype = seq.dtype
    h = constant(np.zeros((n, gru.d_h), dtype=dtype))
    states: list[Node | None] = [None] * t_len if collect else []
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    one = constant(np.asarray(1.0, dtype=dtype))
    for t in steps:
        x = node_slice(seq, (slice(None), t))
        h_new = gru_step(gru, h, x)
        col = mask[:, t]
        if col.all():
            h = h_new
        else:
            m = constant(col[:, None].astype(dtype))
            h = add(mul(m, h_new), mul(sub(one, m), h))
        if collect:
            states[t] = h
    return h, (states if collect else [])


def _stack_time(states: Sequence[Node]) -> Node:
    """(N, d) states per step -> (N, T, d)."""
    n, d = states[0].shape
    return concat([reshape(s, (n, 1, d)) for s in states], axis=1)


def _regroup(unit_states: Node, unit_index: np.ndarray) -> Node:
    """Scatter per-unit rows (R, d) into per-instance (B, U, d) blocks."""
    d = unit_states.shape[-1]
    with_sentinel = concat(
        [unit_states, constant(np.zeros((1, d), dtype=unit_states.dtype))], axis=0
    )
    return node_slice(with_sentinel, unit_index)


def _masked_mean(seq: Node, mask: np.ndarray) -> Node:
    """Mean over axis 1 of (N, T, d) counting only unmasked positions."""
    dtype = seq.dtype
    weighted = mul(seq, constant(mask[:, :, None].astype(dtype)))
    counts = mask.sum(axis=1, keepdims=True).astype(dtype)
    return mul(node_sum(weighted, axis=1), constant(1.0 / counts))


def _conv_tower(conv: ConvParams, seq: Node, lengths: np.ndarray) -> Node:
    """Batched conv encoding; windows beyond each row's padded-canonical
    length are masked so results match single-sequence conv_encode."""
    n, t_len, d = seq.value.shape
    dtype = seq.dtype
    outs = []
    for w in conv.widths:
        t_win = t_len - w + 1
        resp: Node | None = None
        for i in range(w):
            block = node_slice(conv.weights[w], slice(i * d, (i + 1) * d))
            part = matmul(node_slice(seq, (slice(None), slice(i, i + t_win))), block)
            resp = part if resp is None else add(resp, part)
        resp = add(resp, conv.biases[w])
        valid = np.arange(t_win)[None, :] <= (lengths[:, None] - w)
        if not valid.all():
            resp = add(resp, constant(((valid - 1.0) * _NEG)[:, :, None].astype(dtype)))
        outs.append(node_max(resp, axis=1))
    return concat(outs, axis=1)


def _attention_batch(
    attn: AttentionParams, states: Node, u_head: Node, mask: np.ndarray
) -> tuple[Node, Node]:
    n, u_max, d_u = states.value.shape
    dtype = states.dtype
    proj = add(matmul(states, attn.w_body), reshape(matmul(u_head, attn.w_head), (n, 1, attn.d_a)))
    scores = matmul(tanh(proj), attn.v)
    if not mask.all():
        scores = add(scores, constant(((mask - 1.0) * _NEG).astype(dtype)))
    weights = softmax(scores, axis=1)
    context = node_sum(mul(reshape(weights, (n, u_max, 1)), states), axis=1)
    return weights, context


def forward_logits(model: ModelParameters, packed: Packed) -> Node:
    """Batched incongruence logits, shape (B,)."""
    emb = model.embedding
    kind = model.kind
    head_emb = node_slice(emb, packed.head_ids)

    if kind == "rde":
        u_head, _ = _gru_over_time(model.parts["head_gru"], head_emb, packed.head_mask)
        body_emb = node_slice(emb, packed.body_ids)
        u_body, _ = _gru_over_time(model.parts["body_gru"], body_emb, packed.body_mask)
    elif kind == "cde":
        u_head = _conv_tower(model.parts["head_conv"], head_emb, packed.head_len)
        body_emb = node_slice(emb, packed.body_ids)
        u_body = _conv_tower(model.parts["body_conv"], body_emb, packed.body_len)
    elif kind in ("hrde", "ahde"):
        h_head, _ = _gru_over_time(model.parts["head_word_gru"], head_emb, packed.head_mask)
        unit_emb = node_slice(emb, packed.unit_ids)
        h_units, _ = _gru_over_time(model.parts["body_word_gru"], unit_emb, packed.unit_word_mask)
        body_seq = _regroup(h_units, packed.unit_index)
        head_seq = reshape(h_head, (packed.size, 1, h_head.shape[-1]))
        ones = np.ones((packed.size, 1), dtype=packed.head_mask.dtype)
        if kind == "hrde":
            u_head, _ = _gru_over_time(model.parts["head_para_gru"], head_seq, ones)
            u_body, _ = _gru_over_time(model.parts["body_para_gru"], body_seq, packed.unit_mask)
        else:
            hf, _ = _gru_over_time(model.parts["head_para_fwd"], head_seq, ones)
            hb, _ = _gru_over_time(model.parts["head_para_bwd"], head_seq, ones, reverse=True)
            u_head = concat([hf, hb], axis=1)
            _, fwd_states = _gru_over_time(
                model.parts["body_para_fwd"], body_seq, packed.unit_mask, collect=True
            )
            _, bwd_states = _gru_over_time(
                model.parts["body_para_bwd"], body_seq, packed.unit_mask, reverse=True, collect=True
            )
            states = concat([_stack_time(fwd_states), _stack_time(bwd_states)], axis=2)
            _, u_body = _attention_batch(
                model.parts["attention"], states, u_head, packed.unit_mask
            )
    else:  # hre
        u_head = _masked_mean(head_emb, packed.head_mask)
        unit_emb = node_slice(emb, packed.unit_ids)
        unit_vecs = _masked_mean(unit_emb, packed.unit_word_mask)
        body_seq = _regroup(unit_vecs, packed.unit_index)
        u_body, _ = _gru_over_time(model.parts["para_gru"], body_seq, packed.unit_mask)

    return bilinear_logit(model.scorer, u_head, u_body)


def score_instances(model: ModelParameters, instances: Sequence[Instance]) -> np.ndarray:
    """Probabilities for a batch of prepared instances."""
    packed = Packed(model.kind, instances, model.dtype)
    return sigmoid(forward_logits(model, packed)).value.copy()


def ip_score(
    model: ModelParameters,
    headline: Sequence[int],
    paragraphs: Sequence[Sequence[int]],
) -> ScoredPrediction:
    """Score each (headline, paragraph) pair independently; max-aggregate.

    Ties pick the lowest paragraph index. Each paragraph is scored on
    its own so the result is invariant to paragraph order and to the
    presence of other paragraphs.
    """
    if not paragraphs:
        raise ModelError("empty paragraph list")
    limits = model.limits
    headline = list(headline[: limits.max_unit_tokens])
    scores: list[float] = []
    for paragraph in paragraphs:
        units = _truncate_units(
            paragraph_units(model.kind, list(paragraph[: limits.max_unit_tokens]),
                            model.sentence_delims),
            limits,
        )
        prob = score_instances(model, [Instance(headline=headline, units=units)])
        scores.append(float(prob[0]))
    best = max(scores)
    return ScoredPrediction(
        score=best,
        paragraph_scores=scores,
        top_paragraph_index=scores.index(best),
        model_version=model.version(),
    )


def score_article(model: ModelParameters, article: Article) -> ScoredPrediction:
    """Incongruence score for one article under the model's configuration."""
    if model.ip:
        return ip_score(model, article.headline, article.paragraphs)
    instance = article_to_instances(model, article)[0]
    prob = float(score_instances(model, [instance])[0])
    return ScoredPrediction(
        score=prob,
        paragraph_scores=[prob],
        top_paragraph_index=0,
        model_version=model.version(),
    )


# ---------------------------------------------------------------------------
# checkpoint format: magic, format version, kind, ip flag, named tensors

_MAGIC = b"BWCK"
_FORMAT_VERSION = 1
_KIND_TAGS = {kind: i for i, kind in enumerate(KINDS)}
_DELIMS_TENSOR = "meta/sentence_delims"


def save_checkpoint(path, model: ModelParameters) -> None:
    with open(path, "wb") as fh:
        fh.write(_checkpoint_bytes(model))


def _checkpoint_bytes(model: ModelParameters) -> bytes:
    buf = io.BytesIO()
    tensors = dict(model.state_arrays())
    tensors[_DELIMS_TENSOR] = np.asarray(model.sentence_delims, dtype=np.float32)
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _FORMAT_VERSION))
    buf.write(struct.pack("<B", _KIND_TAGS[model.kind]))
    buf.write(struct.pack("<B", 1 if model.ip else 0))
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        for dim in value.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return buf.getvalue()


def load_checkpoint(path, dtype=np.float32) -> ModelParameters:
    with open(path, "rb") as fh:
        data = fh.read()
    return _model_from_bytes(data, dtype)


def _model_from_bytes(data: bytes, dtype) -> ModelParameters:
    view = memoryview(data)
    if bytes(view[:4]) != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    offset = 4
    (fmt,) = struct.unpack_from("<I", view, offset)
    offset += 4
    if fmt != _FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {fmt}")
    (kind_tag,) = struct.unpack_from("<B", view, offset)
    offset += 1
    (ip_flag,) = struct.unpack_from("<B", view, offset)
    offset += 1
    kinds = {tag: kind for kind, tag in _KIND_TAGS.items()}
    if kind_tag not in kinds:
        raise CheckpointError(f"unknown model kind tag {kind_tag}")
    kind = kinds[kind_tag]
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = []
        for _ in range(rank):
            (dim,) = struct.unpack_from("<I", view, offset)
            offset += 4
            shape.append(dim)
        n_values = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(view, dtype="<f4", count=n_values, offset=offset)
        offset += 4 * n_values
        tensors[name] = raw.reshape(shape).copy()
    if offset != len(data):
        raise CheckpointError("trailing bytes after final tensor")
    delims = tensors.pop(_DELIMS_TENSOR, np.zeros(0, dtype=np.float32))
    return model_from_tensors(
        kind,
        bool(ip_flag),
        tensors,
        sentence_delims=[int(d) for d in delims],
        dtype=dtype,
    )


def _gru_from(tensors: dict[str, np.ndarray], prefix: str, dtype) -> GruParams:
    arrays = {}
    for gate in GruParams.GATES:
        for kind in ("w", "u", "b"):
            key = f"{prefix}/{kind}_{gate}"
            if key not in tensors:
                raise CheckpointError(f"missing tensor {key!r}")
            arrays[f"{kind}_{gate}"] = tensors[key].astype(dtype)
    p = GruParams(arrays)
    for gate in GruParams.GATES:
        if arrays[f"w_{gate}"].shape != (p.d_in, p.d_h) or arrays[
            f"u_{gate}"
        ].shape != (p.d_h, p.d_h) or arrays[f"b_{gate}"].shape != (p.d_h,):
            raise CheckpointError(f"inconsistent GRU shapes under {prefix!r}")
    return p


def model_from_tensors(
    kind: str,
    ip: bool,
    tensors: dict[str, np.ndarray],
    sentence_delims: Sequence[int] = (),
    dtype=np.float32,
    limits: TruncationLimits | None = None,
) -> ModelParameters:
    """Rebuild a model from named tensors, validating shapes for the kind."""
    if "embedding" not in tensors:
        raise CheckpointError("missing tensor 'embedding'")
    embedding = tensors["embedding"].astype(dtype)
    if embedding.ndim != 2:
        raise CheckpointError("embedding must be rank 2")
    d_emb = embedding.shape[1]

    def grab(prefix: str) -> GruParams:
        return _gru_from(tensors, prefix, dtype)

    parts: dict = {}
    if kind == "rde":
        parts["head_gru"] = grab("head_gru")
        parts["body_gru"] = grab("body_gru")
        d_head = d_body = parts["head_gru"].d_h
        word_in = [parts["head_gru"].d_in, parts["body_gru"].d_in]
    elif kind == "cde":
        for tower in ("head_conv", "body_conv"):
            arrays = {}
            for w in CONV_WIDTHS:
                for pre in ("w", "b"):
                    key = f"{tower}/{pre}{w}"
                    if key not in tensors:
                        raise CheckpointError(f"missing tensor {key!r}")
                    arrays[f"{pre}{w}"] = tensors[key].astype(dtype)
            conv = ConvParams(arrays)
            for w in CONV_WIDTHS:
                if arrays[f"w{w}"].shape != (w * conv.d_emb, conv.n_filters):
                    raise CheckpointError(f"inconsistent conv shapes under {tower!r}")
            parts[tower] = conv
        if parts["head_conv"].d_emb != d_emb:
            raise CheckpointError("conv filters do not match embedding width")
        d_head = d_body = parts["head_conv"].out_dim
        word_in = [d_emb]
    elif kind == "hrde":
        for name in ("head_word_gru", "body_word_gru", "head_para_gru", "body_para_gru"):
            parts[name] = grab(name)
        if parts["head_para_gru"].d_in != parts["head_word_gru"].d_h:
            raise CheckpointError("paragraph GRU input does not match word GRU size")
        d_head = parts["head_para_gru"].d_h
        d_body = parts["body_para_gru"].d_h
        word_in = [parts["head_word_gru"].d_in, parts["body_word_gru"].d_in]
    elif kind == "ahde":
        for name in (
            "head_word_gru",
            "body_word_gru",
            "head_para_fwd",
            "head_para_bwd",
            "body_para_fwd",
            "body_para_bwd",
        ):
            parts[name] = grab(name)
        attn_arrays = {}
        for key in ("w_body", "w_head", "v"):
            full = f"attention/{key}"
            if full not in tensors:
                raise CheckpointError(f"missing tensor {full!r}")
            attn_arrays[key] = tensors[full].astype(dtype)
        attn = AttentionParams(attn_arrays)
        d_u = 2 * parts["body_para_fwd"].d_h
        if attn.d_u != d_u or attn_arrays["v"].shape != (attn.d_a,):
            raise CheckpointError("attention shapes do not match paragraph GRU size")
        parts["attention"] = attn
        d_head = d_body = d_u
        word_in = [parts["head_word_gru"].d_in, parts["body_word_gru"].d_in]
    else:  # hre
        parts["para_gru"] = grab("para_gru")
        if parts["para_gru"].d_in != d_emb:
            raise CheckpointError("paragraph GRU input must match embedding width")
        d_head = d_emb
        d_body = parts["para_gru"].d_h
        word_in = [d_emb]

    if any(w != d_emb for w in word_in):
        raise CheckpointError("word-level GRU input does not match embedding width")
    for key in ("scorer/m", "scorer/b"):
        if key not in tensors:
            raise CheckpointError(f"missing tensor {key!r}")
    m = tensors["scorer/m"].astype(dtype)
    if m.shape != (d_head, d_body):
        raise CheckpointError(
            f"scorer shape {m.shape} does not match encoder outputs ({d_head}, {d_body})"
        )
    scorer = BilinearScorer({"m": m, "b": tensors["scorer/b"].astype(dtype).reshape(())})

    known = {"embedding", "scorer/m", "scorer/b"}
    for name, part in parts.items():
        known.update(part.named(name))
    extra = set(tensors) - known
    if extra:
        raise CheckpointError(f"unexpected tensors for kind {kind!r}: {sorted(extra)}")

    return ModelParameters(
        kind, ip, embedding, parts, scorer, sentence_delims, limits
    )
