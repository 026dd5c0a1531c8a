"""GC, GAT, S-UGC and G-UGC layers, their blocks, and the skip-sum network.

Layer functions take node features ``x`` (``N x C``) plus a :class:`GraphBatch`
for structure. ``normalize`` toggles the per-neighborhood LeakyReLU + softmax
on the learned depthwise weights; with it off the raw linear score
``theta_c . [x_p,c || x_p',c]`` is used directly as the convolution weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .graph import GraphBatch

MODEL_KINDS = ("gcn", "gat", "sugcn", "gugcn")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _param(values, name) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _row(t: Tensor, i: int) -> Tensor:
    return ad.gather_rows(t, np.array([i]))


# --------------------------------------------------------------------- params

@dataclass
class GcParams:
    W: Tensor

    @classmethod
    def init(cls, c: int, d: int, rng):
        return cls(_param(glorot(rng, c, d), "gc.W"))

    def parameters(self):
        return [self.W]


@dataclass
class GatParams:
    W: Tensor
    attention: Tensor  # (2D, 1): first half scores the target, second half the neighbor

    @classmethod
    def init(cls, c: int, d: int, rng):
        return cls(_param(glorot(rng, c, d), "gat.W"),
                   _param(glorot(rng, 2 * d, 1), "gat.a"))

    def parameters(self):
        return [self.W, self.attention]


@dataclass
class SugcParams:
    """One S-UGC head: ``theta`` is (2, C) with row 0 weighting x_p and row 1 x_p'."""

    theta: Tensor
    W: Tensor

    @classmethod
    def init(cls, c: int, d: int, rng):
        return cls(_param(glorot(rng, 2, 1, (2, c)), "sugc.theta"),
                   _param(glorot(rng, c, d), "sugc.W"))

    @property
    def in_channels(self) -> int:
        return self.theta.shape[1]

    def parameters(self):
        return [self.theta, self.W]


@dataclass
class GugcParams:
    """``theta`` is (2, D*C); column ``d*C + c`` holds theta_c^(d)."""

    theta: Tensor
    in_channels: int
    out_channels: int

    @classmethod
    def init(cls, c: int, d: int, rng):
        return cls(_param(glorot(rng, 2, 1, (2, d * c)), "gugc.theta"), c, d)

    def __post_init__(self):
        if self.theta.shape != (2, self.in_channels * self.out_channels):
            raise ValueError(
                f"G-UGC needs {self.in_channels * self.out_channels} parameter pairs, "
                f"got theta of shape {self.theta.shape}"
            )

    def parameters(self):
        return [self.theta]


def num_parameters(params) -> int:
    return sum(p.size for p in params.parameters())


# --------------------------------------------------------------------- layers

def gc_forward(x, batch: GraphBatch, params: GcParams, adjacency=None) -> Tensor:
    """Z = Â X W with Â the normalized self-looped adjacency."""
    x = ad.as_tensor(x)
    if x.shape[1] != params.W.shape[0]:
        raise ValueError(f"input width {x.shape[1]} does not match W {params.W.shape}")
    adj = adjacency if adjacency is not None else batch.adjacency
    return ad.spmm(adj.matrix, ad.matmul(x, params.W))


def gat_attention(x, batch: GraphBatch, params: GatParams, h: Tensor | None = None) -> Tensor:
    """Per-edge attention, softmax-normalized over each neighborhood (E x 1)."""
    x = ad.as_tensor(x)
    if h is None:
        if x.shape[1] != params.W.shape[0]:
            raise ValueError(f"input width {x.shape[1]} does not match W {params.W.shape}")
        h = ad.matmul(x, params.W)
    d = params.W.shape[1]
    if params.attention.shape != (2 * d, 1):
        raise ValueError(f"attention vector must be ({2 * d}, 1)")
    a_target = ad.gather_rows(params.attention, np.arange(d))
    a_source = ad.gather_rows(params.attention, np.arange(d, 2 * d))
    s_target = ad.matmul(h, a_target)
    s_source = ad.matmul(h, a_source)
    score = ad.add(
        ad.gather_rows(s_target, batch.target, batch.neighborhoods),
        ad.gather_rows(s_source, batch.source, batch.by_source),
    )
    return ad.segment_softmax(ad.leaky_relu(score), batch.neighborhoods)


def gat_forward(x, batch: GraphBatch, params: GatParams) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[1] != params.W.shape[0]:
        raise ValueError(f"input width {x.shape[1]} does not match W {params.W.shape}")
    h = ad.matmul(x, params.W)
    alpha = gat_attention(x, batch, params, h)
    messages = ad.mul(ad.gather_rows(h, batch.source, batch.by_source), alpha)
    return ad.segment_sum(messages, batch.neighborhoods)


def sugc_weights(x, batch: GraphBatch, theta: Tensor, normalize: bool = True) -> Tensor:
    """Per-(edge, channel) depthwise weights alpha_{p,p',c} (E x C)."""
    x = ad.as_tensor(x)
    if theta.shape != (2, x.shape[1]):
        raise ValueError(f"need one theta pair per channel: theta {theta.shape}, x {x.shape}")
    xt = ad.gather_rows(x, batch.target, batch.neighborhoods)
    xs = ad.gather_rows(x, batch.source, batch.by_source)
    score = ad.add(ad.mul(xt, _row(theta, 0)), ad.mul(xs, _row(theta, 1)))
    if not normalize:
        return score
    return ad.segment_softmax(ad.leaky_relu(score), batch.neighborhoods)


def neighborhood_moments(x, batch: GraphBatch) -> tuple[Tensor, Tensor]:
    """``(X * sum_{p'} X_p', sum_{p'} X_p'**2)`` over neighborhoods that include p."""
    x = ad.as_tensor(x)
    s1 = ad.spmm(batch.neighbor_matrix, x)
    return ad.mul(x, s1), ad.spmm(batch.neighbor_matrix, ad.square(x))


def sugc_dconv(x, batch: GraphBatch, theta: Tensor, normalize: bool = True,
               fast: bool = True, moments=None) -> Tensor:
    """Depthwise step: Y_{p,c} = sum_{p' in N(p)} alpha_{p,p',c} X_{p',c}.

    Without normalization alpha is linear in x and the sum reduces to
    theta_0 * x * sum(x_p') + theta_1 * sum(x_p'**2); ``moments`` lets
    several heads share those two terms.
    """
    x = ad.as_tensor(x)
    if not normalize and fast:
        if theta.shape != (2, x.shape[1]):
            raise ValueError(f"need one theta pair per channel: theta {theta.shape}, x {x.shape}")
        center, spread = moments if moments is not None else neighborhood_moments(x, batch)
        return ad.scale_add(center, _row(theta, 0), spread, _row(theta, 1))
    alpha = sugc_weights(x, batch, theta, normalize)
    xs = ad.gather_rows(x, batch.source, batch.by_source)
    return ad.segment_sum(ad.mul(alpha, xs), batch.neighborhoods)


def sugc_forward(x, batch: GraphBatch, heads, normalize: bool = True) -> Tensor:
    """Per head ``sugc_dconv(x) @ W``; heads concatenated along the feature axis."""
    if isinstance(heads, SugcParams):
        heads = [heads]
    outs = []
    for h in heads:
        y = sugc_dconv(x, batch, h.theta, normalize)
        if y.shape[1] != h.W.shape[0]:
            raise ValueError(f"depthwise output width {y.shape[1]} does not match W {h.W.shape}")
        outs.append(ad.matmul(y, h.W))
    return ad.concat_cols(outs)


def _gugc_group_matrix(c: int, d: int) -> np.ndarray:
    g = np.zeros((d * c, d))
    g[np.arange(d * c), np.repeat(np.arange(d), c)] = 1.0
    return g


def gugc_weights(x, batch: GraphBatch, params: GugcParams, normalize: bool = True) -> Tensor:
    """alpha^{(d)}_{p,p',c} laid out as E x (D*C), column d*C + c."""
    x = ad.as_tensor(x)
    c, d = params.in_channels, params.out_channels
    if x.shape[1] != c:
        raise ValueError(f"input width {x.shape[1]} does not match G-UGC channels {c}")
    tile = np.tile(np.arange(c), d)
    xt = ad.gather_cols(ad.gather_rows(x, batch.target, batch.neighborhoods), tile)
    xs = ad.gather_cols(ad.gather_rows(x, batch.source, batch.by_source), tile)
    score = ad.add(ad.mul(xt, _row(params.theta, 0)), ad.mul(xs, _row(params.theta, 1)))
    if not normalize:
        return score
    return ad.segment_softmax(ad.leaky_relu(score), batch.neighborhoods)


def gugc_forward(x, batch: GraphBatch, params: GugcParams, normalize: bool = True,
                 fast: bool = True) -> Tensor:
    """Z_{p,d} = sum_c sum_{p' in N(p)} alpha^{(d)}_{p,p',c} X_{p',c}.

    Without normalization the weights are linear in x, so the sum factors into
    neighborhood sums of X and X**2 and the E x (D*C) tensor is never built.
    """
    x = ad.as_tensor(x)
    c, d = params.in_channels, params.out_channels
    if x.shape[1] != c:
        raise ValueError(f"input width {x.shape[1]} does not match G-UGC channels {c}")
    if not normalize and fast:
        center, spread = neighborhood_moments(x, batch)
        a = ad.transpose(ad.reshape(_row(params.theta, 0), (d, c)))
        b = ad.transpose(ad.reshape(_row(params.theta, 1), (d, c)))
        return ad.add(ad.matmul(center, a), ad.matmul(spread, b))
    alpha = gugc_weights(x, batch, params, normalize)
    tile = np.tile(np.arange(c), d)
    xs = ad.gather_cols(ad.gather_rows(x, batch.source, batch.by_source), tile)
    m = ad.segment_sum(ad.mul(alpha, xs), batch.neighborhoods)
    return ad.matmul(m, _gugc_group_matrix(c, d))


# --------------------------------------------------------------------- blocks

class Block:
    kind: str
    out_width: int

    def __call__(self, x, batch, mode="train"):
        return self.forward(x, batch, mode)

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError


class GcBlock(Block):
    kind = "gcn"

    def __init__(self, c, d, rng):
        self.layer = GcParams.init(c, d, rng)
        self.bn = BatchNormState(d)
        self.out_width = d

    def forward(self, x, batch, mode="train"):
        z = gc_forward(x, batch, self.layer)
        return ad.relu(ad.batch_norm(z, self.bn.gamma, self.bn.beta, self.bn, mode))

    def parameters(self):
        return self.layer.parameters() + self.bn.parameters()


class GatBlock(Block):
    kind = "gat"

    def __init__(self, c, d, rng):
        self.layer = GatParams.init(c, d, rng)
        self.bn = BatchNormState(d)
        self.out_width = d

    def forward(self, x, batch, mode="train"):
        z = gat_forward(x, batch, self.layer)
        return ad.relu(ad.batch_norm(z, self.bn.gamma, self.bn.beta, self.bn, mode))

    def parameters(self):
        return self.layer.parameters() + self.bn.parameters()


class SugcBlock(Block):
    """Per head: DConv -> BN -> ReLU -> PConv; heads concatenated, then BN -> ReLU."""

    kind = "sugcn"

    def __init__(self, c, d, rng, heads: int = 1, normalize: bool = False):
        self.heads = [SugcParams.init(c, d, rng) for _ in range(heads)]
        self.dconv_bns = [BatchNormState(c) for _ in range(heads)]
        self.bn = BatchNormState(heads * d)
        self.normalize = normalize
        self.out_width = heads * d

    def forward(self, x, batch, mode="train"):
        outs = []
        moments = None if self.normalize else neighborhood_moments(x, batch)
        for h, bn in zip(self.heads, self.dconv_bns):
            y = sugc_dconv(x, batch, h.theta, self.normalize, moments=moments)
            y = ad.relu(ad.batch_norm(y, bn.gamma, bn.beta, bn, mode))
            outs.append(ad.matmul(y, h.W))
        z = ad.concat_cols(outs)
        return ad.relu(ad.batch_norm(z, self.bn.gamma, self.bn.beta, self.bn, mode))

    def parameters(self):
        ps = []
        for h, bn in zip(self.heads, self.dconv_bns):
            ps += h.parameters() + bn.parameters()
        return ps + self.bn.parameters()


class GugcBlock(Block):
    kind = "gugcn"

    def __init__(self, c, d, rng, normalize: bool = False):
        self.layer = GugcParams.init(c, d, rng)
        self.bn = BatchNormState(d)
        self.normalize = normalize
        self.out_width = d

    def forward(self, x, batch, mode="train"):
        z = gugc_forward(x, batch, self.layer, self.normalize)
        return ad.relu(ad.batch_norm(z, self.bn.gamma, self.bn.beta, self.bn, mode))

    def parameters(self):
        return self.layer.parameters() + self.bn.parameters()


def make_block(kind: str, c: int, d: int, rng, heads: int = 1, normalize: bool = False) -> Block:
    if kind == "gcn":
        return GcBlock(c, d, rng)
    if kind == "gat":
        return GatBlock(c, d, rng)
    if kind == "sugcn":
        return SugcBlock(c, d, rng, heads, normalize)
    if kind == "gugcn":
        return GugcBlock(c, d, rng, normalize)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def block_forward(x, batch, block: Block, mode: str = "train") -> Tensor:
    return block.forward(x, batch, mode)


# -------------------------------------------------------------------- network

@dataclass
class UgcnConfig:
    model: str = "sugcn"
    hidden: int = 32
    num_blocks: int = 5
    heads: int = 4
    dropout: float = 0.5
    normalize_attention: bool = False
    skip: bool = True

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        if self.hidden < 1 or self.num_blocks < 1 or self.heads < 1:
            raise ValueError("hidden, num_blocks and heads must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class Ugcn:
    """Stack of blocks, element-wise sum of block outputs, sum readout, dropout, dense."""

    config: UgcnConfig
    blocks: list[Block]
    classifier_W: Tensor
    classifier_b: Tensor
    in_features: int = field(default=0)

    @classmethod
    def build(cls, config: UgcnConfig, in_features: int, num_classes: int,
              rng: np.random.Generator) -> "Ugcn":
        heads = config.heads if config.model == "sugcn" else 1
        blocks = []
        width = in_features
        for _ in range(config.num_blocks):
            b = make_block(config.model, width, config.hidden, rng, heads,
                           config.normalize_attention)
            blocks.append(b)
            width = b.out_width
        w = _param(glorot(rng, width, num_classes), "classifier.W")
        bias = _param(np.zeros((1, num_classes)), "classifier.b")
        return cls(config, blocks, w, bias, in_features)

    def parameters(self) -> list[Tensor]:
        ps = []
        for b in self.blocks:
            ps += b.parameters()
        return ps + [self.classifier_W, self.classifier_b]

    def embed(self, batch: GraphBatch, mode: str = "train") -> Tensor:
        """Node embeddings after the skip-sum (or the last block without skip)."""
        x = Tensor(batch.node_features)
        outs = []
        for b in self.blocks:
            x = b.forward(x, batch, mode)
            outs.append(x)
        if not self.config.skip:
            return outs[-1]
        if len({o.shape[1] for o in outs}) != 1:
            raise ValueError("skip-sum needs equal block widths")
        h = outs[0]
        for o in outs[1:]:
            h = ad.add(h, o)
        return h

    def forward(self, batch: GraphBatch, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        h = self.embed(batch, mode)
        g = ad.segment_sum(h, batch.graphs)
        g = ad.dropout(g, self.config.dropout, mode, rng)
        return ad.add(ad.matmul(g, self.classifier_W), self.classifier_b)

    __call__ = forward


def ugcn_forward(batch: GraphBatch, model: Ugcn, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> Tensor:
    return model.forward(batch, mode, rng)
