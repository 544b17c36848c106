"""Projection, personalized attention fusion, graph encoding and concept transforms.

Every entity has two feature rows, a textual one of width ``d_l`` and a
response one of width ``F``. Per role (student / exercise / concept) each
modality is projected to width ``d``, the two projections are mixed with a
learned per-entity weight, and a graph encoder runs over the
student-exercise-concept graph. Concept-dimension heads additionally map the
encoded rows to the total concept count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

ROLES = ("student", "exercise", "concept")
MODALITIES = ("textual", "response")
ENCODERS = ("MLP", "GCN", "GAT", "GT")


class Projector(nn.Module):
    """One hidden layer of width ``d`` with a tanh nonlinearity."""

    def __init__(self, in_dim: int, d: int):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = nn.Linear(in_dim, d)
        self.out = nn.Linear(d, d)
        nn.init.xavier_uniform_(self.hidden.weight)
        nn.init.xavier_uniform_(self.out.weight)
        nn.init.zeros_(self.hidden.bias)
        nn.init.zeros_(self.out.bias)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"projector expects width {self.in_dim}, got {x.shape[-1]}")
        return self.out(torch.tanh(self.hidden(x)))


class DualProjectors(nn.Module):
    def __init__(self, text_dim: int, response_dim: int, d: int):
        super().__init__()
        self.d = d
        widths = {"textual": text_dim, "response": response_dim}
        self.nets = nn.ModuleDict(
            {f"{role}_{mod}": Projector(widths[mod], d) for role in ROLES for mod in MODALITIES}
        )

    def forward(self, x, role: str, modality: str):
        return self.nets[f"{role}_{modality}"](x)


def project(features, role: str, modality: str, projectors: DualProjectors):
    return projectors(features, role, modality)


def attention_fuse(z1, z2, a, W, b):
    """Mix two aligned rows (or batches of rows) with a learned scalar per row.

    ``w_m = a . tanh(z_m W + b)``; the normalised weights are the two-way
    softmax of ``(w_1, w_2)``. Returns ``(fused, w1_tilde, w2_tilde)``.
    """
    if not (torch.isfinite(z1).all() and torch.isfinite(z2).all()):
        raise ValueError("attention inputs must be finite")
    if z1.shape != z2.shape:
        raise ValueError(f"modality rows differ in shape: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    w1 = torch.tanh(z1 @ W + b) @ a
    w2 = torch.tanh(z2 @ W + b) @ a
    w1t = torch.sigmoid(w1 - w2)
    w2t = torch.sigmoid(w2 - w1)
    fused = w1t.unsqueeze(-1) * z1 + w2t.unsqueeze(-1) * z2
    return fused, w1t, w2t


class PersonalizedAttention(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.a = nn.ParameterDict({r: nn.Parameter(torch.empty(d)) for r in ROLES})
        self.W = nn.ParameterDict({r: nn.Parameter(torch.empty(d, d)) for r in ROLES})
        self.b = nn.ParameterDict({r: nn.Parameter(torch.zeros(d)) for r in ROLES})
        bound = math.sqrt(6.0 / (d + 1))
        for r in ROLES:
            nn.init.uniform_(self.a[r], -bound, bound)
            nn.init.xavier_uniform_(self.W[r])

    def forward(self, z1, z2, role: str):
        return attention_fuse(z1, z2, self.a[role], self.W[role], self.b[role])


@dataclass(frozen=True)
class GraphEncoderConfig:
    encoder_type: str = "GT"
    layers: int = 2
    heads: int = 4
    mask_ratio: float = 0.0

    def __post_init__(self):
        if self.encoder_type not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder_type!r}; expected one of {ENCODERS}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in [0, 1)")
        if self.layers < 1 or self.heads < 1:
            raise ValueError("layers and heads must be positive")


def mask_edges(edges, ratio: float, generator=None):
    """Drop each undirected edge independently with probability ``ratio``."""
    if ratio <= 0.0 or edges.shape[0] == 0:
        return edges
    keep = torch.rand(edges.shape[0], generator=generator) >= ratio
    return edges[keep]


def directed(edges, n_nodes: int, self_loops: bool = False):
    """(E, 2) undirected edge list -> (src, dst) with both directions."""
    src = torch.cat([edges[:, 0], edges[:, 1]])
    dst = torch.cat([edges[:, 1], edges[:, 0]])
    if self_loops:
        loop = torch.arange(n_nodes, dtype=src.dtype)
        src = torch.cat([src, loop])
        dst = torch.cat([dst, loop])
    return src, dst


def segment_softmax(scores, index, n: int):
    """Softmax of ``scores`` (E, H) over the edges sharing each ``index`` value."""
    expanded = index.unsqueeze(-1).expand_as(scores)
    mx = torch.full((n, scores.shape[1]), float("-inf"), dtype=scores.dtype)
    mx = mx.scatter_reduce(0, expanded, scores.detach(), reduce="amax", include_self=True)
    ex = torch.exp(scores - mx[index])
    den = torch.zeros((n, scores.shape[1]), dtype=scores.dtype).index_add(0, index, ex)
    return ex / den[index]


class GCNLayer(nn.Module):
    """Symmetric-normalised convolution with self-loops: D^-1/2 (A+I) D^-1/2 X W + b."""

    def __init__(self, d: int):
        super().__init__()
        self.lin = nn.Linear(d, d, bias=False)
        self.bias = nn.Parameter(torch.zeros(d))
        nn.init.xavier_uniform_(self.lin.weight)

    def forward(self, x, edges):
        n = x.shape[0]
        src, dst = directed(edges, n, self_loops=True)
        deg = torch.zeros(n, dtype=x.dtype).index_add(0, dst, torch.ones_like(dst, dtype=x.dtype))
        inv = deg.pow(-0.5)
        norm = inv[src] * inv[dst]
        h = self.lin(x)
        out = torch.zeros_like(h).index_add(0, dst, norm.unsqueeze(-1) * h[src])
        return out + self.bias


class GATv2Layer(nn.Module):
    """Dynamic graph attention with self-loops; heads are concatenated."""

    def __init__(self, d: int, heads: int, negative_slope: float = 0.2):
        super().__init__()
        if d % heads:
            raise ValueError(f"d={d} is not divisible by heads={heads}")
        self.heads, self.c = heads, d // heads
        self.lin_l = nn.Linear(d, d)
        self.lin_r = nn.Linear(d, d)
        self.att = nn.Parameter(torch.empty(heads, self.c))
        self.bias = nn.Parameter(torch.zeros(d))
        self.negative_slope = negative_slope
        nn.init.xavier_uniform_(self.lin_l.weight)
        nn.init.xavier_uniform_(self.lin_r.weight)
        nn.init.zeros_(self.lin_l.bias)
        nn.init.zeros_(self.lin_r.bias)
        nn.init.xavier_uniform_(self.att)

    def forward(self, x, edges):
        n = x.shape[0]
        src, dst = directed(edges, n, self_loops=True)
        xl = self.lin_l(x).view(n, self.heads, self.c)
        xr = self.lin_r(x).view(n, self.heads, self.c)
        e = F.leaky_relu(xl[src] + xr[dst], self.negative_slope)
        alpha = segment_softmax((e * self.att).sum(-1), dst, n)
        msg = alpha.unsqueeze(-1) * xl[src]
        out = torch.zeros_like(xl).index_add(0, dst, msg)
        return out.reshape(n, -1) + self.bias


class TransformerLayer(nn.Module):
    """Multi-head scaled dot-product attention over neighbours plus a root projection."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"d={d} is not divisible by heads={heads}")
        self.heads, self.c = heads, d // heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.skip = nn.Linear(d, d)
        for lin in (self.query, self.key, self.value, self.skip):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, x, edges):
        n = x.shape[0]
        src, dst = directed(edges, n)
        q = self.query(x).view(n, self.heads, self.c)
        k = self.key(x).view(n, self.heads, self.c)
        v = self.value(x).view(n, self.heads, self.c)
        out = torch.zeros_like(v)
        if len(src):
            scores = (q[dst] * k[src]).sum(-1) / math.sqrt(self.c)
            alpha = segment_softmax(scores, dst, n)
            out = out.index_add(0, dst, alpha.unsqueeze(-1) * v[src])
        return out.reshape(n, -1) + self.skip(x)


class MLPLayer(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.lin = nn.Linear(d, d)
        nn.init.xavier_uniform_(self.lin.weight)
        nn.init.zeros_(self.lin.bias)

    def forward(self, x, edges):
        return self.lin(x)


class GraphEncoder(nn.Module):
    """``layers`` rounds of the configured layer type with ELU in between."""

    def __init__(self, cfg: GraphEncoderConfig, d: int):
        super().__init__()
        self.cfg = cfg
        make = {
            "MLP": lambda: MLPLayer(d),
            "GCN": lambda: GCNLayer(d),
            "GAT": lambda: GATv2Layer(d, cfg.heads),
            "GT": lambda: TransformerLayer(d, cfg.heads),
        }[cfg.encoder_type]
        self.convs = nn.ModuleList([make() for _ in range(cfg.layers)])

    def forward(self, z, edges, training: bool = False, generator=None):
        n = z.shape[0]
        edges = torch.as_tensor(edges, dtype=torch.long).reshape(-1, 2)
        if edges.numel() and (edges.min() < 0 or edges.max() >= n):
            raise ValueError(f"edge references a node outside [0, {n})")
        if training:
            edges = mask_edges(edges, self.cfg.mask_ratio, generator)
        h = z
        for i, conv in enumerate(self.convs):
            h = conv(h, edges)
            if i < len(self.convs) - 1:
                h = F.elu(h)
        return h


def encode_graph(z, cfg_or_encoder, edges, training: bool = False, generator=None):
    return cfg_or_encoder(z, edges, training=training, generator=generator)


class ConceptTransform(nn.Module):
    """Affine maps from width ``d`` to the total concept count, per role."""

    def __init__(self, d: int, n_concepts: int, roles=("student", "exercise")):
        super().__init__()
        self.d, self.n_concepts = d, n_concepts
        self.maps = nn.ModuleDict({r: nn.Linear(d, n_concepts) for r in roles})
        for lin in self.maps.values():
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, h, role: str):
        if h.shape[-1] != self.d:
            raise ValueError(f"transform expects width {self.d}, got {h.shape[-1]}")
        return self.maps[role](h)


def transform_to_concept_dim(h, role: str, t: ConceptTransform):
    return t(h, role)
