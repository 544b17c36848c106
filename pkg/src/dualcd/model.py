"""The dual-fusion diagnosis model and the graph it runs on.

A :class:`GraphView` lists the nodes of each role (global entity ids), their
textual and response feature rows, and the undirected edge list over the
concatenated node order ``students | exercises | concepts``. The training view
holds only observed entities; at inference unseen entities are appended to
their role block with edges into observed nodes only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .cdms import make_head
from .data import ENTITY_KINDS
from .errors import ContractViolation
from .fusion import DualProjectors, GraphEncoder, GraphEncoderConfig, PersonalizedAttention
from .response import ObservedSpace, ResponseMatrix

ROLE_ORDER = ENTITY_KINDS


@dataclass(frozen=True, eq=False)
class GraphView:
    ids: dict          # role -> global ids in node order
    text: dict         # role -> (n_role, d_l) float array
    response: dict     # role -> (n_role, F) float array
    edges: np.ndarray  # (E, 2) into the concatenated order

    def __post_init__(self):
        lookup = {}
        for role in ROLE_ORDER:
            ids = np.asarray(self.ids[role], dtype=np.int64)
            if len(self.text[role]) != len(ids) or len(self.response[role]) != len(ids):
                raise ValueError(f"{role} feature rows do not match node count")
            table = {int(g): i for i, g in enumerate(ids)}
            if len(table) != len(ids):
                raise ValueError(f"duplicate {role} node ids")
            lookup[role] = table
        object.__setattr__(self, "_lookup", lookup)

    def size(self, role: str) -> int:
        return len(self.ids[role])

    @property
    def n_nodes(self) -> int:
        return sum(self.size(r) for r in ROLE_ORDER)

    def offset(self, role: str) -> int:
        return sum(self.size(r) for r in ROLE_ORDER[:ROLE_ORDER.index(role)])

    def local(self, role: str, global_ids) -> np.ndarray:
        table = self._lookup[role]
        try:
            return np.array([table[int(g)] for g in np.asarray(global_ids).ravel()], dtype=np.int64)
        except KeyError as exc:
            raise ContractViolation(f"{role} {exc.args[0]} is not a node of this graph") from None


def observed_view(r: ResponseMatrix, text_rows: dict) -> GraphView:
    """View over the observed space; ``text_rows[role]`` follows the space's id order."""
    space = r.space
    return GraphView(
        ids={role: space.ids(role) for role in ROLE_ORDER},
        text={role: np.asarray(text_rows[role], dtype=np.float64) for role in ROLE_ORDER},
        response={role: r.block_rows(role) for role in ROLE_ORDER},
        edges=r.edges(),
    )


def extend_view(base: GraphView, space: ObservedSpace, unseen_ids: dict, unseen_text: dict,
                unseen_response: dict) -> GraphView:
    """Append unseen nodes to ``base`` (an observed view over ``space``).

    Each unseen node connects to the observed nodes at the nonzero columns of
    its response row; unseen nodes never connect to each other.
    """
    ids, text, response = {}, {}, {}
    for role in ROLE_ORDER:
        extra = np.asarray(unseen_ids.get(role, ()), dtype=np.int64)
        if np.isin(extra, base.ids[role]).any():
            raise ContractViolation(f"an unseen {role} is already an observed node")
        ids[role] = np.concatenate([base.ids[role], extra])
        width_t = base.text[role].shape[1]
        width_r = base.response[role].shape[1]
        text[role] = np.concatenate([base.text[role], np.asarray(unseen_text.get(role, np.zeros((0, width_t))))
                                     .reshape(len(extra), width_t)])
        response[role] = np.concatenate([base.response[role], np.asarray(unseen_response.get(
            role, np.zeros((0, width_r)))).reshape(len(extra), width_r)])

    n_obs = {role: base.size(role) for role in ROLE_ORDER}
    new_offset, acc = {}, 0
    for role in ROLE_ORDER:
        new_offset[role] = acc
        acc += len(ids[role])

    # remap a response-matrix position (observed node) into the extended order
    remap = np.empty(space.n_features, dtype=np.int64)
    for role in ROLE_ORDER:
        start = space.offset(role)
        remap[start:start + n_obs[role]] = new_offset[role] + np.arange(n_obs[role])
    parts = [remap[base.edges]] if len(base.edges) else []
    for role in ROLE_ORDER:
        rows = response[role][n_obs[role]:]
        node, col = np.nonzero(rows)
        if len(node):
            src = new_offset[role] + n_obs[role] + node
            parts.append(np.stack([src, remap[col]], axis=1))
    edges = np.concatenate(parts).astype(np.int64) if parts else np.zeros((0, 2), dtype=np.int64)
    return GraphView(ids, text, response, edges)


def _tensor(x, dtype):
    return torch.tensor(np.asarray(x), dtype=dtype)


class DualFusionCD(nn.Module):
    """Projectors, attention fusion, graph encoder and a CDM head."""

    def __init__(self, text_dim: int, response_dim: int, n_concepts: int, d: int = 64,
                 encoder: GraphEncoderConfig | None = None, head: str = "simplecd",
                 hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        self.text_dim, self.response_dim, self.n_concepts, self.d = text_dim, response_dim, n_concepts, d
        self.encoder_cfg = encoder or GraphEncoderConfig()
        self.head_name = head
        self.projectors = DualProjectors(text_dim, response_dim, d)
        self.attention = PersonalizedAttention(d)
        self.encoder = GraphEncoder(self.encoder_cfg, d)
        self.head = make_head(head, d, n_concepts, hidden, dropout)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def fuse(self, view: GraphView):
        """Fused rows per role plus the normalised textual weight per entity."""
        fused, weights = [], {}
        for role in ROLE_ORDER:
            z1 = self.projectors(_tensor(view.text[role], self.dtype), role, "textual")
            z2 = self.projectors(_tensor(view.response[role], self.dtype), role, "response")
            z, w1, _ = self.attention(z1, z2, role)
            fused.append(z)
            weights[role] = w1
        return torch.cat(fused), weights

    def embed(self, view: GraphView, training: bool = False, generator=None) -> dict:
        z, _ = self.fuse(view)
        h = self.encoder(z, torch.as_tensor(view.edges, dtype=torch.long), training=training, generator=generator)
        out, start = {}, 0
        for role in ROLE_ORDER:
            n = view.size(role)
            out[role] = h[start:start + n]
            start += n
        return out

    def concept_matrix(self, view: GraphView, h_c):
        """Concept rows placed at their global index; absent concepts stay zero."""
        full = torch.zeros(self.n_concepts, self.d, dtype=h_c.dtype)
        idx = torch.as_tensor(np.array(view.ids["concept"], dtype=np.int64))
        return full.index_copy(0, idx, h_c)

    def predict(self, view: GraphView, h: dict, students, exercises, q_rows):
        hs = h["student"][torch.as_tensor(view.local("student", students))]
        he = h["exercise"][torch.as_tensor(view.local("exercise", exercises))]
        hc = self.concept_matrix(view, h["concept"])
        return self.head(hs, he, hc, _tensor(q_rows, hs.dtype))

    def forward(self, view: GraphView, students, exercises, q_rows, training: bool = False, generator=None):
        return self.predict(view, self.embed(view, training, generator), students, exercises, q_rows)

    def mastery(self, view: GraphView, h: dict, students):
        hs = h["student"][torch.as_tensor(view.local("student", students))]
        return self.head.mastery(hs, self.concept_matrix(view, h["concept"]))
