"""Prediction heads on top of fused representations, plus ID-embedding baselines.

All heads share the signature ``head(h_s, h_e, h_c, q)``: student rows (B, d),
exercise rows (B, d), the concept matrix (K, d) over the total concept count,
and the Q rows (B, K). They end in a Positive MLP whose applied weights are
rectified to be non-negative, so predictions never decrease when a mastery
coordinate increases.
"""
from __future__ import annotations

import warnings

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .fusion import ConceptTransform

HEADS = ("simplecd", "concept_dim", "latent_dim")


class PosLinear(nn.Linear):
    """Linear layer applying ``max(weight, 0)`` on every forward pass."""

    def reset_parameters(self):
        nn.init.xavier_uniform_(self.weight)
        with torch.no_grad():
            self.weight.abs_()
        if self.bias is not None:
            nn.init.zeros_(self.bias)

    def effective_weight(self):
        return F.relu(self.weight)

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.bias)


class PositiveMLP(nn.Module):
    """Tower ``in -> 512 -> 256 -> 1`` with tanh hidden units and a logistic output."""

    def __init__(self, in_dim: int, hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        dims = (in_dim, *hidden)
        self.in_dim = in_dim
        self.hidden = nn.ModuleList([PosLinear(a, b) for a, b in zip(dims[:-1], dims[1:])])
        self.out = PosLinear(dims[-1], 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"interaction input width {x.shape[-1]} != {self.in_dim}")
        for lin in self.hidden:
            x = self.dropout(torch.tanh(lin(x)))
        return torch.sigmoid(self.out(x)).squeeze(-1)


def _check_q(q):
    if (q.sum(-1) == 0).any():
        raise ValueError("every exercise needs at least one related concept (all-zero Q row)")


def mastery(h_s, h_c):
    """sigma(H_s H_c^T): per-student, per-concept mastery in (0, 1)."""
    return torch.sigmoid(h_s @ h_c.T)


def simplecd_interaction(mas_s, mas_e, q, f: PositiveMLP):
    return f((mas_s - mas_e) * q)


def simplecd_predict(h_s, h_e, h_c, q_row, f: PositiveMLP):
    _check_q(q_row)
    return simplecd_interaction(mastery(h_s, h_c), mastery(h_e, h_c), q_row, f)


def concept_dim_adapter(ht_s, ht_e, q_row, f: PositiveMLP):
    if ht_s.shape[-1] != f.in_dim or ht_e.shape[-1] != f.in_dim:
        raise ValueError("transformed rows must have the total concept width")
    _check_q(q_row)
    return f((torch.sigmoid(ht_s) - torch.sigmoid(ht_e)) * q_row)


class SimpleCD(nn.Module):
    """Parameter-free apart from the interaction tower."""

    def __init__(self, d: int, n_concepts: int, hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        self.f = PositiveMLP(n_concepts, hidden, dropout)

    def forward(self, h_s, h_e, h_c, q):
        return simplecd_predict(h_s, h_e, h_c, q, self.f)

    def mastery(self, h_s, h_c):
        return mastery(h_s, h_c)


class ConceptDimCD(nn.Module):
    """NCDM-style head on rows mapped to the total concept count."""

    def __init__(self, d: int, n_concepts: int, hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        self.transform = ConceptTransform(d, n_concepts)
        self.f = PositiveMLP(n_concepts, hidden, dropout)

    def forward(self, h_s, h_e, h_c, q):
        return concept_dim_adapter(self.transform(h_s, "student"), self.transform(h_e, "exercise"), q, self.f)

    def mastery(self, h_s, h_c):
        return torch.sigmoid(self.transform(h_s, "student"))


class LatentDimCD(nn.Module):
    """KaNCD-style head (GMF proficiency / difficulty) on latent rows."""

    def __init__(self, d: int, n_concepts: int, hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        self.d = d
        self.stat_full = nn.Linear(d, 1)
        self.k_diff_full = nn.Linear(d, 1)
        self.e_disc = nn.Linear(d, 1)
        self.f = PositiveMLP(n_concepts, hidden, dropout)
        for lin in (self.stat_full, self.k_diff_full, self.e_disc):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)

    def proficiency(self, h_s, h_c):
        return torch.sigmoid(self.stat_full(h_s.unsqueeze(1) * h_c.unsqueeze(0))).squeeze(-1)

    def forward(self, h_s, h_e, h_c, q):
        if h_s.shape[-1] != self.d or h_e.shape[-1] != self.d or h_c.shape[-1] != self.d:
            raise ValueError(f"latent head expects width {self.d}")
        _check_q(q)
        stat = self.proficiency(h_s, h_c)
        k_diff = torch.sigmoid(self.k_diff_full(h_e.unsqueeze(1) * h_c.unsqueeze(0))).squeeze(-1)
        disc = torch.sigmoid(self.e_disc(h_e))
        return self.f(disc * (stat - k_diff) * q)

    def mastery(self, h_s, h_c):
        return self.proficiency(h_s, h_c)


def latent_dim_adapter(h_s, h_e, h_c, q_row, params: LatentDimCD):
    return params(h_s, h_e, h_c, q_row)


def make_head(name: str, d: int, n_concepts: int, hidden=(512, 256), dropout: float = 0.5) -> nn.Module:
    heads = {"simplecd": SimpleCD, "concept_dim": ConceptDimCD, "latent_dim": LatentDimCD}
    if name not in heads:
        raise ValueError(f"unknown CDM head {name!r}; expected one of {HEADS}")
    return heads[name](d, n_concepts, hidden, dropout)


# -- embedding assignment for ID-based models ------------------------------


def assign_mean_baseline(observed_embeddings) -> np.ndarray:
    x = np.asarray(observed_embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need at least one observed embedding")
    return x.mean(axis=0)


def nearest_index(unseen_log_vector, observed_log_vectors) -> int:
    """Observed row with the highest cosine similarity (lowest index on ties), or -1."""
    u = np.asarray(unseen_log_vector, dtype=np.float64)
    obs = np.asarray(observed_log_vectors, dtype=np.float64)
    norms = np.linalg.norm(obs, axis=1)
    if not (norms > 0).any():
        raise ValueError("no observed log vector has nonzero norm")
    un = np.linalg.norm(u)
    if un == 0:
        return -1
    sims = np.full(len(obs), -np.inf)
    ok = norms > 0
    sims[ok] = (obs[ok] @ u) / (norms[ok] * un)
    return int(np.argmax(sims))


def assign_nearest_baseline(unseen_log_vector, observed_log_vectors, observed_embeddings,
                            return_index: bool = False):
    idx = nearest_index(unseen_log_vector, observed_log_vectors)
    if idx < 0:
        warnings.warn("unseen entity has no response logs; using the mean embedding", stacklevel=2)
        row = assign_mean_baseline(observed_embeddings)
    else:
        row = np.asarray(observed_embeddings, dtype=np.float64)[idx]
    return (row, idx) if return_index else row


class IDEmbeddingCD(nn.Module):
    """KaNCD with free ID embeddings, used with mean / nearest assignment for unseen entities."""

    def __init__(self, n_students: int, n_exercises: int, n_concepts: int, d: int = 20,
                 hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        self.student = nn.Embedding(n_students, d)
        self.exercise = nn.Embedding(n_exercises, d)
        self.concept = nn.Parameter(torch.empty(n_concepts, d))
        self.head = LatentDimCD(d, n_concepts, hidden, dropout)
        nn.init.xavier_normal_(self.student.weight)
        nn.init.xavier_normal_(self.exercise.weight)
        nn.init.xavier_normal_(self.concept)

    def forward(self, s, e, q):
        return self.head(self.student(s), self.exercise(e), self.concept, q)

    def mastery(self, s):
        return self.head.mastery(self.student(s), self.concept)

    @torch.no_grad()
    def assign(self, kind: str, ids, rows) -> None:
        table = {"student": self.student.weight, "exercise": self.exercise.weight, "concept": self.concept}[kind]
        ids = torch.as_tensor(np.asarray(ids), dtype=torch.long)
        table[ids] = torch.as_tensor(np.asarray(rows), dtype=table.dtype)

    def table(self, kind: str) -> np.ndarray:
        t = {"student": self.student.weight, "exercise": self.exercise.weight, "concept": self.concept}[kind]
        return t.detach().cpu().numpy().astype(np.float64)
