"""End-to-end optimisation, checkpoints and inference for unseen entities."""
from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .cdms import HEADS, IDEmbeddingCD, assign_mean_baseline, assign_nearest_baseline
from .data import ENTITY_KINDS, Dataset, ResponseLogs
from .errors import ContractViolation, TrainingDiverged, UndefinedMetricError, ValidationError
from .fusion import ENCODERS, GraphEncoderConfig
from .metrics import acc, auc
from .model import DualFusionCD, GraphView, extend_view, observed_view
from .response import ObservedSpace, ResponseMatrix, build_response_matrix, unseen_feature
from .splits import SplitResult
from .text.features import TextualFeatureSet, pool_students

log = logging.getLogger(__name__)

D_GRID = (32, 64, 128, 256)
EPS = 1e-7


def bce_loss(predictions, labels, eps: float = EPS):
    """Summed binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``."""
    if predictions.shape != labels.shape:
        raise ValueError(f"{tuple(predictions.shape)} predictions vs {tuple(labels.shape)} labels")
    p = predictions.clamp(eps, 1 - eps)
    labels = labels.to(p.dtype)
    return -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p)).sum()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    d: int = 64
    encoder_type: str = "GT"
    layers: int = 2
    heads: int = 4
    mask_ratio: float = 0.0
    head: str = "simplecd"
    dropout: float = 0.5
    seed: int = 0
    signed: bool = True

    def __post_init__(self):
        if self.d not in D_GRID:
            raise ValueError(f"d must be one of {D_GRID}, got {self.d}")
        if self.encoder_type not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder_type!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown CDM head {self.head!r}")
        for name in ("learning_rate", "batch_size", "max_epochs", "patience", "layers", "heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        GraphEncoderConfig(self.encoder_type, self.layers, self.heads, self.mask_ratio)

    @property
    def encoder(self) -> GraphEncoderConfig:
        return GraphEncoderConfig(self.encoder_type, self.layers, self.heads, self.mask_ratio)


# -- leakage instrumentation ------------------------------------------------


class LeakageGuard:
    """Every log read during training goes through :meth:`take` and is tallied by split part."""

    TRAINING_PURPOSES = ("gradient", "graph")

    def __init__(self, split: SplitResult, n_logs: int):
        self.part_of = np.full(n_logs, "", dtype=object)
        for name, rows in split.parts().items():
            self.part_of[rows] = name
        self.reads = {}

    def take(self, logs: ResponseLogs, rows, purpose: str) -> ResponseLogs:
        rows = np.asarray(rows, dtype=np.int64)
        names, counts = np.unique(self.part_of[rows].astype(str), return_counts=True)
        for name, c in zip(names, counts):
            key = f"{purpose}:{name}"
            self.reads[key] = self.reads.get(key, 0) + int(c)
        return logs.take(rows)

    def forbidden_reads(self) -> int:
        return sum(v for k, v in self.reads.items()
                   if k.split(":")[0] in self.TRAINING_PURPOSES and k.split(":")[1] != "observed_train")

    def check(self) -> None:
        bad = self.forbidden_reads()
        if bad:
            raise ContractViolation(f"training read {bad} logs outside T^O: {self.reads}")


# -- contexts and checkpoints ------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainingContext:
    """The observed side of the graph, frozen after training."""

    response: ResponseMatrix
    text: dict
    n_concepts: int
    signed: bool

    @property
    def space(self) -> ObservedSpace:
        return self.response.space

    def view(self) -> GraphView:
        return observed_view(self.response, self.text)


def build_context(d: Dataset, train_logs: ResponseLogs, observed_sets: dict, textual: TextualFeatureSet,
                  signed: bool = True) -> TrainingContext:
    space = ObservedSpace.from_sets(observed_sets)
    r = build_response_matrix(train_logs, d.q, space, signed)
    ex_obs = textual.exercise[space.exercises]
    # student text rows pool only over the observed exercises each student answered in T^O
    local_e = space.local("exercise", train_logs.exercise)
    local_s = space.local("student", train_logs.student)
    student_rows = pool_students(local_s, local_e, ex_obs, len(space.students))
    text = {"student": student_rows, "exercise": ex_obs, "concept": textual.concept[space.concepts]}
    return TrainingContext(r, text, d.n_concepts, signed)


def param_digest(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class CheckpointState:
    model: DualFusionCD
    context: TrainingContext
    config: TrainConfig
    best_val_auc: float | None
    epoch: int
    history: list = field(default_factory=list)
    leakage: dict = field(default_factory=dict)

    @property
    def manifest(self) -> dict:
        cfg = self.config
        return {
            "format": "dualcd-checkpoint/1",
            "version": __version__,
            "d": cfg.d,
            "d_l": self.model.text_dim,
            "F": self.model.response_dim,
            "n_concepts": self.model.n_concepts,
            "encoder_type": cfg.encoder_type,
            "L": cfg.layers,
            "heads": cfg.heads,
            "mask_ratio": cfg.mask_ratio,
            "head": cfg.head,
            "seed": cfg.seed,
            "signed": cfg.signed,
            "stopping": f"early stop on validation AUC, patience {cfg.patience}, max {cfg.max_epochs} epochs",
            "best_val_auc": self.best_val_auc,
            "epoch": self.epoch,
            "digest": param_digest(self.model),
        }

    def save(self, path) -> None:
        sp_m = self.context.response.matrix.tocoo()
        space = self.context.space
        blob = {
            "manifest": json.dumps(self.manifest),
            "config": json.dumps(asdict(self.config)),
            "state_dict": self.model.state_dict(),
            "space": {k: torch.tensor(np.array(space.ids(k), dtype=np.int64)) for k in ENTITY_KINDS},
            "response": {"row": torch.as_tensor(sp_m.row.astype(np.int64)),
                         "col": torch.as_tensor(sp_m.col.astype(np.int64)),
                         "val": torch.as_tensor(sp_m.data.astype(np.float64))},
            "text": {k: torch.as_tensor(np.asarray(v)) for k, v in self.context.text.items()},
            "history": json.dumps(self.history),
            "leakage": json.dumps(self.leakage),
        }
        buf = io.BytesIO()
        torch.save(blob, buf)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "CheckpointState":
        import scipy.sparse as sp

        blob = torch.load(path, map_location="cpu", weights_only=True)
        manifest = json.loads(blob["manifest"])
        cfg = TrainConfig(**json.loads(blob["config"]))
        space = ObservedSpace(*(blob["space"][k].numpy() for k in ENTITY_KINDS))
        f = space.n_features
        resp = blob["response"]
        m = sp.csr_matrix((resp["val"].numpy(), (resp["row"].numpy(), resp["col"].numpy())), shape=(f, f))
        context = TrainingContext(ResponseMatrix(m, space, manifest["signed"]),
                                  {k: v.numpy() for k, v in blob["text"].items()},
                                  manifest["n_concepts"], manifest["signed"])
        model = DualFusionCD(manifest["d_l"], manifest["F"], manifest["n_concepts"], cfg.d, cfg.encoder,
                             cfg.head, dropout=cfg.dropout)
        model.load_state_dict(blob["state_dict"])
        model.eval()
        ckpt = cls(model, context, cfg, manifest["best_val_auc"], manifest["epoch"],
                   json.loads(blob["history"]), json.loads(blob["leakage"]))
        if param_digest(model) != manifest["digest"]:
            raise ValidationError(f"checkpoint {path} parameters do not match the manifest digest")
        return ckpt


# -- the optimisation loop ----------------------------------------------------


def _batches(rows: np.ndarray, batch_size: int, rng: np.random.Generator):
    perm = rows[rng.permutation(len(rows))]
    for start in range(0, len(perm), batch_size):
        yield perm[start:start + batch_size]


def _score(predict, logs: ResponseLogs):
    """(val_auc, val_acc) with ``None`` where undefined."""
    if len(logs) == 0:
        return None, None
    p = predict(logs)
    try:
        a = auc(p, logs.score)
    except UndefinedMetricError:
        a = None
    return a, acc(p, logs.score)


def _fit(module, step_fn, predict_fn, d: Dataset, split: SplitResult, guard: LeakageGuard, cfg: TrainConfig,
         log_path=None):
    """Shared loop: Adam on summed BCE, model selection on validation AUC."""
    if len(split.observed_train) == 0:
        raise ValidationError("no observed training logs (T^O is empty)")
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate)
    val_logs = guard.take(d.logs, split.validation, "selection")

    history, best_state, best_auc, best_epoch, stale = [], None, None, 0, 0
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            module.train()
            total, n_batches = 0.0, 0
            for rows in _batches(split.observed_train, cfg.batch_size, rng):
                batch = guard.take(d.logs, rows, "gradient")
                opt.zero_grad()
                pred = step_fn(batch, gen)
                loss = bce_loss(pred, torch.tensor(np.array(batch.score), dtype=pred.dtype))
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", epoch=epoch)
                loss.backward()
                opt.step()
                total += loss.item() / len(rows)
                n_batches += 1
            module.eval()
            with torch.no_grad():
                val_auc, val_acc = _score(predict_fn, val_logs)
            record = {"epoch": epoch, "train_loss": total / n_batches, "val_auc": val_auc, "val_acc": val_acc}
            history.append(record)
            if fh is not None:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
            log.debug("epoch %d %s", epoch, record)

            if val_auc is None:
                best_state, best_epoch = copy.deepcopy(module.state_dict()), epoch
                continue
            if best_auc is None or val_auc > best_auc:
                best_state, best_auc, best_epoch, stale = copy.deepcopy(module.state_dict()), val_auc, epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if fh is not None:
            fh.close()
    module.load_state_dict(best_state)
    module.eval()
    guard.check()
    return best_auc, best_epoch, history


def train(d: Dataset, split: SplitResult, textual: TextualFeatureSet, cfg: TrainConfig = TrainConfig(),
          log_path=None) -> CheckpointState:
    """Fit the dual-fusion model on T^O and keep the best-validation-AUC state."""
    if len(split.observed_train) == 0:
        raise ValidationError("no observed training logs (T^O is empty)")
    torch.manual_seed(cfg.seed)
    guard = LeakageGuard(split, len(d.logs))
    train_logs = guard.take(d.logs, split.observed_train, "graph")
    context = build_context(d, train_logs, split.observed_sets, textual, cfg.signed)
    view = context.view()
    for role in ENTITY_KINDS:
        if view.size(role) == 0:
            raise ValidationError(f"no observed {role}s")
    model = DualFusionCD(textual.dim, context.space.n_features, d.n_concepts, cfg.d, cfg.encoder, cfg.head,
                         dropout=cfg.dropout)
    q = np.asarray(d.q, dtype=np.float64)

    def step(batch, gen):
        return model(view, batch.student, batch.exercise, q[batch.exercise], training=True, generator=gen)

    def predict(logs):
        return model(view, logs.student, logs.exercise, q[logs.exercise]).numpy()

    best_auc, epoch, history = _fit(model, step, predict, d, split, guard, cfg, log_path)
    return CheckpointState(model, context, cfg, best_auc, epoch, history, dict(guard.reads))


# -- inference without retraining -------------------------------------------


@dataclass(frozen=True, eq=False)
class UnseenPayload:
    """Logs and side information of entities outside the observed space."""

    unseen: dict            # kind -> global ids
    logs: ResponseLogs      # T^U (global ids)
    q: np.ndarray           # full Q-matrix
    textual: TextualFeatureSet

    @classmethod
    def from_split(cls, d: Dataset, split: SplitResult, textual: TextualFeatureSet) -> "UnseenPayload":
        unseen = {k: v for k, v in split.unobserved_sets.items() if len(v)}
        return cls(unseen, d.logs.take(split.unobserved), np.asarray(d.q), textual)


@dataclass(frozen=True, eq=False)
class InferenceResult:
    predictions: np.ndarray
    mastery: np.ndarray
    mastery_students: np.ndarray
    digest_before: str
    digest_after: str
    seconds: float


def _check_payload(space: ObservedSpace, payload: UnseenPayload) -> None:
    unseen_s = np.isin(payload.logs.student, payload.unseen.get("student", ()))
    unseen_e = np.isin(payload.logs.exercise, payload.unseen.get("exercise", ()))
    obs_s = space.contains("student", payload.logs.student)
    obs_e = space.contains("exercise", payload.logs.exercise)
    endpoints_ok = (unseen_s | obs_s) & (unseen_e | obs_e)
    if not endpoints_ok.all():
        raise ContractViolation("payload log references an entity that is neither observed nor unseen")
    if (unseen_s & unseen_e).any():
        raise ContractViolation("payload log links two unseen entities")
    for kind, ids in payload.unseen.items():
        if space.contains(kind, ids).any():
            raise ContractViolation(f"an unseen {kind} is part of the observed space")


def unseen_rows(context: TrainingContext, payload: UnseenPayload) -> tuple[dict, dict]:
    """Textual and response rows for every unseen entity in the payload."""
    space, signed = context.space, context.signed
    logs, q = payload.logs, payload.q
    text, response = {}, {}
    for kind, ids in payload.unseen.items():
        ids = np.asarray(ids, dtype=np.int64)
        if kind == "student":
            mine = np.isin(logs.student, ids)
            s, e, r = logs.student[mine], logs.exercise[mine], logs.score[mine]
            local = {int(g): i for i, g in enumerate(ids)}
            s_local = np.array([local[int(x)] for x in s], dtype=np.int64)
            text[kind] = pool_students(s_local, space.local("exercise", e), context.text["exercise"], len(ids))
            response[kind] = np.stack([unseen_feature("student", space, exercises=e[s_local == i],
                                                      scores=r[s_local == i], signed=signed)
                                       for i in range(len(ids))]) if len(ids) else np.zeros((0, space.n_features))
        elif kind == "exercise":
            rows = []
            for j in ids:
                mine = logs.exercise == j
                concepts = np.flatnonzero(q[j])
                # links to concepts outside the observed space are not graph edges
                concepts = concepts[space.contains("concept", concepts)]
                rows.append(unseen_feature("exercise", space, students=logs.student[mine], scores=logs.score[mine],
                                           concepts=concepts, signed=signed))
            text[kind] = payload.textual.exercise[ids]
            response[kind] = np.stack(rows) if rows else np.zeros((0, space.n_features))
        elif kind == "concept":
            rows = []
            for k in ids:
                ex = np.flatnonzero(q[:, k])
                rows.append(unseen_feature("concept", space, exercises=ex[space.contains("exercise", ex)]))
            text[kind] = payload.textual.concept[ids]
            response[kind] = np.stack(rows) if rows else np.zeros((0, space.n_features))
        else:
            raise ValueError(f"unknown entity kind {kind!r}")
    return text, response


def inference_view(ckpt: CheckpointState, payload: UnseenPayload) -> GraphView:
    _check_payload(ckpt.context.space, payload)
    text, response = unseen_rows(ckpt.context, payload)
    return extend_view(ckpt.context.view(), ckpt.context.space, payload.unseen, text, response)


def infer_unseen(ckpt: CheckpointState, payload: UnseenPayload, students, exercises,
                 mastery_students=None) -> InferenceResult:
    """Frozen forward pass over the observed graph extended with unseen nodes."""
    model = ckpt.model
    before = param_digest(model)
    t0 = time.perf_counter()
    view = inference_view(ckpt, payload)
    students = np.asarray(students, dtype=np.int64)
    exercises = np.asarray(exercises, dtype=np.int64)
    if mastery_students is None:
        mastery_students = np.asarray(payload.unseen.get("student", np.unique(students)), dtype=np.int64)
    mastery_students = np.asarray(mastery_students, dtype=np.int64)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        h = model.embed(view)
        pred = model.predict(view, h, students, exercises, np.asarray(payload.q, dtype=np.float64)[exercises])
        mas = model.mastery(view, h, mastery_students)
    model.train(was_training)
    seconds = time.perf_counter() - t0
    after = param_digest(model)
    if before != after:
        raise ContractViolation("parameters changed during inference")
    return InferenceResult(pred.double().numpy(), mas.double().numpy(), mastery_students, before, after, seconds)


# -- model selection ---------------------------------------------------------


def grid_search(d: Dataset, split: SplitResult, textual: TextualFeatureSet, base: TrainConfig = TrainConfig(),
                grid: dict | None = None):
    """Exhaustive search over ``grid`` (field -> values); returns ``(best_cfg, log)``.

    Ties keep the earliest configuration in grid order.
    """
    grid = grid if grid is not None else {"d": list(D_GRID), "encoder_type": list(ENCODERS)}
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty hyperparameter grid")
    if len(split.validation) == 0:
        raise ValidationError("grid search needs a validation set")
    import itertools

    keys = list(grid)
    entries, best, best_auc = [], None, None
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        ckpt = train(d, split, textual, cfg)
        entries.append({**dict(zip(keys, values)), "val_auc": ckpt.best_val_auc})
        score = ckpt.best_val_auc if ckpt.best_val_auc is not None else -np.inf
        if best is None or score > best_auc:
            best, best_auc = cfg, score
    return best, entries


# -- ID-embedding baseline ---------------------------------------------------


@dataclass(eq=False)
class BaselineState:
    model: IDEmbeddingCD
    space: ObservedSpace
    response: ResponseMatrix
    best_val_auc: float | None
    epoch: int


def id_forward(model: IDEmbeddingCD, logs: ResponseLogs, q: torch.Tensor):
    s = torch.tensor(np.array(logs.student))
    e = torch.tensor(np.array(logs.exercise))
    return model(s, e, q[e])


def train_id_baseline(d: Dataset, split: SplitResult, cfg: TrainConfig = TrainConfig(), dim: int = 20,
                      log_path=None) -> BaselineState:
    """KaNCD with free ID embeddings trained on T^O."""
    torch.manual_seed(cfg.seed)
    guard = LeakageGuard(split, len(d.logs))
    train_logs = guard.take(d.logs, split.observed_train, "graph")
    space = ObservedSpace.from_sets(split.observed_sets)
    response = build_response_matrix(train_logs, d.q, space, cfg.signed)
    model = IDEmbeddingCD(d.n_students, d.n_exercises, d.n_concepts, dim, dropout=cfg.dropout)
    q = torch.as_tensor(np.asarray(d.q, dtype=np.float32))

    def step(batch, gen):
        return id_forward(model, batch, q)

    def predict(logs):
        return id_forward(model, logs, q).numpy()

    best_auc, epoch, _ = _fit(model, step, predict, d, split, guard, cfg, log_path)
    return BaselineState(model, space, response, best_auc, epoch)


def assign_unseen(state: BaselineState, payload: UnseenPayload, how: str = "mean") -> IDEmbeddingCD:
    """Copy of the baseline with unseen rows filled by the mean or nearest observed embedding."""
    if how not in ("mean", "nearest"):
        raise ValueError(f"unknown assignment {how!r}")
    model = copy.deepcopy(state.model)
    _check_payload(state.space, payload)
    ctx = TrainingContext(state.response, {}, payload.q.shape[1], state.response.signed)
    _, unseen_resp = unseen_rows_response_only(ctx, payload)
    for kind, ids in payload.unseen.items():
        observed = state.space.ids(kind)
        table = model.table(kind)[observed]
        if how == "mean":
            rows = np.tile(assign_mean_baseline(table), (len(ids), 1))
        else:
            obs_vectors = state.response.block_rows(kind)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rows = np.stack([assign_nearest_baseline(v, obs_vectors, table) for v in unseen_resp[kind]])
        model.assign(kind, ids, rows)
    model.eval()
    return model


def unseen_rows_response_only(context: TrainingContext, payload: UnseenPayload):
    """Response rows only (textual rows need features the baseline does not have)."""
    stub = TextualFeatureSet(np.zeros((1, 1)), np.zeros((payload.q.shape[0], 1)), np.zeros((payload.q.shape[1], 1)))
    n_e = len(context.space.exercises)
    ctx = TrainingContext(context.response, {"exercise": np.zeros((n_e, 1))}, context.n_concepts, context.signed)
    return unseen_rows(ctx, replace(payload, textual=stub))
