"""Config-driven experiment runner.

A configuration is a flat key/value document (YAML or JSON) whose keys are
the fields of :class:`ExperimentConfig`. For every repetition seed the runner
splits the data, trains, infers the unseen side without retraining, and
evaluates; the ID-embedding baselines run on the same split.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .. import __version__
from ..data import Dataset, compute_stats, load_dataset
from ..errors import ContractViolation, StageError, ValidationError
from ..evaluation import MetricReport, evaluate_baseline, evaluate_open
from ..splits import SCENARIOS, SplitSpec, make_split
from ..text import TextPipeline, build_textual_features, make_embedder, make_refiner, network_calls
from ..training import TrainConfig, train, train_id_baseline
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger(__name__)

BASELINES = ("mean", "nearest")


@dataclass(frozen=True)
class ExperimentConfig:
    # data: either files or a synthetic spec
    logs: str | None = None
    q: str | None = None
    texts: str | None = None
    synthetic: bool = False
    n_students: int = 500
    n_exercises: int = 60
    n_concepts: int = 8
    synthetic_seed: int = 0
    # protocol
    scenario: str = "unseen_student"
    test_size: float = 0.2
    unseen_ratio: float = 0.2
    val_ratio: float = 0.1
    seed: int = 0
    repetitions: int = 10
    baselines: tuple = BASELINES
    # model and optimisation
    cdm: str = "simplecd"
    encoder: str = "GT"
    dim: int = 64
    layers: int = 2
    heads: int = 4
    mask_ratio: float = 0.0
    learning_rate: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.5
    signed: bool = True
    baseline_dim: int = 20
    # text backends
    llm: str = "echo"
    embedder: str = "hashing:128"
    cache_dir: str | None = None
    offline: bool = False
    max_in_flight: int = 4
    # outputs
    out: str = "runs/experiment"
    save_checkpoints: bool = True
    dump_triplets: bool = False

    def __post_init__(self):
        object.__setattr__(self, "baselines", tuple(self.baselines or ()))
        if self.repetitions < 1:
            raise ValidationError("repetitions must be at least 1")
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for b in self.baselines:
            if b not in BASELINES:
                raise ValidationError(f"unknown baseline {b!r}")
        if not self.synthetic:
            for name in ("logs", "q"):
                path = getattr(self, name)
                if path is None or not Path(path).exists():
                    raise ValidationError(f"{name} file {path!r} does not exist")
            if self.texts is not None and not Path(self.texts).exists():
                raise ValidationError(f"texts file {self.texts!r} does not exist")
        self.train_config(self.seed)  # validates the training fields

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a key/value document")
        base = Path(path).parent
        for key in ("logs", "q", "texts", "cache_dir"):
            if doc.get(key) is not None and not Path(doc[key]).is_absolute():
                doc[key] = str(base / doc[key])
        return cls.from_dict(doc)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, d=self.dim, encoder_type=self.encoder, layers=self.layers, heads=self.heads,
            mask_ratio=self.mask_ratio, head=self.cdm, dropout=self.dropout, seed=seed, signed=self.signed,
        )

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.repetitions)]

    def public_dict(self) -> dict:
        """Config as recorded in the report (output location left out)."""
        doc = asdict(self)
        doc["baselines"] = list(self.baselines)
        doc.pop("out")
        return doc


@dataclass
class ExperimentResult:
    reports: list
    outdir: Path
    report_json: str
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def load_experiment_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic:
        spec = SyntheticSpec(n_students=cfg.n_students, n_exercises=cfg.n_exercises, n_concepts=cfg.n_concepts,
                             seed=cfg.synthetic_seed)
        return generate_synthetic(spec)[0]
    return load_dataset(cfg.logs, cfg.q, cfg.texts)


def textual_features(cfg: ExperimentConfig, d: Dataset):
    refiner = None if cfg.llm == "none" else make_refiner(cfg.llm)
    pipe = TextPipeline(refiner, make_embedder(cfg.embedder), cfg.cache_dir, offline=cfg.offline,
                        max_in_flight=cfg.max_in_flight, seed=cfg.synthetic_seed)
    ze = pipe.embed_entities(d, "exercise")
    zc = pipe.embed_entities(d, "concept")
    from ..data import ResponseLogs

    # student rows are pooled later from the training side only
    return build_textual_features(d, ze, zc, logs=ResponseLogs.empty(), tags=pipe.tags)


def write_mastery_csv(path, d: Dataset, students, mastery) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "concept_id", "mastery"])
        for s, row in zip(students, mastery):
            for k, v in enumerate(row):
                w.writerow([d.vocab.student_ids[s], d.vocab.concept_ids[k], f"{v:.6f}"])


def _stage(name, seed, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, seed, exc) from exc


def run_experiment(cfg: ExperimentConfig, outdir=None) -> ExperimentResult:
    import time

    out = Path(outdir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    calls_before = network_calls()
    timings = {}
    t0 = time.perf_counter()

    d = _stage("load", None, load_experiment_data, cfg)
    stats = compute_stats(d)
    (out / "stats.json").write_text(stats.to_json(indent=2) + "\n", encoding="utf-8")
    textual = _stage("features", None, textual_features, cfg, d)
    timings["features"] = time.perf_counter() - t0

    dfcd_runs, base_runs = [], {b: [] for b in cfg.baselines}
    for seed in cfg.seeds():
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        t_seed = time.perf_counter()
        split = _stage("split", seed, make_split, d, SplitSpec(cfg.scenario, cfg.test_size, cfg.unseen_ratio,
                                                              cfg.val_ratio, seed))
        (seed_dir / "split.json").write_text(split.to_json(), encoding="utf-8")
        tcfg = cfg.train_config(seed)
        ckpt = _stage("train", seed, train, d, split, textual, tcfg, seed_dir / "train_log.jsonl")
        if ckpt.leakage and any(v for k, v in ckpt.leakage.items()
                                if k.split(":")[0] in ("gradient", "graph") and not k.endswith(":observed_train")):
            raise StageError("train", seed, ContractViolation("training read logs outside T^O"))
        if cfg.save_checkpoints:
            ckpt.save(seed_dir / "checkpoint.pt")
        if cfg.dump_triplets:
            ckpt.context.response.dump_triplets(seed_dir / "response_triplets.csv")
        result, inf = _stage("evaluate", seed, evaluate_open, ckpt, d, split, textual, seed, True)
        dfcd_runs.append(result)
        write_mastery_csv(seed_dir / "mastery.csv", d, inf.mastery_students, inf.mastery)

        if cfg.baselines:
            state = _stage("baseline", seed, train_id_baseline, d, split, tcfg, cfg.baseline_dim,
                           seed_dir / "baseline_log.jsonl")
            for how in cfg.baselines:
                base_runs[how].append(_stage(f"baseline-{how}", seed, evaluate_baseline, state, d, split, how, seed))
        timings[f"seed_{seed}"] = time.perf_counter() - t_seed
        log.info("seed %d: auc=%.4f acc=%.4f doa=%s", seed, result.auc, result.acc, result.doa_at_10)

    model_name = f"DFCD-{cfg.cdm}"
    reports = [MetricReport.from_runs(cfg.scenario, model_name, dfcd_runs)]
    for how, runs in base_runs.items():
        reports.append(MetricReport.from_runs(cfg.scenario, f"KaNCD-{how}", runs))

    if cfg.offline and network_calls() != calls_before:
        raise ContractViolation("network backends were called in offline mode")

    doc = {
        "version": __version__,
        "config": cfg.public_dict(),
        "dataset": json.loads(stats.to_json()),
        "text_backends": textual.tags,
        "results": [r.to_dict() for r in reports],
    }
    report_json = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    from .report import emit_report

    files = emit_report(reports, out, report_json=report_json)
    timings["total"] = time.perf_counter() - t0
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return ExperimentResult(reports, out, report_json, files, timings)
