"""Experiment configuration, seeding and the train/evaluate pipeline.

Seeding scheme: one top-level ``seed`` is fanned out per stage with
``derive_seed(seed, stage)``, which hashes ``(seed, crc32(stage))`` through
``numpy.random.SeedSequence``. Stages are ``synth``, ``split``, ``ratio``,
``init`` and ``shuffle``, so changing e.g. the epoch count never perturbs the
corpus and every stage can be rerun on its own.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from auxlearn import curation as C
from auxlearn import loss as L
from auxlearn import metrics as MT
from auxlearn import model as M
from auxlearn.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

KINDS = ("binary", "aux_cce", "aux_wcce")
KIND_LABELS = {
    "binary": "Binary Classifier",
    "aux_cce": "Auxiliary Learning",
    "aux_wcce": "AL with weighted loss",
}
AUX_CLASS_NAME = "others"


def derive_seed(seed: int, stage: str) -> int:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "aux_wcce"
    seed: int = 0
    hidden: tuple = (32,)
    activation: str = "tanh"
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    ratio: tuple = (1.0, 1.0, 8.75)
    train_fraction: float = 0.8
    counts: tuple = (1250, 1250, 21875)
    dim: int = 8
    sigma: float = 0.08
    separation: float = 4.0
    out_dir: str = "runs"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if self.activation not in M.ACTIVATIONS:
            raise ConfigError(f"activation must be relu or tanh, got {self.activation!r}")
        if not self.lr > 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("need lr > 0, epochs >= 0, batch_size >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if len(self.ratio) != len(self.counts):
            raise ConfigError(f"ratio has {len(self.ratio)} entries but counts has {len(self.counts)}")
        if len(self.counts) < 3:
            raise ConfigError("the corpus needs at least two known classes plus the auxiliary class")
        if any(r <= 0 for r in self.ratio) or any(c < 1 for c in self.counts):
            raise ConfigError("ratios and counts must be positive")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")

    @property
    def loss_kind(self) -> str:
        return "wcce" if self.kind == "aux_wcce" else "cce"

    @property
    def class_names(self) -> tuple:
        n_known = len(self.counts) - 1
        if n_known == 2:
            known = ("cat", "dog")
        else:
            known = tuple(f"class{i}" for i in range(n_known))
        return known + (AUX_CLASS_NAME,)

    def synthetic_spec(self) -> C.SyntheticSpec:
        return C.SyntheticSpec(
            counts=tuple(self.counts), dim=self.dim, sigma=self.sigma,
            separation=self.separation, seed=derive_seed(self.seed, "synth"),
            class_names=self.class_names,
        )


_CASTS = {
    "kind": str, "seed": int, "activation": str, "lr": float, "epochs": int,
    "batch_size": int, "train_fraction": float, "dim": int, "sigma": float,
    "separation": float, "out_dir": str,
    "hidden": lambda s: tuple(int(v) for v in _split_list(s)),
    "ratio": lambda s: tuple(float(v) for v in _split_list(s)),
    "counts": lambda s: tuple(int(v) for v in _split_list(s)),
}
_ALIASES = {"loss": "loss", "learning_rate": "lr", "out-dir": "out_dir", "batch-size": "batch_size"}


def _split_list(text: str):
    return [v for v in text.replace(",", " ").split() if v]


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys are the :class:`ExperimentConfig` field names plus ``loss``
    (``cce``/``wcce``), which picks between ``aux_cce`` and ``aux_wcce``.
    List values (``hidden``, ``ratio``, ``counts``) are comma or space
    separated.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = _ALIASES.get(key.strip(), key.strip())
        value = value.strip()
        if not sep or not value:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key == "loss":
            values["loss"] = value
            continue
        if key not in _CASTS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CASTS[key](value)
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {value!r}") from None
    return values


def make_config(values: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply ``values`` (from a config file and/or flags) over ``base``."""
    values = dict(values)
    loss = values.pop("loss", None)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = replace(base or ExperimentConfig(), **values)
    if loss is not None:
        if loss not in M.LOSS_KINDS:
            raise ConfigError(f"loss must be cce or wcce, got {loss!r}")
        if cfg.kind == "binary":
            if loss != "cce":
                raise ConfigError("the binary experiment trains with cce only")
        else:
            cfg = replace(cfg, kind=f"aux_{loss}")
    return cfg


# -- corpus -------------------------------------------------------------------------

@dataclass
class Corpus:
    """Features keyed by example id, plus a split and ratio-enforced manifest."""

    examples: dict
    manifest: C.DatasetManifest

    def select(self, split: str, kind: str):
        """``(examples, class_names)`` for one split, restricted to known classes for binary."""
        man = self.manifest
        aux = len(man.class_names) - 1
        out = []
        for rec in man.records:
            if rec.split != split:
                continue
            if kind == "binary" and rec.class_label == aux:
                continue
            ex = self.examples[rec.example_id]
            if ex.label != rec.class_label:
                raise DomainError(f"{rec.example_id}: manifest label disagrees with data file")
            out.append(ex)
        names = man.class_names[:-1] if kind == "binary" else man.class_names
        return out, names


def build_corpus(cfg: ExperimentConfig) -> Corpus:
    examples, raw = C.generate_synthetic_dataset(cfg.synthetic_spec())
    ids = [r.example_id for r in raw.records]
    man = C.assign_split(raw.records, cfg.train_fraction, derive_seed(cfg.seed, "split"), raw.class_names)
    man = C.enforce_ratio(man, cfg.ratio, derive_seed(cfg.seed, "ratio"))
    return Corpus(dict(zip(ids, examples)), man)


def load_corpus(data_path, manifest_path) -> Corpus:
    k, examples = C.load_dataset(data_path)
    man = C.load_manifest(manifest_path)
    if len(man.class_names) != k:
        raise DomainError(f"data file declares K={k}, manifest has {len(man.class_names)} classes")
    missing = [r.example_id for r in man.records if r.example_id not in examples]
    if missing:
        raise DomainError(f"{len(missing)} manifest records have no features (first: {missing[0]})")
    return Corpus(examples, man)


def save_corpus(corpus: Corpus, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [r.example_id for r in corpus.manifest.records]
    data_path, man_path = out / "dataset.csv", out / "manifest.csv"
    C.save_dataset(data_path, ids, [corpus.examples[i] for i in ids], len(corpus.manifest.class_names))
    C.save_manifest(corpus.manifest, man_path)
    return data_path, man_path


# -- training / evaluation -----------------------------------------------------------

@dataclass
class TrainOutcome:
    model: M.MlpModel
    report: M.TrainReport
    class_names: tuple
    class_weights: Optional[L.ClassWeights]
    train_counts: list


def _counts(examples, k):
    return np.bincount([ex.label for ex in examples], minlength=k).tolist()


def train_experiment(cfg: ExperimentConfig, corpus: Corpus) -> TrainOutcome:
    train_set, names = corpus.select("train", cfg.kind)
    if not train_set:
        raise DomainError("training split is empty")
    k = len(names)
    counts = _counts(train_set, k)
    weights = None
    if cfg.loss_kind == "wcce":
        weights = L.compute_class_weights(counts)
        logger.info("class weights from counts %s: w_p=%s", counts, weights.w_p.tolist())
    dims = [len(train_set[0].features), *cfg.hidden, k]
    init = M.init_model(dims, cfg.activation, derive_seed(cfg.seed, "init"))
    tcfg = M.TrainConfig(cfg.lr, cfg.epochs, cfg.batch_size, derive_seed(cfg.seed, "shuffle"),
                         cfg.loss_kind, weights)
    rep = M.train(init, train_set, tcfg)
    return TrainOutcome(rep.model, rep, names, weights, counts)


@dataclass
class Evaluation:
    result: MT.ExperimentResult
    test_counts: list
    baseline: float


def evaluate_model(model: M.MlpModel, examples, class_names, label: str, loss_kind: str = "cce",
                   class_weights: Optional[L.ClassWeights] = None) -> Evaluation:
    if not examples:
        raise DomainError("test set is empty")
    k = len(class_names)
    if model.num_classes != k:
        raise DomainError(f"model predicts {model.num_classes} classes, data has {k}")
    x = np.array([ex.features for ex in examples])
    if x.shape[1] != model.input_dim:
        raise DomainError(f"model expects {model.input_dim} features, data has {x.shape[1]}")
    y = np.array([ex.label for ex in examples])
    probs, _ = M.forward(model, x)
    pred = np.argmax(probs, axis=1)
    loss = M.loss_value(probs, np.eye(k)[y], loss_kind, class_weights)
    cm = MT.confusion_matrix(y, pred, k, class_names)
    counts = _counts(examples, k)
    return Evaluation(
        MT.ExperimentResult(label, MT.class_report(cm), cm, loss), counts, MT.majority_baseline(counts)
    )


def write_train_log(path, outcome: TrainOutcome) -> None:
    lines = []
    if outcome.class_weights is not None:
        lines.append("# w_p " + " ".join(MT.fmt_truncated(v, 9) for v in outcome.class_weights.w_p))
        lines.append("# w_n " + " ".join(MT.fmt_truncated(v, 9) for v in outcome.class_weights.w_n))
    lines.append("# train_counts " + " ".join(str(c) for c in outcome.train_counts))
    lines.append("epoch,loss")
    lines += [f"{i + 1},{v!r}" for i, v in enumerate(outcome.report.loss_history)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
