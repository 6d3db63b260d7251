"""Class-incremental experiment driver.

A run trains the linear head task by task, updating a replay memory after
each task, and records accuracy on the test data of every seen task.
Methods: ``gbm`` (BMM pseudo-replay), ``lr`` (latent replay of stored binary
embeddings), ``finetune`` (no replay) and ``joint`` (retrain on all seen real
data, an upper bound).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import bmm
from .binarizers import ThermometerCodec, calibrate_range, heaviside_forward, init_projection, train_heaviside
from .bitmatrix import BitMatrix
from .classifier import LinearClassifier, TrainConfig, evaluate, extend_outputs, predict, train_task
from .datasets import LabeledEmbeddings, concat, load_embeddings, split_by_class
from .errors import ConfigurationError, EmptyInputError, GbmError, TaskError
from .memory import GbmStore, LatentReplayBuffer, memory_bits_gbm, memory_bits_lr
from .rng import SeededRng, as_generator

log = logging.getLogger(__name__)

METHODS = ("gbm", "lr", "finetune", "joint")
BINARIZERS = ("none", "thermometer", "heaviside")


@dataclass(frozen=True)
class CilScenario:
    class_splits: tuple
    seed: int = 0

    def __post_init__(self):
        splits = tuple(tuple(int(c) for c in s) for s in self.class_splits)
        if not splits or any(len(s) == 0 for s in splits):
            raise ConfigurationError("every task needs at least one class")
        flat = [c for s in splits for c in s]
        if len(flat) != len(set(flat)):
            raise ConfigurationError("task class sets must be disjoint")
        object.__setattr__(self, "class_splits", splits)

    @property
    def t(self) -> int:
        return len(self.class_splits) - 1

    def seen(self, task: int) -> list:
        return [c for s in self.class_splits[:task + 1] for c in s]


def make_scenario(n_classes: int, t: int, init_count: int, seed: int = 0, class_ids=None) -> CilScenario:
    """Shuffle classes once, put ``init_count`` in task 0 and split the rest evenly."""
    ids = np.arange(n_classes) if class_ids is None else np.asarray(sorted(class_ids))
    order = as_generator(SeededRng(seed).child(0)).permutation(ids).tolist()
    if t == 0:
        return CilScenario((tuple(order),), seed)
    rest = n_classes - init_count
    if init_count < 1 or rest < t or rest % t:
        raise ConfigurationError(
            f"{n_classes} classes cannot be split into {init_count} initial + {t} equal tasks"
        )
    step = rest // t
    splits = [order[:init_count]] + [order[init_count + i * step:init_count + (i + 1) * step] for i in range(t)]
    return CilScenario(tuple(tuple(s) for s in splits), seed)


# -- synthetic data --------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Planted Bernoulli-mixture classes.

    Each class owns ``modes_per_class`` prototypes whose entries are
    ``alt_prob`` at a random ``alt_fraction`` of the positions and
    ``base_prob`` elsewhere.
    """

    n_classes: int = 20
    modes_per_class: int = 2
    d: int = 256
    n_per_class: int = 500
    base_prob: float = 0.1
    alt_prob: float = 0.5
    flip_noise: float = 0.0
    seed: int = 0
    alt_fraction: float = 0.15

    def __post_init__(self):
        if not 0 <= self.alt_fraction <= 1:
            raise ConfigurationError("alt_fraction must lie in [0, 1]")
        if not (0 < self.base_prob < 1 and 0 < self.alt_prob < 1):
            raise ConfigurationError("mode probabilities must lie in (0, 1)")
        if self.modes_per_class < 1 or self.n_classes < 1 or self.d < 1 or self.n_per_class < 2:
            raise ConfigurationError("synthetic dataset sizes must be positive")
        if not 0 <= self.flip_noise < 0.5:
            raise ConfigurationError("flip_noise must lie in [0, 0.5)")


@dataclass(frozen=True)
class GaussianSpec:
    """Real-valued classes: Gaussian blobs around per-mode centers."""

    n_classes: int = 20
    modes_per_class: int = 2
    d: int = 64
    n_per_class: int = 500
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0


def _train_test_split(rows, labels, gen, train_frac=0.8):
    tr, te = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[gen.permutation(idx.size)]
        cut = int(round(train_frac * idx.size))
        tr.append(np.sort(idx[:cut]))
        te.append(np.sort(idx[cut:]))
    return np.concatenate(tr), np.concatenate(te)


def synth_prototypes(spec: SynthSpec, rng) -> np.ndarray:
    """Planted prototypes, shape (n_classes, modes_per_class, d)."""
    gen = as_generator(rng)
    alt = gen.random((spec.n_classes, spec.modes_per_class, spec.d)) < spec.alt_fraction
    return np.where(alt, spec.alt_prob, spec.base_prob)


def synth_dataset(spec: SynthSpec, rng=None):
    """Sample train/test binary embeddings from planted class mixtures.

    Modes are used in equal shares within a class; after sampling every bit
    flips with probability ``flip_noise``. Returns ``(train, test, prototypes)``
    with an 80/20 split per class.
    """
    gen = as_generator(spec.seed if rng is None else rng)
    protos = synth_prototypes(spec, gen)
    n = spec.n_per_class
    rows, labels = [], []
    for c in range(spec.n_classes):
        modes = np.arange(n) % spec.modes_per_class
        p = protos[c, modes]
        bits = gen.random((n, spec.d)) < p
        if spec.flip_noise:
            bits ^= gen.random((n, spec.d)) < spec.flip_noise
        rows.append(bits)
        labels.append(np.full(n, c))
    rows = np.concatenate(rows).astype(np.uint8)
    labels = np.concatenate(labels)
    tr, te = _train_test_split(rows, labels, gen)
    train = LabeledEmbeddings(BitMatrix.from_array(rows[tr]), labels[tr])
    test = LabeledEmbeddings(BitMatrix.from_array(rows[te]), labels[te])
    return train, test, protos


def synth_gaussian(spec: GaussianSpec, rng=None):
    """Real-valued counterpart of :func:`synth_dataset` for binarizer runs."""
    gen = as_generator(spec.seed if rng is None else rng)
    rows, labels = [], []
    for c in range(spec.n_classes):
        center = gen.standard_normal(spec.d) * spec.separation
        modes = center + gen.standard_normal((spec.modes_per_class, spec.d)) * spec.separation * 0.5
        which = np.arange(spec.n_per_class) % spec.modes_per_class
        x = modes[which] + gen.standard_normal((spec.n_per_class, spec.d)) * spec.noise
        rows.append(np.maximum(x, 0.0))  # ReLU-like activations
        labels.append(np.full(spec.n_per_class, c))
    rows = np.concatenate(rows)
    labels = np.concatenate(labels)
    tr, te = _train_test_split(rows, labels, gen)
    return LabeledEmbeddings(rows[tr], labels[tr]), LabeledEmbeddings(rows[te], labels[te])


# -- run configuration -----------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; every field maps to one config-file key."""

    # data
    dataset: str = "synth"  # "synth", "synth_gaussian" or a GBM1 file path
    test_dataset: str = ""
    synth_n_classes: int = 20
    synth_modes_per_class: int = 2
    synth_d: int = 256
    synth_n_per_class: int = 500
    synth_base_prob: float = 0.1
    synth_alt_prob: float = 0.5
    synth_flip_noise: float = 0.0
    synth_alt_fraction: float = 0.15
    # scenario
    t: int = 5
    init_count: int = 10
    # method
    method: str = "gbm"
    binarizer: str = "none"
    therm_p: int = 1
    heaviside_f: int = 2
    # memory
    k: int = 2
    q: int = 32
    class_weighting: str = "uniform"
    lr_e: int = 20
    em_eps: float = 1e-3
    em_n_max: int = 10
    em_n_init: int = 5
    em_n_iter: int = 3
    pi_trainable: bool = True
    init_mode: str = "centroid"
    # head training
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 128
    lr_decay: float = 0.1
    decay_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.binarizer not in BINARIZERS:
            raise ConfigurationError(f"binarizer must be one of {BINARIZERS}, got {self.binarizer!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.epochs, self.batch_size,
                           self.lr_decay, self.decay_every, self.seed)

    def em_config(self) -> bmm.EmConfig:
        return bmm.EmConfig(self.k, self.em_eps, self.em_n_max, self.em_n_init, self.em_n_iter,
                            self.pi_trainable, self.init_mode, self.seed)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(self.synth_n_classes, self.synth_modes_per_class, self.synth_d,
                         self.synth_n_per_class, self.synth_base_prob, self.synth_alt_prob,
                         self.synth_flip_noise, self.seed, self.synth_alt_fraction)

    def gaussian_spec(self) -> GaussianSpec:
        return GaussianSpec(self.synth_n_classes, self.synth_modes_per_class, self.synth_d,
                            self.synth_n_per_class, seed=self.seed)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def load_data(config: RunConfig):
    """Train and test sets named by the config."""
    if config.dataset == "synth":
        train, test, _ = synth_dataset(config.synth_spec(), SeededRng(config.seed).child(1))
        return train, test
    if config.dataset == "synth_gaussian":
        return synth_gaussian(config.gaussian_spec(), SeededRng(config.seed).child(1))
    data = load_embeddings(config.dataset)
    if config.test_dataset:
        return data, load_embeddings(config.test_dataset)
    gen = as_generator(SeededRng(config.seed).child(1))
    tr, te = _train_test_split(None, data.labels, gen)
    return data.subset(tr), data.subset(te)


# -- metrics ---------------------------------------------------------------


def average_incremental_accuracy(all_seen_accs) -> float:
    accs = list(all_seen_accs)
    if not accs:
        raise EmptyInputError("no task accuracies to average")
    return float(np.mean(accs))


GROUPS = ("all", "new", "past", "init")


@dataclass
class MetricsReport:
    """Accuracy after every task.

    ``acc_matrix[t, j]`` is the accuracy on task ``j``'s test classes after
    training task ``t`` (NaN for ``j > t``). ``group_curves`` holds, per task,
    accuracy on all seen / current-task / intermediate-task / initial-task
    classes (None where a group is empty).
    """

    acc_matrix: np.ndarray
    all_seen: list
    group_curves: dict
    memory_bits: int
    method: str = ""
    test_counts: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def avg_incremental_accuracy(self) -> float:
        return average_incremental_accuracy(self.all_seen)

    @property
    def final_accuracy(self) -> float:
        return float(self.all_seen[-1])

    def rows(self):
        """(task_index, split, accuracy) records in a fixed order."""
        out = []
        for t in range(self.acc_matrix.shape[0]):
            for j in range(t + 1):
                out.append((t, f"task_{j}", float(self.acc_matrix[t, j])))
            for g in GROUPS:
                v = self.group_curves[g][t]
                if v is not None:
                    out.append((t, g, float(v)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("task_index", "split", "accuracy"))
        for t, split, acc in self.rows():
            w.writerow((t, split, repr(acc)))
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"method: {self.method}"]
        for t, a in enumerate(self.all_seen):
            lines.append(f"  after task {t}: all-seen accuracy {a:.4f}")
        lines.append(f"average incremental accuracy: {self.avg_incremental_accuracy:.4f}")
        lines.append(f"final accuracy: {self.final_accuracy:.4f}")
        lines.append(f"memory: {self.memory_bits} bits ({self.memory_bits / 1e6:.3f} Mb)")
        return "\n".join(lines)


# -- run -------------------------------------------------------------------


def _method_memory_bits(config, d, n_classes, n_train_rows):
    if config.method == "gbm":
        return memory_bits_gbm(config.k, d, n_classes, config.q)
    if config.method == "lr":
        return memory_bits_lr(config.lr_e, d, n_classes)
    if config.method == "joint":
        return n_train_rows * d
    return 0


def _binarize(config, train, test, first_classes, root):
    """Fit the binarizer on task-0 data and map both sets to bits.

    Returns ``(train_bits, test_bits, feature_map, input_kind, head)`` where
    ``head`` is a pre-trained classifier (Heaviside route) or None.
    """
    if config.binarizer == "none":
        if train.is_binary:
            return train, test, None, "binary", None
        if config.method in ("gbm", "lr"):
            raise ConfigurationError(f"method {config.method!r} needs binary embeddings or a binarizer")
        return train, test, None, "real", None
    if train.is_binary:
        raise ConfigurationError("binarizers need real-valued embeddings")
    d0 = train.select_classes(first_classes)
    if config.binarizer == "thermometer":
        codec = ThermometerCodec(config.therm_p, calibrate_range(d0.data))
        enc = lambda ds: LabeledEmbeddings(codec.encode(ds.data), ds.labels)  # noqa: E731
        return enc(train), enc(test), codec.decode, "real", None
    scale = float(np.sqrt(np.mean(d0.data ** 2))) or 1.0
    gen = root.child(4)
    proj = init_projection(train.dim, config.heaviside_f, gen, scale=scale)
    head = LinearClassifier.zeros(first_classes, proj.width, "binary")
    proj, head = train_heaviside(d0.data, d0.labels, proj, head, config.train_config(), gen)
    enc = lambda ds: LabeledEmbeddings(heaviside_forward(ds.data, proj), ds.labels)  # noqa: E731
    return enc(train), enc(test), None, "binary", head


def _new_memory(config, d):
    if config.method == "gbm":
        return GbmStore(d, config.k, config.q, config.class_weighting)
    if config.method == "lr":
        return LatentReplayBuffer(config.lr_e, d)
    return None


def run(config: RunConfig, data=None) -> MetricsReport:
    """Execute one class-incremental experiment.

    ``data`` may supply ``(train, test)`` directly; otherwise it is loaded
    according to ``config.dataset``.
    """
    root = SeededRng(config.seed)
    train, test = data if data is not None else load_data(config)
    classes = sorted(set(train.classes.tolist()))
    scenario = make_scenario(len(classes), config.t, config.init_count, config.seed, classes)
    cfg = config.train_config()

    try:
        train, test, fmap, kind, head = _binarize(config, train, test, scenario.class_splits[0], root)
    except GbmError as exc:
        raise TaskError(0, exc) from exc
    d = train.dim
    # the head sees decoded features when a feature map is in play
    head_dim = d if fmap is None else fmap(np.zeros((1, d), dtype=np.uint8)).shape[1]
    memory = _new_memory(config, d)
    em_cfg = config.em_config()

    n_tasks = scenario.t + 1
    acc = np.full((n_tasks, n_tasks), np.nan)
    counts = np.zeros(n_tasks, dtype=np.int64)
    groups = {g: [] for g in GROUPS}
    all_seen = []
    clf = None
    for t, split in enumerate(scenario.class_splits):
        try:
            task_train = train.select_classes(split)
            gen = root.child(2, t)
            if t == 0:
                clf = head if head is not None else LinearClassifier.zeros(split, head_dim, kind)
                if head is None:
                    clf, _ = train_task(clf, task_train, None, cfg, gen, fmap)
            else:
                clf = extend_outputs(clf, split)
                if config.method == "joint":
                    clf, _ = train_task(clf, train.select_classes(scenario.seen(t)), None, cfg, gen, fmap)
                elif config.method == "finetune":
                    clf, _ = train_task(clf, task_train, None, cfg, gen, fmap)
                else:
                    clf, _ = train_task(clf, task_train, memory, cfg, gen, fmap)
            if memory is not None:
                per_class = split_by_class(task_train)
                for c in sorted(per_class):
                    memory = memory.update(c, per_class[c], em_cfg, root.child(3, c))
        except GbmError as exc:
            raise TaskError(t, exc) from exc

        seen = scenario.seen(t)
        for j in range(t + 1):
            part = test.select_classes(scenario.class_splits[j])
            counts[j] = part.n_rows
            acc[t, j] = evaluate(clf, part, fmap)
        seen_test = test.select_classes(seen)
        pred = predict(clf, seen_test.data, fmap)
        hit = pred == seen_test.labels
        all_seen.append(float(hit.mean()))

        def group_acc(cls):
            mask = np.isin(seen_test.labels, cls)
            return float(hit[mask].mean()) if mask.any() else None

        past = [c for s in scenario.class_splits[1:t] for c in s]
        groups["all"].append(all_seen[-1])
        groups["new"].append(group_acc(list(split)))
        groups["past"].append(group_acc(past) if past else None)
        groups["init"].append(group_acc(list(scenario.class_splits[0])))
        log.info("task %d: all-seen accuracy %.4f", t, all_seen[-1])

    bits = _method_memory_bits(config, d, len(classes), train.n_rows)
    return MetricsReport(acc, all_seen, groups, bits, config.method, counts,
                         {"scenario": scenario.class_splits, "d": d})


# -- sweeps ----------------------------------------------------------------

SWEEP_AXES = {"lr_E": ("lr", "lr_e"), "gbm_q": ("gbm", "q"), "gbm_K": ("gbm", "k")}
SWEEP_COLUMNS = ("method", "axis_value", "memory_bits", "avg_acc")


def sweep_memory(config: RunConfig, axis: dict, data=None) -> list:
    """One run per axis value; rows ``(method, axis_value, memory_bits, avg_acc)`` sorted by memory.

    ``axis`` maps one of ``lr_E``, ``gbm_q``, ``gbm_K`` to a list of values.
    Everything else, seeds included, is held fixed.
    """
    if len(axis) != 1 or next(iter(axis)) not in SWEEP_AXES:
        raise ConfigurationError(f"axis must be a single key among {sorted(SWEEP_AXES)}")
    name, values = next(iter(axis.items()))
    method, key = SWEEP_AXES[name]
    if data is None:
        data = load_data(config)
    rows = []
    for v in values:
        report = run(config.replace(method=method, **{key: int(v)}), data)
        rows.append((method, int(v), report.memory_bits, report.avg_incremental_accuracy))
    rows.sort(key=lambda r: (r[2], r[1]))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for m, v, bits, a in rows:
        w.writerow((m, v, bits, repr(float(a))))
    return buf.getvalue()
