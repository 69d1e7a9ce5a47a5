"""Synthetic multi-task suites with a planted cluster structure.

Every task's target function is linear in the features: a cluster prototype
weight vector plus a task-specific perturbation. The perturbation magnitude
is (1 - within_cluster_similarity) * ||prototype||, so similarity 1 makes all
tasks of a cluster share one exact target function while similarity 0 makes
them essentially unrelated. That single knob gives controllable ground truth
for which tasks should help which under joint training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import stream

SPLITS = ("train", "val", "test")

TASK_TYPES = ("regression", "classification")

# stream purposes
_WEIGHTS = 10
_DELTA = 11
_DATA = 12

SUITE_SCHEMA = "suite/1"


@dataclass(frozen=True)
class TaskSuiteSpec:
    n_tasks: int
    input_dim: int
    n_clusters: int
    within_cluster_similarity: float
    label_noise_std: float
    samples_per_split: tuple[int, int, int]
    seed: int
    cluster_assignment: tuple[int, ...] | None = None
    task_type: str = "regression"

    def __post_init__(self):
        if self.n_tasks < 2:
            raise ValueError("n_tasks must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not 0.0 <= self.within_cluster_similarity <= 1.0:
            raise ValueError("within_cluster_similarity must be in [0, 1]")
        if self.label_noise_std < 0.0:
            raise ValueError("label_noise_std must be >= 0")
        if len(self.samples_per_split) != 3 or any(s < 1 for s in self.samples_per_split):
            raise ValueError("samples_per_split must be three integers >= 1")
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"task_type must be one of {TASK_TYPES}")
        if self.cluster_assignment is not None:
            if len(self.cluster_assignment) != self.n_tasks:
                raise ValueError("cluster_assignment must cover every task")
            if any(not 0 <= c < self.n_clusters for c in self.cluster_assignment):
                raise ValueError("cluster_assignment index out of range")
        elif self.n_clusters > self.n_tasks:
            raise ValueError("n_clusters > n_tasks requires an explicit assignment")

    def assignment(self) -> tuple[int, ...]:
        """Cluster index per task; defaults to near-even contiguous blocks."""
        if self.cluster_assignment is not None:
            return tuple(self.cluster_assignment)
        return tuple(t * self.n_clusters // self.n_tasks for t in range(self.n_tasks))


@dataclass(frozen=True)
class TaskDataset:
    features: np.ndarray  # (rows, input_dim)
    targets: np.ndarray  # (rows,)
    split: np.ndarray  # (rows,) of "train"/"val"/"test"
    task_type: str = "regression"

    def rows(self, split_name: str):
        """(features, targets) restricted to one split."""
        if split_name not in SPLITS:
            raise ValueError(f"unknown split {split_name!r}")
        mask = self.split == split_name
        return self.features[mask], self.targets[mask]

    @property
    def n_rows(self) -> int:
        return int(self.targets.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class TaskSuite:
    """Generated datasets plus the planted per-task weight vectors."""

    spec: TaskSuiteSpec
    datasets: dict[int, TaskDataset] = field(repr=False)
    task_weights: np.ndarray = field(repr=False)  # (n_tasks, input_dim)

    def __getitem__(self, task: int) -> TaskDataset:
        return self.datasets[task]

    @property
    def n_tasks(self) -> int:
        return self.spec.n_tasks

    @property
    def tasks(self) -> tuple[int, ...]:
        return tuple(range(self.spec.n_tasks))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def generate_suite(spec: TaskSuiteSpec) -> TaskSuite:
    """Build all task datasets for a spec; bit-identical for equal specs."""
    assign = spec.assignment()
    d = spec.input_dim
    prototypes = stream(spec.seed, _WEIGHTS).standard_normal((spec.n_clusters, d))
    weights = np.zeros((spec.n_tasks, d))
    for t in range(spec.n_tasks):
        proto = prototypes[assign[t]]
        direction = stream(spec.seed, _DELTA, t).standard_normal(d)
        norm = float(np.linalg.norm(direction))
        if norm > 0.0:
            direction = direction / norm
        scale = (1.0 - spec.within_cluster_similarity) * float(np.linalg.norm(proto))
        weights[t] = proto + scale * direction

    n_train, n_val, n_test = spec.samples_per_split
    total = n_train + n_val + n_test
    split = np.array(
        ["train"] * n_train + ["val"] * n_val + ["test"] * n_test, dtype="<U5"
    )
    datasets: dict[int, TaskDataset] = {}
    for t in range(spec.n_tasks):
        rng = stream(spec.seed, _DATA, t)
        features = rng.standard_normal((total, d))
        clean = features @ weights[t]
        noise = spec.label_noise_std * rng.standard_normal(total)
        if spec.task_type == "regression":
            targets = clean + noise
        else:
            probs = _sigmoid(clean + noise)
            targets = (rng.uniform(size=total) < probs).astype(float)
        datasets[t] = TaskDataset(
            features=features,
            targets=targets,
            split=split.copy(),
            task_type=spec.task_type,
        )
    return TaskSuite(spec=spec, datasets=datasets, task_weights=weights)


def spec_to_dict(spec: TaskSuiteSpec) -> dict:
    return {
        "n_tasks": spec.n_tasks,
        "input_dim": spec.input_dim,
        "n_clusters": spec.n_clusters,
        "within_cluster_similarity": spec.within_cluster_similarity,
        "label_noise_std": spec.label_noise_std,
        "samples_per_split": list(spec.samples_per_split),
        "seed": spec.seed,
        "cluster_assignment": (
            None if spec.cluster_assignment is None else list(spec.cluster_assignment)
        ),
        "task_type": spec.task_type,
    }


def spec_from_dict(data: dict) -> TaskSuiteSpec:
    assignment = data.get("cluster_assignment")
    return TaskSuiteSpec(
        n_tasks=int(data["n_tasks"]),
        input_dim=int(data["input_dim"]),
        n_clusters=int(data["n_clusters"]),
        within_cluster_similarity=float(data["within_cluster_similarity"]),
        label_noise_std=float(data["label_noise_std"]),
        samples_per_split=tuple(int(s) for s in data["samples_per_split"]),
        seed=int(data["seed"]),
        cluster_assignment=None if assignment is None else tuple(int(c) for c in assignment),
        task_type=data.get("task_type", "regression"),
    )


def save_suite(suite: TaskSuite, directory) -> None:
    """Write one CSV per task plus a JSON sidecar with the generating spec."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d = suite.spec.input_dim
    header = [f"x{i}" for i in range(d)] + ["target", "split"]
    for t, ds in sorted(suite.datasets.items()):
        with open(directory / f"task_{t}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row, target, split in zip(ds.features, ds.targets, ds.split):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(target)), split])
    sidecar = {
        "schema": SUITE_SCHEMA,
        "spec": spec_to_dict(suite.spec),
        "task_weights": [[float(v) for v in w] for w in suite.task_weights],
    }
    with open(directory / "spec.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_suite(directory) -> TaskSuite:
    directory = Path(directory)
    with open(directory / "spec.json") as fh:
        sidecar = json.load(fh)
    spec = spec_from_dict(sidecar["spec"])
    weights = np.asarray(sidecar["task_weights"], dtype=float)
    datasets: dict[int, TaskDataset] = {}
    for t in range(spec.n_tasks):
        features, targets, split = [], [], []
        with open(directory / f"task_{t}.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-2:] != ["target", "split"]:
                raise ValueError(f"unexpected header in task_{t}.csv")
            for row in reader:
                features.append([float(v) for v in row[:-2]])
                targets.append(float(row[-2]))
                split.append(row[-1])
        datasets[t] = TaskDataset(
            features=np.asarray(features, dtype=float),
            targets=np.asarray(targets, dtype=float),
            split=np.asarray(split, dtype="<U5"),
            task_type=spec.task_type,
        )
    return TaskSuite(spec=spec, datasets=datasets, task_weights=weights)
