"""Desk-scale fixtures: a synthetic two-class image set and a small victim.

The bundled dataset is 16x16 grayscale: a bright blob sits in the left half
(class 0) or the right half (class 1) over a dim noisy background.  The
reference MLP reaches 100% training accuracy in a few epochs while keeping
moderate confidence (median ~0.94), so probability-dilution rewards stay
informative instead of saturating the reward clamp.

The desk attack configuration mixes a strong filter (gaussian noise) with a
nearly useless one (patch-local blur), giving the agent a filter stage worth
learning; the discount is tuned to the desk episode horizon, which is an
order of magnitude shorter than full-scale attacks.
"""

import csv
import os

import numpy as np

from .agent import AgentConfig
from .filters import FilterSpec
from .image import read_png, read_raw, write_raw
from .seeding import rng_from
from .target import ReferenceModel, train_reference

DESK_SHAPE = (1, 16, 16)
BLOB = 5


def synthetic_blob_dataset(count: int, seed: int = 7, shape=DESK_SHAPE):
    """``count`` images with half/half class balance decided per draw."""
    channels, height, width = shape
    half = width // 2
    rng = rng_from("desk-dataset", seed)
    images, labels = [], []
    for _ in range(count):
        label = int(rng.integers(2))
        img = rng.uniform(0.05, 0.25, size=shape)
        row = int(rng.integers(0, height - BLOB + 1))
        col = int(rng.integers(0, half - BLOB + 1)) + (half if label else 0)
        img[:, row : row + BLOB, col : col + BLOB] = rng.uniform(
            0.70, 0.95, size=(channels, BLOB, BLOB)
        )
        images.append(img.astype(np.float32))
        labels.append(label)
    return images, labels


def build_desk_victim(
    images,
    labels,
    hidden: int = 16,
    epochs: int = 6,
    learning_rate: float = 0.15,
    seed: int = 7,
) -> ReferenceModel:
    """Train the one-hidden-layer reference victim on the blob set.

    Six epochs reach full accuracy at moderate confidence; training harder
    pushes the softmax so close to 1 that every early attack step saturates
    the reward clamp and the agent gets no signal.
    """
    model = ReferenceModel.mlp(DESK_SHAPE, num_classes=2, hidden=hidden, seed=seed)
    return train_reference(model, images, labels, epochs, learning_rate, seed=seed)


def desk_filters() -> list:
    """The desk attack filter set: a strong filter plus a near-useless one,
    so filter choice is part of what the agent must learn."""
    return [
        FilterSpec("gaussian_noise", {"variance": 0.05}),
        FilterSpec("gaussian_blur", {"std": 1.0}),
    ]


def desk_agent_config() -> AgentConfig:
    """Learning hyperparameters tuned to desk-scale episodes (a few steps
    rather than a few hundred, hence the short discount horizon)."""
    return AgentConfig(
        gamma=0.4,
        learning_rate=1e-3,
        epsilon_decay_steps=600,
        target_sync_every=250,
    )


DESK_BUDGET = 500
DESK_ROOT_SEED = 42


# ---------------------------------------------------------------------------
# dataset directory layout: image files + labels.csv (filename,label)
# ---------------------------------------------------------------------------

def write_dataset_dir(directory, images, labels) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        for i, (image, label) in enumerate(zip(images, labels)):
            name = f"img_{i:04d}.raw"
            write_raw(os.path.join(directory, name), image)
            writer.writerow([name, label])


def load_dataset_dir(directory):
    """(images, labels, names) from a labels.csv-driven directory."""
    labels_path = os.path.join(directory, "labels.csv")
    images, labels, names = [], [], []
    with open(labels_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            name = row["filename"]
            path = os.path.join(directory, name)
            image = read_png(path) if name.endswith(".png") else read_raw(path)
            images.append(image)
            labels.append(int(row["label"]))
            names.append(name)
    return images, labels, names


def make_desk_fixture(directory, count: int = 110, seed: int = 7):
    """Write the full desk fixture: dataset dir, trained victim weights, and
    a ready-to-run config.json carrying the desk-tuned agent settings.

    Returns (dataset_dir, weights_path, model).
    """
    import dataclasses
    import json

    images, labels = synthetic_blob_dataset(count, seed=seed)
    dataset_dir = os.path.join(directory, "dataset")
    write_dataset_dir(dataset_dir, images, labels)
    model = build_desk_victim(images, labels, seed=seed)
    weights_path = os.path.join(directory, "victim.rlt")
    model.save(weights_path)

    agent = desk_agent_config()
    config = {
        "weights": weights_path,
        "filters": [
            {"kind": s.kind, "params": dict(s.params), "calibration_scale": s.calibration_scale}
            for s in desk_filters()
        ],
        "patch_size": 2,
        "n_max": 8,
        "budget": DESK_BUDGET,
        "seed": DESK_ROOT_SEED,
        "agent": {**dataclasses.asdict(agent), "hidden": list(agent.hidden)},
        "out_dir": os.path.join(directory, "out"),
    }
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dataset_dir, weights_path, model
