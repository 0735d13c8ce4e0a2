"""The black-box classifier boundary.

A :class:`ClassifierHandle` hides whether the victim runs in-process (the
numpy reference model below, for desk-scale work) or behind the remote HTTP
protocol.  Either way the attack sees only probability vectors, and the
handle counts every individual image forward evaluation ("raw queries")
exactly, including under concurrent batched calls.
"""

import threading
import time

import numpy as np
import requests

from . import container
from .exceptions import ProtocolError, ShapeError, TransportError
from .seeding import rng_from


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def top_label(probs) -> int:
    """Index of the maximum entry; ties break to the lowest index."""
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ValueError("empty probability vector")
    return int(np.argmax(probs))


# ---------------------------------------------------------------------------
# reference model (desk-scale victim)
# ---------------------------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class ReferenceModel:
    """Linear-softmax or one-hidden-layer ReLU perceptron over flat pixels.

    Weights are float64; images are flattened channel-major, matching the
    raw file format and the wire payload layout.
    """

    def __init__(self, arch, input_shape, num_classes, params):
        if arch not in ("linear", "mlp"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.params = params

    @property
    def num_features(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    @classmethod
    def linear(cls, input_shape, num_classes, seed=0):
        rng = rng_from("reference-init", seed)
        features = int(np.prod(input_shape))
        params = {
            "w": _glorot(rng, num_classes, features),
            "b": np.zeros(num_classes),
        }
        return cls("linear", input_shape, num_classes, params)

    @classmethod
    def mlp(cls, input_shape, num_classes, hidden=32, seed=0):
        rng = rng_from("reference-init", seed)
        features = int(np.prod(input_shape))
        params = {
            "w1": _glorot(rng, hidden, features),
            "b1": np.zeros(hidden),
            "w2": _glorot(rng, num_classes, hidden),
            "b2": np.zeros(num_classes),
        }
        return cls("mlp", input_shape, num_classes, params)

    def logits(self, flat: np.ndarray) -> np.ndarray:
        x = np.asarray(flat, dtype=np.float64)
        if self.arch == "linear":
            return x @ self.params["w"].T + self.params["b"]
        hidden = np.maximum(x @ self.params["w1"].T + self.params["b1"], 0.0)
        return hidden @ self.params["w2"].T + self.params["b2"]

    def forward(self, flat: np.ndarray) -> np.ndarray:
        """Probability rows for a (B, features) float batch."""
        return softmax(self.logits(flat))

    def save(self, path) -> None:
        arrays = {
            "arch": np.array(0.0 if self.arch == "linear" else 1.0),
            "input_shape": np.array(self.input_shape, dtype=np.float32),
            "num_classes": np.array(float(self.num_classes)),
        }
        arrays.update(self.params)
        container.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "ReferenceModel":
        arrays = container.load_arrays(path)
        arch = "linear" if float(arrays["arch"]) == 0.0 else "mlp"
        input_shape = tuple(int(d) for d in arrays["input_shape"])
        num_classes = int(float(arrays["num_classes"]))
        keys = ("w", "b") if arch == "linear" else ("w1", "b1", "w2", "b2")
        params = {k: arrays[k].astype(np.float64) for k in keys}
        return cls(arch, input_shape, num_classes, params)


def cross_entropy_grads(model: ReferenceModel, flat: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and analytic parameter gradients."""
    x = np.asarray(flat, dtype=np.float64)
    labels = np.asarray(labels)
    batch = x.shape[0]
    onehot = np.zeros((batch, model.num_classes))
    onehot[np.arange(batch), labels] = 1.0

    if model.arch == "linear":
        probs = softmax(x @ model.params["w"].T + model.params["b"])
        dz = (probs - onehot) / batch
        grads = {"w": dz.T @ x, "b": dz.sum(axis=0)}
    else:
        pre = x @ model.params["w1"].T + model.params["b1"]
        hidden = np.maximum(pre, 0.0)
        probs = softmax(hidden @ model.params["w2"].T + model.params["b2"])
        dz = (probs - onehot) / batch
        dh = dz @ model.params["w2"]
        dpre = dh * (pre > 0.0)
        grads = {
            "w1": dpre.T @ x,
            "b1": dpre.sum(axis=0),
            "w2": dz.T @ hidden,
            "b2": dz.sum(axis=0),
        }
    clipped = np.clip(probs[np.arange(batch), labels], 1e-300, None)
    loss = float(-np.mean(np.log(clipped)))
    return loss, grads


def train_reference(
    model: ReferenceModel,
    images,
    labels,
    epochs: int,
    learning_rate: float,
    seed: int = 0,
    batch_size: int = 32,
) -> ReferenceModel:
    """Mini-batch gradient descent on cross-entropy, deterministic given seed."""
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(f"label out of range [0, {model.num_classes})")
    flat = np.stack([np.asarray(im, dtype=np.float64).reshape(-1) for im in images])
    if flat.shape[1] != model.num_features:
        raise ShapeError(f"images have {flat.shape[1]} features, model expects {model.num_features}")

    rng = rng_from("reference-train", seed)
    for _ in range(epochs):
        order = rng.permutation(len(images))
        for start in range(0, len(images), batch_size):
            idx = order[start : start + batch_size]
            _, grads = cross_entropy_grads(model, flat[idx], labels[idx])
            for key, grad in grads.items():
                model.params[key] -= learning_rate * grad
    return model


def accuracy(model: ReferenceModel, images, labels) -> float:
    flat = np.stack([np.asarray(im, dtype=np.float64).reshape(-1) for im in images])
    predicted = np.argmax(model.forward(flat), axis=1)
    return float(np.mean(predicted == np.asarray(labels)))


# ---------------------------------------------------------------------------
# remote protocol client
# ---------------------------------------------------------------------------

class RemoteClassifier:
    """Client for the HTTP classify protocol (see the model-server package).

    Transport failures are retried up to ``max_attempts`` with exponential
    backoff; protocol violations are never retried.  Only successfully
    answered images count as queries.
    """

    def __init__(self, base_url, timeout=30.0, max_attempts=3, backoff=0.1, max_batch=256):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max(1, int(max_attempts))
        self.backoff = backoff
        self.max_batch = int(max_batch)
        self._info = None

    def info(self) -> dict:
        if self._info is None:
            payload = self._request("GET", "/v1/info")
            for key in ("model_id", "num_classes", "input_shape"):
                if key not in payload:
                    raise ProtocolError(f"/v1/info response missing {key!r}")
            self._info = payload
        return self._info

    def _request(self, method, route, body=None):
        url = self.base_url + route
        last_exc = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                response = requests.request(method, url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = TransportError(f"{method} {url} failed: {exc}")
                continue
            if response.status_code >= 500:
                last_exc = TransportError(f"{method} {url} -> HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"{method} {url} -> HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{method} {url} returned non-JSON body") from exc
        raise last_exc

    def classify_chunk(self, images: list) -> np.ndarray:
        shape = list(images[0].shape)
        body = {
            "shape": shape,
            "images": [np.asarray(im, dtype=np.float32).reshape(-1).tolist() for im in images],
        }
        payload = self._request("POST", "/v1/classify", body)
        if "probs" not in payload:
            raise ProtocolError("classify response missing 'probs'")
        probs = payload["probs"]
        if len(probs) != len(images):
            raise ProtocolError(f"sent {len(images)} images, got {len(probs)} vectors")
        return np.asarray(probs, dtype=np.float64)


# ---------------------------------------------------------------------------
# the handle
# ---------------------------------------------------------------------------

class ClassifierHandle:
    """Shared, thread-safe front of the victim classifier."""

    def __init__(self, backend, num_classes, input_shape, classify_fn):
        self.backend = backend
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(d) for d in input_shape)
        self._classify = classify_fn
        self._lock = threading.Lock()
        self._queries = 0

    @classmethod
    def in_process(cls, model: ReferenceModel) -> "ClassifierHandle":
        def classify(images):
            flat = np.stack([im.reshape(-1).astype(np.float64) for im in images])
            return model.forward(flat)

        return cls("in_process", model.num_classes, model.input_shape, classify)

    @classmethod
    def remote(cls, base_url, **client_kwargs) -> "ClassifierHandle":
        client = RemoteClassifier(base_url, **client_kwargs)
        info = client.info()

        def classify(images):
            rows = []
            for start in range(0, len(images), client.max_batch):
                rows.append(client.classify_chunk(images[start : start + client.max_batch]))
            return np.concatenate(rows, axis=0)

        handle = cls("remote", info["num_classes"], info["input_shape"], classify)
        handle.client = client
        return handle

    @property
    def query_counter(self) -> int:
        with self._lock:
            return self._queries

    def classify_batch(self, images: list) -> np.ndarray:
        """Probability rows for a list of (C, H, W) images.

        The counter grows by exactly the batch size; failed calls count
        nothing."""
        if len(images) == 0:
            return np.zeros((0, self.num_classes))
        for image in images:
            if tuple(image.shape) != self.input_shape:
                raise ShapeError(
                    f"image shape {tuple(image.shape)} != classifier input {self.input_shape}"
                )
        probs = self._classify(images)
        self._validate(probs, len(images))
        with self._lock:
            self._queries += len(images)
        return probs

    def _validate(self, probs, batch) -> None:
        if probs.shape != (batch, self.num_classes):
            raise ProtocolError(
                f"probability block {probs.shape} != ({batch}, {self.num_classes})"
            )
        if np.any(probs < 0.0):
            raise ProtocolError("negative probability returned")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-5):
            raise ProtocolError(f"probability rows do not normalize: sums={sums}")
