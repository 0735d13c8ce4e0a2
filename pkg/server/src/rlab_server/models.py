"""Model adapters behind the classify protocol.

Every adapter maps a float64 batch of flat [0, 1] channel-major images to
softmax probability rows.  Normalization for pretrained CNNs happens inside
the adapter so the wire contract stays raw [0, 1] pixels.
"""

import numpy as np

from .container import load_arrays


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


class DummyModel:
    """Uniform probabilities; boots with no weights."""

    def __init__(self, num_classes=10, input_shape=(3, 32, 32)):
        self.model_id = "dummy"
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.labels = None

    def predict(self, flat_batch: np.ndarray) -> np.ndarray:
        batch = flat_batch.shape[0]
        return np.full((batch, self.num_classes), 1.0 / self.num_classes)


class ReferenceModel:
    """Linear-softmax or one-hidden-layer ReLU net from a weight container."""

    def __init__(self, path):
        arrays = load_arrays(path)
        self.model_id = "reference"
        self.arch = "linear" if float(arrays["arch"]) == 0.0 else "mlp"
        self.input_shape = tuple(int(d) for d in arrays["input_shape"])
        self.num_classes = int(float(arrays["num_classes"]))
        self.labels = None
        keys = ("w", "b") if self.arch == "linear" else ("w1", "b1", "w2", "b2")
        self.params = {k: arrays[k].astype(np.float64) for k in keys}

    def predict(self, flat_batch: np.ndarray) -> np.ndarray:
        x = np.asarray(flat_batch, dtype=np.float64)
        if self.arch == "linear":
            logits = x @ self.params["w"].T + self.params["b"]
        else:
            hidden = np.maximum(x @ self.params["w1"].T + self.params["b1"], 0.0)
            logits = hidden @ self.params["w2"].T + self.params["b2"]
        return softmax(logits)


class TorchvisionModel:
    """Pretrained torchvision classifier with server-side normalization."""

    MEAN = np.array([0.485, 0.456, 0.406])
    STD = np.array([0.229, 0.224, 0.225])

    def __init__(self, name, input_size=224):
        import torch
        import torchvision.models

        self._torch = torch
        weights_enum = torchvision.models.get_model_weights(name)
        weights = weights_enum.DEFAULT
        self._model = torchvision.models.get_model(name, weights=weights)
        self._model.eval()
        self.model_id = f"torchvision:{name}"
        self.input_shape = (3, input_size, input_size)
        categories = weights.meta.get("categories")
        self.labels = list(categories) if categories else None
        self.num_classes = len(self.labels) if self.labels else 1000

    def predict(self, flat_batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        batch = flat_batch.reshape((-1,) + self.input_shape)
        normalized = (batch - self.MEAN[None, :, None, None]) / self.STD[None, :, None, None]
        with torch.no_grad():
            logits = self._model(torch.from_numpy(normalized).float())
            probs = torch.softmax(logits, dim=1).double().numpy()
        return probs


def load_model(spec: str):
    """Parse a --model flag: dummy | reference:PATH | torchvision:NAME."""
    if spec == "dummy":
        return DummyModel()
    kind, _, arg = spec.partition(":")
    if kind == "reference" and arg:
        return ReferenceModel(arg)
    if kind == "torchvision" and arg:
        return TorchvisionModel(arg)
    raise ValueError(f"unknown model spec {spec!r} (use dummy | reference:PATH | torchvision:NAME)")
