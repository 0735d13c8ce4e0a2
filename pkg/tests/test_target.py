import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from rlab.exceptions import ProtocolError, ShapeError, TransportError
from rlab.seeding import rng_from
from rlab.target import (
    ClassifierHandle,
    ReferenceModel,
    cross_entropy_grads,
    top_label,
    train_reference,
)

from conftest import random_image


class TestTopLabel:
    def test_plain_argmax(self):
        assert top_label([0.1, 0.7, 0.2]) == 1

    def test_tie_breaks_low(self):
        assert top_label([0.5, 0.5]) == 0

    def test_uniform(self):
        assert top_label([0.1] * 10) == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            top_label([])


class TestReferenceModel:
    def test_zero_weights_give_uniform(self):
        model = ReferenceModel.linear((1, 4, 4), num_classes=5, seed=0)
        model.params["w"][:] = 0.0
        probs = model.forward(np.zeros((3, 16)))
        assert np.allclose(probs, 0.2)

    def test_probabilities_normalize(self):
        rng = rng_from("norm-check")
        model = ReferenceModel.mlp((3, 4, 4), num_classes=7, hidden=9, seed=3)
        flat = rng.uniform(size=(20, 48))
        probs = model.forward(flat)
        assert np.all(probs > 0.0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_save_load_roundtrip(self, tmp_path):
        for builder in (ReferenceModel.linear, ReferenceModel.mlp):
            model = builder((1, 4, 4), num_classes=3, seed=11)
            path = tmp_path / f"{model.arch}.rlt"
            model.save(path)
            back = ReferenceModel.load(path)
            assert back.arch == model.arch
            assert back.input_shape == model.input_shape
            assert back.num_classes == model.num_classes
            flat = rng_from("io-probe").uniform(size=(4, 16))
            # float32 storage: equality after one round of down-cast
            assert np.allclose(back.forward(flat), model.forward(flat), atol=1e-6)


class TestTraining:
    def _separable_set(self, count=60):
        # bright square on the left half vs the right half
        rng = rng_from("separable")
        images, labels = [], []
        for _ in range(count):
            label = int(rng.integers(2))
            img = np.zeros((1, 8, 8), dtype=np.float32)
            col = 0 if label == 0 else 4
            img[0, 2:6, col : col + 4] = 0.9
            images.append(img)
            labels.append(label)
        return images, labels

    def test_linearly_separable_reaches_full_accuracy(self):
        images, labels = self._separable_set()
        model = ReferenceModel.linear((1, 8, 8), num_classes=2, seed=0)
        train_reference(model, images, labels, epochs=50, learning_rate=0.5, seed=0)
        flat = np.stack([im.reshape(-1) for im in images])
        predictions = np.argmax(model.forward(flat), axis=1)
        assert np.all(predictions == np.asarray(labels))

    def test_zero_epochs_unchanged(self):
        images, labels = self._separable_set(10)
        model = ReferenceModel.mlp((1, 8, 8), num_classes=2, seed=1)
        before = {k: v.copy() for k, v in model.params.items()}
        train_reference(model, images, labels, epochs=0, learning_rate=0.5, seed=0)
        for key in before:
            assert np.array_equal(model.params[key], before[key])

    def test_zero_learning_rate_unchanged(self):
        images, labels = self._separable_set(10)
        model = ReferenceModel.mlp((1, 8, 8), num_classes=2, seed=1)
        before = {k: v.copy() for k, v in model.params.items()}
        train_reference(model, images, labels, epochs=5, learning_rate=0.0, seed=0)
        for key in before:
            assert np.array_equal(model.params[key], before[key])

    def test_deterministic_given_seed(self):
        images, labels = self._separable_set(20)
        runs = []
        for _ in range(2):
            model = ReferenceModel.mlp((1, 8, 8), num_classes=2, seed=4)
            train_reference(model, images, labels, epochs=3, learning_rate=0.1, seed=9)
            runs.append({k: v.copy() for k, v in model.params.items()})
        for key in runs[0]:
            assert np.array_equal(runs[0][key], runs[1][key])

    def test_empty_dataset_rejected(self):
        model = ReferenceModel.linear((1, 2, 2), num_classes=2)
        with pytest.raises(ValueError):
            train_reference(model, [], [], epochs=1, learning_rate=0.1)

    def test_label_out_of_range_rejected(self):
        model = ReferenceModel.linear((1, 2, 2), num_classes=2)
        images = [np.zeros((1, 2, 2), dtype=np.float32)]
        with pytest.raises(ValueError):
            train_reference(model, images, [2], epochs=1, learning_rate=0.1)

    def test_gradients_match_finite_differences(self):
        rng = rng_from("gradcheck-ref")
        for arch in ("linear", "mlp"):
            for trial in range(5):
                if arch == "linear":
                    model = ReferenceModel.linear((1, 2, 3), num_classes=3, seed=trial)
                else:
                    model = ReferenceModel.mlp((1, 2, 3), num_classes=3, hidden=5, seed=trial)
                flat = rng.uniform(size=(4, 6))
                labels = rng.integers(3, size=4)
                _, grads = cross_entropy_grads(model, flat, labels)
                h = 1e-6
                for key, grad in grads.items():
                    flat_param = model.params[key].reshape(-1)
                    flat_grad = np.asarray(grad).reshape(-1)
                    for j in range(flat_param.size):
                        orig = flat_param[j]
                        flat_param[j] = orig + h
                        up, _ = cross_entropy_grads(model, flat, labels)
                        flat_param[j] = orig - h
                        down, _ = cross_entropy_grads(model, flat, labels)
                        flat_param[j] = orig
                        fd = (up - down) / (2 * h)
                        denom = max(abs(fd), abs(flat_grad[j]), 1e-8)
                        assert abs(fd - flat_grad[j]) / denom <= 1e-4


class TestClassifierHandle:
    def test_query_counter_counts_batches(self):
        model = ReferenceModel.linear((1, 2, 2), num_classes=3, seed=0)
        handle = ClassifierHandle.in_process(model)
        batch = [np.zeros((1, 2, 2), dtype=np.float32)] * 8
        for _ in range(3):
            handle.classify_batch(batch)
        assert handle.query_counter == 24

    def test_shape_mismatch_not_counted(self):
        model = ReferenceModel.linear((1, 2, 2), num_classes=3, seed=0)
        handle = ClassifierHandle.in_process(model)
        with pytest.raises(ShapeError):
            handle.classify_batch([np.zeros((1, 4, 4), dtype=np.float32)])
        assert handle.query_counter == 0

    def test_deterministic(self):
        rng = rng_from("handle-det")
        model = ReferenceModel.mlp((2, 4, 4), num_classes=4, seed=2)
        handle = ClassifierHandle.in_process(model)
        images = [random_image(rng, (2, 4, 4)) for _ in range(5)]
        assert np.array_equal(handle.classify_batch(images), handle.classify_batch(images))

    def test_counter_exact_under_concurrency(self):
        model = ReferenceModel.linear((1, 2, 2), num_classes=2, seed=0)
        handle = ClassifierHandle.in_process(model)
        batch = [np.zeros((1, 2, 2), dtype=np.float32)] * 4

        def worker(_):
            for _ in range(50):
                handle.classify_batch(batch)

        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(worker, range(8)))
        assert handle.query_counter == 8 * 50 * 4


# ---------------------------------------------------------------------------
# remote client against a scripted stub server
# ---------------------------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    script = {}

    def log_message(self, *args):
        pass

    def do_GET(self):
        self._respond(self.script.get("info", (200, {"model_id": "stub", "num_classes": 2, "input_shape": [1, 2, 2]})))

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        handler = self.script.get("classify")
        self._respond(handler(body) if callable(handler) else handler)

    def _respond(self, spec):
        status, payload = spec
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _StubHandler
    server.shutdown()


class TestRemoteClient:
    def test_classify_roundtrip(self, stub_server):
        url, handler = stub_server
        handler.script = {
            "info": (200, {"model_id": "stub", "num_classes": 2, "input_shape": [1, 2, 2]}),
            "classify": lambda body: (200, {"probs": [[0.25, 0.75]] * len(body["images"]), "model_id": "stub"}),
        }
        handle = ClassifierHandle.remote(url)
        probs = handle.classify_batch([np.zeros((1, 2, 2), dtype=np.float32)] * 3)
        assert probs.shape == (3, 2)
        assert np.allclose(probs, [0.25, 0.75])
        assert handle.query_counter == 3

    def test_protocol_violation_raises_and_does_not_count(self, stub_server):
        url, handler = stub_server
        handler.script = {
            "info": (200, {"model_id": "stub", "num_classes": 2, "input_shape": [1, 2, 2]}),
            "classify": (200, {"probs": [[0.9, 0.5]], "model_id": "stub"}),  # not normalized
        }
        handle = ClassifierHandle.remote(url)
        with pytest.raises(ProtocolError):
            handle.classify_batch([np.zeros((1, 2, 2), dtype=np.float32)])
        assert handle.query_counter == 0

    def test_http_error_is_protocol_error(self, stub_server):
        url, handler = stub_server
        handler.script = {
            "info": (200, {"model_id": "stub", "num_classes": 2, "input_shape": [1, 2, 2]}),
            "classify": (400, {"error": "bad shape"}),
        }
        handle = ClassifierHandle.remote(url)
        with pytest.raises(ProtocolError):
            handle.classify_batch([np.zeros((1, 2, 2), dtype=np.float32)])

    def test_unreachable_is_transport_error(self):
        with pytest.raises(TransportError):
            ClassifierHandle.remote("http://127.0.0.1:9", max_attempts=2, timeout=0.5)

    def test_server_errors_retry_then_succeed(self, stub_server):
        url, handler = stub_server
        calls = {"n": 0}

        def flaky(body):
            calls["n"] += 1
            if calls["n"] < 3:
                return (500, {"error": "boom"})
            return (200, {"probs": [[0.5, 0.5]] * len(body["images"]), "model_id": "stub"})

        handler.script = {
            "info": (200, {"model_id": "stub", "num_classes": 2, "input_shape": [1, 2, 2]}),
            "classify": flaky,
        }
        handle = ClassifierHandle.remote(url, backoff=0.01)
        probs = handle.classify_batch([np.zeros((1, 2, 2), dtype=np.float32)])
        assert calls["n"] == 3
        assert np.allclose(probs, 0.5)
