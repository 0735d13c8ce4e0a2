"""Attack a classifier served over HTTP as a true black box.

Starts the model-server shim in a subprocess (install it first:
``pip install -e server/``), then attacks through the remote classifier
client.  Results match the in-process backend exactly under the same seed.
"""

import socket
import subprocess
import sys
import tempfile
import time

import requests

from rlab import FilterSpec, run_episode, random_policy
from rlab.agent import ActionCodec
from rlab.fixtures import make_desk_fixture, load_dataset_dir
from rlab.target import ClassifierHandle

with socket.socket() as sock:
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]

workdir = tempfile.mkdtemp(prefix="rlab-demo-")
dataset_dir, weights, model = make_desk_fixture(workdir, count=20)
images, labels, _ = load_dataset_dir(dataset_dir)

proc = subprocess.Popen(
    [sys.executable, "-m", "rlab_server", "--model", f"reference:{weights}", "--port", str(port)],
)
url = f"http://127.0.0.1:{port}"
for _ in range(100):
    try:
        info = requests.get(url + "/v1/info", timeout=1).json()
        break
    except requests.RequestException:
        time.sleep(0.1)
print("served model:", info)

try:
    remote = ClassifierHandle.remote(url)
    local = ClassifierHandle.in_process(model)
    specs = [FilterSpec("gaussian_noise", {"variance": 0.05})]
    codec = ActionCodec(num_filters=1, n_max=8)
    for name, classifier in (("remote", remote), ("in-process", local)):
        result = run_episode(images[0], labels[0], classifier, specs, random_policy(codec),
                             budget=500, patch_size=2, episode_seed=4)
        print(f"{name:11s} {result.status} in {result.steps} steps, "
              f"{result.raw_queries} queries, L2 {result.l2:.4f}")
finally:
    proc.terminate()
    proc.wait(timeout=10)
