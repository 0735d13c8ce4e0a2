"""Command-line front door.

Subcommands: attack, train-agent, eval-robustness, calibrate,
sensitivity-report.  Configuration is one JSON document; command-line flags
override file keys, which override defaults.  All randomness flows from the
single root seed, so a (config, seed) pair pins an entire run.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 target
unreachable, 4 attack finished but not every non-skip episode succeeded.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import fixtures
from .agent import ActionCodec, AgentConfig, DQNAgent
from .engine import PDParams, greedy_policy, run_episode, train_agent
from .exceptions import (
    ConfigError,
    FormatError,
    ProtocolError,
    RlabError,
    TransportError,
)
from .filters import DistortionLedger, FilterSpec, calibrate_filters
from .image import make_patch_grid, read_png, read_raw, write_png, write_raw
from .metrics import CorruptionErrorMatrix, mce_and_degradation, summarize, uce
from .seeding import derive_seed
from .sensitivity import probe_add_sensitivity, probe_remove_sensitivity
from .target import ClassifierHandle, ReferenceModel

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_TARGET = 3
EXIT_INCOMPLETE = 4

TARGET_URL_ENV = "RLAB_TARGET_URL"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    weights: str | None = None
    target_url: str | None = None
    filters: list = field(default_factory=lambda: [FilterSpec("gaussian_noise")])
    patch_size: int = 2
    n_max: int = 8
    budget: int = 3500
    target_class: int | None = None        # None = untargeted
    pd_mode: str = "corrected"
    agent: AgentConfig = field(default_factory=AgentConfig)
    pd: PDParams = field(default_factory=PDParams)
    seed: int = 0
    out_dir: str = "rlab-out"
    k_slots: int = 16
    m_slots: int = 10
    workers: int = 1
    probe_filter_index: int = 0
    agent_checkpoint: str | None = None
    episodes_per_image: int = 1

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["filters"] = [
            {"kind": s.kind, "params": dict(s.params), "calibration_scale": s.calibration_scale}
            for s in self.filters
        ]
        data["agent"] = {**dataclasses.asdict(self.agent), "hidden": list(self.agent.hidden)}
        data["pd"] = dataclasses.asdict(self.pd)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "filters" in kwargs:
            kwargs["filters"] = [
                FilterSpec(
                    kind=f["kind"],
                    params=dict(f.get("params", {})),
                    calibration_scale=float(f.get("calibration_scale", 1.0)),
                )
                for f in kwargs["filters"]
            ]
        if "agent" in kwargs:
            kwargs["agent"] = AgentConfig(**kwargs["agent"])
        if "pd" in kwargs:
            kwargs["pd"] = PDParams(**kwargs["pd"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def save_config(path, config: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    """Flag > file > default.

    A backend flag (--target-url / --weights) selects that backend outright,
    clearing the other one from the file; naming both on the command line is
    a genuine conflict and stays an error downstream."""
    updates = {}
    if getattr(args, "target_url", None):
        updates["target_url"] = args.target_url
        if not getattr(args, "weights", None):
            updates["weights"] = None
    elif config.target_url is None and config.weights is None and os.environ.get(TARGET_URL_ENV):
        updates["target_url"] = os.environ[TARGET_URL_ENV]
    if getattr(args, "weights", None):
        updates["weights"] = args.weights
        if not getattr(args, "target_url", None):
            updates["target_url"] = None
    if getattr(args, "filter", None):
        updates["filters"] = [FilterSpec(kind=k) for k in args.filter]
    for key in ("patch_size", "budget", "seed", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "targeted", None) is not None:
        updates["target_class"] = args.targeted
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "agent_checkpoint", None):
        updates["agent_checkpoint"] = args.agent_checkpoint
    return dataclasses.replace(config, **updates) if updates else config


def _build_classifier(config: RunConfig) -> ClassifierHandle:
    if (config.weights is None) == (config.target_url is None):
        raise ConfigError("exactly one of weights / target_url must be set")
    if config.weights is not None:
        model = ReferenceModel.load(config.weights)
        return ClassifierHandle.in_process(model)
    return ClassifierHandle.remote(config.target_url)


def _load_image(path):
    if path.endswith(".png"):
        return read_png(path)
    return read_raw(path)


def _read_labels_csv(path) -> dict:
    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[row["filename"]] = int(row["label"])
    return table


def _make_agent(config: RunConfig, state_dim: int) -> DQNAgent:
    codec = ActionCodec(num_filters=len(config.filters), n_max=config.n_max)
    if config.agent_checkpoint:
        return DQNAgent.load(config.agent_checkpoint)
    return DQNAgent(state_dim, codec, config.agent, seed=derive_seed(config.seed, "agent"))


def _state_dim(config: RunConfig) -> int:
    return 2 * config.k_slots + 4 + config.m_slots + 1


def _dump_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_attack(config: RunConfig, image_paths: list, labels_csv=None) -> int:
    classifier = _build_classifier(config)
    agent = _make_agent(config, _state_dim(config))
    policy = greedy_policy(agent)
    os.makedirs(config.out_dir, exist_ok=True)

    labels = _read_labels_csv(labels_csv) if labels_csv else {}
    inputs = []
    for path in image_paths:
        image = _load_image(path)
        make_patch_grid(image, config.patch_size)  # fail fast on geometry
        name = os.path.basename(path)
        gt = labels.get(name)
        inputs.append((name, image, gt))

    def attack_one(index):
        name, image, gt = inputs[index]
        if gt is None:
            gt = int(classifier.classify_batch([image]).argmax())
        return run_episode(
            image,
            gt,
            classifier,
            config.filters,
            policy,
            target_class=config.target_class,
            budget=config.budget,
            patch_size=config.patch_size,
            episode_seed=derive_seed(config.seed, "episode", 0, index),
            pd_params=config.pd,
            pd_mode=config.pd_mode,
            k_slots=config.k_slots,
            m_slots=config.m_slots,
            probe_index=config.probe_filter_index,
        )

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(attack_one, range(len(inputs))))
    else:
        results = [attack_one(i) for i in range(len(inputs))]

    records = []
    for (name, image, _), result in zip(inputs, results):
        stem = os.path.splitext(name)[0]
        if result.adversarial is not None:
            write_raw(os.path.join(config.out_dir, f"{stem}.adv.raw"), result.adversarial)
            if result.adversarial.shape[0] in (1, 3):
                write_png(os.path.join(config.out_dir, f"{stem}.adv.png"), result.adversarial)
        with open(os.path.join(config.out_dir, f"{stem}.trace.jsonl"), "w") as fh:
            for row in result.trace:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        records.append({"input": name, **result.to_dict()})

    attempted = [r for r in results if r.status != "skip"]
    summary = {
        "seed": config.seed,
        "mode": "targeted" if config.target_class is not None else "untargeted",
        "episodes": records,
        "aggregate": summarize(results).to_dict() if attempted else None,
    }
    _dump_json(os.path.join(config.out_dir, "summary.json"), summary)
    if summary["aggregate"] is not None:
        _write_summary_csv(os.path.join(config.out_dir, "summary.csv"), summary["aggregate"])
    print(json.dumps(summary["aggregate"], indent=2, sort_keys=True))
    failed = [r for r in results if r.status == "failure"]
    return EXIT_OK if not failed else EXIT_INCOMPLETE


def _write_summary_csv(path, aggregate: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["avg_q", "l2_max", "l2_avg", "linf_max", "asr"])
        writer.writerow(
            [
                aggregate["avg_steps"],
                aggregate["l2_max"],
                aggregate["l2_avg"],
                aggregate["linf_max"],
                aggregate["asr"],
            ]
        )


def cmd_train_agent(config: RunConfig, dataset_dir: str) -> int:
    classifier = _build_classifier(config)
    images, labels, _ = fixtures.load_dataset_dir(dataset_dir)
    for image in images:
        make_patch_grid(image, config.patch_size)
    agent = _make_agent(config, _state_dim(config))
    os.makedirs(config.out_dir, exist_ok=True)

    outcome = train_agent(
        images,
        labels,
        classifier,
        config.filters,
        agent,
        budget=config.budget,
        patch_size=config.patch_size,
        root_seed=config.seed,
        target_class=config.target_class,
        pd_params=config.pd,
        pd_mode=config.pd_mode,
        probe_index=config.probe_filter_index,
        episodes_per_image=config.episodes_per_image,
    )

    checkpoint = os.path.join(config.out_dir, "agent.rlt")
    agent.save(checkpoint)
    log_path = os.path.join(config.out_dir, "training_log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(outcome.log[0].keys()))
        writer.writeheader()
        writer.writerows(outcome.log)
    _dump_json(
        os.path.join(config.out_dir, "split.json"),
        {"train": outcome.train_indices, "eval": outcome.eval_indices},
    )
    print(f"checkpoint: {checkpoint}")
    print(f"episodes: {len(outcome.log)}")
    return EXIT_OK


def cmd_eval_robustness(matrix_csv: str, clean_error: float, literal_eq5: bool, out_dir=None) -> int:
    matrix = CorruptionErrorMatrix.from_csv(matrix_csv, clean_error)
    mce, degradation = mce_and_degradation(matrix, literal_eq5=literal_eq5)
    payload = {
        "clean_error": matrix.clean_error,
        "uce": {name: uce(row) for name, row in zip(matrix.corruptions, matrix.errors)},
        "mce": mce,
        "degradation_error": degradation,
        "literal_eq5": literal_eq5,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _dump_json(os.path.join(out_dir, "robustness.json"), payload)
    return EXIT_OK


def cmd_calibrate(config: RunConfig, image_paths: list, samples: int = 200) -> int:
    references = [_load_image(p) for p in image_paths]
    if not references:
        raise ConfigError("calibrate needs at least one reference image")
    grid = make_patch_grid(references[0], config.patch_size)
    result = calibrate_filters(
        config.filters, references, grid, samples=samples, seed=derive_seed(config.seed, "calibrate")
    )
    payload = {
        "filters": [
            {"kind": s.kind, "params": dict(s.params), "calibration_scale": s.calibration_scale}
            for s in result.specs
        ],
        "report": [dataclasses.asdict(e) for e in result.entries],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    os.makedirs(config.out_dir, exist_ok=True)
    _dump_json(os.path.join(config.out_dir, "filters.json"), payload)
    return EXIT_OK


def cmd_sensitivity_report(config: RunConfig, image_path: str, out_path=None) -> int:
    classifier = _build_classifier(config)
    image = _load_image(image_path)
    grid = make_patch_grid(image, config.patch_size)
    probs = classifier.classify_batch([image])[0]
    gt = int(probs.argmax())
    spec = config.filters[config.probe_filter_index]
    add = probe_add_sensitivity(
        image, grid, spec, classifier, gt, derive_seed(config.seed, "report"), base_probs=probs
    )
    remove = probe_remove_sensitivity(image, grid, DistortionLedger(), classifier, gt, base_probs=probs)

    rows = []
    for i in range(grid.patch_count):
        r, c = grid.coords(i)
        rows.append([i, r, c, repr(float(add[i])), repr(remove[i]) if i in remove else ""])
    out = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["patch_index", "row", "col", "add_delta", "remove_delta"])
        writer.writerows(rows)
    finally:
        if out_path:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlab",
        description="Query-efficient black-box adversarial attacks with pluggable distortion filters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--target-url", dest="target_url", help=f"remote classifier URL (env {TARGET_URL_ENV})")
        p.add_argument("--weights", help="in-process reference model weights")
        p.add_argument("--filter", action="append", help="filter kind (repeatable)")
        p.add_argument("--patch-size", dest="patch_size", type=int)
        p.add_argument("--budget", type=int)
        p.add_argument("--targeted", type=int, metavar="CLASS", help="targeted mode toward CLASS")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output directory")

    attack = sub.add_parser("attack", help="attack images until the victim misclassifies")
    common(attack)
    attack.add_argument("images", nargs="+", help="input images (.raw/.rlt or .png)")
    attack.add_argument("--labels", help="CSV (filename,label) of ground-truth labels")
    attack.add_argument("--agent-checkpoint", dest="agent_checkpoint")

    train = sub.add_parser("train-agent", help="train the attack agent on a dataset directory")
    common(train)
    train.add_argument("dataset", help="directory with labels.csv and image files")

    robust = sub.add_parser("eval-robustness", help="corruption robustness metrics from an error matrix")
    robust.add_argument("matrix", help="CSV with header corruption,s1..s5")
    robust.add_argument("--clean-error", dest="clean_error", type=float, required=True)
    robust.add_argument("--literal-eq5", dest="literal_eq5", action="store_true")
    robust.add_argument("--out", help="output directory")

    cal = sub.add_parser("calibrate", help="match every filter's per-patch L2 impact to the anchor")
    common(cal)
    cal.add_argument("references", nargs="+", help="reference images")
    cal.add_argument("--samples", type=int, default=200)

    report = sub.add_parser("sensitivity-report", help="per-patch sensitivity CSV for one image")
    common(report)
    report.add_argument("image", help="input image")
    report.add_argument("--csv", dest="csv_out", help="write CSV here instead of stdout")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval-robustness":
            return cmd_eval_robustness(args.matrix, args.clean_error, args.literal_eq5, args.out)
        config = load_config(args.config) if args.config else RunConfig()
        config = _apply_overrides(config, args)
        if args.command == "attack":
            return cmd_attack(config, args.images, labels_csv=args.labels)
        if args.command == "train-agent":
            return cmd_train_agent(config, args.dataset)
        if args.command == "calibrate":
            return cmd_calibrate(config, args.references, samples=args.samples)
        if args.command == "sensitivity-report":
            return cmd_sensitivity_report(config, args.image, out_path=args.csv_out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, ProtocolError) as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RlabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
