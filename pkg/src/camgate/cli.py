"""Command-line front door: explain one image, build the dataset-average
map, or run the full annotated suite as a pipeline gate.

Configuration precedence, resolved before validation:

1. the ``CAMGATE_OUTPUT_DIR`` environment variable (output directory only;
   it overrides even an explicit flag so pipelines can redirect artifacts
   without editing command lines),
2. command-line flags,
3. the JSON config file named by ``--config``,
4. built-in defaults.

Exit codes: 0 all gates passed, 1 at least one FAIL (or non-tolerated
INCONCLUSIVE, or nothing to combine), 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

from .errors import CamGateError, ConfigurationError, InputError
from .gradcam import combined, gradcam_for, write_value_grid
from .harness import Policy, _prepare_input, load_annotations, run_suite
from .imaging import COLORMAPS, colorize, decode, heatmap_filename, superimpose, write_png
from .model import Model, forward, load_model

__all__ = ["RunConfig", "main", "cmd_explain", "cmd_combined", "cmd_test"]

ENV_OUTPUT_DIR = "CAMGATE_OUTPUT_DIR"


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved invocation parameters; one field per CLI flag."""

    model: str
    weights: str
    dataset: str | None = None
    output_dir: str = "camgate-out"
    threshold: float = 0.5
    dilation: float = 1.0
    class_mode: str = "predicted"
    explicit_class: str | None = None  # label or index, resolved after model load
    target_layer: str | None = None
    alpha: float = 0.4
    colormap: str = "blue-red"
    inconclusive: str = "break"          # break | tolerate
    junit_inconclusive: str = "skipped"  # skipped | failure
    require_correct_class: bool = True
    background_label: str = "empty"
    threads: int = 0  # 0 means "auto" (available parallelism)

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}

_BOOL_FIELDS = {"require_correct_class"}
_FLOAT_FIELDS = {"threshold", "dilation", "alpha"}
_INT_FIELDS = {"threads"}


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"config file {path}: unknown field {key!r}")
    return doc


def _coerce(name: str, value):
    if value is None:
        return None
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigurationError(f"config field {name!r} must be true or false, got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config field {name!r} must be a number, got {value!r}")
        return float(value)
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"config field {name!r} must be an integer, got {value!r}")
        return value
    if name == "explicit_class":
        if isinstance(value, int) and not isinstance(value, bool):
            return str(value)
        if isinstance(value, str) and value:
            return value
        raise ConfigurationError(f"config field {name!r} must be a class label or index, got {value!r}")
    if not isinstance(value, str) or not value:
        raise ConfigurationError(f"config field {name!r} must be a non-empty string, got {value!r}")
    return value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over the config file over defaults; validate the result."""
    file_values = _load_config_file(args.config) if getattr(args, "config", None) else {}

    merged: dict = {}
    for name in _CONFIG_KEYS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            merged[name] = _coerce(name, flag_value)
        elif name in file_values:
            merged[name] = _coerce(name, file_values[name])

    env_out = os.environ.get(ENV_OUTPUT_DIR)
    if env_out:
        merged["output_dir"] = env_out

    if merged.get("explicit_class") is not None and "class_mode" not in merged:
        merged["class_mode"] = "explicit"

    for required in ("model", "weights"):
        if required not in merged:
            raise ConfigurationError(f"missing required option --{required}")
    config = RunConfig(**merged)

    if not os.path.isfile(config.model):
        raise ConfigurationError(f"model manifest not found: {config.model}")
    if not os.path.isfile(config.weights):
        raise ConfigurationError(f"weights file not found: {config.weights}")
    if config.dataset is not None and not os.path.isfile(config.dataset):
        raise ConfigurationError(f"dataset file not found: {config.dataset}")
    if not 0.0 <= config.threshold <= 1.0:
        raise ConfigurationError(f"threshold must be in [0, 1], got {config.threshold}")
    if config.dilation < 1.0:
        raise ConfigurationError(f"dilation must be >= 1, got {config.dilation}")
    if not 0.0 <= config.alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {config.alpha}")
    if config.colormap not in COLORMAPS:
        raise ConfigurationError(
            f"unknown colormap {config.colormap!r}; available: {', '.join(sorted(COLORMAPS))}"
        )
    if config.class_mode not in ("predicted", "true", "explicit"):
        raise ConfigurationError(
            f"class mode must be predicted, true, or explicit, got {config.class_mode!r}"
        )
    if config.class_mode == "explicit" and config.explicit_class is None:
        raise ConfigurationError("class mode 'explicit' requires --class")
    if config.inconclusive not in ("break", "tolerate"):
        raise ConfigurationError(
            f"--inconclusive must be break or tolerate, got {config.inconclusive!r}"
        )
    if config.junit_inconclusive not in ("skipped", "failure"):
        raise ConfigurationError(
            f"--junit-inconclusive must be skipped or failure, got {config.junit_inconclusive!r}"
        )
    if config.threads < 0:
        raise ConfigurationError(
            f"thread count must be positive (or 0 for auto), got {config.threads}"
        )
    return config


def _target_override(config: RunConfig):
    if config.target_layer is None:
        return None
    text = config.target_layer
    return int(text) if text.lstrip("-").isdigit() else text


def _resolve_class(model: Model, spec: str | None) -> int | None:
    """Turn a --class value (label or index) into a class index."""
    if spec is None:
        return None
    if spec.lstrip("-").isdigit():
        idx = int(spec)
        if not 0 <= idx < model.num_classes:
            raise InputError(f"class index {idx} out of range [0, {model.num_classes})")
        return idx
    if spec not in model.class_labels:
        raise InputError(
            f"unknown class label {spec!r}; model classes: {', '.join(model.class_labels)}"
        )
    return model.class_labels.index(spec)


def _echo_dict(config: RunConfig) -> dict:
    """The resolved config embedded in report.json.

    output_dir and threads are machine-local execution details; leaving them
    out keeps reports byte-identical across working directories and worker
    pool sizes.
    """
    doc = {
        "model": config.model,
        "weights": config.weights,
        "dataset": config.dataset,
        "threshold": config.threshold,
        "dilation": config.dilation,
        "class_mode": config.class_mode,
        "explicit_class": config.explicit_class,
        "target_layer": config.target_layer,
        "alpha": config.alpha,
        "colormap": config.colormap,
        "inconclusive": config.inconclusive,
        "junit_inconclusive": config.junit_inconclusive,
        "require_correct_class": config.require_correct_class,
        "background_label": config.background_label,
    }
    return doc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_explain(config: RunConfig, image_path: str) -> int:
    """Explain one image: overlay PNG + value sidecar + one stdout line.

    The stdout line is tab-separated (labels may contain spaces):
    ``<predicted label>\\t<confidence>\\t<overlay path>``.
    """
    model = load_model(config.model, config.weights, target_override=_target_override(config))
    base = decode(image_path)
    record = forward(model, _prepare_input(base, model))
    idx = _resolve_class(model, config.explicit_class)

    sample_id = os.path.splitext(os.path.basename(image_path))[0]
    heatmap = gradcam_for(
        model, record, idx, out_size=(base.width, base.height), sample_id=sample_id
    )
    os.makedirs(config.output_dir, exist_ok=True)
    overlay_path = os.path.join(
        config.output_dir, heatmap_filename(sample_id, heatmap.class_label)
    )
    values_path = os.path.join(
        config.output_dir, heatmap_filename(sample_id, heatmap.class_label, "csv")
    )
    write_png(superimpose(base, colorize(heatmap.values, COLORMAPS[config.colormap]),
                          config.alpha), overlay_path)
    write_value_grid(heatmap.values, values_path)

    predicted_label = model.class_labels[record.predicted_class]
    print(f"{predicted_label}\t{record.confidence:.6f}\t{overlay_path}")
    if heatmap.degenerate:
        print("note: activation map is all zero (degenerate)", file=sys.stderr)
    return 0


def cmd_combined(config: RunConfig) -> int:
    """Average the heatmaps of every dataset sample into one map."""
    if config.dataset is None:
        raise ConfigurationError("missing required option --dataset")
    model = load_model(config.model, config.weights, target_override=_target_override(config))
    samples = load_annotations(
        config.dataset, model.class_labels, background_label=config.background_label
    )
    if not samples:
        raise ConfigurationError(f"dataset {config.dataset} contains no samples")
    explicit = _resolve_class(model, config.explicit_class)

    def one(sample):
        base = decode(sample.image_path)
        record = forward(model, _prepare_input(base, model))
        if config.class_mode == "true":
            idx = model.class_labels.index(sample.true_label)
        elif config.class_mode == "explicit":
            idx = explicit
        else:
            idx = None
        return gradcam_for(
            model, record, idx, out_size=(base.width, base.height), sample_id=sample.sample_id
        )

    threads = config.resolved_threads()
    if threads == 1:
        maps = [one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            maps = list(pool.map(one, samples))

    degenerate = sum(1 for m in maps if m.degenerate)
    print(f"samples: {len(maps)}  degenerate (excluded): {degenerate}")
    if degenerate == len(maps):
        print("no valid heatmaps to combine", file=sys.stderr)
        return 1
    combo = combined(maps)

    os.makedirs(config.output_dir, exist_ok=True)
    png_path = os.path.join(config.output_dir, "combined.heatmap.png")
    csv_path = os.path.join(config.output_dir, "combined.heatmap.csv")
    write_png(colorize(combo.values, COLORMAPS[config.colormap]), png_path)
    write_value_grid(combo.values, csv_path)
    print(f"combined map over {combo.contributing} samples: {png_path}")
    return 0


def cmd_test(config: RunConfig) -> int:
    """Run the annotated suite and gate on the verdicts."""
    if config.dataset is None:
        raise ConfigurationError("missing required option --dataset")
    model = load_model(config.model, config.weights, target_override=_target_override(config))
    samples = load_annotations(
        config.dataset, model.class_labels, background_label=config.background_label
    )
    policy = Policy(
        threshold=config.threshold,
        dilation=config.dilation,
        require_correct_class=config.require_correct_class,
        background_label=config.background_label,
        inconclusive_fails=(config.inconclusive == "break"),
    )
    explicit = _resolve_class(model, config.explicit_class)
    report = run_suite(
        model,
        samples,
        policy,
        config.output_dir,
        dataset_path=config.dataset,
        threads=config.resolved_threads(),
        alpha=config.alpha,
        colormap=config.colormap,
        class_mode=config.class_mode,
        explicit_class=explicit,
        junit_inconclusive_as_failure=(config.junit_inconclusive == "failure"),
        config_echo=_echo_dict(config),
    )

    id_width = max([len(v.sample_id) for v in report.verdicts] + [len("sample")])
    label_width = max([len(v.predicted_label) for v in report.verdicts] + [len("predicted")])
    header = (
        f"{'sample'.ljust(id_width)}  {'status'.ljust(12)}  "
        f"{'predicted'.ljust(label_width)}  {'conf'.rjust(8)}  {'overlap'.rjust(8)}"
    )
    print(header)
    for v in report.verdicts:
        overlap = f"{v.overlap_score:.4f}" if v.overlap_score is not None else "-"
        print(
            f"{v.sample_id.ljust(id_width)}  {v.status.ljust(12)}  "
            f"{v.predicted_label.ljust(label_width)}  {v.confidence:8.6f}  {overlap.rjust(8)}"
        )
    c = report.counts
    print(
        f"\nPASS {c['PASS']}  FAIL {c['FAIL']}  INCONCLUSIVE {c['INCONCLUSIVE']}  "
        f"total {c['total']}"
    )
    mean_overlap = f"{report.mean_overlap:.4f}" if report.mean_overlap is not None else "-"
    print(f"classification accuracy: {report.accuracy:.1%}  mean overlap: {mean_overlap}")
    print(f"report: {os.path.join(config.output_dir, 'report.json')}")
    return report.exit_status


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sp: argparse.ArgumentParser, with_dataset: bool) -> None:
    sp.add_argument("--model", help="path to the model manifest (JSON)")
    sp.add_argument("--weights", help="path to the raw float32 weights file")
    if with_dataset:
        sp.add_argument("--dataset", help="path to the JSON-lines annotation file")
    sp.add_argument("--config", help="JSON config file; explicit flags override its values")
    sp.add_argument(
        "--output-dir", dest="output_dir",
        help=f"directory for artifacts (default camgate-out; ${ENV_OUTPUT_DIR} overrides)",
    )
    sp.add_argument("--target-layer", dest="target_layer",
                    help="conv layer (name or index) to attribute against; default: last conv layer")
    sp.add_argument("--alpha", type=float, help="overlay blend factor in [0, 1] (default 0.4)")
    sp.add_argument("--colormap", choices=sorted(COLORMAPS),
                    help="palette for rendered heatmaps (default blue-red)")
    sp.add_argument("--class", dest="explicit_class", metavar="LABEL_OR_INDEX",
                    help="explain this class instead of the predicted one")


def _add_class_mode(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--class-mode", dest="class_mode",
                    choices=["predicted", "true", "explicit"],
                    help="which class to explain per sample (default predicted)")
    sp.add_argument("--threads", type=int,
                    help="worker threads (default: available parallelism)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camgate",
        description=(
            "Activation-heatmap quality gate for CNN classifiers: renders "
            "class-activation overlays and fails test cases whose activation "
            "mass misses the annotated ground-truth regions."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_explain = sub.add_parser(
        "explain", help="compute one image's heatmap overlay and prediction"
    )
    p_explain.add_argument("image", help="path to the input image (PNG or PPM)")
    _add_common(p_explain, with_dataset=False)

    p_combined = sub.add_parser(
        "combined", help="average all dataset heatmaps into one map"
    )
    _add_common(p_combined, with_dataset=True)
    _add_class_mode(p_combined)
    p_combined.add_argument("--background-label", dest="background_label",
                            help="class label for scenes without objects (default empty)")

    p_test = sub.add_parser(
        "test", help="run the annotated suite and gate on heatmap overlap"
    )
    _add_common(p_test, with_dataset=True)
    _add_class_mode(p_test)
    p_test.add_argument("--threshold", type=float,
                        help="minimum in-region activation fraction in [0, 1] (default 0.5)")
    p_test.add_argument("--dilation", type=float,
                        help="box dilation factor >= 1 applied before scoring (default 1.0)")
    p_test.add_argument("--require-correct-class", dest="require_correct_class",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="also fail misclassified samples (default on)")
    p_test.add_argument("--background-label", dest="background_label",
                        help="class label judged on classification only (default empty)")
    p_test.add_argument("--inconclusive", choices=["break", "tolerate"],
                        help="whether INCONCLUSIVE verdicts fail the build (default break)")
    p_test.add_argument("--junit-inconclusive", dest="junit_inconclusive",
                        choices=["skipped", "failure"],
                        help="how report.xml represents INCONCLUSIVE (default skipped)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "explain":
            return cmd_explain(config, args.image)
        if args.command == "combined":
            return cmd_combined(config)
        return cmd_test(config)
    except CamGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
