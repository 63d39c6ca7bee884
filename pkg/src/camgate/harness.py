"""Annotated-dataset evaluation: score heatmaps against ground-truth boxes,
apply the pass/fail policy, and emit machine-readable reports.

Verdict policy, in precedence order:

* INCONCLUSIVE when the heatmap is degenerate (all zero) or a non-background
  sample carries no boxes; the localization gate cannot run.
* FAIL when the in-box activation fraction falls below the threshold (a
  correct classification does not rescue a sample whose evidence sits outside
  the annotated region), and additionally when ``require_correct_class`` is
  set and the prediction is wrong.
* PASS otherwise.

Samples whose true label is the designated background label have no valid
region by definition and are judged on classification alone.

Activation masses are accumulated with exact compensated summation
(math.fsum), which makes the overlap score independent of pixel enumeration
order and weakly monotone in the dilation factor: growing the region can
only add nonnegative mass, and correct rounding preserves the ordering.

Report files are deterministic: verdicts are sorted by sample_id, floats are
serialized by their shortest round-trip representation, and no timestamps or
host details are embedded, so reruns (at any thread count) produce
byte-identical ``report.json`` files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .gradcam import Heatmap, combined, gradcam_for, write_value_grid
from .imaging import (
    COLORMAPS,
    Image,
    colorize,
    decode,
    heatmap_filename,
    image_to_tensor,
    resize_bilinear,
    superimpose,
    write_png,
)
from .model import Model, forward

__all__ = [
    "BoundingBox",
    "AnnotatedSample",
    "Policy",
    "Verdict",
    "TestReport",
    "load_annotations",
    "overlap_score",
    "judge",
    "run_suite",
    "REASON_OFF_REGION",
    "REASON_DEGENERATE",
]

# Pinned reason strings; CI configurations may match on them.
REASON_OFF_REGION = "activation outside ground-truth region"
REASON_DEGENERATE = "all-zero activation map"
REASON_NO_BOXES = "no ground-truth boxes for a non-background sample"

DEFAULT_BACKGROUND_LABEL = "empty"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned region in original-image pixels, half-open on max edges."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if min(self.x_min, self.y_min) < 0 or self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise InputError(
                f"invalid box [{self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}]: "
                "requires 0 <= min < max on both axes"
            )


@dataclass(frozen=True)
class AnnotatedSample:
    sample_id: str
    image_path: str
    true_label: str
    odd_tag: str
    boxes: tuple[BoundingBox, ...]


@dataclass(frozen=True)
class Policy:
    """Gate parameters. ``threshold`` is the minimum in-region activation
    fraction; ``dilation`` scales each box about its center before scoring."""

    threshold: float = 0.5
    dilation: float = 1.0
    require_correct_class: bool = True
    background_label: str = DEFAULT_BACKGROUND_LABEL
    inconclusive_fails: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.dilation < 1.0:
            raise ConfigurationError(f"dilation must be >= 1, got {self.dilation}")


@dataclass(frozen=True)
class Verdict:
    sample_id: str
    true_label: str
    odd_tag: str
    predicted_label: str
    confidence: float
    classification_correct: bool
    overlap_score: float | None
    status: str  # PASS | FAIL | INCONCLUSIVE
    reasons: tuple[str, ...]


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

_SAMPLE_FIELDS = {"sample_id", "image", "true_label", "odd_tag", "boxes"}


def load_annotations(
    path: str,
    class_labels=None,
    background_label: str = DEFAULT_BACKGROUND_LABEL,
) -> list[AnnotatedSample]:
    """Parse the JSON-lines annotation file.

    One sample per non-empty line with fields sample_id, image, true_label,
    odd_tag, and boxes (a list of [x_min, y_min, x_max, y_max] integer
    arrays). Image paths are taken relative to the annotation file.
    ``class_labels``, when given, restricts true_label values.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read annotations {path}: {exc}") from exc

    base_dir = os.path.dirname(os.path.abspath(path))
    samples: list[AnnotatedSample] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        where = f"{path}:{lineno}"
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{where}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigurationError(f"{where}: sample must be an object")
        missing = _SAMPLE_FIELDS - obj.keys()
        if missing:
            raise ConfigurationError(f"{where}: missing fields: {', '.join(sorted(missing))}")
        unknown = obj.keys() - _SAMPLE_FIELDS
        if unknown:
            raise ConfigurationError(f"{where}: unknown fields: {', '.join(sorted(unknown))}")
        for key in ("sample_id", "image", "true_label", "odd_tag"):
            if not isinstance(obj[key], str) or not obj[key]:
                raise ConfigurationError(f"{where}: {key} must be a non-empty string")

        sample_id = obj["sample_id"]
        if sample_id in seen:
            raise ConfigurationError(f"{where}: duplicate sample_id {sample_id!r}")
        seen.add(sample_id)

        label = obj["true_label"]
        if class_labels is not None and label not in class_labels:
            raise ConfigurationError(
                f"{where}: true_label {label!r} is not one of the model's class labels"
            )

        raw_boxes = obj["boxes"]
        if not isinstance(raw_boxes, list):
            raise ConfigurationError(f"{where}: boxes must be a list")
        boxes = []
        for bi, rb in enumerate(raw_boxes):
            if (
                not isinstance(rb, list)
                or len(rb) != 4
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in rb)
            ):
                raise ConfigurationError(
                    f"{where}: boxes[{bi}] must be [x_min, y_min, x_max, y_max] integers"
                )
            try:
                boxes.append(BoundingBox(*rb))
            except InputError as exc:
                raise ConfigurationError(f"{where}: boxes[{bi}]: {exc}") from exc
        if not boxes and label != background_label:
            raise ConfigurationError(
                f"{where}: boxes may be empty only for the background label "
                f"({background_label!r}), got true_label {label!r}"
            )

        image_path = obj["image"]
        if not os.path.isabs(image_path):
            image_path = os.path.join(base_dir, image_path)
        samples.append(
            AnnotatedSample(
                sample_id=sample_id,
                image_path=image_path,
                true_label=label,
                odd_tag=obj["odd_tag"],
                boxes=tuple(boxes),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def dilated_bounds(
    box: BoundingBox, dilation: float, width: int, height: int
) -> tuple[float, float, float, float]:
    """Scale the box about its center, then clamp to the image.

    A pixel (x, y) is inside iff nx0 <= x < nx1 and ny0 <= y < ny1. With
    dilation 1.0 the bounds reproduce the original box edges exactly.
    """
    cx = (box.x_min + box.x_max) / 2.0
    cy = (box.y_min + box.y_max) / 2.0
    hw = (box.x_max - box.x_min) / 2.0
    hh = (box.y_max - box.y_min) / 2.0
    nx0 = max(cx - hw * dilation, 0.0)
    ny0 = max(cy - hh * dilation, 0.0)
    nx1 = min(cx + hw * dilation, float(width))
    ny1 = min(cy + hh * dilation, float(height))
    return nx0, ny0, nx1, ny1


def _union_mask(
    boxes, dilation: float, width: int, height: int
) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for box in boxes:
        nx0, ny0, nx1, ny1 = dilated_bounds(box, dilation, width, height)
        mask |= ((ys >= ny0) & (ys < ny1))[:, None] & ((xs >= nx0) & (xs < nx1))[None, :]
    return mask


def overlap_score(heatmap: Heatmap, boxes, dilation: float = 1.0) -> float:
    """Fraction of total activation mass inside the union of dilated boxes.

    Each pixel counts once however many boxes cover it. Both masses are
    exact compensated sums, so the quotient is <= 1 whenever the inside
    region is a subset of the map and is non-decreasing in ``dilation``.
    """
    if heatmap.degenerate:
        raise InputError("cannot score an all-zero activation map")
    if not boxes:
        raise InputError("cannot score without ground-truth boxes")
    if dilation < 1.0:
        raise InputError(f"dilation must be >= 1, got {dilation}")
    h, w = heatmap.values.shape
    for box in boxes:
        if box.x_max > w or box.y_max > h:
            raise InputError(
                f"box [{box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}] "
                f"exceeds image bounds {w}x{h}"
            )
    mask = _union_mask(boxes, dilation, w, h)
    inside = math.fsum(heatmap.values[mask])
    total = math.fsum(heatmap.values.ravel())
    return inside / total


def judge(
    sample: AnnotatedSample,
    record,
    heatmap: Heatmap,
    policy: Policy,
    class_labels,
) -> Verdict:
    """Apply the gate policy to one evaluated sample."""
    predicted_label = class_labels[record.predicted_class]
    correct = predicted_label == sample.true_label
    background = sample.true_label == policy.background_label

    reasons: list[str] = []
    overlap: float | None = None

    if background:
        # No valid region exists for background scenes: classification only.
        if not correct:
            reasons.append(f"misclassified: predicted {predicted_label!r}, expected {sample.true_label!r}")
        status = "PASS" if correct else "FAIL"
        return Verdict(
            sample_id=sample.sample_id,
            true_label=sample.true_label,
            odd_tag=sample.odd_tag,
            predicted_label=predicted_label,
            confidence=record.confidence,
            classification_correct=correct,
            overlap_score=None,
            status=status,
            reasons=tuple(reasons),
        )

    inconclusive = False
    if not sample.boxes:
        inconclusive = True
        reasons.append(REASON_NO_BOXES)
    elif heatmap.degenerate:
        inconclusive = True
        reasons.append(REASON_DEGENERATE)
    else:
        overlap = overlap_score(heatmap, sample.boxes, policy.dilation)
        if overlap < policy.threshold:
            reasons.append(REASON_OFF_REGION)

    if not correct and policy.require_correct_class:
        # Recorded even on INCONCLUSIVE verdicts, as context for the reader.
        reasons.append(f"misclassified: predicted {predicted_label!r}, expected {sample.true_label!r}")
    if inconclusive:
        status = "INCONCLUSIVE"
    else:
        fail = (overlap is not None and overlap < policy.threshold) or (
            policy.require_correct_class and not correct
        )
        status = "FAIL" if fail else "PASS"
    return Verdict(
        sample_id=sample.sample_id,
        true_label=sample.true_label,
        odd_tag=sample.odd_tag,
        predicted_label=predicted_label,
        confidence=record.confidence,
        classification_correct=correct,
        overlap_score=overlap,
        status=status,
        reasons=tuple(reasons),
    )


# ---------------------------------------------------------------------------
# suite execution
# ---------------------------------------------------------------------------

@dataclass
class _Outcome:
    sample: AnnotatedSample
    verdict: Verdict
    heatmap: Heatmap | None
    overlay_rel: str | None
    values_rel: str | None


@dataclass(frozen=True)
class TestReport:
    model_hash: str | None
    dataset_hash: str | None
    config: dict
    class_labels: tuple[str, ...]
    model_parameters: int
    target_layer: str
    verdicts: tuple[Verdict, ...]
    counts: dict
    accuracy: float
    mean_overlap: float | None
    combined_ref: dict | None
    combined_note: str | None
    exit_status: int

    def to_dict(self) -> dict:
        artifact_rows = self._artifact_rows or tuple((None, None) for _ in self.verdicts)
        rows = []
        for v, extra in zip(self.verdicts, artifact_rows):
            rows.append(
                {
                    "sample_id": v.sample_id,
                    "true_label": v.true_label,
                    "odd_tag": v.odd_tag,
                    "predicted_label": v.predicted_label,
                    "confidence": v.confidence,
                    "classification_correct": v.classification_correct,
                    "overlap_score": v.overlap_score,
                    "status": v.status,
                    "reasons": list(v.reasons),
                    "overlay_png": extra[0],
                    "values_csv": extra[1],
                }
            )
        combined_field: dict | None
        if self.combined_ref is not None:
            combined_field = self.combined_ref
        elif self.combined_note is not None:
            combined_field = {"note": self.combined_note}
        else:
            combined_field = None
        return {
            "report_version": 1,
            "suite": {
                "model_hash": self.model_hash,
                "dataset_hash": self.dataset_hash,
                "model_parameters": self.model_parameters,
                "target_layer": self.target_layer,
                "class_labels": list(self.class_labels),
                "config": self.config,
            },
            "verdicts": rows,
            "summary": {
                "pass": self.counts["PASS"],
                "fail": self.counts["FAIL"],
                "inconclusive": self.counts["INCONCLUSIVE"],
                "total": self.counts["total"],
                "classification_accuracy": self.accuracy,
                "mean_overlap": self.mean_overlap,
            },
            "combined_heatmap": combined_field,
            "exit_status": self.exit_status,
        }

    # artifact paths parallel to verdicts; set by run_suite after sorting
    _artifact_rows: tuple[tuple[str | None, str | None], ...] = ()


def _sha256_file(path: str | None) -> str | None:
    if path is None:
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _model_hash(model: Model) -> str | None:
    if model.manifest_path is None or model.weights_path is None:
        return None
    digest = hashlib.sha256()
    for path in (model.manifest_path, model.weights_path):
        with open(path, "rb") as fh:
            digest.update(fh.read())
    return digest.hexdigest()


def _prepare_input(base: Image, model: Model) -> np.ndarray:
    c, h, w = model.input_shape
    img = base
    if (img.width, img.height) != (w, h):
        img = resize_bilinear(img, w, h)
    if img.channels == 1 and c == 3:
        img = Image(np.repeat(img.pixels, 3, axis=2))
    elif img.channels != c:
        raise InputError(
            f"image has {img.channels} channel(s) but the model expects {c}"
        )
    mean = std = None
    if model.normalization is not None:
        mean, std = model.normalization
    return image_to_tensor(img, mean, std)


def _class_index_for(model: Model, sample: AnnotatedSample, class_mode, explicit_class):
    if class_mode == "predicted":
        return None
    if class_mode == "true":
        return model.class_labels.index(sample.true_label)
    if class_mode == "explicit":
        return explicit_class
    raise ConfigurationError(f"unknown class mode {class_mode!r}")


def evaluate_sample(
    model: Model,
    sample: AnnotatedSample,
    policy: Policy,
    out_dir: str | None,
    *,
    class_mode: str = "predicted",
    explicit_class: int | None = None,
    alpha: float = 0.4,
    colormap: str = "blue-red",
    write_artifacts: bool = True,
) -> _Outcome:
    """Forward, heatmap, judge, and (optionally) render one sample.

    Per-sample input and I/O problems produce an INCONCLUSIVE verdict with
    the error recorded, so one bad sample cannot take down the suite.
    """
    if colormap not in COLORMAPS:
        raise ConfigurationError(
            f"unknown colormap {colormap!r}; available: {', '.join(sorted(COLORMAPS))}"
        )
    cmap = COLORMAPS[colormap]
    try:
        base = decode(sample.image_path)
        tensor = _prepare_input(base, model)
        record = forward(model, tensor)
        idx = _class_index_for(model, sample, class_mode, explicit_class)
        heatmap = gradcam_for(
            model, record, idx, out_size=(base.width, base.height), sample_id=sample.sample_id
        )
        verdict = judge(sample, record, heatmap, policy, model.class_labels)

        overlay_rel = values_rel = None
        if write_artifacts and out_dir is not None:
            overlay_rel = "overlays/" + heatmap_filename(sample.sample_id, heatmap.class_label)
            values_rel = "values/" + heatmap_filename(sample.sample_id, heatmap.class_label, "csv")
            heat_img = colorize(heatmap.values, cmap)
            write_png(superimpose(base, heat_img, alpha), os.path.join(out_dir, overlay_rel))
            write_value_grid(heatmap.values, os.path.join(out_dir, values_rel))
        return _Outcome(sample, verdict, heatmap, overlay_rel, values_rel)
    except (InputError, OSError) as exc:
        verdict = Verdict(
            sample_id=sample.sample_id,
            true_label=sample.true_label,
            odd_tag=sample.odd_tag,
            predicted_label="",
            confidence=0.0,
            classification_correct=False,
            overlap_score=None,
            status="INCONCLUSIVE",
            reasons=(f"evaluation error: {exc}",),
        )
        return _Outcome(sample, verdict, None, None, None)


def _write_junit(report: TestReport, path: str, inconclusive_as_failure: bool) -> None:
    counts = report.counts
    skipped = 0 if inconclusive_as_failure else counts["INCONCLUSIVE"]
    failures = counts["FAIL"] + (counts["INCONCLUSIVE"] if inconclusive_as_failure else 0)
    suite = ET.Element(
        "testsuite",
        {
            "name": "camgate",
            "tests": str(counts["total"]),
            "failures": str(failures),
            "errors": "0",
            "skipped": str(skipped),
        },
    )
    for v in report.verdicts:
        case = ET.SubElement(
            suite, "testcase", {"classname": "camgate.suite", "name": v.sample_id}
        )
        message = "; ".join(v.reasons)
        if v.status == "FAIL":
            failure = ET.SubElement(case, "failure", {"message": message})
            failure.text = _junit_detail(v)
        elif v.status == "INCONCLUSIVE":
            if inconclusive_as_failure:
                failure = ET.SubElement(case, "failure", {"message": message})
                failure.text = _junit_detail(v)
            else:
                ET.SubElement(case, "skipped", {"message": message})
    root = ET.Element(
        "testsuites",
        {
            "tests": suite.get("tests"),
            "failures": suite.get("failures"),
            "errors": "0",
            "skipped": suite.get("skipped"),
        },
    )
    root.append(suite)
    tree = ET.ElementTree(root)
    ET.indent(tree, space="  ")
    body = ET.tostring(root, encoding="unicode")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        fh.write(body)
        fh.write("\n")


def _junit_detail(v: Verdict) -> str:
    overlap = "n/a" if v.overlap_score is None else repr(v.overlap_score)
    return (
        f"predicted={v.predicted_label or 'n/a'} confidence={v.confidence!r} "
        f"overlap={overlap} status={v.status}"
    )


def _write_verdicts_csv(report: TestReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sample_id",
                "status",
                "true_label",
                "predicted_label",
                "confidence",
                "classification_correct",
                "overlap_score",
                "reasons",
            ]
        )
        for v in report.verdicts:
            writer.writerow(
                [
                    v.sample_id,
                    v.status,
                    v.true_label,
                    v.predicted_label,
                    repr(v.confidence),
                    str(v.classification_correct).lower(),
                    "" if v.overlap_score is None else repr(v.overlap_score),
                    "; ".join(v.reasons),
                ]
            )


def default_config_echo(policy: Policy, *, alpha: float, colormap: str, class_mode: str,
                        explicit_class: int | None = None) -> dict:
    return {
        "threshold": policy.threshold,
        "dilation": policy.dilation,
        "require_correct_class": policy.require_correct_class,
        "background_label": policy.background_label,
        "inconclusive_fails": policy.inconclusive_fails,
        "alpha": alpha,
        "colormap": colormap,
        "class_mode": class_mode,
        "explicit_class": explicit_class,
    }


def run_suite(
    model: Model,
    samples,
    policy: Policy,
    output_dir: str,
    *,
    dataset_path: str | None = None,
    threads: int = 1,
    alpha: float = 0.4,
    colormap: str = "blue-red",
    class_mode: str = "predicted",
    explicit_class: int | None = None,
    junit_inconclusive_as_failure: bool = False,
    config_echo: dict | None = None,
    render_figures: bool = True,
) -> TestReport:
    """Evaluate every sample and write the report bundle into ``output_dir``.

    Configuration problems (empty dataset, unknown labels, bad policy,
    unwritable output) abort before any sample runs. Per-sample errors
    degrade to INCONCLUSIVE verdicts. Returns the TestReport; its
    ``exit_status`` is 0 only if nothing FAILed and INCONCLUSIVE verdicts
    are absent or tolerated by policy.
    """
    samples = list(samples)
    if not samples:
        raise ConfigurationError("dataset contains no samples")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate sample_ids in dataset")
    for s in samples:
        if s.true_label not in model.class_labels:
            raise ConfigurationError(
                f"sample {s.sample_id}: true_label {s.true_label!r} is not a model class label"
            )
    if colormap not in COLORMAPS:
        raise ConfigurationError(
            f"unknown colormap {colormap!r}; available: {', '.join(sorted(COLORMAPS))}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    if class_mode not in ("predicted", "true", "explicit"):
        raise ConfigurationError(f"class mode must be predicted, true, or explicit, got {class_mode!r}")
    if class_mode == "explicit":
        if explicit_class is None or not 0 <= explicit_class < model.num_classes:
            raise ConfigurationError(
                f"explicit class index must be in [0, {model.num_classes}), got {explicit_class!r}"
            )
    if threads < 1:
        raise ConfigurationError(f"thread count must be positive, got {threads}")
    try:
        os.makedirs(output_dir, exist_ok=True)
        os.makedirs(os.path.join(output_dir, "overlays"), exist_ok=True)
        os.makedirs(os.path.join(output_dir, "values"), exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {output_dir}: {exc}") from exc

    def work(sample: AnnotatedSample) -> _Outcome:
        return evaluate_sample(
            model,
            sample,
            policy,
            output_dir,
            class_mode=class_mode,
            explicit_class=explicit_class,
            alpha=alpha,
            colormap=colormap,
        )

    if threads == 1:
        outcomes = [work(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, samples))
    outcomes.sort(key=lambda o: o.sample.sample_id)

    verdicts = tuple(o.verdict for o in outcomes)
    counts = {
        "PASS": sum(1 for v in verdicts if v.status == "PASS"),
        "FAIL": sum(1 for v in verdicts if v.status == "FAIL"),
        "INCONCLUSIVE": sum(1 for v in verdicts if v.status == "INCONCLUSIVE"),
        "total": len(verdicts),
    }
    accuracy = sum(1 for v in verdicts if v.classification_correct) / len(verdicts)
    overlaps = [v.overlap_score for v in verdicts if v.overlap_score is not None]
    mean_overlap = math.fsum(overlaps) / len(overlaps) if overlaps else None

    combined_ref: dict | None = None
    combined_note: str | None = None
    maps = [o.heatmap for o in outcomes if o.heatmap is not None]
    try:
        combo = combined(maps)
        heat_img = colorize(combo.values, COLORMAPS[colormap])
        write_png(heat_img, os.path.join(output_dir, "combined.heatmap.png"))
        write_value_grid(combo.values, os.path.join(output_dir, "combined.heatmap.csv"))
        combined_ref = {
            "png": "combined.heatmap.png",
            "values_csv": "combined.heatmap.csv",
            "contributing": combo.contributing,
            "excluded_sample_ids": list(combo.excluded_ids),
        }
    except InputError as exc:
        combined_note = str(exc)

    fails = counts["FAIL"]
    inconclusive = counts["INCONCLUSIVE"]
    exit_status = 0
    if fails > 0 or (inconclusive > 0 and policy.inconclusive_fails):
        exit_status = 1

    if config_echo is None:
        config_echo = default_config_echo(
            policy, alpha=alpha, colormap=colormap, class_mode=class_mode,
            explicit_class=explicit_class,
        )

    report = TestReport(
        model_hash=_model_hash(model),
        dataset_hash=_sha256_file(dataset_path),
        config=config_echo,
        class_labels=model.class_labels,
        model_parameters=model.parameter_count,
        target_layer=model.layers[model.target_layer].name,
        verdicts=verdicts,
        counts=counts,
        accuracy=accuracy,
        mean_overlap=mean_overlap,
        combined_ref=combined_ref,
        combined_note=combined_note,
        exit_status=exit_status,
    )
    object.__setattr__(
        report, "_artifact_rows", tuple((o.overlay_rel, o.values_rel) for o in outcomes)
    )

    with open(os.path.join(output_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        fh.write("\n")
    _write_junit(report, os.path.join(output_dir, "report.xml"), junit_inconclusive_as_failure)
    _write_verdicts_csv(report, os.path.join(output_dir, "verdicts.csv"))
    if render_figures:
        from .figures import render_suite_figures

        render_suite_figures(report, output_dir)
    return report
