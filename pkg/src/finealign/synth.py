"""Seeded synthetic image/report pairs with aligned saliency maps.

Each abnormal class owns one patch and a fixed signature vector.  A
positive finding adds the signature to its patch, an uncertain one adds
half of it, a negative one subtracts half; blank leaves the patch as noise.
Report sentences come from per-class templates that the rule labeler maps
back to exactly the planted label, which is checked while generating.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import labels as LB
from .attention import SaliencyMap
from .jsonl import write_jsonl
from .labeler import label_report, stub_labeler
from .rng import derive

BOILERPLATE = "no acute findings"

TEMPLATES = {
    "Enlarged Cardiomediastinum": {
        LB.POSITIVE: "the cardiomediastinal silhouette is widened",
        LB.NEGATIVE: "the cardiomediastinal silhouette is normal",
        LB.UNCERTAIN: "the mediastinum may be widened",
    },
    "Cardiomegaly": {
        LB.POSITIVE: "the heart size is enlarged",
        LB.NEGATIVE: "the heart size is normal",
        LB.UNCERTAIN: "possible mild cardiomegaly",
    },
    "Lung Opacity": {
        LB.POSITIVE: "there is a patchy opacity in the left lower zone",
        LB.NEGATIVE: "no focal opacity is seen",
        LB.UNCERTAIN: "a faint opacity may be present",
    },
    "Lung Lesion": {
        LB.POSITIVE: "a pulmonary nodule is noted in the right apex",
        LB.NEGATIVE: "no pulmonary nodule is identified",
        LB.UNCERTAIN: "a possible nodule in the right apex",
    },
    "Edema": {
        LB.POSITIVE: "there is mild pulmonary edema",
        LB.NEGATIVE: "no pulmonary edema",
        LB.UNCERTAIN: "possible mild edema",
    },
    "Consolidation": {
        LB.POSITIVE: "there is focal consolidation at the right base",
        LB.NEGATIVE: "no focal consolidation",
        LB.UNCERTAIN: "consolidation cannot be excluded",
    },
    "Pneumonia": {
        LB.POSITIVE: "findings are concerning for pneumonia",
        LB.NEGATIVE: "no evidence of pneumonia",
        LB.UNCERTAIN: "possible early pneumonia",
    },
    "Atelectasis": {
        LB.POSITIVE: "there is bibasilar atelectasis",
        LB.NEGATIVE: "no atelectasis",
        LB.UNCERTAIN: "possible atelectasis at the left base",
    },
    "Pneumothorax": {
        LB.POSITIVE: "there is a small right pneumothorax",
        LB.NEGATIVE: "there is no pneumothorax",
        LB.UNCERTAIN: "a tiny pneumothorax may be present",
    },
    "Pleural Effusion": {
        LB.POSITIVE: "there is a small left pleural effusion",
        LB.NEGATIVE: "no pleural effusion",
        LB.UNCERTAIN: "possible small pleural effusion",
    },
    "Pleural Other": {
        LB.POSITIVE: "there is apical pleural thickening",
        LB.NEGATIVE: "no pleural thickening",
        LB.UNCERTAIN: "possible pleural thickening",
    },
    "Fracture": {
        LB.POSITIVE: "there is a healed rib fracture",
        LB.NEGATIVE: "no acute fracture",
        LB.UNCERTAIN: "possible rib fracture",
    },
    "Support Devices": {
        LB.POSITIVE: "an endotracheal tube is in place",
        LB.NEGATIVE: "the endotracheal tube has been removed",
        LB.UNCERTAIN: "a catheter may be present",
    },
    "No Finding": {
        LB.POSITIVE: "no acute cardiopulmonary process",
    },
}

PLANT_SCALE = {LB.POSITIVE: 1.0, LB.UNCERTAIN: 0.5, LB.NEGATIVE: -0.5}


class SynthesisError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_samples: int = 8
    n_patches: int = 16
    d_in: int = 16
    noise: float = 0.05
    signature_scale: float = 2.0
    saliency_floor: float = 0.1
    # probabilities for (positive, negative, uncertain, blank) of each abnormal class
    state_probs: tuple = (0.2, 0.15, 0.05, 0.6)
    p_no_finding: float = 0.5
    templates: dict = field(default_factory=lambda: TEMPLATES)

    @property
    def n_classes(self) -> int:
        return LB.N_CLASSES

    def patch_of(self, k: int) -> int:
        return k % self.n_patches


def check_templates(templates, table=None):
    """Raise SynthesisError naming the first template the labeler does not map back exactly."""
    for k, name in enumerate(LB.CLASS_NAMES):
        for state, text in templates.get(name, {}).items():
            want = list(LB.blank_vector())
            want[k] = state
            got = stub_labeler(text, table)
            if got != tuple(want):
                raise SynthesisError(
                    f"class {name!r}: template {text!r} labels as "
                    f"{[(LB.CLASS_NAMES[i], x) for i, x in enumerate(got) if x != LB.BLANK]}, expected {state}")


def _draw_labels(spec: SyntheticSpec, rng) -> tuple:
    labs = []
    for k in range(LB.N_CLASSES):
        if k == LB.NO_FINDING:
            labs.append(LB.BLANK)
            continue
        labs.append(LB.STATES[rng.choice(4, p=np.asarray(spec.state_probs, dtype=float))])
    if not any(x in (LB.POSITIVE, LB.UNCERTAIN) for x in labs) and rng.random() < spec.p_no_finding:
        labs[LB.NO_FINDING] = LB.POSITIVE
    return tuple(labs)


def compose_report(labels, templates=TEMPLATES) -> str:
    sentences = []
    for k, state in enumerate(labels):
        if state == LB.BLANK:
            continue
        name = LB.CLASS_NAMES[k]
        try:
            sentences.append(templates[name][state])
        except KeyError:
            raise SynthesisError(f"class {name!r} has no template for state {state!r}") from None
    if not sentences:
        sentences = [BOILERPLATE]
    return ". ".join(sentences) + "."


def signatures(spec: SyntheticSpec, seed: int) -> np.ndarray:
    rng = derive(seed, "synth", "signatures")
    sig = rng.normal(size=(LB.N_CLASSES, spec.d_in))
    return spec.signature_scale * sig / np.linalg.norm(sig, axis=1, keepdims=True)


def synth_samples(spec: SyntheticSpec, seed: int, table=None) -> list:
    """Generate samples as dicts: id, image (n_patches x d_in), report, labels, saliency."""
    check_templates(spec.templates, table)
    sig = signatures(spec, seed)
    out = []
    for i in range(spec.n_samples):
        rng = derive(seed, "synth", "sample", i)
        labs = _draw_labels(spec, rng)
        report = compose_report(labs, spec.templates)
        back = label_report(report, table)
        if back != labs:
            bad = next(k for k in range(LB.N_CLASSES) if back[k] != labs[k])
            raise SynthesisError(f"sample {i}: class {LB.CLASS_NAMES[bad]!r} round-trips as "
                                 f"{back[bad]!r}, planted {labs[bad]!r}")
        image = rng.normal(0.0, spec.noise, (spec.n_patches, spec.d_in))
        sal = np.ones((LB.N_CLASSES, spec.n_patches))
        for k, state in enumerate(labs):
            if state in PLANT_SCALE:
                j = spec.patch_of(k)
                image[j] += PLANT_SCALE[state] * sig[k]
                sal[k] = spec.saliency_floor
                sal[k, j] = 1.0
        out.append({
            "id": f"s{i}",
            "image": image,
            "report": report,
            "labels": labs,
            "saliency": SaliencyMap(sal),
        })
    return out


def sample_to_row(s) -> dict:
    return {
        "id": s["id"],
        "image": np.asarray(s["image"]).reshape(-1).tolist(),
        "n_patches": int(np.shape(s["image"])[0]),
        "report": s["report"],
        "labels": list(s["labels"]),
        "saliency": s["saliency"].to_dict(),
    }


def synth_generate(spec: SyntheticSpec, seed: int, out_dir, table=None) -> str:
    """Write ``dataset.jsonl`` and ``saliency/<id>.json`` under ``out_dir``; return the dataset path."""
    samples = synth_samples(spec, seed, table)
    os.makedirs(os.path.join(out_dir, "saliency"), exist_ok=True)
    path = os.path.join(out_dir, "dataset.jsonl")
    write_jsonl(path, [sample_to_row(s) for s in samples])
    for s in samples:
        with open(os.path.join(out_dir, "saliency", f"{s['id']}.json"), "w") as fh:
            json.dump(s["saliency"].to_dict(), fh)
            fh.write("\n")
    return path
