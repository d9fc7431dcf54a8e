"""Report and question templates over a SceneSpec, plus the rule-based answer oracle."""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from core.errors import InvalidInputError
from core.synth.scene import INTENSITIES, PLANES, SHAPES, SIZES, SceneObject, SceneSpec, octant_halves

TOPICS = ("plane", "phase", "organ", "abnormality", "location")
REPORT_TOPIC = "report"
CHOICE_LETTERS = ("a", "b", "c", "d")

INTENSITY_WORDS = {"low": "dim", "mid": "moderate", "high": "bright"}
HYPERINTENSE_WORD = "hyperintense"

REPORT_PROMPTS = (
    "write a report for this scan.",
    "describe the findings of this scan.",
    "generate a radiology report for this volume.",
    "summarize this scan in a report.",
)

PLANE_CHOICES = ("axial", "coronal", "sagittal", "oblique")
PHASE_CHOICES = ("dim", "moderate", "bright", "hyperintense")
ORGAN_CHOICES = tuple(f"{size} {shape}" for size in SIZES for shape in SHAPES)
ABNORMALITY_CHOICES = tuple(f"{word} {shape}" for word in ("hyperintense", "bright") for shape in SHAPES)


def location_words(octant: int) -> str:
    """e.g. octant 0 -> 'upper anterior left', octant 7 -> 'lower posterior right'."""
    depth, row, col = octant_halves(octant)
    return " ".join((
        ("upper", "lower")[depth],
        ("anterior", "posterior")[row],
        ("left", "right")[col],
    ))


def intensity_word(obj: SceneObject) -> str:
    return HYPERINTENSE_WORD if obj.hyperintense else INTENSITY_WORDS[obj.intensity]


def describe(obj: SceneObject) -> str:
    return f"{obj.size} {intensity_word(obj)} {obj.shape}"


def gen_report(scene: SceneSpec) -> str:
    """Whole-scan report listing every object in ascending octant order."""
    clauses = [f"a {describe(obj)} in the {location_words(obj.octant)} octant" for obj in scene.objects]
    if scene.abnormal:
        impression = f"abnormal {HYPERINTENSE_WORD} {scene.abnormal_object.shape}"
    else:
        impression = "no abnormality"
    return f"{scene.plane_tag} view. findings: {'; '.join(clauses)}. impression: {impression}."


@dataclass
class VQAItem:
    prompt: str
    answer: str
    choices: Optional[List[str]]
    target: Optional[int]


def _unique_description(scene: SceneSpec, index: int) -> bool:
    wanted = describe(scene.objects[index])
    return sum(describe(obj) == wanted for obj in scene.objects) == 1


def open_answer(scene: SceneSpec, topic: str, target: Optional[int]) -> str:
    """The free-text answer a topic question has for a scene."""
    if topic == "plane":
        return scene.plane_tag
    obj = scene.objects[target] if target is not None else None
    if topic == "phase":
        return intensity_word(obj)
    if topic == "organ":
        return f"{obj.size} {obj.shape}"
    if topic == "abnormality":
        return f"{HYPERINTENSE_WORD} {scene.abnormal_object.shape}"
    if topic == "location":
        return location_words(obj.octant)
    raise InvalidInputError(f"Unknown topic: {topic}")


def _question(scene: SceneSpec, topic: str, target: Optional[int]) -> str:
    if topic == "plane":
        return "question: in which plane is this scan viewed?"
    if topic == "abnormality":
        return "question: what is the abnormal finding in this scan?"
    obj = scene.objects[target]
    where = location_words(obj.octant)
    if topic == "phase":
        return f"question: what is the intensity of the {obj.size} {obj.shape} in the {where} octant?"
    if topic == "organ":
        return f"question: what object is in the {where} octant?"
    return f"question: in which octant is the {describe(obj)}?"


def _distractor_pool(scene: SceneSpec, topic: str, answer: str, rng: np.random.Generator) -> List[str]:
    if topic == "plane":
        pool = PLANE_CHOICES
    elif topic == "phase":
        pool = PHASE_CHOICES
    elif topic == "organ":
        pool = ORGAN_CHOICES
    elif topic == "abnormality":
        pool = ABNORMALITY_CHOICES
    else:
        pool = tuple(location_words(o) for o in range(8))
    others = [c for c in pool if c != answer]
    picked = rng.choice(len(others), size=len(CHOICE_LETTERS) - 1, replace=False)
    return [others[int(i)] for i in sorted(picked)]


def choice_label(index: int, choice: str) -> str:
    return f"{CHOICE_LETTERS[index]}. {choice}"


def gen_vqa(scene: SceneSpec, topic: str, seed: int, closed: bool = False) -> Optional[VQAItem]:
    """One question about a scene; None when the topic does not apply to it.

    Closed items list four labelled choices with the correct one placed by a
    seeded shuffle; the answer is then "<letter>. <choice>".
    """
    if topic not in TOPICS:
        raise InvalidInputError(f"Unknown topic: {topic}")
    rng = np.random.default_rng(seed)

    target: Optional[int] = None
    if topic == "abnormality":
        if not scene.abnormal:
            return None
    elif topic != "plane":
        candidates = [i for i in range(len(scene.objects)) if topic != "location" or _unique_description(scene, i)]
        if not candidates:
            return None
        target = candidates[int(rng.integers(len(candidates)))]

    prompt = _question(scene, topic, target)
    answer = open_answer(scene, topic, target)
    if not closed:
        return VQAItem(prompt, answer, None, target)

    choices = [answer] + _distractor_pool(scene, topic, answer, rng)
    order = rng.permutation(len(choices))
    choices = [choices[int(i)] for i in order]
    listing = " ".join(choice_label(i, c) for i, c in enumerate(choices))
    correct = choices.index(answer)
    return VQAItem(f"{prompt} choices: {listing}", choice_label(correct, answer), choices, target)


def oracle_answer(
    scene: SceneSpec,
    task: str,
    topic: str,
    target: Optional[int] = None,
    choices: Optional[Sequence[str]] = None
) -> str:
    """Recompute a sample's answer from its scene alone."""
    if task == "MRG":
        return gen_report(scene)
    answer = open_answer(scene, topic, target)
    if choices:
        return choice_label(list(choices).index(answer), answer)
    return answer


def vocabulary_texts() -> Iterator[str]:
    """Texts that together contain every word any template can emit."""
    yield from REPORT_PROMPTS
    yield "view. findings: a in the octant; impression: abnormal no abnormality."
    yield " ".join(PLANES + PLANE_CHOICES + SHAPES + SIZES + PHASE_CHOICES)
    yield " ".join(INTENSITY_WORDS[i] for i in INTENSITIES)
    yield " ".join(location_words(o) for o in range(8))
    yield "question: in which plane is this scan viewed?"
    yield "question: what is the abnormal finding in this scan?"
    yield "question: what is the intensity of the in the octant?"
    yield "question: what object is in the octant?"
    yield "question: in which octant is the?"
    yield "choices: " + " ".join(f"{letter}." for letter in CHOICE_LETTERS)
