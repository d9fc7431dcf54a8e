"""Procedural scenes: a few spheres and boxes placed in the octants of a volume."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from core.errors import InvalidInputError

SHAPES = ("sphere", "box")
INTENSITIES = ("low", "mid", "high")
SIZES = ("small", "large")
PLANES = ("axial", "coronal", "sagittal")

INTENSITY_VALUES = {"low": 0.35, "mid": 0.6, "high": 0.85}
HYPERINTENSE_VALUE = 1.0
# Sphere radius / box half-extent in voxels
SIZE_EXTENT = {"small": 2, "large": 3}
# Volume axis blurred for each plane tag
PLANE_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}
BLUR_KERNEL = (0.25, 0.5, 0.25)
BLUR_PASSES = 2


def octant_halves(octant: int) -> Tuple[int, int, int]:
    """(depth, row, column) half of an octant: bit 2 depth, bit 1 row, bit 0 column."""
    if not 0 <= octant <= 7:
        raise InvalidInputError(f"Octant must lie in 0..7, got {octant}")
    return (octant >> 2) & 1, (octant >> 1) & 1, octant & 1


def octant_center(octant: int, shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
    """Integer voxel center of an octant, e.g. depth 3 / 9 and rows 16 / 48 for 12x64x64."""
    return tuple(((2 * half + 1) * dim) // 4 for half, dim in zip(octant_halves(octant), shape))  # type: ignore[return-value]


@dataclass(frozen=True)
class SceneObject:
    shape: str
    octant: int
    intensity: str
    size: str
    hyperintense: bool = False

    @property
    def value(self) -> float:
        return HYPERINTENSE_VALUE if self.hyperintense else INTENSITY_VALUES[self.intensity]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": self.shape,
            "octant": self.octant,
            "intensity": self.intensity,
            "size": self.size,
            "hyperintense": self.hyperintense,
        }


@dataclass(frozen=True)
class SceneSpec:
    """Object inventory of one synthetic scan.

    Objects are kept in ascending octant order, which is also the order the
    report enumerates them in.
    """

    objects: Tuple[SceneObject, ...] = field(default_factory=tuple)
    plane_tag: str = "axial"

    @property
    def abnormal(self) -> bool:
        return any(obj.hyperintense for obj in self.objects)

    @property
    def abnormal_object(self) -> SceneObject:
        for obj in self.objects:
            if obj.hyperintense:
                return obj
        raise InvalidInputError("Scene has no abnormal object")

    def key(self) -> Tuple:
        """Hashable identity used for train/test overlap checks."""
        return (self.plane_tag, tuple((o.shape, o.octant, o.intensity, o.size, o.hyperintense) for o in self.objects))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plane_tag": self.plane_tag,
            "abnormal": self.abnormal,
            "objects": [obj.to_dict() for obj in self.objects],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        objects = tuple(
            SceneObject(
                shape=o["shape"],
                octant=int(o["octant"]),
                intensity=o["intensity"],
                size=o["size"],
                hyperintense=bool(o.get("hyperintense", False)),
            )
            for o in data["objects"]
        )
        return cls(objects=objects, plane_tag=data["plane_tag"])


def gen_scene(seed: int, abnormal_rate: float = 0.3) -> SceneSpec:
    """Deterministic scene with 1-3 objects in distinct octants."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 4))
    octants = sorted(int(o) for o in rng.choice(8, size=count, replace=False))
    objects: List[SceneObject] = [
        SceneObject(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            octant=octant,
            intensity=INTENSITIES[int(rng.integers(len(INTENSITIES)))],
            size=SIZES[int(rng.integers(len(SIZES)))],
        )
        for octant in octants
    ]
    plane = PLANES[int(rng.integers(len(PLANES)))]
    if rng.random() < abnormal_rate:
        flagged = int(rng.integers(count))
        obj = objects[flagged]
        objects[flagged] = SceneObject(obj.shape, obj.octant, obj.intensity, obj.size, hyperintense=True)
    return SceneSpec(objects=tuple(objects), plane_tag=plane)


def object_mask(obj: SceneObject, shape: Tuple[int, int, int]) -> np.ndarray:
    center = octant_center(obj.octant, shape)
    extent = SIZE_EXTENT[obj.size]
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    offsets = [g - c for g, c in zip(grids, center)]
    if obj.shape == "sphere":
        return (offsets[0] ** 2 + offsets[1] ** 2 + offsets[2] ** 2) <= extent ** 2
    return (np.abs(offsets[0]) <= extent) & (np.abs(offsets[1]) <= extent) & (np.abs(offsets[2]) <= extent)


def _blur(volume: np.ndarray, axis: int) -> np.ndarray:
    for _ in range(BLUR_PASSES):
        padded = np.pad(volume, [(1, 1) if a == axis else (0, 0) for a in range(3)], mode="edge")
        length = volume.shape[axis]
        volume = sum(
            weight * np.take(padded, np.arange(offset, offset + length), axis=axis)
            for offset, weight in enumerate(BLUR_KERNEL)
        )
    return volume


def render(
    scene: SceneSpec,
    shape: Tuple[int, int, int] = (12, 64, 64),
    noise_sigma: float = 0.02,
    seed: int = 0
) -> np.ndarray:
    """Rasterize a scene to a float32 [D, H, W] volume in [0, 1]."""
    volume = np.zeros(shape, dtype=np.float64)
    for obj in scene.objects:
        mask = object_mask(obj, shape)
        volume[mask] = np.maximum(volume[mask], obj.value)
    volume = _blur(volume, PLANE_AXIS[scene.plane_tag])
    if noise_sigma > 0:
        volume = volume + np.random.default_rng(seed).normal(0.0, noise_sigma, size=shape)
    return np.clip(volume, 0.0, 1.0).astype(np.float32)
