"""
Planar robot model definitions: loading, validation and saving of `.model` files.

A `.model` file is a flat JSON document. Every per-joint array has one entry per
link (each link is driven by exactly one revolute joint at its proximal end).
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

from src.config import settings
from src.exceptions import ModelValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_LINKS = 8


# ------------------------------------------------------------------
# Data models
# ------------------------------------------------------------------
@dataclass(frozen=True)
class BaseBody:
    """Torso: a box whose centre of mass is the base origin"""
    mass: float
    inertia: float
    half_length: float
    half_height: float


@dataclass(frozen=True)
class Link:
    """
    A rigid link hanging from its proximal joint.

    In its own frame the link points along -z: the tip sits at (0, -length) and
    the centre of mass at (0, -com * length). `offset` is the joint position in
    the parent frame (torso frame when parent == -1).
    """
    name: str
    parent: int
    offset: Tuple[float, float]
    mass: float
    length: float
    inertia: float
    damping: float
    com: float = 0.5
    heel: float = 0.0  # sole extension behind the joint (feet only)


@dataclass(frozen=True)
class ContactParams:
    k_n: float  # normal stiffness, N/m
    c_n: float  # normal damping, N·s/m
    k_t: float  # tangential viscous coefficient, N·s/m
    mu: float   # Coulomb friction coefficient


@dataclass(frozen=True)
class RobotModel:
    """Immutable planar robot description"""
    name: str
    base: BaseBody
    links: Tuple[Link, ...]
    torque_limits: Tuple[float, ...]
    joint_limits: Tuple[Tuple[float, float], ...]
    nominal_pose: Tuple[float, ...]
    contact: ContactParams
    feet: Tuple[int, ...]
    nominal_height: float
    gravity: float = 9.81
    fixed_base: bool = False
    format_version: int = FORMAT_VERSION

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @property
    def n_feet(self) -> int:
        return len(self.feet)

    @cached_property
    def tau_max(self) -> np.ndarray:
        return np.asarray(self.torque_limits, dtype=float)

    @cached_property
    def q_lower(self) -> np.ndarray:
        return np.asarray([lo for lo, _ in self.joint_limits], dtype=float)

    @cached_property
    def q_upper(self) -> np.ndarray:
        return np.asarray([hi for _, hi in self.joint_limits], dtype=float)

    @cached_property
    def q_nom(self) -> np.ndarray:
        return np.asarray(self.nominal_pose, dtype=float)

    @cached_property
    def chains(self) -> Tuple[Tuple[int, ...], ...]:
        """For each link, the link indices from the torso down to it (inclusive)"""
        chains = []
        for i in range(self.n_joints):
            chain = [i]
            parent = self.links[i].parent
            while parent >= 0:
                chain.append(parent)
                parent = self.links[parent].parent
            chains.append(tuple(reversed(chain)))
        return tuple(chains)

    @cached_property
    def knee_links(self) -> Tuple[int, ...]:
        """Non-foot links whose tip is not the joint of a foot: tips can collide"""
        foot_parents = {self.links[f].parent for f in self.feet}
        return tuple(
            i for i in range(self.n_joints)
            if i not in self.feet and i not in foot_parents
        )

    @property
    def n_coords(self) -> int:
        """Number of generalized coordinates integrated by the simulator"""
        return self.n_joints if self.fixed_base else self.n_joints + 3

    def coord_index(self, joint: int) -> int:
        return joint if self.fixed_base else joint + 3

    @property
    def total_mass(self) -> float:
        return self.base.mass + sum(link.mass for link in self.links)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "gravity": self.gravity,
            "fixed_base": self.fixed_base,
            "base": {
                "mass": self.base.mass,
                "inertia": self.base.inertia,
                "half_length": self.base.half_length,
                "half_height": self.base.half_height,
            },
            "links": [
                {
                    "name": link.name,
                    "parent": link.parent,
                    "offset": list(link.offset),
                    "mass": link.mass,
                    "length": link.length,
                    "inertia": link.inertia,
                    "damping": link.damping,
                    "com": link.com,
                    "heel": link.heel,
                }
                for link in self.links
            ],
            "torque_limits": list(self.torque_limits),
            "joint_limits": [list(lim) for lim in self.joint_limits],
            "nominal_pose": list(self.nominal_pose),
            "contact": {
                "k_n": self.contact.k_n,
                "c_n": self.contact.c_n,
                "k_t": self.contact.k_t,
                "mu": self.contact.mu,
            },
            "feet": list(self.feet),
            "nominal_height": self.nominal_height,
        }


# ------------------------------------------------------------------
# Document schema
# ------------------------------------------------------------------
_DOCUMENT = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


def _invariant(message: str, at: str) -> PydanticCustomError:
    """Cross-field violation; `at` is the dotted path of the offending field"""
    return PydanticCustomError("model_invariant", message, {"at": at})


class BaseDocument(BaseModel):
    model_config = _DOCUMENT

    mass: float = Field(gt=0)
    inertia: float = Field(ge=0)  # > 0 unless the base is fixed
    half_length: float = Field(default=0.1, gt=0)
    half_height: float = Field(default=0.05, gt=0)


class LinkDocument(BaseModel):
    model_config = _DOCUMENT

    name: Optional[str] = None
    parent: int
    offset: Optional[Tuple[float, float]] = None  # None: tip of the parent link
    mass: float = Field(gt=0)
    length: float = Field(gt=0)
    inertia: float = Field(ge=0)
    damping: float = Field(default=0.0, ge=0)
    com: float = Field(default=0.5, gt=0, le=1)
    heel: float = Field(default=0.0, ge=0)


class ContactDocument(BaseModel):
    model_config = _DOCUMENT

    k_n: float = Field(gt=0)
    c_n: float = Field(ge=0)
    k_t: float = Field(ge=0)
    mu: float = Field(ge=0)


class ModelDocument(BaseModel):
    """Schema of a `.model` file"""
    model_config = _DOCUMENT

    format_version: int
    name: str
    gravity: float = Field(default=9.81, ge=0)
    fixed_base: bool = False
    base: BaseDocument
    links: List[LinkDocument] = Field(min_length=1, max_length=MAX_LINKS)
    torque_limits: List[Annotated[float, Field(gt=0)]]
    joint_limits: List[Tuple[float, float]]
    nominal_pose: List[float]
    contact: ContactDocument
    feet: List[int]
    nominal_height: float = Field(gt=0)

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, version: int) -> int:
        if version != FORMAT_VERSION:
            raise PydanticCustomError(
                "model_version", f"unsupported format_version {version} (expected {FORMAT_VERSION})"
            )
        return version

    @model_validator(mode="after")
    def _consistent(self) -> "ModelDocument":
        n = len(self.links)
        for i, link in enumerate(self.links):
            if not -1 <= link.parent < i:
                raise _invariant("must reference the torso (-1) or an earlier link", f"links[{i}].parent")
        if self.base.inertia == 0 and not self.fixed_base:
            raise _invariant("must be > 0 for a floating base", "base.inertia")
        for key in ("torque_limits", "joint_limits", "nominal_pose"):
            if len(getattr(self, key)) != n:
                raise _invariant(f"must list {n} values (one per joint)", key)
        for i, ((lo, hi), q) in enumerate(zip(self.joint_limits, self.nominal_pose)):
            if lo >= hi:
                raise _invariant("needs lo < hi", f"joint_limits[{i}]")
            if not lo <= q <= hi:
                raise _invariant(f"{q} lies outside joint_limits [{lo}, {hi}]", f"nominal_pose[{i}]")
        for i, foot in enumerate(self.feet):
            if not 0 <= foot < n:
                raise _invariant(f"{foot} is not a link index", f"feet[{i}]")
        if len(set(self.feet)) != len(self.feet):
            raise _invariant("lists a link twice", "feet")
        return self

    def to_model(self) -> RobotModel:
        links: List[Link] = []
        for index, raw in enumerate(self.links):
            offset = raw.offset
            if offset is None:
                offset = (0.0, -links[raw.parent].length) if raw.parent >= 0 else (0.0, 0.0)
            links.append(Link(
                name=raw.name or f"link{index}",
                parent=raw.parent,
                offset=(float(offset[0]), float(offset[1])),
                mass=raw.mass,
                length=raw.length,
                inertia=raw.inertia,
                damping=raw.damping,
                com=raw.com,
                heel=raw.heel,
            ))
        return RobotModel(
            name=self.name,
            base=BaseBody(**self.base.model_dump()),
            links=tuple(links),
            torque_limits=tuple(self.torque_limits),
            joint_limits=tuple((float(lo), float(hi)) for lo, hi in self.joint_limits),
            nominal_pose=tuple(self.nominal_pose),
            contact=ContactParams(**self.contact.model_dump()),
            feet=tuple(self.feet),
            nominal_height=self.nominal_height,
            gravity=self.gravity,
            fixed_base=self.fixed_base,
            format_version=self.format_version,
        )


def _field_path(error: Dict[str, Any]) -> str:
    """('links', 0, 'mass') -> 'links[0].mass'; cross-field errors carry their path in ctx"""
    path = ""
    for part in error["loc"]:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path + (error.get("ctx") or {}).get("at", "")


def model_from_dict(data: Dict[str, Any]) -> RobotModel:
    """
    Build and validate a RobotModel from its document form.

    Raises:
        ModelValidationError: naming the first missing or invalid field
    """
    try:
        document = ModelDocument.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        path = _field_path(error)
        if not path:
            raise ModelValidationError(f"invalid model document: {error['msg']}") from None
        raise ModelValidationError(f"field '{path}': {error['msg']}", field=path) from None
    return document.to_model()


# ------------------------------------------------------------------
# File I/O
# ------------------------------------------------------------------
def load_model(path: Union[str, Path]) -> RobotModel:
    """
    Load and validate a `.model` file.

    Args:
        path: Path to the model file, or the name of a bundled model

    Returns:
        Validated RobotModel
    """
    path = Path(path)
    if not path.exists() and path.suffix == "" and (settings.bundled_robot_dir / f"{path}.model").exists():
        path = settings.bundled_robot_dir / f"{path}.model"

    if not path.exists():
        raise ModelValidationError(f"model file not found: {path}", field=None)

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"{path}: not a valid model document ({e})") from e

    model = model_from_dict(data)
    logger.info(f"Loaded robot model '{model.name}' ({model.n_joints} joints) from {path}")
    return model


def save_model(model: RobotModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def bundled_model_path(name: str) -> Path:
    path = settings.bundled_robot_dir / f"{name}.model"
    if not path.exists():
        raise ModelValidationError(f"no bundled model named '{name}'")
    return path


def list_bundled() -> List[str]:
    return sorted(p.stem for p in settings.bundled_robot_dir.iterdir() if p.suffix == ".model")
