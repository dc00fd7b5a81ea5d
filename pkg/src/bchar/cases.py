"""Built-in advection problems with their reference solutions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from bchar.errors import ConfigError
from bchar.flow import VelocityField
from bchar.mesh import Domain, Mesh, build_mesh

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CaseSpec:
    name: str
    dim: int
    velocity: VelocityField
    initial: Fn
    final_time: float
    reference: str  # "exact" | "benchmark" | "self"
    exact: Optional[Fn] = None
    porosity: float = 1.0
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)
    default_dims: tuple = (16, 16)
    default_dt: float = 0.8
    periodic: tuple = ()
    boundary: str = "closed"  # "closed" | "ghost"
    exterior_value: float = 0.0
    projection_samples: Optional[int] = None  # initial-data samples per cell axis
    estimate_radii: Optional[bool] = None  # default for SchemeConfig.estimate_radii
    description: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reference not in ("exact", "benchmark", "self"):
            raise ConfigError(f"unknown reference kind {self.reference!r}")
        if self.reference == "exact" and self.exact is None:
            raise ConfigError(f"case {self.name}: exact reference needs an analytic solution")
        if self.boundary not in ("closed", "ghost"):
            raise ConfigError(f"unknown boundary kind {self.boundary!r}")

    def domain(self, dims=None) -> Domain:
        return Domain(self.lo, self.hi, tuple(dims) if dims is not None else self.default_dims)

    def mesh(self, dims=None) -> Mesh:
        return build_mesh(self.domain(dims), self.porosity, self.periodic or None)


# -- velocity fields ---------------------------------------------------------

def translation(speed) -> VelocityField:
    speed = np.asarray(speed, dtype=float)
    return VelocityField(
        lambda x, t: np.broadcast_to(speed, x.shape).copy(), True, False, f"translation{tuple(speed)}"
    )


def rotation_stretch(vz: float | None = None) -> VelocityField:
    """((1-2y)(x-x^2), -(1-2x)(y-y^2)[, vz]): rotation about (1/2, 1/2) with stretching."""

    def ev(x, t):
        px, py = x[:, 0], x[:, 1]
        cols = [(1 - 2 * py) * (px - px * px), -(1 - 2 * px) * (py - py * py)]
        if vz is not None:
            cols.append(np.full_like(px, vz))
        return np.stack(cols, axis=1)

    return VelocityField(ev, True, False, "rotation_stretch")


def solid_rotation() -> VelocityField:
    """Rigid rotation (1/2 - y, x - 1/2), one revolution per 2 pi.

    The field crosses the faces of the unit square outside the inscribed
    disk, so cases using it need ghost layers.
    """

    def ev(x, t):
        return np.stack([0.5 - x[:, 1], x[:, 0] - 0.5], axis=1)

    return VelocityField(ev, True, False, "solid_rotation")


def deformation(period: float) -> VelocityField:
    def ev(x, t):
        s = np.cos(np.pi * t / period)
        px, py = x[:, 0], x[:, 1]
        return np.stack(
            [
                np.sin(np.pi * px) ** 2 * np.sin(2 * np.pi * py) * s,
                -np.sin(np.pi * py) ** 2 * np.sin(2 * np.pi * px) * s,
            ],
            axis=1,
        )

    return VelocityField(ev, True, True, "deformation")


FIELD_FAMILIES = {
    "translation": lambda p: translation(p["speed"]),
    "rotation_stretch": lambda p: rotation_stretch(p.get("vz")),
    "solid_rotation": lambda p: solid_rotation(),
    "deformation": lambda p: deformation(p["period"]),
}


# -- initial conditions ------------------------------------------------------

def box_indicator(lo, hi) -> Fn:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lambda x: np.all((x >= lo) & (x <= hi), axis=1).astype(float)


def disk_indicator(center, radius_sq, z_range=None) -> Fn:
    cx, cy = center

    def f(x):
        inside = (x[:, 0] - cx) ** 2 + (x[:, 1] - cy) ** 2 < radius_sq
        if z_range is not None:
            inside &= (x[:, 2] >= z_range[0]) & (x[:, 2] <= z_range[1])
        return inside.astype(float)

    return f


def gaussian(center, k=10.0) -> Fn:
    c = np.asarray(center, float)
    return lambda x: np.exp(-k * np.sum((x - c) ** 2, axis=1))


def solid_body_initial(x: np.ndarray) -> np.ndarray:
    """Cosine bump + cone + slotted cylinder (radius 0.15 each)."""
    px, py = x[:, 0], x[:, 1]
    rad = 0.15
    d_bump = np.hypot(px - 0.25, py - 0.5)
    bump = 0.25 * (1 + np.cos(np.pi * np.minimum(d_bump, rad) / rad))
    d_cone = np.hypot(px - 0.5, py - 0.25)
    cone = np.where(d_cone < rad, 1.0 - d_cone / rad, 0.0)
    d_cyl = np.hypot(px - 0.5, py - 0.75)
    slot = (px >= 0.475) & (px <= 0.525) & (py >= 0.6) & (py <= 0.85)
    cyl = ((d_cyl < rad) & ~slot).astype(float)
    return bump + cone + cyl


def cosine_bell(x: np.ndarray) -> np.ndarray:
    r = np.minimum(4.0 * np.hypot(x[:, 0] - 0.25, x[:, 1] - 0.5), 1.0)
    return 0.5 * (1 + np.cos(np.pi * r))


# -- catalogue ---------------------------------------------------------------

def _tc1_2d():
    return CaseSpec(
        "tc1_2d", 2, translation((1 / 16, 0.0)),
        box_indicator((1 / 16, 1 / 16), (5 / 16, 5 / 16)), 8.0, "exact",
        exact=box_indicator((9 / 16, 1 / 16), (13 / 16, 5 / 16)), periodic=(True, False),
        description="translation along x of a square block",
    )


def _tc2_2d():
    return CaseSpec(
        "tc2_2d", 2, rotation_stretch(), disk_indicator((0.25, 0.75), 1 / 64), 8.0, "benchmark",
        description="rotation with stretching of a disk indicator",
    )


def _tc3_2d():
    return CaseSpec(
        "tc3_2d", 2, rotation_stretch(), gaussian((0.25, 0.75)), 8.0, "benchmark",
        description="rotation with stretching of a Gaussian",
    )


def _solid_body_2d():
    return CaseSpec(
        "solid_body_2d", 2, solid_rotation(), solid_body_initial, 2 * np.pi, "self",
        default_dims=(128, 128), default_dt=2 * np.pi / 10, boundary="ghost",
        projection_samples=1,
        description="solid body rotation of bump, cone and slotted cylinder",
    )


def _deform_2d():
    return CaseSpec(
        "deform_2d", 2, deformation(5.0), cosine_bell, 5.0, "self",
        default_dims=(64, 64), default_dt=0.5, estimate_radii=True,
        description="reversing deformational flow of a cosine bell",
    )


_CUBE = dict(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), default_dims=(16, 16, 16))


def _tc1_3d():
    return CaseSpec(
        "tc1_3d", 3, translation((1 / 16, 0.0, 0.0)),
        box_indicator((1 / 16,) * 3, (5 / 16,) * 3), 8.0, "exact",
        exact=box_indicator((9 / 16, 1 / 16, 1 / 16), (13 / 16, 5 / 16, 5 / 16)), periodic=(True, False, False),
        description="translation along x of a cubic block", **_CUBE,
    )


def _tc2_3d():
    return CaseSpec(
        "tc2_3d", 3, rotation_stretch(1 / 16), disk_indicator((0.25, 0.75), 1 / 64, (1 / 16, 5 / 16)),
        8.0, "benchmark", periodic=(False, False, True),
        description="rotation with stretching and z drift of a cylinder", **_CUBE,
    )


def _tc3_3d():
    return CaseSpec(
        "tc3_3d", 3, rotation_stretch(1 / 16), gaussian((0.25, 0.75, 3 / 16)), 8.0, "benchmark",
        periodic=(False, False, True), description="rotation with stretching and z drift of a Gaussian", **_CUBE,
    )


_BUILTINS = {
    "tc1_2d": _tc1_2d,
    "tc2_2d": _tc2_2d,
    "tc3_2d": _tc3_2d,
    "solid_body_2d": _solid_body_2d,
    "deform_2d": _deform_2d,
    "tc1_3d": _tc1_3d,
    "tc2_3d": _tc2_3d,
    "tc3_3d": _tc3_3d,
}
CASE_NAMES = tuple(_BUILTINS)


def builtin_case(name: str) -> CaseSpec:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigError(f"unknown case {name!r}; valid names: {', '.join(CASE_NAMES)}") from None


def custom_case(
    family: str,
    params: dict,
    initial: str,
    initial_params: dict,
    final_time: float,
    dim: int = 2,
    name: str = "custom",
) -> CaseSpec:
    """Case assembled from a built-in field family and initial-condition family."""
    if family not in FIELD_FAMILIES:
        raise ConfigError(f"unknown velocity family {family!r}; valid: {', '.join(FIELD_FAMILIES)}")
    inits = {
        "box": lambda p: box_indicator(p["lo"], p["hi"]),
        "disk": lambda p: disk_indicator(p["center"], p["radius"] ** 2),
        "gaussian": lambda p: gaussian(p["center"], p.get("k", 10.0)),
        "cosine_bell": lambda p: cosine_bell,
        "solid_body": lambda p: solid_body_initial,
        "constant": lambda p: (lambda x: np.full(x.shape[0], float(p.get("value", 1.0)))),
    }
    if initial not in inits:
        raise ConfigError(f"unknown initial condition {initial!r}; valid: {', '.join(inits)}")
    try:
        vel = FIELD_FAMILIES[family](params)
        c0 = inits[initial](initial_params)
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc.args[0]!r} for custom case") from None
    return CaseSpec(
        name, dim, vel, c0, float(final_time), "self",
        lo=(0.0,) * dim, hi=(1.0,) * dim, default_dims=(16,) * dim, params=dict(params),
    )


def benchmark_reference(
    case: CaseSpec, mesh: Mesh, refine_levels: int = 2, euler_dt: float = 1e-3
) -> np.ndarray:
    """Fine-grid foot-point evaluation of the initial data, averaged onto ``mesh``.

    Fine-cell centers (``2**refine_levels`` per coarse cell per axis) are
    traced from the final time back to 0 with explicit Euler steps on
    dX/dt = u / phi.
    """
    f = 2**refine_levels
    fine = build_mesh(Domain(mesh.domain.lo, mesh.domain.hi, tuple(n * f for n in mesh.dims)), 1.0)
    x = np.array(fine.centers)
    n_steps = int(round(case.final_time / euler_dt))
    h = case.final_time / n_steps if n_steps else 0.0
    t = case.final_time
    for _ in range(n_steps):
        x, _ = mesh.confine(x - h * case.velocity(x, t) / mesh.porosity_at(x)[:, None])
        t -= h
    values = case.initial(x)
    coarse = mesh.ravel(fine.axis_index(fine.centers) // f)
    return np.bincount(coarse, weights=values, minlength=mesh.n_cells) / f**mesh.dim
