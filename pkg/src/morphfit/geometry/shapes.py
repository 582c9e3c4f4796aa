"""Builtin level sets used by the command line and the acceptance runs."""
from __future__ import annotations

from .primitives import Box, Cylinder, Difference, Intersection, LevelSet, Sphere

CENTER_2D = (0.5, 0.5)
CENTER_3D = (0.5, 0.5, 0.5)


def circle(center=CENTER_2D, radius=0.3) -> LevelSet:
    return Sphere(center, radius)


def sphere(center=CENTER_3D, radius=0.3) -> LevelSet:
    return Sphere(center, radius)


def csg2d() -> LevelSet:
    """Square of side 0.5 intersected with a circle of radius 0.3 (both
    centered in the unit square), minus two half-strips of half-width 0.1
    entering from the left and right."""
    body = Intersection(Box(CENTER_2D, (0.25, 0.25)), Sphere(CENTER_2D, 0.3))
    right = Box((0.8, 0.5), (0.2, 0.1))
    left = Box((0.2, 0.5), (0.2, 0.1))
    return Difference(body, right, left)


def csg3d() -> LevelSet:
    """Cube of side 0.5 intersected with a sphere of radius 0.3 (both
    centered in the unit cube), minus three axis-aligned cylinders of
    radius 0.15 and length 0.5 through the center."""
    body = Intersection(Box(CENTER_3D, (0.25,) * 3), Sphere(CENTER_3D, 0.3))
    cyl = [Cylinder(CENTER_3D, axis, 0.15, 0.5) for axis in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    return Difference(body, *cyl)


BUILTIN = {"circle": circle, "sphere": sphere, "csg2d": csg2d, "csg3d": csg3d}


def builtin_shape(name: str) -> LevelSet:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown builtin shape {name!r}; choose from {sorted(BUILTIN)}") from None
