"""Level-set primitives, CSG trees, background fields and distance fields."""
from .background import (BackgroundField, OutOfDomainError, PointNotFoundError,
                         build_background, load as load_background, save as save_background)
from .distance import NoZeroCrossingError, distance_field, extract_zero_set
from .locate import MeshLocator, find_point
from .primitives import (Box, Cylinder, Difference, HalfSpace, Intersection, LevelSet,
                         Parabola, Polygon, SexprError, Sphere, StepFunction, Union,
                         csg_step, eval_levelset, load_sexpr, parse_sexpr, to_sexpr)
from .shapes import builtin_shape

__all__ = [
    "BackgroundField", "Box", "Cylinder", "Difference", "HalfSpace", "Intersection",
    "LevelSet", "MeshLocator", "NoZeroCrossingError", "OutOfDomainError", "Parabola",
    "PointNotFoundError", "Polygon", "SexprError", "Sphere", "StepFunction", "Union",
    "build_background", "builtin_shape", "csg_step", "distance_field", "eval_levelset",
    "extract_zero_set", "find_point", "load_background", "load_sexpr", "parse_sexpr",
    "save_background", "to_sexpr",
]
