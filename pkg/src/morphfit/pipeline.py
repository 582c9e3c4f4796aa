"""Preparation steps that turn a mesh and a level set into a fitting problem.

The steps run in a fixed order: mark elements, relabel, split, trim, and
then select the fit nodes.  The command line and the acceptance runs both
go through :func:`prepare_fit`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import (interface_face_counts, mark_integral, mark_sign_at_max, relabel,
                      select_fit_nodes, split_elements, trim)
from .mesh import HighOrderMesh

MARKINGS = {"integral": mark_integral, "max": mark_sign_at_max}


@dataclass
class FitSetup:
    """Mesh and node set ready for ``newton_fit``.

    Attributes
    ----------
    mesh : prepared mesh, with ``material`` set to the final indicators
    nodes : fit node ids
    eta_marked : indicators straight from the marking rule (original mesh)
    flipped : number of labels changed by the relabeling passes
    split_requests : elements that still had several interface faces
    max_interface_faces : largest per-element interface face count on the
        prepared mesh (before trimming)
    """

    mesh: HighOrderMesh
    nodes: np.ndarray
    eta_marked: np.ndarray
    flipped: int
    split_requests: np.ndarray
    max_interface_faces: int


def prepare_fit(mesh: HighOrderMesh, ls, mode: str = "interface", marking: str = "integral",
                do_relabel: bool = True, split: bool = True, trim_keep=None, groups=None,
                attrs=None) -> FitSetup:
    """Mark, relabel, split and trim ``mesh``, then select the fit nodes.

    Parameters
    ----------
    mesh : input mesh (not modified)
    ls : level set used for marking
    mode : ``interface`` or ``boundary`` node selection
    marking : ``integral`` or ``max``
    do_relabel : run the two-pass relabeling
    split : split the elements the relabeling could not fix (2D only;
        other geometries keep their requests unsplit)
    trim_keep : keep only elements with this indicator (``None`` keeps all)
    groups : element grouping passed to the marking rule (e.g. ``"cell"``)
    attrs : boundary attributes selected in boundary mode (default all)

    Raises
    ------
    EmptyFitSetError
        If no node qualifies for fitting.
    """
    if marking not in MARKINGS:
        raise ValueError(f"unknown marking {marking!r}; choose from {sorted(MARKINGS)}")
    eta0 = MARKINGS[marking](mesh, ls, groups=groups)
    eta, requests = relabel(mesh, eta0) if do_relabel else (eta0, np.flatnonzero(
        interface_face_counts(mesh, eta0) > 1))
    flipped = int(np.sum(eta != eta0))
    if split and len(requests) and mesh.geom in ("quad", "tri"):
        out = split_elements(mesh, requests, eta)
    else:
        out = mesh.copy()
        out.material = eta.copy()
    max_nm = int(interface_face_counts(out, out.material).max()) if out.num_elems else 0
    if trim_keep is not None:
        out = trim(out, out.material, trim_keep)
    nodes = select_fit_nodes(out, mode, out.material, attrs)
    return FitSetup(out, nodes, eta0, flipped, requests, max_nm)
