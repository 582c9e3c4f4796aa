"""Reading and writing meshes: native text format, VTK legacy, CSV.

Native format (version 1)::

    morphfit-mesh v1 <dim> <geom> <order> <n_nodes> <n_elems>
    <x> <y> [<z>]                  one line per node
    <id_0> ... <id_Np-1>           one line per element
    boundary <n_bdr>
    <elem> <local_face> <attr>     one line per boundary face
    material                       optional section
    <eta>                          one line per element

Coordinates are written with ``repr`` so a round trip is exact.
"""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .mesh import HighOrderMesh, min_detA
from .refelem import GEOM_DIM, GEOMETRIES, reference_element

MAGIC = "morphfit-mesh"
VERSION = "v1"


class MeshFormatError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class UnsupportedVersionError(MeshFormatError):
    pass


def dumps(mesh: HighOrderMesh) -> str:
    out = [f"{MAGIC} {VERSION} {mesh.dim} {mesh.geom} {mesh.order} "
           f"{mesh.num_nodes} {mesh.num_elems}"]
    out += [" ".join(repr(float(v)) for v in row) for row in mesh.coords]
    out += [" ".join(str(int(i)) for i in row) for row in mesh.elems]
    out.append(f"boundary {len(mesh.bdr_faces)}")
    out += [f"{e} {f} {a}" for e, f, a in mesh.bdr_faces]
    if mesh.material is not None:
        out.append("material")
        out += [str(int(m)) for m in mesh.material]
    return "\n".join(out) + "\n"


def save(mesh: HighOrderMesh, path) -> None:
    Path(path).write_text(dumps(mesh))


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what):
        while self.pos < len(self.lines):
            self.pos += 1
            s = self.lines[self.pos - 1].strip()
            if s and not s.startswith("#"):
                return s.split()
        raise MeshFormatError(f"unexpected end of file while reading {what}", self.pos + 1)

    def at_end(self):
        return all(not s.strip() or s.strip().startswith("#") for s in self.lines[self.pos:])


def _numbers(tokens, kind, count, lines, what):
    if len(tokens) != count:
        raise MeshFormatError(f"expected {count} values for {what}, got {len(tokens)}", lines.pos)
    try:
        return [kind(t) for t in tokens]
    except ValueError as exc:
        raise MeshFormatError(f"bad {what}: {exc}", lines.pos) from None


def loads(text: str) -> HighOrderMesh:
    """Parse the native format.  Invalid (inverted) meshes are accepted but
    tagged with ``mesh.tags['invalid'] = True``."""
    lines = _Lines(text)
    head = lines.next("header")
    if head[0] != MAGIC:
        raise MeshFormatError(f"not a {MAGIC} file", lines.pos)
    if len(head) < 2 or head[1] != VERSION:
        ver = head[1] if len(head) > 1 else "?"
        raise UnsupportedVersionError(f"unsupported mesh format version {ver!r}", lines.pos)
    if len(head) != 7:
        raise MeshFormatError("malformed header", lines.pos)
    try:
        dim, geom, order, nn, ne = int(head[2]), head[3], int(head[4]), int(head[5]), int(head[6])
    except ValueError:
        raise MeshFormatError("malformed header", lines.pos) from None
    if geom not in GEOMETRIES or GEOM_DIM[geom] != dim:
        raise MeshFormatError(f"bad geometry {geom!r} for dimension {dim}", lines.pos)
    Np = reference_element(geom, order).num_nodes
    coords = np.array([_numbers(lines.next("node"), float, dim, lines, "node")
                       for _ in range(nn)]).reshape(nn, dim)
    elems = np.array([_numbers(lines.next("element"), int, Np, lines, "element")
                      for _ in range(ne)], dtype=np.int64).reshape(ne, Np)
    tok = lines.next("boundary section")
    if tok[0] != "boundary" or len(tok) != 2:
        raise MeshFormatError("expected 'boundary <n>'", lines.pos)
    nb = int(tok[1])
    bdr = np.array([_numbers(lines.next("boundary face"), int, 3, lines, "boundary face")
                    for _ in range(nb)], dtype=np.int64).reshape(nb, 3)
    material = None
    if not lines.at_end():
        tok = lines.next("material section")
        if tok != ["material"]:
            raise MeshFormatError(f"unexpected section {tok[0]!r}", lines.pos)
        material = np.array([_numbers(lines.next("material"), int, 1, lines, "material")[0]
                             for _ in range(ne)], dtype=np.int64)
        if not lines.at_end():
            raise MeshFormatError("trailing data after material section", lines.pos + 1)
    try:
        mesh = HighOrderMesh(geom, order, coords, elems, bdr, material)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None
    if ne and min_detA(mesh) <= 0:
        mesh.tags["invalid"] = True
    return mesh


def load(path) -> HighOrderMesh:
    return loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# visualization output

_VTK_TYPES = {"quad": 9, "tri": 5, "hex": 12, "tet": 10}


def _sub_cells(geom, r):
    """Reference sample points and linear sub-cells of a uniform subdivision."""
    d = GEOM_DIM[geom]
    if geom in ("quad", "hex"):
        idx = np.array(np.meshgrid(*[np.arange(r + 1)] * d, indexing="ij")).reshape(d, -1).T[:, ::-1]
        lin = {tuple(v): k for k, v in enumerate(idx)}
        corners = [(0, 0), (1, 0), (1, 1), (0, 1)] if d == 2 else \
            [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
        cells = []
        for base in np.array(np.meshgrid(*[np.arange(r)] * d, indexing="ij")).reshape(d, -1).T:
            cells.append([lin[tuple(base + np.array(c))] for c in corners])
        return idx / r, np.array(cells)
    # simplices: Kuhn subdivision of the lattice i_1 + ... + i_d <= r
    pts = [v for v in np.ndindex(*([r + 1] * d)) if sum(v) <= r]
    lin = {v: k for k, v in enumerate(pts)}
    cells = []
    for base in np.ndindex(*([r] * d)):
        for perm in itertools.permutations(range(d)):
            # walk in "ordered" coordinates s_k = sum_{a>=k} x_a then map back
            verts = []
            s = np.array(base)
            verts.append(s.copy())
            for a in perm:
                s = s.copy()
                s[a] += 1
                verts.append(s)
            xs = [_ordered_to_lattice(v) for v in verts]
            if all(x is not None and x in lin for x in xs):
                cells.append([lin[x] for x in xs])
    return np.array(pts, float) / r, np.array(cells)


def _ordered_to_lattice(s):
    # s_0 >= s_1 >= ... encodes a lattice point x with x_a = s_a - s_{a+1}
    s = list(s) + [0]
    x = tuple(s[a] - s[a + 1] for a in range(len(s) - 1))
    return x if min(x) >= 0 else None


def write_vtk(mesh: HighOrderMesh, path, subdiv: int | None = None, cell_data=None) -> None:
    """Write a linearized legacy VTK unstructured grid.

    Each element is sampled on a uniform ``subdiv``-level lattice (default:
    the element order) and emitted as linear sub-cells.  ``cell_data`` maps
    names to per-element arrays; ``material`` is added automatically.
    """
    r = mesh.order if subdiv is None else int(subdiv)
    pts_ref, sub = _sub_cells(mesh.geom, max(r, 1))
    vals, _, _ = mesh.ref.eval_basis(pts_ref)
    X = np.einsum("eia,qi->eqa", mesh.element_coords(), vals)
    nE, nq, d = X.shape
    P = X.reshape(-1, d)
    if d == 2:
        P = np.column_stack([P, np.zeros(len(P))])
    cells = (sub[None, :, :] + (np.arange(nE) * nq)[:, None, None]).reshape(-1, sub.shape[1])
    parent = np.repeat(np.arange(nE), len(sub))
    data = dict(cell_data or {})
    if mesh.material is not None:
        data.setdefault("material", mesh.material)
    data.setdefault("element", np.arange(nE))
    out = ["# vtk DataFile Version 3.0", f"morphfit {mesh.geom} p={mesh.order}", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {len(P)} double"]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in P.tolist()]
    nv = sub.shape[1]
    out.append(f"CELLS {len(cells)} {len(cells) * (nv + 1)}")
    out += [f"{nv} " + " ".join(map(str, c)) for c in cells.tolist()]
    out.append(f"CELL_TYPES {len(cells)}")
    out += [str(_VTK_TYPES[mesh.geom])] * len(cells)
    out.append(f"CELL_DATA {len(cells)}")
    for name, arr in data.items():
        arr = np.asarray(arr)[parent]
        kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
        out += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
        out += [repr(v) if kind == "double" else str(v) for v in arr.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


def write_nodes_csv(mesh: HighOrderMesh, path, node_data=None) -> None:
    """CSV dump of node positions (``id,x,y[,z]`` plus optional columns)."""
    names = ["id"] + ["x", "y", "z"][: mesh.dim]
    extra = dict(node_data or {})
    names += list(extra)
    rows = [",".join(names)]
    for i, row in enumerate(mesh.coords):
        vals = [str(i)] + [repr(float(v)) for v in row]
        vals += [repr(float(np.asarray(extra[k])[i])) for k in extra]
        rows.append(",".join(vals))
    Path(path).write_text("\n".join(rows) + "\n")
