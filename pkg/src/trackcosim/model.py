"""Track model ingestion, mass lumping, massless-dof condensation and rail-line lookup.

The FE side hands over global mass, damping and stiffness matrices in
coordinate format plus two small CSV tables describing the rail line.  This
module turns that export into an immutable :class:`TrackModel` suited for a
matrix-free explicit solver:

* the consistent mass matrix is lumped by row sums (rows are summed over
  columns of the same dof family, so translations and rotations never mix);
* blocked dofs are dropped;
* unblocked dofs that end up with zero lumped mass are removed by static
  (Guyan) condensation;
* the condensed global matrices are sliced back into per-element 4x4 blocks
  over ``(w_a, theta_a, w_b, theta_b)``.  Each global entry is owned by the
  lowest-indexed element whose dof set contains both of its dofs, so the
  shared-node terms go to the upstream element.  Whatever no element can hold
  (fill-in from condensation, dofs off the rail line) lands in a sparse
  ``extra`` block.

All quantities are SI.  Vertical displacements are positive downwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import FormatError, ModelError, SingularCondensationError

KIND_OTHER = 0
KIND_TRANSLATION = 1
KIND_ROTATION = 2

NODE_COLUMNS = ("node_id", "s", "dof_w", "dof_theta", "blocked_w", "blocked_theta")
ELEMENT_COLUMNS = ("element_id", "node_a", "node_b")
SUPPORT_COLUMNS = ("dof", "k", "c", "gap")

SYMMETRY_RTOL = 1e-10


class Triplets(NamedTuple):
    """Coordinate-format entries with 0-based indices (duplicates allowed)."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def empty(cls) -> "Triplets":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_matrix(cls, matrix) -> "Triplets":
        coo = sp.coo_matrix(matrix)
        coo.sum_duplicates()
        return cls(coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.astype(float))

    def __len__(self) -> int:
        return len(self.vals)

    def to_csr(self, n: int) -> sp.csr_matrix:
        """Assemble into an ``n x n`` CSR matrix; duplicate entries are summed."""
        return sp.csr_matrix(sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(n, n)))

    def as_set(self) -> set[tuple[int, int, float]]:
        return {(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.vals)}


@dataclass(frozen=True)
class Node:
    node_id: int
    s: float
    dof_w: int = -1
    dof_theta: int = -1
    blocked_w: bool = False
    blocked_theta: bool = False


@dataclass(frozen=True)
class Element:
    element_id: int
    node_a: int
    node_b: int


@dataclass(frozen=True)
class SupportElement:
    """Spring-damper between a vertical dof and the ground, optionally with a gap.

    With ``gap > 0`` the element is unilateral: it carries no force until the
    downward deflection reaches the gap.  ``gap == 0`` is a plain (bilateral)
    linear support.
    """

    dof: int
    k: float
    c: float = 0.0
    gap: float = 0.0

    def __post_init__(self):
        if self.k < 0 or self.c < 0 or self.gap < 0:
            raise ModelError(f"support on dof {self.dof}: k, c and gap must be >= 0")


@dataclass
class RawModel:
    """A model exactly as exported by the FE code (0-based dof indices)."""

    n_dofs: int
    mass: Triplets
    damping: Triplets
    stiffness: Triplets
    nodes: list[Node]
    elements: list[Element]
    supports: list[SupportElement] = field(default_factory=list)

    def mass_matrix(self) -> sp.csr_matrix:
        return self.mass.to_csr(self.n_dofs)

    def damping_matrix(self) -> sp.csr_matrix:
        return self.damping.to_csr(self.n_dofs)

    def stiffness_matrix(self) -> sp.csr_matrix:
        return self.stiffness.to_csr(self.n_dofs)

    def blocked_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        for node in self.nodes:
            if node.blocked_w and node.dof_w >= 0:
                mask[node.dof_w] = True
            if node.blocked_theta and node.dof_theta >= 0:
                mask[node.dof_theta] = True
        return mask

    def dof_kinds(self) -> np.ndarray:
        kinds = np.full(self.n_dofs, KIND_OTHER, dtype=np.int8)
        for node in self.nodes:
            if node.dof_w >= 0:
                kinds[node.dof_w] = KIND_TRANSLATION
            if node.dof_theta >= 0:
                kinds[node.dof_theta] = KIND_ROTATION
        return kinds

    def check(self) -> None:
        """Validate the structural invariants of the export; raise :class:`ModelError`."""
        for name, trip in (("mass", self.mass), ("stiffness", self.stiffness)):
            mat = trip.to_csr(self.n_dofs)
            scale = abs(mat).max() if mat.nnz else 0.0
            asym = abs(mat - mat.T).max() if mat.nnz else 0.0
            if asym > SYMMETRY_RTOL * scale:
                raise ModelError(f"{name} matrix is not symmetric (max |A - A^T| = {asym:.3e})")

        blocked = self.blocked_mask()
        diag = self.stiffness_matrix().diagonal()
        for sup in self.supports:
            if not 0 <= sup.dof < self.n_dofs:
                raise ModelError(f"support dof {sup.dof} out of range")
            diag[sup.dof] += sup.k
        bad = np.flatnonzero(~blocked & (diag <= 0.0))
        if bad.size:
            raise ModelError(f"non-positive diagonal stiffness on unblocked dofs {bad.tolist()}")

        build_rail_line(self)


# --------------------------------------------------------------------------
# File readers / writers
# --------------------------------------------------------------------------


def read_coordinate_matrix(path) -> tuple[int, Triplets]:
    """Read a MatrixMarket-style ``coordinate real general|symmetric`` file.

    Returns ``(n, triplets)`` with 0-based indices.  Symmetric storage is
    expanded to the full set of entries.
    """
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")

    header = lines[0].split()
    if (
        len(header) < 5
        or header[0].lower() != "%%matrixmarket"
        or header[1].lower() != "matrix"
        or header[2].lower() != "coordinate"
        or header[3].lower() != "real"
        or header[4].lower() not in ("general", "symmetric")
    ):
        raise FormatError(f"{path}:1: expected '%%MatrixMarket matrix coordinate real general|symmetric'")
    symmetric = header[4].lower() == "symmetric"

    body = [(no, ln) for no, ln in enumerate(lines[1:], start=2) if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise FormatError(f"{path}: missing size line")
    size_no, size_line = body[0]
    try:
        n_rows, n_cols, nnz = (int(tok) for tok in size_line.split())
    except ValueError:
        raise FormatError(f"{path}:{size_no}: malformed size line {size_line!r}") from None
    if n_rows != n_cols:
        raise FormatError(f"{path}:{size_no}: matrix must be square, got {n_rows}x{n_cols}")
    if len(body) - 1 != nnz:
        raise FormatError(f"{path}: header announces {nnz} entries, found {len(body) - 1}")

    rows, cols, vals = [], [], []
    for no, ln in body[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{no}: expected 'row col value', got {ln!r}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"{path}:{no}: malformed entry {ln!r}") from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise FormatError(f"{path}:{no}: index ({i},{j}) out of range for n={n_rows}")
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if symmetric and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(v)

    return n_rows, Triplets(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals, dtype=float))


def write_coordinate_matrix(path, matrix, symmetric: bool | None = None) -> None:
    """Write a square sparse matrix; symmetric storage is used when exact."""
    mat = sp.csr_matrix(matrix)
    if symmetric is None:
        symmetric = (mat != mat.T).nnz == 0
    coo = sp.tril(mat).tocoo() if symmetric else mat.tocoo()
    order = np.lexsort((coo.row, coo.col))
    kind = "symmetric" if symmetric else "general"
    with Path(path).open("w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        fh.write(f"{mat.shape[0]} {mat.shape[1]} {coo.nnz}\n")
        for k in order:
            fh.write(f"{coo.row[k] + 1} {coo.col[k] + 1} {coo.data[k]:.17g}\n")


def _read_csv(path, required: Sequence[str], optional: Sequence[str] = ()) -> list[dict[str, str]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {missing}; header is {header}")
        reader.fieldnames = header
        rows = []
        for row in reader:
            rows.append({k: (v.strip() if v is not None else "") for k, v in row.items() if k in required or k in optional})
    return rows


def read_node_table(path) -> list[Node]:
    rows = _read_csv(path, ("node_id", "s", "dof_w", "blocked_w"), ("dof_theta", "blocked_theta"))
    nodes = []
    for lineno, row in enumerate(rows, start=2):
        try:
            nodes.append(
                Node(
                    node_id=int(row["node_id"]),
                    s=float(row["s"]),
                    dof_w=int(row["dof_w"]),
                    dof_theta=int(row.get("dof_theta") or -1),
                    blocked_w=bool(int(row["blocked_w"])),
                    blocked_theta=bool(int(row.get("blocked_theta") or 0)),
                )
            )
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed node row {row}") from None
    return nodes


def read_element_table(path) -> list[Element]:
    rows = _read_csv(path, ELEMENT_COLUMNS)
    try:
        return [Element(int(r["element_id"]), int(r["node_a"]), int(r["node_b"])) for r in rows]
    except ValueError:
        raise FormatError(f"{path}: malformed element row") from None


def read_supports(path) -> list[SupportElement]:
    rows = _read_csv(path, SUPPORT_COLUMNS)
    try:
        return [SupportElement(int(r["dof"]), float(r["k"]), float(r["c"]), float(r["gap"])) for r in rows]
    except ValueError:
        raise FormatError(f"{path}: malformed support row") from None


def write_supports(path, supports: Sequence[SupportElement]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUPPORT_COLUMNS)
        for sup in supports:
            w.writerow([sup.dof, f"{sup.k:.17g}", f"{sup.c:.17g}", f"{sup.gap:.17g}"])


def load_model(
    matrix_files: Mapping[str, object],
    node_table_file,
    element_table_file,
    supports_file=None,
) -> RawModel:
    """Load an FE export.

    ``matrix_files`` maps ``"mass"``, ``"stiffness"`` and optionally
    ``"damping"`` to coordinate-format files.
    """
    sizes = {}
    trips = {}
    for key in ("mass", "stiffness", "damping"):
        if key not in matrix_files or matrix_files[key] is None:
            if key == "damping":
                continue
            raise FormatError(f"missing {key} matrix file")
        sizes[key], trips[key] = read_coordinate_matrix(matrix_files[key])
    n = sizes["stiffness"]
    for key, size in sizes.items():
        if size != n:
            raise FormatError(f"{key} matrix is {size}x{size}, stiffness is {n}x{n}")

    nodes = read_node_table(node_table_file)
    for node in nodes:
        for dof in (node.dof_w, node.dof_theta):
            if dof >= n or dof < -1:
                raise FormatError(f"node {node.node_id}: dof {dof} out of range for n_dofs={n}")
    elements = read_element_table(element_table_file)
    supports = read_supports(supports_file) if supports_file is not None else []
    for sup in supports:
        if not 0 <= sup.dof < n:
            raise FormatError(f"support dof {sup.dof} out of range for n_dofs={n}")

    raw = RawModel(
        n_dofs=n,
        mass=trips["mass"],
        damping=trips.get("damping", Triplets.empty()),
        stiffness=trips["stiffness"],
        nodes=nodes,
        elements=elements,
        supports=supports,
    )
    raw.check()
    return raw


def load_model_dir(directory) -> RawModel:
    """Load ``M.mtx``, ``K.mtx``, ``C.mtx``, ``nodes.csv``, ``elements.csv`` and ``supports.csv``."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"model directory not found: {d}")
    damping = d / "C.mtx"
    supports = d / "supports.csv"
    return load_model(
        {"mass": d / "M.mtx", "stiffness": d / "K.mtx", "damping": damping if damping.exists() else None},
        d / "nodes.csv",
        d / "elements.csv",
        supports if supports.exists() else None,
    )


# --------------------------------------------------------------------------
# Rail line
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RailLine:
    """Ordered chain of rail elements with cumulative arclength."""

    element_ids: np.ndarray
    node_ids: np.ndarray  # rail-order node ids, len = n_elements + 1
    node_s: np.ndarray
    lengths: np.ndarray

    @property
    def n_elements(self) -> int:
        return len(self.lengths)

    @property
    def s_min(self) -> float:
        return float(self.node_s[0])

    @property
    def s_max(self) -> float:
        return float(self.node_s[-1])

    def locate(self, s: float) -> tuple[int, float]:
        """Return ``(element index, xi)`` for arclength ``s``.

        At a shared node the downstream element is returned (``xi = 0``),
        except at the very end of the line.
        """
        if not (self.s_min <= s <= self.s_max):
            raise ValueError(f"s = {s} outside rail line [{self.s_min}, {self.s_max}]")
        e = int(np.searchsorted(self.node_s, s, side="right")) - 1
        e = min(e, self.n_elements - 1)
        xi = (s - self.node_s[e]) / self.lengths[e]
        return e, min(max(xi, 0.0), 1.0)


def build_rail_line(raw: RawModel) -> RailLine:
    if not raw.elements:
        raise ModelError("element table is empty")
    by_id = {}
    for node in raw.nodes:
        if node.node_id in by_id:
            raise ModelError(f"duplicate node id {node.node_id}")
        by_id[node.node_id] = node

    node_ids = []
    for k, el in enumerate(raw.elements):
        for nid in (el.node_a, el.node_b):
            if nid not in by_id:
                raise ModelError(f"element {el.element_id} references unknown node {nid}")
        if k == 0:
            node_ids.append(el.node_a)
        elif el.node_a != node_ids[-1]:
            raise ModelError(f"element {el.element_id} does not start at the end node of the previous element")
        node_ids.append(el.node_b)

    node_s = np.array([by_id[n].s for n in node_ids], dtype=float)
    lengths = np.diff(node_s)
    if np.any(lengths <= 0):
        bad = [raw.elements[i].element_id for i in np.flatnonzero(lengths <= 0)]
        raise ModelError(f"arclength not strictly increasing along elements {bad}")
    return RailLine(
        element_ids=np.array([el.element_id for el in raw.elements]),
        node_ids=np.array(node_ids),
        node_s=node_s,
        lengths=lengths,
    )


# --------------------------------------------------------------------------
# Lumping
# --------------------------------------------------------------------------


def lump_mass(raw: RawModel) -> np.ndarray:
    """Row-sum lumping of the consistent mass matrix, per dof family.

    A row with no entries is massless (it will be condensed).  A row with
    entries that sum to a negative or zero value on an unblocked dof means the
    lumping is nonphysical and the model is rejected.
    """
    M = raw.mass_matrix().tocoo()
    kinds = raw.dof_kinds()
    same = kinds[M.row] == kinds[M.col]
    rows, vals = M.row[same], M.data[same]
    lumped = np.bincount(rows, weights=vals, minlength=raw.n_dofs)
    magnitude = np.bincount(rows, weights=np.abs(vals), minlength=raw.n_dofs)

    free = ~raw.blocked_mask()
    nonphysical = free & ((lumped < 0.0) | ((magnitude > 0.0) & (lumped <= 1e-12 * magnitude)))
    if nonphysical.any():
        bad = np.flatnonzero(nonphysical).tolist()
        raise ModelError(f"row-sum lumping gives non-positive mass on unblocked dofs {bad}")
    lumped[(magnitude == 0.0)] = 0.0
    return lumped


# --------------------------------------------------------------------------
# Condensed model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CondensationMap:
    """Maps retained dofs back to the original numbering.

    ``recovery`` has shape ``(len(condensed), len(retained))`` and gives the
    condensed-dof displacements as ``recovery @ x_retained``.
    """

    n_original: int
    retained: np.ndarray
    condensed: np.ndarray
    recovery: np.ndarray

    @cached_property
    def expansion(self) -> sp.csr_matrix:
        """``(n_original, n_retained)`` map from retained to full displacements (blocked rows are zero)."""
        n = len(self.retained)
        eye = sp.coo_matrix((np.ones(n), (self.retained, np.arange(n))), shape=(self.n_original, n))
        if len(self.condensed):
            rec = sp.coo_matrix(self.recovery)
            rec = sp.coo_matrix((rec.data, (self.condensed[rec.row], rec.col)), shape=(self.n_original, n))
            eye = eye + rec
        return sp.csr_matrix(eye)


@dataclass(frozen=True)
class TrackModel:
    """Condensed, lumped track model ready for time integration.

    Dof indices in ``element_dofs`` and ``supports`` refer to the retained
    numbering ``0..n-1``; ``-1`` marks blocked, condensed or absent dofs.
    """

    lumped_mass: np.ndarray
    kinds: np.ndarray
    element_dofs: np.ndarray
    element_stiffness: np.ndarray
    element_damping: np.ndarray
    extra_stiffness: sp.csr_matrix
    extra_damping: sp.csr_matrix
    blocked: frozenset
    rail_line: RailLine
    rail_node_dofs: np.ndarray  # (n_rail_nodes, 2) original dof ids, -1 absent
    supports: tuple
    condensation: CondensationMap
    added_mass: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.lumped_mass)

    @property
    def n_elements(self) -> int:
        return len(self.element_dofs)

    # --- assembled views ---------------------------------------------------

    def _assemble_blocks(self, blocks: np.ndarray) -> sp.csr_matrix:
        d = self.element_dofs
        rows = np.broadcast_to(d[:, :, None], blocks.shape)
        cols = np.broadcast_to(d[:, None, :], blocks.shape)
        keep = (rows >= 0) & (cols >= 0) & (blocks != 0.0)
        mat = sp.coo_matrix((blocks[keep], (rows[keep], cols[keep])), shape=(self.n, self.n))
        return sp.csr_matrix(mat)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Global condensed stiffness without supports."""
        return sp.csr_matrix(self._assemble_blocks(self.element_stiffness) + self.extra_stiffness)

    @cached_property
    def damping(self) -> sp.csr_matrix:
        return sp.csr_matrix(self._assemble_blocks(self.element_damping) + self.extra_damping)

    @cached_property
    def support_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(dof, k, c, gap)`` arrays for vectorized support evaluation."""
        if not self.supports:
            return (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), np.zeros(0))
        return (
            np.array([s.dof for s in self.supports], dtype=np.int64),
            np.array([s.k for s in self.supports], dtype=float),
            np.array([s.c for s in self.supports], dtype=float),
            np.array([s.gap for s in self.supports], dtype=float),
        )

    def stiffness_diagonal(self, include_supports: bool = True) -> np.ndarray:
        """Diagonal of K; supports add their full stiffness whatever their gap."""
        diag = self.stiffness.diagonal().copy()
        if include_supports and self.supports:
            dof, k, _, _ = self.support_arrays
            np.add.at(diag, dof, k)
        return diag

    def support_stiffness(self, closed: np.ndarray | None = None) -> sp.csr_matrix:
        dof, k, _, _ = self.support_arrays
        if closed is not None:
            k = np.where(closed, k, 0.0)
        return sp.csr_matrix(sp.coo_matrix((k, (dof, dof)), shape=(self.n, self.n)))

    def support_damping(self, closed: np.ndarray | None = None) -> sp.csr_matrix:
        dof, _, c, _ = self.support_arrays
        if closed is not None:
            c = np.where(closed, c, 0.0)
        return sp.csr_matrix(sp.coo_matrix((c, (dof, dof)), shape=(self.n, self.n)))

    # --- rail-line dof maps -------------------------------------------------

    @cached_property
    def element_load_maps(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per rail element: ``(cols, P)`` with ``P`` (4 x k) mapping retained dofs ``cols``
        to the element's ``(w_a, theta_a, w_b, theta_b)``; condensed dofs are
        expressed through the recovery matrix and blocked dofs give zero rows."""
        T = self.condensation.expansion
        maps = []
        for e in range(self.rail_line.n_elements):
            full = np.concatenate([self.rail_node_dofs[e], self.rail_node_dofs[e + 1]])
            rows = np.zeros((4, self.n))
            for p, dof in enumerate(full):
                if dof >= 0:
                    rows[p] = T.getrow(dof).toarray().ravel()
            cols = np.flatnonzero(np.any(rows != 0.0, axis=0))
            maps.append((cols, rows[:, cols].copy()))
        return maps

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Full original-numbering vector from retained values (blocked dofs are 0)."""
        return self.condensation.expansion @ x

    # --- derived models -----------------------------------------------------

    def with_lumped_mass(self, lumped_mass: np.ndarray, added_mass: np.ndarray | None = None) -> "TrackModel":
        lumped_mass = np.asarray(lumped_mass, dtype=float)
        if lumped_mass.shape != self.lumped_mass.shape or np.any(lumped_mass <= 0):
            raise ModelError("lumped mass must be positive on every retained dof")
        return replace(self, lumped_mass=lumped_mass, added_mass=added_mass)

    def with_supports(self, supports: Sequence[SupportElement]) -> "TrackModel":
        for sup in supports:
            if not 0 <= sup.dof < self.n:
                raise ModelError(f"support dof {sup.dof} is not a retained dof")
        return replace(self, supports=tuple(supports))

    def with_gaps(self, dofs: Sequence[int], gap: float) -> "TrackModel":
        """Copy with the supports on the given retained dofs set to ``gap``."""
        wanted = set(int(d) for d in dofs)
        found = {s.dof for s in self.supports} & wanted
        if found != wanted:
            raise ModelError(f"no support on retained dofs {sorted(wanted - found)}")
        return self.with_supports(
            [replace(s, gap=gap) if s.dof in wanted else s for s in self.supports]
        )

    def retained_index(self, original_dof: int) -> int:
        idx = np.searchsorted(self.condensation.retained, original_dof)
        if idx < len(self.condensation.retained) and self.condensation.retained[idx] == original_dof:
            return int(idx)
        raise KeyError(f"dof {original_dof} is not retained")

    def rail_node_retained(self, rail_node: int, which: str = "w") -> int:
        """Retained index of the ``w`` or ``theta`` dof of the ``rail_node``-th node along the line (-1 if none)."""
        dof = self.rail_node_dofs[rail_node, 0 if which == "w" else 1]
        if dof < 0:
            return -1
        try:
            return self.retained_index(dof)
        except KeyError:
            return -1


def _singular_dofs(K_zz: np.ndarray, z_idx: np.ndarray) -> np.ndarray | None:
    """Original dofs involved in the null space of ``K_zz``, or None if nonsingular."""
    sym = 0.5 * (K_zz + K_zz.T)
    evals, evecs = np.linalg.eigh(sym)
    scale = np.max(np.abs(evals)) if evals.size else 0.0
    null = np.abs(evals) <= 1e-12 * scale if scale > 0 else np.ones_like(evals, dtype=bool)
    if not null.any():
        return None
    involved = np.any(np.abs(evecs[:, null]) > 1e-8, axis=1)
    return z_idx[involved]


def condense_massless(raw: RawModel, lumped_mass: np.ndarray) -> TrackModel:
    """Drop blocked dofs and statically condense unblocked massless dofs."""
    lumped_mass = np.asarray(lumped_mass, dtype=float)
    n_full = raw.n_dofs
    blocked = raw.blocked_mask()
    free = ~blocked
    z_idx = np.flatnonzero(free & (lumped_mass == 0.0))
    r_idx = np.flatnonzero(free & (lumped_mass > 0.0))

    K = raw.stiffness_matrix()
    C = raw.damping_matrix()
    K_rr = K[r_idx][:, r_idx]
    C_rr = C[r_idx][:, r_idx]

    if len(z_idx):
        K_zz = K[z_idx][:, z_idx].toarray()
        offending = _singular_dofs(K_zz, z_idx)
        if offending is not None:
            raise SingularCondensationError(offending)
        K_zr = K[z_idx][:, r_idx].toarray()
        recovery = -sla.solve(K_zz, K_zr, assume_a="sym")
        K_rz = K[r_idx][:, z_idx].toarray()
        corr = K_rz @ recovery
        corr = 0.5 * (corr + corr.T)
        K_red = sp.csr_matrix(K_rr.toarray() + corr)

        C_rz = C[r_idx][:, z_idx].toarray()
        C_zz = C[z_idx][:, z_idx].toarray()
        c_corr = C_rz @ recovery
        c_corr = c_corr + c_corr.T + recovery.T @ C_zz @ recovery
        c_corr = 0.5 * (c_corr + c_corr.T)
        C_red = sp.csr_matrix(C_rr.toarray() + c_corr)
    else:
        recovery = np.zeros((0, len(r_idx)))
        K_red = sp.csr_matrix(K_rr)
        C_red = sp.csr_matrix(C_rr)

    K_red.eliminate_zeros()
    C_red.eliminate_zeros()
    cmap = CondensationMap(n_full, r_idx, z_idx, recovery)

    full_to_ret = np.full(n_full, -1, dtype=np.int64)
    full_to_ret[r_idx] = np.arange(len(r_idx))

    line = build_rail_line(raw)
    by_id = {node.node_id: node for node in raw.nodes}
    rail_node_dofs = np.array(
        [[by_id[nid].dof_w, by_id[nid].dof_theta] for nid in line.node_ids], dtype=np.int64
    )

    ne = line.n_elements
    edofs = np.full((ne, 4), -1, dtype=np.int64)
    for e in range(ne):
        full = np.concatenate([rail_node_dofs[e], rail_node_dofs[e + 1]])
        for p, dof in enumerate(full):
            if dof >= 0:
                edofs[e, p] = full_to_ret[dof]

    Ke = np.zeros((ne, 4, 4))
    Ce = np.zeros((ne, 4, 4))
    K_dok = K_red.todok()
    C_dok = C_red.todok()
    owned: set[tuple[int, int]] = set()
    for e in range(ne):
        d = edofs[e]
        for p in range(4):
            i = int(d[p])
            if i < 0:
                continue
            for q in range(4):
                j = int(d[q])
                if j < 0 or (i, j) in owned:
                    continue
                owned.add((i, j))
                Ke[e, p, q] = K_dok.get((i, j), 0.0)
                Ce[e, p, q] = C_dok.get((i, j), 0.0)

    supports = []
    for sup in raw.supports:
        ret = full_to_ret[sup.dof]
        if ret < 0:
            raise ModelError(f"support on dof {sup.dof}, which is blocked or massless")
        supports.append(replace(sup, dof=int(ret)))

    kinds = raw.dof_kinds()[r_idx]
    model = TrackModel(
        lumped_mass=lumped_mass[r_idx].copy(),
        kinds=kinds,
        element_dofs=edofs,
        element_stiffness=Ke,
        element_damping=Ce,
        extra_stiffness=sp.csr_matrix((len(r_idx), len(r_idx))),
        extra_damping=sp.csr_matrix((len(r_idx), len(r_idx))),
        blocked=frozenset(np.flatnonzero(blocked).tolist()),
        rail_line=line,
        rail_node_dofs=rail_node_dofs,
        supports=tuple(supports),
        condensation=cmap,
    )
    extra_K = sp.csr_matrix(K_red - model._assemble_blocks(Ke))
    extra_C = sp.csr_matrix(C_red - model._assemble_blocks(Ce))
    extra_K.eliminate_zeros()
    extra_C.eliminate_zeros()
    return replace(model, extra_stiffness=extra_K, extra_damping=extra_C)


def build_track_model(raw: RawModel) -> TrackModel:
    """Lump, then condense."""
    return condense_massless(raw, lump_mass(raw))


def load_track_model(directory) -> TrackModel:
    return build_track_model(load_model_dir(directory))


def write_model(model: TrackModel, directory) -> None:
    """Write a TrackModel's assembled matrices and tables in retained numbering.

    Blocked and condensed dofs no longer exist in this numbering and appear
    as ``-1`` in the node table.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = model.n
    write_coordinate_matrix(d / "M.mtx", sp.diags(model.lumped_mass, format="csr"))
    write_coordinate_matrix(d / "K.mtx", model.stiffness)
    write_coordinate_matrix(d / "C.mtx", model.damping)

    ret = model.condensation.retained
    full_to_ret = np.full(model.condensation.n_original, -1, dtype=np.int64)
    full_to_ret[ret] = np.arange(n)
    with (d / "nodes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NODE_COLUMNS)
        for nid, s, (dw, dt) in zip(model.rail_line.node_ids, model.rail_line.node_s, model.rail_node_dofs):
            rw = full_to_ret[dw] if dw >= 0 else -1
            rt = full_to_ret[dt] if dt >= 0 else -1
            w.writerow([int(nid), f"{s:.17g}", int(rw), int(rt), 0, 0])
    with (d / "elements.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ELEMENT_COLUMNS)
        for e, eid in enumerate(model.rail_line.element_ids):
            w.writerow([int(eid), int(model.rail_line.node_ids[e]), int(model.rail_line.node_ids[e + 1])])
    write_supports(d / "supports.csv", model.supports)


def write_raw_model(raw: RawModel, directory) -> None:
    """Write an FE export in the on-disk layout read by :func:`load_model_dir`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_coordinate_matrix(d / "M.mtx", raw.mass_matrix())
    write_coordinate_matrix(d / "K.mtx", raw.stiffness_matrix())
    write_coordinate_matrix(d / "C.mtx", raw.damping_matrix())
    with (d / "nodes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NODE_COLUMNS)
        for nd in raw.nodes:
            w.writerow([nd.node_id, f"{nd.s:.17g}", nd.dof_w, nd.dof_theta, int(nd.blocked_w), int(nd.blocked_theta)])
    with (d / "elements.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ELEMENT_COLUMNS)
        for el in raw.elements:
            w.writerow([el.element_id, el.node_a, el.node_b])
    write_supports(d / "supports.csv", raw.supports)
