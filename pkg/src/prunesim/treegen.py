"""V-trellis tree generation: grow, prune and tie down, once per season.

A tree lives in its own frame: trunk base at the origin, the row running
along +y, and the trunk leaning ``trunk_tilt`` toward -x.  Wires sit in the
tilted plane of the trunk at heights ``k * wire_spacing``.

Tie-down bends a branch piecewise.  Between the previous tie (clamped) and
the next one the chain follows the end-loaded cantilever shape; everything
past the tie moves rigidly.  The bend is written back into the symbol string
as ``Rot`` symbols and updated ``F`` lengths so that children ride along when
the string is interpreted again.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .grammar import (
    Grammar,
    Skeleton,
    Symbol,
    SymbolString,
    TurtleConfig,
    axiom_string,
    format_grammar,
    interpret,
    parse_grammar,
    parse_symbols,
    rewrite,
)

__all__ = [
    "TrellisSpec",
    "BranchClass",
    "Branch",
    "TreeModel",
    "TieOp",
    "TriangleMesh",
    "BankError",
    "default_grammar",
    "tree_from_symbols",
    "grow_tree",
    "apply_pruning",
    "beam_deflection",
    "tie_down",
    "mesh_tree",
    "write_obj",
    "save_bank",
    "load_bank",
    "generate_bank",
]

BANK_SCHEMA = "prunesim.tree/1"
INDEX_SCHEMA = "prunesim.bank/1"
MAX_PIECE = 0.025  # resampling step for bent chains (m)
TIE_TAG = "Sup"


@dataclass(frozen=True)
class TrellisSpec:
    wire_spacing: float = 0.4572
    wire_count: int = 8
    tree_spacing: float = 1.2192
    trunk_tilt: float = math.radians(15.0)
    tie_interval: float = 0.1524
    support_branch_target_length: float = 0.6096

    def __post_init__(self):
        for name in ("wire_spacing", "tree_spacing", "tie_interval", "support_branch_target_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.wire_count < 1:
            raise ValueError("wire_count must be >= 1")
        if not 0 <= self.trunk_tilt < math.pi / 2:
            raise ValueError("trunk_tilt must lie in [0, pi/2)")

    def wire_height(self, k: int) -> float:
        return k * self.wire_spacing

    def wire_x(self, k: int) -> float:
        """Offset of wire ``k`` from the trunk base along x (tree frame)."""
        return -self.wire_height(k) * math.tan(self.trunk_tilt)

    def turtle(self) -> TurtleConfig:
        return TurtleConfig(frame=trunk_frame(self.trunk_tilt), radius=0.075)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def trunk_frame(tilt: float) -> np.ndarray:
    s, c = math.sin(tilt), math.cos(tilt)
    h = np.array([-s, 0.0, c])
    l = np.array([0.0, 1.0, 0.0])
    return np.column_stack([h, l, np.cross(h, l)])


class BranchClass(IntEnum):
    TRUNK = 0
    SUPPORT = 1
    TERTIARY = 2


@dataclass(frozen=True, eq=False)
class Branch:
    """One bracketed axis.  ``segments`` lists its segments base to tip."""

    id: int
    segments: tuple
    base: np.ndarray
    direction: np.ndarray
    length: float
    klass: BranchClass
    prunable: bool
    depth: int
    wire: int = -1
    side: int = 0
    tied_length: float = 0.0

    def point_at(self, skel: Skeleton, s: float) -> np.ndarray:
        """Point at arc length ``s`` from the base."""
        seg = np.asarray(self.segments)
        lens = skel.lengths[seg]
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        s = min(max(s, 0.0), cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        u = (s - cum[i]) / lens[i] if lens[i] > 0 else 0.0
        j = seg[i]
        return skel.start[j] + u * (skel.end[j] - skel.start[j])

    def cutpoint(self, skel: Skeleton, fraction: float = 0.25) -> np.ndarray:
        return self.point_at(skel, fraction * self.length)


@dataclass(frozen=True, eq=False)
class TreeModel:
    symbols: SymbolString
    skeleton: Skeleton
    segment_class: np.ndarray
    segment_branch: np.ndarray
    branches: tuple
    turtle: TurtleConfig
    provenance: dict = field(default_factory=dict)

    @property
    def warnings(self) -> tuple:
        return tuple(self.provenance.get("warnings", ()))

    @property
    def trunk(self) -> Branch:
        return next(b for b in self.branches if b.klass == BranchClass.TRUNK)

    @property
    def supports(self) -> list:
        return [b for b in self.branches if b.klass == BranchClass.SUPPORT]

    @property
    def prunable(self) -> list:
        return [b for b in self.branches if b.prunable]

    def structurally_equal(self, other: "TreeModel", atol: float = 0.0) -> bool:
        return (
            self.symbols == other.symbols
            and self.skeleton.equals(other.skeleton, atol)
            and np.array_equal(self.segment_class, other.segment_class)
            and len(self.branches) == len(other.branches)
            and all(
                a.segments == b.segments and a.klass == b.klass and a.wire == b.wire and a.side == b.side
                for a, b in zip(self.branches, other.branches)
            )
            and _jsonable(self.provenance) == _jsonable(other.provenance)
        )


@dataclass(frozen=True)
class TieOp:
    branch: int
    points: tuple  # ((arc_length, (x, y, z)), ...)

    def __post_init__(self):
        s = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("tie arc-length positions must be strictly increasing")
        if s and s[0] <= 0:
            raise ValueError("tie positions must be beyond the branch base")


# ------------------------------------------------------------------ analysis


@dataclass
class _Axis:
    depth: int
    open: int = -1
    close: int = -1
    fsyms: list = field(default_factory=list)
    tag: int = -1  # symbol index of the support tag


def _axes(symbols: Sequence[Symbol]) -> list[_Axis]:
    axes = [_Axis(0)]
    stack = [0]
    for i, s in enumerate(symbols):
        if s.name == "[":
            axes.append(_Axis(len(stack), open=i))
            stack.append(len(axes) - 1)
        elif s.name == "]":
            axes[stack.pop()].close = i
        elif s.name == "F":
            axes[stack[-1]].fsyms.append(i)
        elif s.name == TIE_TAG:
            axes[stack[-1]].tag = i
    return axes


def tree_from_symbols(
    symbols: SymbolString, turtle: TurtleConfig | None = None, provenance: dict | None = None
) -> TreeModel:
    """Interpret ``symbols`` and classify every bracketed axis."""
    turtle = turtle or TrellisSpec().turtle()
    skel = interpret(symbols, turtle)
    seg_of_sym = {int(src): i for i, src in enumerate(skel.source)}
    seg_class = np.full(len(skel), BranchClass.TERTIARY, dtype=int)
    seg_branch = np.full(len(skel), -1, dtype=int)
    lengths = skel.lengths
    branches = []
    for ax in _axes(symbols.symbols):
        if not ax.fsyms:
            continue
        segs = tuple(seg_of_sym[i] for i in ax.fsyms)
        wire, side, tied = -1, 0, 0.0
        if ax.depth == 0:
            klass = BranchClass.TRUNK
        elif ax.depth == 1 and ax.tag >= 0:
            klass = BranchClass.SUPPORT
            wire, side, tied = symbols[ax.tag].params
            wire, side = int(wire), int(side)
        else:
            klass = BranchClass.TERTIARY
        base = skel.start[segs[0]].copy()
        chord = skel.end[segs[-1]] - base
        n = np.linalg.norm(chord)
        direction = chord / n if n > 0 else skel.frames[segs[0]][:, 0].copy()
        bid = len(branches)
        branches.append(
            Branch(
                id=bid,
                segments=segs,
                base=base,
                direction=direction,
                length=float(lengths[list(segs)].sum()),
                klass=klass,
                prunable=klass == BranchClass.TERTIARY,
                depth=ax.depth,
                wire=wire,
                side=side,
                tied_length=float(tied),
            )
        )
        seg_class[list(segs)] = klass
        seg_branch[list(segs)] = bid
    for b in branches:
        b.base.flags.writeable = False
        b.direction.flags.writeable = False
    for a in (seg_class, seg_branch):
        a.flags.writeable = False
    return TreeModel(symbols, skel, seg_class, seg_branch, tuple(branches), turtle, dict(provenance or {}))


def _with(t: TreeModel, symbols: Sequence[Symbol], warnings: Sequence[str] = ()) -> TreeModel:
    prov = dict(t.provenance)
    if warnings:
        prov["warnings"] = list(prov.get("warnings", [])) + list(warnings)
    return tree_from_symbols(SymbolString(tuple(symbols)), t.turtle, prov)


def _axis_of_branch(t: TreeModel, b: Branch) -> _Axis:
    first = int(t.skeleton.source[b.segments[0]])
    return next(ax for ax in _axes(t.symbols.symbols) if ax.fsyms and ax.fsyms[0] == first)


# ------------------------------------------------------------------ pruning


def apply_pruning(t: TreeModel, spec: TrellisSpec) -> TreeModel:
    """Pick one new support per side for every unassigned wire and remove
    all other untied trunk shoots."""
    axes = _axes(t.symbols.symbols)
    by_first = {ax.fsyms[0]: ax for ax in axes if ax.fsyms}
    assigned = {(b.wire, b.side) for b in t.supports}
    shoots = []
    for b in t.branches:
        if b.depth == 1 and b.klass != BranchClass.SUPPORT:
            ax = by_first[int(t.skeleton.source[b.segments[0]])]
            side = 1 if b.direction[1] >= 0 else -1
            shoots.append((b, ax, side))
    trunk_top = float(t.skeleton.end[list(t.trunk.segments), 2].max()) if t.branches else 0.0
    warnings = []
    chosen = {}  # axis open index -> (wire, side)
    for k in range(1, spec.wire_count + 1):
        h = spec.wire_height(k)
        for side in (-1, 1):
            if (k, side) in assigned:
                continue
            pool = [
                (abs(b.base[2] - h), -b.length, b.segments[0], ax.open)
                for b, ax, sd in shoots
                if sd == side and ax.open not in chosen and abs(b.base[2] - h) <= spec.wire_spacing / 2
            ]
            if pool:
                chosen[min(pool)[3]] = (k, side)
            elif trunk_top >= h - spec.wire_spacing / 2:
                warnings.append(f"no candidate shoot for wire {k} side {side:+d}")
    removed = [(ax.open, ax.close) for _, ax, _ in shoots if ax.open not in chosen]
    out = []
    drop_until = -1
    starts = {o: c for o, c in removed}
    for i, s in enumerate(t.symbols.symbols):
        if i <= drop_until:
            continue
        if i in starts:
            drop_until = starts[i]
            continue
        out.append(s)
        if i in chosen:
            k, side = chosen[i]
            out.append(Symbol(TIE_TAG, (float(k), float(side), 0.0)))
    return _with(t, out, warnings)


# ------------------------------------------------------------------ tie-down


def beam_deflection(L: float, delta_tip: float, x: float) -> float:
    """Deflection at ``x`` of a cantilever of length ``L`` whose loaded free
    end is displaced by ``delta_tip``."""
    if not L > 0:
        raise ValueError("beam length must be positive")
    if not 0.0 <= x <= L:
        raise ValueError(f"x={x} outside [0, {L}]")
    xi = x / L  # normalized so the free end gives delta_tip exactly
    return delta_tip * xi * xi * (3.0 - xi) / 2.0


def _shape(xi: np.ndarray) -> np.ndarray:
    # unit-tip cantilever shape on the normalized coordinate xi in [0, 1]
    return (3.0 * xi * xi - xi ** 3) / 2.0


def _unit(v):
    return v / np.linalg.norm(v)


def _min_rotation(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle of the smallest rotation taking unit ``u`` to unit ``v``."""
    c = np.cross(u, v)
    s = np.linalg.norm(c)
    d = float(np.dot(u, v))
    ang = math.atan2(s, d)
    if s < 1e-15:
        if d > 0:
            return np.array([1.0, 0.0, 0.0]), 0.0
        perp = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(u, [0.0, 1.0, 0.0])
        return _unit(perp), math.pi
    return c / s, ang


def _rotation_matrix(axis: np.ndarray, ang: float) -> np.ndarray:
    k = axis
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(ang) * K + (1 - math.cos(ang)) * (K @ K)


@dataclass
class _Chain:
    """A branch resampled into short pieces, with tie points on vertices."""

    fsyms: list  # F symbol index per original segment
    pos: np.ndarray  # (n+1, 3) vertices
    arc: np.ndarray  # (n+1,) arc length at each vertex
    owner: np.ndarray  # (n,) original segment (0-based in the branch) per piece
    r_end: np.ndarray  # (n,) radius at the end of each piece


def _resample(t: TreeModel, b: Branch, cuts: Sequence[float]) -> _Chain:
    skel = t.skeleton
    pos = [skel.start[b.segments[0]]]
    arc = [0.0]
    owner, r_end = [], []
    s0 = 0.0
    for i, seg in enumerate(b.segments):
        L = float(skel.lengths[seg])
        inner = sorted(c - s0 for c in cuts if s0 + 1e-12 < c < s0 + L - 1e-12)
        marks = [0.0] + inner + [L]
        ts = []
        for a, c in zip(marks, marks[1:]):
            n = max(1, math.ceil((c - a) / MAX_PIECE - 1e-9))
            ts.extend(a + (c - a) * (j + 1) / n for j in range(n))
        ts[-1] = L
        H = skel.frames[seg][:, 0]
        for u in ts:
            pos.append(skel.end[seg].copy() if u == L else skel.start[seg] + H * u)
            arc.append(s0 + u)
            owner.append(i)
            r_end.append(skel.r_start[seg] + (skel.r_end[seg] - skel.r_start[seg]) * u / L if L > 0 else skel.r_end[seg])
        s0 += L
    return _Chain(
        [int(skel.source[s]) for s in b.segments],
        np.array(pos),
        np.array(arc),
        np.array(owner),
        np.array(r_end),
    )


def _vertex_at(chain: _Chain, s: float) -> int:
    i = int(np.argmin(np.abs(chain.arc - s)))
    if abs(chain.arc[i] - s) > 1e-9:
        raise ValueError(f"no chain vertex at arc length {s}")
    return i


def _bend(pos: np.ndarray, arc: np.ndarray, ic: int, ik: int, target: np.ndarray) -> np.ndarray:
    """Cantilever from vertex ``ic`` (clamped) to vertex ``ik`` (moved onto
    ``target``); vertices beyond ``ik`` follow rigidly."""
    new = pos.copy()
    D = target - pos[ik]
    L = arc[ik] - arc[ic]
    xi = (arc[ic + 1 : ik + 1] - arc[ic]) / L
    new[ic + 1 : ik + 1] += _shape(xi)[:, None] * D
    new[ik] = target
    if ik + 1 < len(pos):
        t_old = _unit(pos[ik] - pos[ik - 1])
        t_new = _unit(new[ik] - new[ik - 1])
        R = _rotation_matrix(*_min_rotation(t_old, t_new))
        new[ik + 1 :] = target + (pos[ik + 1 :] - pos[ik]) @ R.T
    return new


def _polyline_length(p: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


TargetFn = Callable[[np.ndarray, np.ndarray, int, int], "np.ndarray | None"]


def _tie_branch(
    t: TreeModel,
    b: Branch,
    arcs: Sequence[float],
    target_fn: TargetFn,
    max_ratio: float,
) -> tuple[dict, list, float]:
    """Bend branch ``b`` through successive ties.

    Returns symbol replacements keyed by F index, warnings, and the arc
    length of the last tie that was applied.
    """
    # earlier ties stay clamped; bending starts at the outermost one
    clamp = b.tied_length if arcs and b.tied_length < arcs[0] else 0.0
    chain = _resample(t, b, [clamp, *arcs])
    pos = chain.pos
    warnings = []
    ic = _vertex_at(chain, clamp)
    last = b.tied_length
    for s in arcs:
        ik = _vertex_at(chain, s)
        target = target_fn(pos, chain.arc, ic, ik)
        if target is None:
            warnings.append(f"tie at s={s:.3f} on branch {b.id} has no reachable target; skipped")
            continue
        target = np.asarray(target, dtype=float)
        if np.linalg.norm(target - pos[ik]) > max_ratio * b.length:
            warnings.append(f"tie at s={s:.3f} on branch {b.id} needs too large a deflection; skipped")
            continue
        pos = _bend(pos, chain.arc, ic, ik, target)
        ic = ik
        last = s
    return _encode(t, chain, pos), warnings, last


def _encode(t: TreeModel, chain: _Chain, new_pos: np.ndarray) -> dict:
    """Rewrite the branch's F symbols so the turtle draws ``new_pos``."""
    frames = t.skeleton.frames
    segs = [int(np.searchsorted(t.skeleton.source, f)) for f in chain.fsyms]
    R = np.eye(3)
    repl: dict[int, list] = {f: [] for f in chain.fsyms}
    for j in range(len(chain.owner)):
        o = int(chain.owner[j])
        fr = frames[segs[o]]
        d_old = R @ fr[:, 0]
        seg = new_pos[j + 1] - new_pos[j]
        length = float(np.linalg.norm(seg))
        axis, ang = _min_rotation(_unit(d_old), seg / length)
        out = repl[chain.fsyms[o]]
        if ang > 1e-13:
            local = (R @ fr).T @ axis
            out.append(Symbol("Rot", (math.degrees(ang), *map(float, local))))
            R = _rotation_matrix(axis, ang) @ R
        out.append(Symbol("F", (length, float(chain.r_end[j]))))
    return repl


def _splice(symbols: Sequence[Symbol], repl: dict, tags: dict) -> list:
    out = []
    for i, s in enumerate(symbols):
        if i in repl:
            out.extend(repl[i])
        elif i in tags:
            out.append(tags[i])
        else:
            out.append(s)
    return out


def tie_down(t: TreeModel, tie: TieOp, spec: TrellisSpec, max_tip_ratio: float = 0.5) -> TreeModel:
    """Bend ``tie.branch`` so each tie point lands on its target."""
    if not 0 <= tie.branch < len(t.branches):
        raise ValueError(f"no branch {tie.branch}")
    b = t.branches[tie.branch]
    arcs = [float(s) for s, _ in tie.points]
    if arcs and arcs[-1] > b.length + 1e-9:
        raise ValueError("tie point beyond the branch tip")
    targets = iter(np.asarray(p, dtype=float) for _, p in tie.points)
    repl, warnings, last = _tie_branch(t, b, arcs, lambda *_: next(targets), max_tip_ratio)
    tags = {}
    if b.klass == BranchClass.SUPPORT:
        ax = _axis_of_branch(t, b)
        tags[ax.tag] = Symbol(TIE_TAG, (float(b.wire), float(b.side), last))
    return _with(t, _splice(t.symbols.symbols, repl, tags), warnings)


def _wire_target(spec: TrellisSpec, wire: int, side: int) -> TargetFn:
    """Target on the wire that keeps the bent piece's arc length."""
    h = spec.wire_height(wire)
    xw = spec.wire_x(wire)

    def target(pos, arc, ic, ik):
        C = pos[ic]
        chord = float(np.linalg.norm(pos[ik] - C))
        piece = _polyline_length(pos[ic : ik + 1])
        off2 = (xw - C[0]) ** 2 + (h - C[2]) ** 2

        def at(rho):
            return np.array([xw, C[1] + side * math.sqrt(max((rho * chord) ** 2 - off2, 0.0)), h])

        def excess(rho):
            p = pos[ic : ik + 1]
            bent = _bend(p, arc[ic : ik + 1], 0, len(p) - 1, at(rho))
            return _polyline_length(bent) - piece

        lo = math.sqrt(off2) / chord if chord > 0 else math.inf
        if lo > 1.0:
            return None
        hi = 1.0
        if excess(hi) < 0:
            return at(hi)
        lo = max(lo, 0.5)
        if excess(lo) > 0:
            return at(lo)
        return at(brentq(excess, lo, hi, xtol=1e-12))

    return target


def _tie_supports(t: TreeModel, spec: TrellisSpec) -> TreeModel:
    repl_all, tags, warnings = {}, {}, []
    axes = {ax.fsyms[0]: ax for ax in _axes(t.symbols.symbols) if ax.fsyms}
    for b in t.supports:
        arcs = []
        s = b.tied_length + spec.tie_interval
        while s <= b.length + 1e-9:
            arcs.append(s)
            s += spec.tie_interval
        if not arcs:
            continue
        repl, w, last = _tie_branch(t, b, arcs, _wire_target(spec, b.wire, b.side), 0.5)
        repl_all.update(repl)
        warnings.extend(w)
        ax = axes[int(t.skeleton.source[b.segments[0]])]
        tags[ax.tag] = Symbol(TIE_TAG, (float(b.wire), float(b.side), last))
    if not repl_all:
        return _with(t, t.symbols.symbols, warnings)
    return _with(t, _splice(t.symbols.symbols, repl_all, tags), warnings)


# ------------------------------------------------------------------ growth


def default_grammar() -> Grammar:
    text = resources.files("prunesim.data").joinpath("apple_vtrellis.lsys").read_text()
    return parse_grammar(text)


def grammar_hash(g: Grammar) -> str:
    return hashlib.sha256(format_grammar(g).encode()).hexdigest()


def grow_tree(
    spec: TrellisSpec | None = None,
    grammar: Grammar | None = None,
    years: int = 4,
    seed: int = 0,
) -> TreeModel:
    """Grow a tree for ``years`` seasons: rewrite, prune, tie down."""
    if years < 1:
        raise ValueError("years must be >= 1")
    spec = spec or TrellisSpec()
    grammar = grammar or default_grammar()
    rng = np.random.default_rng(seed)
    prov = {"grammar_hash": grammar_hash(grammar), "seed": int(seed), "years": int(years), "warnings": []}
    t = tree_from_symbols(axiom_string(grammar), spec.turtle(), prov)
    tie_warnings = []
    for year in range(years):
        t = _with(t, rewrite(grammar, 1, rng, start=t.symbols).symbols)
        t = apply_pruning(t, spec)
        if year < years - 1:
            # a missing candidate only matters once growth is over
            t = _replace_warnings(t, tie_warnings)
        t = _tie_supports(t, spec)
        tie_warnings = [w for w in t.warnings if w.startswith("tie")]
    return t


def _replace_warnings(t: TreeModel, warnings: list) -> TreeModel:
    prov = dict(t.provenance)
    prov["warnings"] = list(warnings)
    return TreeModel(t.symbols, t.skeleton, t.segment_class, t.segment_branch, t.branches, t.turtle, prov)


# ------------------------------------------------------------------ meshes


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def area(self) -> float:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


def mesh_tree(t: TreeModel, sides: int = 8) -> TriangleMesh:
    """One open tapered tube per segment, ``2 * sides`` triangles each."""
    if sides < 3:
        raise ValueError("sides must be >= 3")
    sk = t.skeleton
    n = len(sk)
    ang = 2 * np.pi * np.arange(sides) / sides
    ring = np.cos(ang)[None, :, None] * sk.frames[:, None, :, 1] + np.sin(ang)[None, :, None] * sk.frames[:, None, :, 2]
    v0 = sk.start[:, None, :] + sk.r_start[:, None, None] * ring
    v1 = sk.end[:, None, :] + sk.r_end[:, None, None] * ring
    verts = np.concatenate([v0, v1], axis=1).reshape(-1, 3)
    k = np.arange(sides)
    kn = (k + 1) % sides
    local = np.concatenate(
        [np.stack([k, kn, sides + kn], 1), np.stack([k, sides + kn, sides + k], 1)]
    )
    faces = (local[None, :, :] + (2 * sides * np.arange(n))[:, None, None]).reshape(-1, 3)
    return TriangleMesh(verts, faces.astype(np.int64))


def write_obj(mesh: TriangleMesh, path: str | Path) -> None:
    lines = ["# tree mesh, meters, +z up"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


# ------------------------------------------------------------------ banks


class BankError(RuntimeError):
    pass


def _jsonable(x):
    return json.loads(json.dumps(x, sort_keys=True))


def _dumps(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tree_to_doc(t: TreeModel) -> dict:
    sk = t.skeleton
    return {
        "schema": BANK_SCHEMA,
        "provenance": _jsonable(t.provenance),
        "turtle": {
            "frame": t.turtle.frame.tolist(),
            "origin": list(t.turtle.origin),
            "radius": t.turtle.radius,
            "step": t.turtle.step,
            "angle": t.turtle.angle,
        },
        "symbols": t.symbols.serialize(),
        "segments": {
            "start": sk.start.tolist(),
            "end": sk.end.tolist(),
            "r_start": sk.r_start.tolist(),
            "r_end": sk.r_end.tolist(),
            "class": t.segment_class.tolist(),
        },
    }


def tree_from_doc(doc: dict) -> TreeModel:
    if doc.get("schema") != BANK_SCHEMA:
        raise BankError(f"unsupported tree schema {doc.get('schema')!r}")
    tu = doc["turtle"]
    turtle = TurtleConfig(
        step=tu["step"], angle=tu["angle"], radius=tu["radius"],
        frame=np.array(tu["frame"]), origin=tuple(tu["origin"]),
    )
    t = tree_from_symbols(parse_symbols(doc["symbols"]), turtle, doc["provenance"])
    seg = doc["segments"]
    if not np.allclose(t.skeleton.start, np.array(seg["start"]).reshape(-1, 3), rtol=0, atol=1e-12):
        raise BankError("stored segments disagree with the symbol string")
    return t


def save_bank(trees: Sequence[TreeModel], directory: str | Path, meshes: bool = True, sides: int = 8) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(trees):
        name = f"tree_{i:04d}.json"
        data = _dumps(tree_to_doc(t))
        _atomic_write(d / name, data)
        entry = {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "provenance": _jsonable(t.provenance)}
        if meshes:
            obj = f"tree_{i:04d}.obj"
            write_obj(mesh_tree(t, sides), d / obj)
            entry["mesh"] = obj
        entries.append(entry)
    index = {"schema": INDEX_SCHEMA, "count": len(entries), "trees": entries}
    _atomic_write(d / "index.json", _dumps(index))
    return d / "index.json"


def index_hash(directory: str | Path) -> str:
    return hashlib.sha256((Path(directory) / "index.json").read_bytes()).hexdigest()


def load_bank(directory: str | Path) -> list[TreeModel]:
    d = Path(directory)
    try:
        index = json.loads((d / "index.json").read_text())
    except FileNotFoundError as e:
        raise BankError(f"missing bank index in {d}") from e
    if index.get("schema") != INDEX_SCHEMA:
        raise BankError(f"unsupported bank schema {index.get('schema')!r}")
    trees = []
    for entry in index["trees"]:
        path = d / entry["file"]
        try:
            data = path.read_bytes()
        except FileNotFoundError as e:
            raise BankError(f"missing tree file {path}") from e
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise BankError(f"checksum mismatch for {path}")
        trees.append(tree_from_doc(json.loads(data)))
    return trees


def generate_bank(
    n: int,
    seed: int,
    spec: TrellisSpec | None = None,
    grammar: Grammar | None = None,
    years: int = 4,
) -> list[TreeModel]:
    """Grow ``n`` trees; tree ``i`` uses a seed derived from ``seed`` and ``i``."""
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [grow_tree(spec, grammar, years, int(s)) for s in seeds]
