"""
Structure Analyzer for scorelint
Translation-invariant point-set compression: SIATEC pattern discovery and
the greedy COSIATEC cover whose compression ratio is the structure score.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Tuple

import numpy as np

from error_handler import EmptyScoreError
from score_model import Part, Score, absolute_notes

logger = logging.getLogger(__name__)

GRID_PER_QUARTER = 16
# Largest element count of one vectorized membership test.
_BLOCK_ELEMENTS = 1 << 21

Point = Tuple[int, int]


@dataclass(frozen=True)
class PointSet:
    """(onset grid index, MIDI pitch) points."""
    points: FrozenSet[Point]

    def __len__(self) -> int:
        return len(self.points)

    def sorted_points(self) -> List[Point]:
        return sorted(self.points)

    def translated(self, vector: Point) -> "PointSet":
        return PointSet(frozenset((x + vector[0], y + vector[1]) for x, y in self.points))


@dataclass(frozen=True)
class TEC:
    """A pattern and every vector translating it into the point set."""
    pattern: Tuple[Point, ...]
    translators: Tuple[Point, ...]

    @property
    def covered(self) -> FrozenSet[Point]:
        return frozenset((x + dx, y + dy) for dx, dy in self.translators for x, y in self.pattern)

    @property
    def cost(self) -> int:
        return len(self.pattern) + len(self.translators) - 1

    @property
    def compression_ratio(self) -> Fraction:
        return Fraction(len(self.covered), self.cost)

    @property
    def bounding_box(self) -> int:
        xs = [x for x, _ in self.pattern]
        ys = [y for _, y in self.pattern]
        return (max(xs) - min(xs) + 1) * (max(ys) - min(ys) + 1)

    def canonical(self) -> "TEC":
        """Equivalent TEC whose smallest translator is the zero vector."""
        dx, dy = min(self.translators)
        return TEC(
            pattern=tuple(sorted((x + dx, y + dy) for x, y in self.pattern)),
            translators=tuple(sorted((tx - dx, ty - dy) for tx, ty in self.translators)),
        )

    def to_dict(self) -> Dict[str, list]:
        return {"pattern": [list(p) for p in self.pattern],
                "translators": [list(t) for t in self.translators]}


@dataclass(frozen=True)
class StructureResult:
    structure_score: Fraction
    n_points: int
    decimated: bool
    cover: Tuple[TEC, ...]
    mode: str = "merged"  # merged | per-part
    n_windows: int = 1


def grid_index(onset: Fraction) -> int:
    """Nearest 1/16-quarter grid point; exact halves round down."""
    return math.ceil(onset * GRID_PER_QUARTER - Fraction(1, 2))


def _points_of(parts: Iterable[Part], offsets: List[Fraction]) -> FrozenSet[Point]:
    return frozenset(
        (grid_index(onset), pitch.midi)
        for part in parts
        for onset, note in absolute_notes(part, offsets)
        for pitch in note.pitches
    )


def score_to_pointset(score: Score) -> PointSet:
    """
    One point per sounding pitch at its absolute onset, all parts merged.

    Raises:
        EmptyScoreError: If the score has no notes
    """
    points = _points_of(score.parts, score.measure_offsets())
    if not points:
        raise EmptyScoreError("Score has no notes to analyze")
    return PointSet(points)


def part_to_pointset(score: Score, part: Part) -> PointSet:
    return PointSet(_points_of([part], score.measure_offsets()))


class _Lattice:
    """Dense membership table over the bounding box of a point set."""

    def __init__(self, points: np.ndarray):
        self.low = points.min(axis=0)
        self.size = points.max(axis=0) - self.low + 1
        self.table = np.zeros((int(self.size[0]), int(self.size[1])), dtype=bool)
        self.table[points[:, 0] - self.low[0], points[:, 1] - self.low[1]] = True

    def discard(self, points: np.ndarray):
        self.table[points[:, 0] - self.low[0], points[:, 1] - self.low[1]] = False

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = points - self.low
        inside = np.all((local >= 0) & (local < self.size), axis=-1)
        local = np.clip(local, 0, self.size - 1)
        return inside & self.table[local[..., 0], local[..., 1]]

    def codes(self, points: np.ndarray) -> np.ndarray:
        local = points - self.low
        return local[..., 0] * int(self.size[1]) + local[..., 1]


def _difference_table(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward difference vectors with origin and target rows, sorted by vector then origin."""
    origin, target = np.triu_indices(len(points), k=1)
    vectors = points[target] - points[origin]
    order = np.lexsort((origin, vectors[:, 1], vectors[:, 0]))
    return vectors[order], origin[order], target[order]


class _Differences:
    """
    Difference vectors between live points, grouped by vector.

    The origins of each group form the maximal translatable pattern of that vector.
    """

    def __init__(self, points: np.ndarray, vectors: np.ndarray, origin: np.ndarray):
        self.points = points
        self.origin = origin
        self.reach = int(points[:, 1].max() - points[:, 1].min())
        new_group = np.ones(len(vectors), dtype=bool)
        new_group[1:] = np.any(vectors[1:] != vectors[:-1], axis=1)
        self.starts = np.flatnonzero(new_group)
        self.sizes = np.diff(np.append(self.starts, len(vectors)))
        self.keys = self._key(vectors[self.starts])

    def _key(self, vectors: np.ndarray) -> np.ndarray:
        # Monotone in (dx, dy) order, so keys stay sorted.
        return vectors[:, 0] * (2 * self.reach + 1) + vectors[:, 1] + self.reach

    def patterns(self) -> List[np.ndarray]:
        """One (rows, size, 2) array per pattern size, one row per translational class."""
        classes = []
        for size in np.unique(self.sizes):
            size = int(size)
            first = self.starts[self.sizes == size]
            if size == 1:
                classes.append(self.points[self.origin[first[:1]]][:, None, :])
                continue
            patterns = self.points[self.origin[first[:, None] + np.arange(size)]]
            shapes = (patterns - patterns[:, :1]).reshape(len(first), -1)
            _, keep = np.unique(shapes, axis=0, return_index=True)
            classes.append(patterns[np.sort(keep)])
        return classes

    def translators(self, patterns: np.ndarray, remaining: np.ndarray,
                    lattice: _Lattice) -> Tuple[np.ndarray, np.ndarray]:
        """
        Every vector translating a pattern row into the live points.

        Candidates for a pattern starting p0, p1 are q - p0 for the origins q of
        the group of p1 - p0; the other pattern points are checked on the lattice.
        Returns (owner row, vector) pairs with owner rows ascending.
        """
        n_rows, size = patterns.shape[:2]
        if size == 1:
            return np.zeros(len(remaining), dtype=np.int64), remaining - patterns[0, 0]

        group = np.searchsorted(self.keys, self._key(patterns[:, 1] - patterns[:, 0]))
        counts = self.sizes[group]
        owner = np.repeat(np.arange(n_rows), counts)
        offsets = np.arange(len(owner)) - np.repeat(np.cumsum(counts) - counts, counts)
        members = self.origin[np.repeat(self.starts[group], counts) + offsets]
        vectors = self.points[members] - patterns[owner, 0]
        if size == 2:
            return owner, vectors

        keep = np.empty(len(owner), dtype=bool)
        step = max(1, _BLOCK_ELEMENTS // size)
        for low in range(0, len(owner), step):
            part = slice(low, low + step)
            images = vectors[part, None, :] + patterns[owner[part], 2:]
            keep[part] = lattice.contains(images).all(axis=1)
        return owner[keep], vectors[keep]


def _scores(patterns: np.ndarray, owner: np.ndarray, vectors: np.ndarray,
            lattice: _Lattice) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Covered point count, cost and bounding-box area of each pattern row."""
    n_rows, size = patterns.shape[:2]
    cells = lattice.table.size
    counts = np.bincount(owner, minlength=n_rows)
    images = lattice.codes(patterns[owner] + vectors[:, None, :])
    keys = np.unique(owner[:, None] * cells + images)
    coverage = np.bincount(keys // cells, minlength=n_rows)
    spread = patterns.max(axis=1) - patterns.min(axis=1) + 1
    return coverage, size + counts - 1, spread[:, 0] * spread[:, 1]


def _tec(pattern: np.ndarray, translators: np.ndarray) -> TEC:
    return TEC(
        pattern=tuple((int(x), int(y)) for x, y in pattern),
        translators=tuple(sorted((int(x), int(y)) for x, y in translators)),
    ).canonical()


def _row_bounds(owner: np.ndarray, n_rows: int) -> np.ndarray:
    return np.searchsorted(owner, np.arange(n_rows + 1))


def siatec(ps: PointSet) -> List[TEC]:
    """
    Every maximal translatable pattern with its full translator set.

    TECs are returned in canonical form, one per translational equivalence class,
    sorted by pattern.
    """
    if len(ps) == 0:
        raise EmptyScoreError("Cannot analyze an empty point set")
    ordered = ps.sorted_points()
    if len(ordered) == 1:
        return [TEC(pattern=(ordered[0],), translators=((0, 0),))]

    dataset = np.array(ordered, dtype=np.int64)
    lattice = _Lattice(dataset)
    vectors, origin, _ = _difference_table(dataset)
    differences = _Differences(dataset, vectors, origin)

    found: Dict[Tuple, TEC] = {}
    for patterns in differences.patterns():
        owner, translators = differences.translators(patterns, dataset, lattice)
        bounds = _row_bounds(owner, len(patterns))
        for row, pattern in enumerate(patterns):
            tec = _tec(pattern, translators[bounds[row]:bounds[row + 1]])
            found.setdefault((tec.pattern, tec.translators), tec)
    return sorted(found.values(), key=lambda t: (t.pattern, t.translators))


def _best_tec(differences: _Differences, remaining: np.ndarray, lattice: _Lattice) -> TEC:
    """
    The TEC of the live points with the highest compression ratio.

    Ties go to more covered points, then the smaller bounding box, then the
    smaller canonical pattern. Only tied candidates are materialized.
    """
    best_key, tied = None, []
    for patterns in differences.patterns():
        owner, translators = differences.translators(patterns, remaining, lattice)
        coverage, cost, bbox = _scores(patterns, owner, translators, lattice)
        ratio = coverage / cost
        top = np.lexsort((bbox, -coverage, -ratio))[0]
        key = (-float(ratio[top]), -int(coverage[top]), int(bbox[top]))
        if best_key is not None and key > best_key:
            continue
        rows = np.flatnonzero((ratio == ratio[top]) & (coverage == coverage[top]) & (bbox == bbox[top]))
        bounds = _row_bounds(owner, len(patterns))
        candidates = [_tec(patterns[r], translators[bounds[r]:bounds[r + 1]]) for r in rows]
        if best_key is None or key < best_key:
            best_key, tied = key, candidates
        else:
            tied.extend(candidates)
    return min(tied, key=lambda t: t.pattern)


def cosiatec_cover(ps: PointSet) -> Tuple[List[TEC], Fraction]:
    """
    Greedy cover by the best-compressing TEC, recomputed on the points left.

    The difference table is built once; each step keeps the pairs whose both
    ends are still uncovered.

    Returns the cover and the whole-set compression ratio
    |points| / sum(|pattern| + |translators| - 1).
    """
    if len(ps) == 0:
        raise EmptyScoreError("Cannot analyze an empty point set")
    ordered = ps.sorted_points()
    position = {point: i for i, point in enumerate(ordered)}
    dataset = np.array(ordered, dtype=np.int64)
    lattice = _Lattice(dataset)
    vectors, origin, target = _difference_table(dataset)
    alive = np.ones(len(dataset), dtype=bool)

    cover: List[TEC] = []
    while alive.any():
        live = alive[origin] & alive[target]
        if live.any():
            differences = _Differences(dataset, vectors[live], origin[live])
            best = _best_tec(differences, dataset[alive], lattice)
        else:
            (x, y), = dataset[alive]
            best = TEC(pattern=((int(x), int(y)),), translators=((0, 0),))
        cover.append(best)
        gone = [position[point] for point in best.covered]
        alive[gone] = False
        lattice.discard(dataset[gone])
        logger.debug(f"Cover step {len(cover)}: {len(gone)} points at ratio {best.compression_ratio}")
    return cover, Fraction(len(ps), sum(t.cost for t in cover))


def decimate(ps: PointSet) -> PointSet:
    """Drop octave doublings: keep only the lowest pitch of each octave stack at an onset."""
    return PointSet(frozenset(
        (x, y) for x, y in ps.points
        if not any((x, y - 12 * k) in ps.points for k in range(1, y // 12 + 1))
    ))


def split_windows(ps: PointSet, limit: int) -> List[PointSet]:
    """Consecutive onset ranges of at most `limit` points; the points of one onset stay together."""
    by_onset: Dict[int, List[Point]] = {}
    for point in ps.sorted_points():
        by_onset.setdefault(point[0], []).append(point)
    windows, current = [], []
    for onset in sorted(by_onset):
        chord = by_onset[onset]
        if current and len(current) + len(chord) > limit:
            windows.append(PointSet(frozenset(current)))
            current = []
        current.extend(chord)
    if current:
        windows.append(PointSet(frozenset(current)))
    return windows


def _analyze(ps: PointSet, max_points: int, window_points: int) -> Tuple[List[TEC], Fraction, bool, int]:
    decimated = False
    if len(ps) > max_points:
        reduced = decimate(ps)
        logger.warning(f"Decimated point set from {len(ps)} to {len(reduced)} points")
        ps, decimated = reduced, True
    windows = split_windows(ps, window_points)
    if len(windows) > 1:
        logger.info(f"Covering {len(ps)} points in {len(windows)} windows")
    cover: List[TEC] = []
    for window in windows:
        cover.extend(cosiatec_cover(window)[0])
    return cover, Fraction(len(ps), sum(t.cost for t in cover)), decimated, len(windows)


def analyze_structure(score: Score, max_points: int = 5000, per_part: bool = False,
                      window_points: int = 512) -> StructureResult:
    """
    Structure score of a piece.

    Args:
        score: Parsed score
        max_points: Point sets larger than this are decimated first
        per_part: Average the per-part scores instead of merging all parts
        window_points: Larger point sets are covered one onset window at a time
    """
    if not per_part:
        ps = score_to_pointset(score)
        cover, value, decimated, n_windows = _analyze(ps, max_points, window_points)
        return StructureResult(value, len(ps), decimated, tuple(cover), "merged", n_windows)

    values, covers, total, decimated, n_windows = [], [], 0, False, 0
    for part in score.parts:
        ps = part_to_pointset(score, part)
        if not len(ps):
            continue
        cover, value, was_decimated, part_windows = _analyze(ps, max_points, window_points)
        values.append(value)
        covers.extend(cover)
        total += len(ps)
        decimated = decimated or was_decimated
        n_windows += part_windows
    if not values:
        raise EmptyScoreError("Score has no notes to analyze")
    mean = sum(values, Fraction(0)) / len(values)
    return StructureResult(mean, total, decimated, tuple(covers), "per-part", n_windows)
