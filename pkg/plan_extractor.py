"""
Plan Extractor for scorelint
Derives the measure-wise structural plan of a score, picks pivot measures
for sparse plans, and reads/writes the plan interchange JSON.
"""

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

from jsonschema import Draft7Validator

from config_manager import PIVOT_CHANNELS, ScoreLintSettings
from constraints_manager import InstrumentTable
from error_handler import EmptyScoreError, SchemaError
from score_model import KeySignature, Mode, Score, TimeSignature, pitch_class_set

logger = logging.getLogger(__name__)

PLAN_SCHEMA_VERSION = 1


class DensityLevel(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return list(DensityLevel).index(self)


@dataclass(frozen=True)
class MeasurePlan:
    """Structural descriptor of one measure."""
    index: int
    instruments: FrozenSet[str]
    pitch_range: Optional[Tuple[int, int]]
    density: DensityLevel
    tempo_qpm: Fraction
    time_signature: TimeSignature
    key_signature: KeySignature
    chord_pcs: FrozenSet[int] = frozenset()
    dynamics: Optional[str] = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"Measure index must be non-negative: {self.index}")
        if self.pitch_range is not None and self.pitch_range[0] > self.pitch_range[1]:
            raise ValueError(f"Pitch range {self.pitch_range} is inverted")


@dataclass(frozen=True)
class PlanDocument:
    """Measure-wise plan of a piece; dense or sparse."""
    n_measures: int
    genre: Optional[str]
    instrumentation: FrozenSet[str]
    measures: Tuple[MeasurePlan, ...]

    def __post_init__(self):
        if self.n_measures < 1:
            raise ValueError("A plan needs at least one measure")
        indices = [m.index for m in self.measures]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("Plan measure indices must be strictly increasing")
        if indices and indices[-1] >= self.n_measures:
            raise ValueError(f"Measure index {indices[-1]} is beyond n_measures={self.n_measures}")
        for m in self.measures:
            if not m.instruments <= self.instrumentation:
                raise ValueError(f"Measure {m.index} uses instruments outside the instrumentation")

    @property
    def is_dense(self) -> bool:
        return [m.index for m in self.measures] == list(range(self.n_measures))

    def measure(self, index: int) -> Optional[MeasurePlan]:
        for m in self.measures:
            if m.index == index:
                return m
        return None

    def sparse(self, indices: Iterable[int]) -> "PlanDocument":
        """Keep only the given measures; instrumentation is unchanged."""
        keep = set(indices)
        return PlanDocument(
            n_measures=self.n_measures,
            genre=self.genre,
            instrumentation=self.instrumentation,
            measures=tuple(m for m in self.measures if m.index in keep),
        )


@dataclass(frozen=True)
class PivotSelection:
    """Pivot measures chosen for a sparse plan."""
    indices: Tuple[int, ...]
    scores: Tuple[Fraction, ...]
    weight_profile_id: str
    rng_seed: int
    weights: Dict[str, Fraction] = field(default_factory=dict, compare=False)
    ranking: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "indices": list(self.indices),
            "scores": [str(s) for s in self.scores],
            "weight_profile_id": self.weight_profile_id,
            "rng_seed": self.rng_seed,
            "weights": {k: str(v) for k, v in self.weights.items()},
            "ranking": list(self.ranking),
        }


def density_level(events: int, capacity: Fraction, settings: ScoreLintSettings) -> DensityLevel:
    """Classify note events per quarter note."""
    rate = Fraction(events) / capacity
    if rate < settings.density_low_below:
        return DensityLevel.LOW
    if rate > settings.density_high_above:
        return DensityLevel.HIGH
    return DensityLevel.MEDIUM


def extract_plan(score: Score, table: InstrumentTable,
                 settings: Optional[ScoreLintSettings] = None) -> PlanDocument:
    """
    Build the dense plan of a score.

    Raises:
        EmptyScoreError: If the score has no parts or no measures
    """
    settings = settings or ScoreLintSettings()
    if not score.parts or score.measure_count == 0:
        raise EmptyScoreError("Cannot extract a plan from a score without measures")

    names = {part.part_id: table.instrument_name(part) for part in score.parts}
    tempo = settings.default_tempo_qpm
    measures: List[MeasurePlan] = []

    for i in range(score.measure_count):
        present = [(part, part.measures[i]) for part in score.parts if i < len(part.measures)]
        reference = present[0][1]

        for _, measure in present:
            if measure.tempo_qpm is not None:
                tempo = measure.tempo_qpm
                break

        instruments = frozenset(names[part.part_id] for part, m in present if m.notes)
        midis = [p.midi for _, m in present for note in m.notes for p in note.pitches]
        events = sum(len(m.notes) for _, m in present)
        chord_pcs = frozenset().union(*(pitch_class_set(m) for _, m in present))
        marked = [(note.onset, note.dynamic) for _, m in present for note in m.notes if note.dynamic]

        measures.append(MeasurePlan(
            index=i,
            instruments=instruments,
            pitch_range=(min(midis), max(midis)) if midis else None,
            density=density_level(events, reference.capacity, settings),
            tempo_qpm=tempo,
            time_signature=reference.time_signature,
            key_signature=reference.key_signature,
            chord_pcs=chord_pcs,
            dynamics=max(marked)[1] if marked else None,
        ))

    instrumentation = frozenset().union(*(m.instruments for m in measures))
    logger.debug(f"Extracted plan: {len(measures)} measures, instruments {sorted(instrumentation)}")
    return PlanDocument(score.measure_count, score.genre, instrumentation, tuple(measures))


def _range_shift(current: Optional[Tuple[int, int]], previous: Optional[Tuple[int, int]]) -> Fraction:
    if current is None and previous is None:
        return Fraction(0)
    if current is None or previous is None:
        return Fraction(1)
    return Fraction(max(abs(current[0] - previous[0]), abs(current[1] - previous[1])), 127)


def change_vectors(plan: PlanDocument) -> List[Dict[str, Fraction]]:
    """Per-measure attribute change against the preceding measure, each channel in [0, 1]."""
    measures = plan.measures
    max_tempo = max(m.tempo_qpm for m in measures)
    total = len(plan.instrumentation)
    vectors = [{channel: Fraction(1) for channel in PIVOT_CHANNELS}]
    prevailing_dynamic = measures[0].dynamics

    for previous, current in zip(measures, measures[1:]):
        new_dynamic = current.dynamics is not None and current.dynamics != prevailing_dynamic
        if current.dynamics is not None:
            prevailing_dynamic = current.dynamics
        swapped = len(current.instruments ^ previous.instruments)
        vectors.append({
            "tempo": abs(current.tempo_qpm - previous.tempo_qpm) / max_tempo,
            "time_signature": Fraction(int(current.time_signature != previous.time_signature)),
            "key_signature": Fraction(int(current.key_signature != previous.key_signature)),
            "instrumentation": Fraction(swapped, total) if total else Fraction(0),
            "density": Fraction(abs(current.density.rank - previous.density.rank), 2),
            "pitch_range": _range_shift(current.pitch_range, previous.pitch_range),
            "dynamics": Fraction(int(new_dynamic)),
        })
    return vectors


def select_pivots(plan: PlanDocument, seed: int,
                  settings: Optional[ScoreLintSettings] = None) -> PivotSelection:
    """
    Choose the 5-10 measures with the largest attribute changes.

    The seed picks one weight profile and k = 5 + seed mod 6 (clamped to N).
    Measure 0 is compared against an empty measure, so it always scores the
    full weight and is always kept as the anchor of the sparse plan.
    """
    settings = settings or ScoreLintSettings()
    if not plan.is_dense:
        raise ValueError("Pivot selection needs a dense plan")

    profile_id = random.Random(seed).choice(sorted(settings.weight_profiles))
    weights = settings.weight_profiles[profile_id]
    logger.info(f"Pivot weight profile {profile_id}: "
                + ", ".join(f"{c}={weights[c]}" for c in PIVOT_CHANNELS))

    scores = [sum(weights[c] * vector[c] for c in PIVOT_CHANNELS) for vector in change_vectors(plan)]
    n = plan.n_measures
    k = min(5 + seed % 6, n)
    ranking = tuple(sorted(range(1, n), key=lambda i: (-scores[i], i)))
    indices = tuple(sorted({0, *ranking[:k - 1]}))

    return PivotSelection(
        indices=indices,
        scores=tuple(scores[i] for i in indices),
        weight_profile_id=profile_id,
        rng_seed=seed,
        weights=dict(weights),
        ranking=ranking,
    )


# interchange format

PLAN_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["n_measures", "instrumentation", "measures"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "integer", "minimum": 1},
        "n_measures": {"type": "integer", "minimum": 1},
        "genre": {"type": ["string", "null"]},
        "instrumentation": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "measures": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "instruments", "density", "tempo_qpm",
                             "time_signature", "key_signature", "chord_pcs"],
                "additionalProperties": False,
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "instruments": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
                    "pitch_range": {
                        "type": ["array", "null"],
                        "items": {"type": "integer", "minimum": 0, "maximum": 127},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "density": {"enum": [level.value for level in DensityLevel]},
                    "tempo_qpm": {"oneOf": [
                        {"type": "number", "exclusiveMinimum": 0},
                        {"type": "string", "pattern": "^[1-9][0-9]*/[1-9][0-9]*$"},
                    ]},
                    "time_signature": {"type": "string", "pattern": "^[1-9][0-9]*/[1-9][0-9]*$"},
                    "key_signature": {
                        "type": "object",
                        "required": ["tonic", "mode"],
                        "additionalProperties": False,
                        "properties": {
                            "tonic": {"type": "string", "pattern": "^[A-G](#|b)?$"},
                            "mode": {"enum": [mode.value for mode in Mode]},
                        },
                    },
                    "chord_pcs": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0, "maximum": 11},
                        "uniqueItems": True,
                    },
                    "dynamics": {"type": ["string", "null"]},
                },
            },
        },
    },
}

_VALIDATOR = Draft7Validator(PLAN_SCHEMA)


def _pointer(path: Iterable[Union[str, int]]) -> str:
    return ''.join(f"/{str(p).replace('~', '~0').replace('/', '~1')}" for p in path)


def _path_key(path: Iterable[Union[str, int]]) -> List[Tuple[int, Any]]:
    return [(0, p) if isinstance(p, int) else (1, p) for p in path]


def _tempo_value(value: Fraction) -> Union[int, str]:
    """Whole tempi as numbers, anything else as an exact "p/q" string."""
    return value.numerator if value.denominator == 1 else str(value)


def plan_to_dict(plan: PlanDocument) -> Dict[str, Any]:
    return {
        "schema_version": PLAN_SCHEMA_VERSION,
        "n_measures": plan.n_measures,
        "genre": plan.genre,
        "instrumentation": sorted(plan.instrumentation),
        "measures": [
            {
                "index": m.index,
                "instruments": sorted(m.instruments),
                "pitch_range": list(m.pitch_range) if m.pitch_range else None,
                "density": m.density.value,
                "tempo_qpm": _tempo_value(m.tempo_qpm),
                "time_signature": str(m.time_signature),
                "key_signature": {"tonic": m.key_signature.tonic, "mode": m.key_signature.mode.value},
                "chord_pcs": sorted(m.chord_pcs),
                "dynamics": m.dynamics,
            }
            for m in plan.measures
        ],
    }


def write_plan(plan: PlanDocument) -> bytes:
    """Canonical JSON: sorted keys, measures in index order."""
    text = json.dumps(plan_to_dict(plan), sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode('utf-8')


def _measure_from_dict(raw: Dict[str, Any], where: str) -> MeasurePlan:
    try:
        time_signature = TimeSignature.parse(raw["time_signature"])
    except ValueError as e:
        raise SchemaError(f"{where}/time_signature", str(e))
    try:
        key_signature = KeySignature.from_tonic(raw["key_signature"]["tonic"],
                                                Mode(raw["key_signature"]["mode"]))
    except ValueError as e:
        raise SchemaError(f"{where}/key_signature", str(e))
    pitch_range = raw.get("pitch_range")
    if pitch_range is not None and pitch_range[0] > pitch_range[1]:
        raise SchemaError(f"{where}/pitch_range", "minimum exceeds maximum")
    return MeasurePlan(
        index=raw["index"],
        instruments=frozenset(raw["instruments"]),
        pitch_range=tuple(pitch_range) if pitch_range is not None else None,
        density=DensityLevel(raw["density"]),
        tempo_qpm=Fraction(str(raw["tempo_qpm"])),
        time_signature=time_signature,
        key_signature=key_signature,
        chord_pcs=frozenset(raw["chord_pcs"]),
        dynamics=raw.get("dynamics"),
    )


def plan_from_dict(document: Any) -> PlanDocument:
    """
    Validate and convert a decoded plan document.

    Raises:
        SchemaError: With the JSON pointer of the first violation
    """
    errors = sorted(_VALIDATOR.iter_errors(document),
                    key=lambda e: (_path_key(e.absolute_path), e.message))
    if errors:
        raise SchemaError(_pointer(errors[0].absolute_path), errors[0].message)

    version = document.get("schema_version", PLAN_SCHEMA_VERSION)
    if version > PLAN_SCHEMA_VERSION:
        raise SchemaError("/schema_version", f"unsupported plan schema version {version}")

    n_measures = document["n_measures"]
    instrumentation = frozenset(document["instrumentation"])
    measures = []
    previous = -1
    for j, raw in enumerate(document["measures"]):
        where = f"/measures/{j}"
        if raw["index"] >= n_measures:
            raise SchemaError(f"{where}/index", f"index {raw['index']} is not below n_measures={n_measures}")
        if raw["index"] <= previous:
            raise SchemaError(f"{where}/index", "indices must be strictly increasing")
        if not set(raw["instruments"]) <= instrumentation:
            raise SchemaError(f"{where}/instruments", "instrument missing from instrumentation")
        previous = raw["index"]
        measures.append(_measure_from_dict(raw, where))

    return PlanDocument(n_measures, document.get("genre"), instrumentation, tuple(measures))


def read_plan(data: Union[bytes, str]) -> PlanDocument:
    """Parse plan JSON."""
    try:
        document = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError("", f"invalid JSON: {e}")
    return plan_from_dict(document)
