"""
Constraints Manager for scorelint
Loads the instrument constraints table and binds score parts to instruments.
"""

import logging
import re
import unicodedata
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from error_handler import ConfigError, UnknownInstrumentError
from score_model import InstrumentConstraints, Part

logger = logging.getLogger(__name__)

DEFAULT_TABLE_PATH = Path(__file__).parent / "instruments.yaml"

REQUIRED_ENTRY_FIELDS = ["canonical", "range", "max_span", "monophonic"]

_ORDINAL_PREFIX = re.compile(r'^(?:\d+(?:st|nd|rd|th)|first|second|third|fourth)\s+')
_ORDINAL_SUFFIX = re.compile(r'\s+(?:\d+|i{1,3}|iv|vi{0,3}|ix)$')
_TRANSPOSITION_SUFFIX = re.compile(r'\s+in\s+[a-g](?:\s*(?:b|#|flat|sharp))?$')


def normalize_instrument_name(name: str) -> str:
    """Case-fold, strip accents, ordinals ("Violin II") and transpositions ("in Bb")."""
    text = unicodedata.normalize('NFKD', name.replace('♭', 'b').replace('♯', '#'))
    text = ''.join(ch for ch in text if not unicodedata.combining(ch)).casefold()
    text = re.sub(r'[.\-_/]+', ' ', text)
    text = re.sub(r'\s+', ' ', text).strip()
    text = _TRANSPOSITION_SUFFIX.sub('', text)
    stripped = _ORDINAL_PREFIX.sub('', _ORDINAL_SUFFIX.sub('', text))
    return stripped or text


@dataclass(frozen=True)
class Resolution:
    """How one instrument name was resolved."""
    name: str
    normalized: str
    canonical: Optional[str]

    @property
    def resolved(self) -> bool:
        return self.canonical is not None


@dataclass(frozen=True)
class PartBinding:
    """Instrument bound to one part and the route that bound it."""
    part_id: str
    constraints: InstrumentConstraints
    source: str  # program | name | part_id | default
    used_default: bool


class InstrumentTable:
    """Canonical instruments with alias and program lookup."""

    def __init__(self, entries: List[InstrumentConstraints],
                 default: Optional[InstrumentConstraints], version: int, source_file: str):
        self.entries = {entry.canonical_name: entry for entry in entries}
        self.default = default
        self.version = version
        self.source_file = source_file
        self._aliases: Dict[str, str] = {}
        self._programs: Dict[int, str] = {}

        for entry in entries:
            for alias in entry.aliases:
                key = normalize_instrument_name(alias)
                owner = self._aliases.setdefault(key, entry.canonical_name)
                if owner != entry.canonical_name:
                    raise ConfigError(
                        f"Alias {alias!r} maps to both {owner} and {entry.canonical_name}"
                    )
            for program in entry.programs:
                owner = self._programs.setdefault(program, entry.canonical_name)
                if owner != entry.canonical_name:
                    raise ConfigError(
                        f"Program {program} maps to both {owner} and {entry.canonical_name}"
                    )

    def resolve(self, name: str) -> Resolution:
        normalized = normalize_instrument_name(name)
        return Resolution(name, normalized, self._aliases.get(normalized))

    def lookup(self, name: str) -> Optional[InstrumentConstraints]:
        canonical = self.resolve(name).canonical
        return self.entries[canonical] if canonical else None

    def lookup_program(self, program: int) -> Optional[InstrumentConstraints]:
        canonical = self._programs.get(program)
        return self.entries[canonical] if canonical else None

    def bind_part(self, part: Part, allow_default: bool = True) -> PartBinding:
        """
        Bind a part to its instrument.

        Preference order: explicit %%MIDI program, then the V: name= field,
        then the voice id. Unknown parts fall back to the permissive default.

        Raises:
            UnknownInstrumentError: If nothing matches and no default is allowed
        """
        if part.midi_program is not None:
            entry = self.lookup_program(part.midi_program)
            if entry:
                return PartBinding(part.part_id, entry, "program", False)
        if part.declared_name:
            entry = self.lookup(part.declared_name)
            if entry:
                return PartBinding(part.part_id, entry, "name", False)
        entry = self.lookup(part.part_id)
        if entry:
            return PartBinding(part.part_id, entry, "part_id", False)

        if not allow_default or self.default is None:
            raise UnknownInstrumentError(f"No constraints entry for part {part.label!r}")
        logger.warning(f"Part {part.label!r} bound to permissive default constraints")
        return PartBinding(part.part_id, self.default, "default", True)

    def instrument_name(self, part: Part) -> str:
        """Canonical name for plans and matching; verbatim label when unknown."""
        binding = self.bind_part(part)
        return part.label if binding.used_default else binding.constraints.canonical_name


def _parse_span(value: Any, where: str) -> Optional[int]:
    if value == "inf" or value is None:
        return None
    if isinstance(value, int) and value >= 0:
        return value
    raise ConfigError(f"{where}: max_span must be a non-negative integer or 'inf'")


def _parse_entry(raw: Dict[str, Any], where: str) -> InstrumentConstraints:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: entry must be a mapping")
    missing = [f for f in REQUIRED_ENTRY_FIELDS if f not in raw]
    if missing:
        raise ConfigError(f"{where}: missing fields {', '.join(missing)}")
    midi_range = raw["range"]
    if (not isinstance(midi_range, list) or len(midi_range) != 2
            or not all(isinstance(v, int) and 0 <= v <= 127 for v in midi_range)):
        raise ConfigError(f"{where}: range must be two MIDI numbers")
    try:
        return InstrumentConstraints(
            canonical_name=str(raw["canonical"]),
            aliases=frozenset(str(a) for a in raw.get("aliases", [])),
            midi_range=(midi_range[0], midi_range[1]),
            max_span_semitones=_parse_span(raw["max_span"], where),
            monophonic=bool(raw["monophonic"]),
            programs=frozenset(int(p) for p in raw.get("programs", [])),
        )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}")


class ConstraintsManager:
    """Manages loading and validation of the instrument constraints table."""

    def __init__(self, table_path: Optional[str] = None):
        """
        Initialize constraints manager.

        Args:
            table_path: Path to the YAML table, the shipped instruments.yaml if None
        """
        self.table_path = Path(table_path) if table_path else DEFAULT_TABLE_PATH
        self._cached_table: Optional[InstrumentTable] = None
        self._loaded_mtime: Optional[datetime] = None
        self._raw_text: str = ""

    def load_table(self, force_reload: bool = False) -> InstrumentTable:
        """
        Load the constraints table.

        Raises:
            FileNotFoundError: If the table file doesn't exist
            ConfigError: If the table content is invalid
        """
        if not force_reload and self._cached_table and self._is_cache_valid():
            return self._cached_table

        if not self.table_path.exists():
            raise FileNotFoundError(f"Constraints table not found: {self.table_path}")

        logger.info(f"Loading constraints table from {self.table_path}")
        self._raw_text = self.table_path.read_text(encoding='utf-8')
        try:
            document = yaml.safe_load(self._raw_text)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {self.table_path}: {e}")

        table = self._build_table(document)
        self._cached_table = table
        self._loaded_mtime = datetime.fromtimestamp(self.table_path.stat().st_mtime)
        logger.info(f"Loaded {len(table.entries)} instruments (table version {table.version})")
        return table

    @property
    def raw_text(self) -> str:
        """Table file content, used by the configuration fingerprint."""
        if not self._raw_text:
            self.load_table()
        return self._raw_text

    def _is_cache_valid(self) -> bool:
        try:
            modified = datetime.fromtimestamp(self.table_path.stat().st_mtime)
        except OSError:
            return False
        return self._loaded_mtime is not None and modified <= self._loaded_mtime

    def _build_table(self, document: Any) -> InstrumentTable:
        if not isinstance(document, dict):
            raise ConfigError("Constraints table must be a mapping")
        for section in ("version", "instruments"):
            if section not in document:
                raise ConfigError(f"Constraints table missing required section: {section}")

        entries = [
            _parse_entry(raw, f"instruments[{i}]")
            for i, raw in enumerate(document["instruments"] or [])
        ]
        default = None
        if document.get("default") is not None:
            raw_default = dict(document["default"])
            raw_default.setdefault("canonical", "Unknown")
            default = _parse_entry(raw_default, "default")
        return InstrumentTable(entries, default, int(document["version"]), str(self.table_path))


def load_instrument_table(table_path: Optional[str] = None) -> InstrumentTable:
    """Convenience function to load a constraints table."""
    return ConstraintsManager(table_path).load_table()
