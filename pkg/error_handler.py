"""
Error Handler for scorelint
Exception hierarchy plus centralized error recording and logging.
"""

import logging
import traceback
from collections import Counter
from typing import Dict, Any, Optional, List
from enum import Enum
from dataclasses import dataclass
from datetime import datetime


class ScoreLintError(Exception):
    """Base class for all scorelint errors."""


class AbcSyntaxError(ScoreLintError):
    """Error located in ABC source text."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class LexError(AbcSyntaxError):
    """Illegal token in ABC input."""


class StructureError(AbcSyntaxError):
    """Structurally invalid ABC: missing K:, undeclared voice, bad key."""


class RangeError(AbcSyntaxError):
    """Pitch outside MIDI 0-127."""


class UnrepresentableError(ScoreLintError):
    """A duration cannot be written with the supported tuplet set."""


class EmptyScoreError(ScoreLintError):
    """Score has no parts, measures or sounding points."""


class SchemaError(ScoreLintError):
    """Plan document does not match the interchange schema."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class UnknownInstrumentError(ScoreLintError):
    """No constraints entry and no permissive default allowed."""


class NoApplicableMetricsError(ScoreLintError):
    """No applicable constituent score to average."""


class EmptyCorpusError(ScoreLintError):
    """Corpus directory holds no score files."""


class ConfigError(ScoreLintError):
    """Invalid configuration file or constraints table."""


class ErrorType(Enum):
    """Types of errors that can occur while evaluating scores."""
    PARSE = "parse"
    STRUCTURE = "structure"
    PITCH_RANGE = "pitch_range"
    PLAN_SCHEMA = "plan_schema"
    CONFIG = "config"
    FILE_ACCESS = "file_access"
    METRIC = "metric"
    UNKNOWN = "unknown"


class ErrorSeverity(Enum):
    """Severity levels for errors."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


# Validation issue code emitted for each error type.
ISSUE_CODES = {
    ErrorType.PARSE: "PARSE_ERROR",
    ErrorType.STRUCTURE: "MISSING_PART_DECLARATION",
    ErrorType.PITCH_RANGE: "PITCH_OUT_OF_RANGE",
    ErrorType.PLAN_SCHEMA: "PLAN_SCHEMA_ERROR",
    ErrorType.CONFIG: "CONFIG_ERROR",
    ErrorType.FILE_ACCESS: "FILE_ACCESS_ERROR",
    ErrorType.METRIC: "METRIC_ERROR",
    ErrorType.UNKNOWN: "UNKNOWN_ERROR",
}


@dataclass
class ErrorInfo:
    """Information about an error occurrence."""
    error_type: ErrorType
    severity: ErrorSeverity
    message: str
    user_message: str
    technical_details: str
    timestamp: datetime
    recovery_suggestions: List[str]
    can_retry: bool = False

    @property
    def issue_code(self) -> str:
        return ISSUE_CODES[self.error_type]


_LOG_LEVELS = {
    ErrorSeverity.CRITICAL: logging.CRITICAL,
    ErrorSeverity.HIGH: logging.ERROR,
    ErrorSeverity.MEDIUM: logging.WARNING,
    ErrorSeverity.LOW: logging.INFO,
}


class ErrorHandler:
    """Centralized error handling for score evaluation."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self._history: List[ErrorInfo] = []

    def _record(self, error_type: ErrorType, severity: ErrorSeverity, message: str, user_message: str,
                details: str, suggestions: List[str], can_retry: bool = False,
                exception: Optional[BaseException] = None) -> ErrorInfo:
        info = ErrorInfo(error_type, severity, message, user_message, details, datetime.now(),
                         suggestions, can_retry)
        self.logger.log(_LOG_LEVELS[severity], f"[{error_type.name}] {message}")
        if exception is not None:
            self.logger.debug(f"{type(exception).__name__}: {details}\n{traceback.format_exc()}")
        self._history.append(info)
        return info

    def handle_parse_error(self, exception: AbcSyntaxError, source: str) -> ErrorInfo:
        """Handle errors raised while reading ABC text."""
        if isinstance(exception, StructureError):
            error_type = ErrorType.STRUCTURE
            suggestions = [
                "Declare every voice with a V: field before using it",
                "Make sure the header ends with a K: field",
            ]
        elif isinstance(exception, RangeError):
            error_type = ErrorType.PITCH_RANGE
            suggestions = ["Check octave marks (' and ,) on the offending note"]
        else:
            error_type = ErrorType.PARSE
            suggestions = [
                "Check the reported line and column for an unsupported token",
                "See docs/abc_subset.md for the supported ABC subset",
            ]
        return self._record(error_type, ErrorSeverity.MEDIUM, f"Failed to parse {source}: {exception}",
                            "The score could not be read; it is counted as an invalid file.",
                            str(exception), suggestions, exception=exception)

    def handle_file_access_error(self, exception: Exception, file_path: str) -> ErrorInfo:
        """Input files that are missing or unreadable."""
        return self._record(ErrorType.FILE_ACCESS, ErrorSeverity.HIGH, f"Cannot read {file_path}",
                            "Unable to read an input file.", str(exception),
                            ["Check the path exists", "Check read permissions on the file and its directory"],
                            can_retry=True, exception=exception)

    def handle_config_error(self, exception: Exception, config_path: str) -> ErrorInfo:
        """Handle configuration and constraints-table errors."""
        return self._record(ErrorType.CONFIG, ErrorSeverity.CRITICAL, f"Invalid configuration in {config_path}",
                            "The configuration could not be loaded.", str(exception),
                            ["Check the YAML syntax", "Remove unknown keys",
                             "Compare against scorelint.example.yaml"],
                            can_retry=True, exception=exception)

    def handle_plan_error(self, exception: SchemaError, plan_path: str) -> ErrorInfo:
        """Handle plan documents that fail schema validation."""
        return self._record(ErrorType.PLAN_SCHEMA, ErrorSeverity.MEDIUM,
                            f"Plan {plan_path} rejected at {exception.pointer or '/'}",
                            "The plan file does not match the plan schema; adherence is skipped.",
                            str(exception), ["Validate the plan against docs/plan_schema.md"],
                            exception=exception)

    def handle_metric_warning(self, message: str, details: str) -> ErrorInfo:
        """Record a non-fatal metric condition (unknown instrument, missing tempo)."""
        return self._record(ErrorType.METRIC, ErrorSeverity.LOW, message, message, details,
                            ["Add the instrument to instruments.yaml"])

    def handle_unknown_error(self, exception: Exception, context: str = "") -> ErrorInfo:
        where = f" in {context}" if context else ""
        return self._record(ErrorType.UNKNOWN, ErrorSeverity.HIGH, f"Unexpected {type(exception).__name__}{where}",
                            "Something unexpected happened while evaluating this file.", str(exception),
                            ["Re-run with --verbose and report the stack trace"], exception=exception)

    def get_error_history(self) -> List[ErrorInfo]:
        return list(self._history)

    def clear_error_history(self):
        self._history.clear()

    def get_error_stats(self) -> Dict[str, Any]:
        """Counts by error type and by severity."""
        if not self._history:
            return {"total_errors": 0}
        return {
            "total_errors": len(self._history),
            "error_types": dict(Counter(info.error_type.value for info in self._history)),
            "severity_distribution": dict(Counter(info.severity.value for info in self._history)),
        }


# Global error handler instance
error_handler = ErrorHandler()
