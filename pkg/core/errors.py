"""
Error hierarchy shared by every engine.

Each family carries the process exit code the CLI reports for it:
2 for configuration / usage problems, 3 for bad data, 4 for training failures.
"""

from __future__ import annotations


class SocError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


# ── Configuration / usage (exit 2) ────────────────────────────────────

class ConfigError(SocError):
    exit_code = 2


class InvalidConfig(ConfigError):
    """A configuration object violates its invariants."""


class UnknownPreset(ConfigError):
    """A preset name does not match any shipped or user preset file."""


class InvalidSpec(ConfigError):
    """A profile or experiment spec cannot be turned into a profile."""


# ── Data (exit 3) ─────────────────────────────────────────────────────

class DataError(SocError):
    exit_code = 3


class InvalidSeries(DataError):
    """Channel lengths, timeline or values violate the series schema."""


class SeriesTooShort(DataError):
    """The series is not longer than the largest configured lag."""


class MissingGroundTruth(DataError):
    """An operation needs the SOC channel and the series has none."""


class DimensionMismatch(DataError):
    """A row or weight array does not match the network dimensions."""


class TooManyOutliers(DataError):
    """Cleansing flagged more samples than the allowed fraction."""


class DegenerateChannel(DataError):
    """A channel has max <= min, so it cannot be normalized."""


class NoSegments(DataError):
    """Every sample sits inside the current deadband."""


class ChannelMismatch(DataError):
    """Series channels do not match what a bundle was trained on."""


class LengthMismatch(DataError):
    """Two series that must align have different lengths."""


class InvalidSoc0(DataError):
    """An initial SOC lies outside [0, 1]."""


class CutoffAtStart(DataError):
    """The initial state already violates a device voltage limit."""


class TooFewRows(DataError):
    """Not enough regressor rows to build a train/val/test split."""


# ── Training (exit 4) ─────────────────────────────────────────────────

class TrainingError(SocError):
    exit_code = 4


class SingularSystem(TrainingError):
    """The damped normal equations could not be factorized."""


class NonFiniteLoss(TrainingError):
    """Residuals became NaN or infinite during training."""


class SelftestFailed(TrainingError):
    """One or more built-in reference checks did not pass."""
