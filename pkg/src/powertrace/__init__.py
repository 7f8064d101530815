"""Multi-rail power-trace forensics.

Ingest scripted voltage/current captures, compute per-rail power, cut
runs into event segments using CPU-stress markers, and compare clean
versus infected profiles. A seeded synthetic testbed generates captures
with known ground truth for testing.
"""

from .compare import (
    AggregateCell,
    AggregateReport,
    CompareParams,
    ComparisonKind,
    ComparisonReport,
    LagResult,
    Verdict,
    aggregate,
    align,
    classify_increment,
    detect_spikes,
    estimate_lag,
    run_canonical_comparisons,
    segment_power_pool,
)
from .errors import (
    AdcRangeError,
    AggregationError,
    AlignmentError,
    CaptureFormatError,
    ComparisonError,
    ManifestError,
    MarkerDetectionError,
    PowerTraceError,
    ScenarioConfigError,
    SegmentationError,
    TimingError,
)
from .ingest import (
    CalibrationConfig,
    capture_paths,
    manifest_path_for,
    quantize,
    read_capture,
    write_capture,
)
from .model import (
    DEFAULT_SAMPLE_PERIOD_S,
    RAIL_NOMINAL_VOLTAGE,
    RAIL_ORDER,
    CaptureRun,
    EventKind,
    MachineState,
    PowerSeries,
    RailKind,
    RailTrace,
    RunSchedule,
    validate_run,
)
from .power import compute_power, power_summary, window_sample_count, windowed_means
from .segment import (
    EventSegment,
    Marker,
    MarkerParams,
    detect_markers,
    segment_events,
    smooth_series,
)
from .synth import (
    GroundTruth,
    InfectionEffect,
    ScenarioConfig,
    generate_ensemble,
    generate_run,
    ground_truth_to_json,
    load_scenario,
    scenario_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "AdcRangeError",
    "AggregateCell",
    "AggregateReport",
    "AggregationError",
    "AlignmentError",
    "CalibrationConfig",
    "CaptureFormatError",
    "CaptureRun",
    "CompareParams",
    "ComparisonError",
    "ComparisonKind",
    "ComparisonReport",
    "DEFAULT_SAMPLE_PERIOD_S",
    "EventKind",
    "EventSegment",
    "GroundTruth",
    "InfectionEffect",
    "LagResult",
    "MachineState",
    "ManifestError",
    "Marker",
    "MarkerDetectionError",
    "MarkerParams",
    "PowerSeries",
    "PowerTraceError",
    "RAIL_NOMINAL_VOLTAGE",
    "RAIL_ORDER",
    "RailKind",
    "RailTrace",
    "RunSchedule",
    "ScenarioConfig",
    "ScenarioConfigError",
    "SegmentationError",
    "TimingError",
    "Verdict",
    "aggregate",
    "align",
    "capture_paths",
    "classify_increment",
    "compute_power",
    "detect_markers",
    "detect_spikes",
    "estimate_lag",
    "generate_ensemble",
    "generate_run",
    "ground_truth_to_json",
    "load_scenario",
    "manifest_path_for",
    "power_summary",
    "quantize",
    "read_capture",
    "run_canonical_comparisons",
    "scenario_from_dict",
    "segment_events",
    "segment_power_pool",
    "smooth_series",
    "validate_run",
    "window_sample_count",
    "windowed_means",
    "write_capture",
]
