//! Experiment runner: configuration, matched-budget policy comparisons,
//! parameter sweeps, scene scans, metrics and CSV output.

mod config;
mod oracle;
mod report;
mod run;

pub use config::{
    parse_config, parse_config_str, AcquisitionSection, EstimatorKind, ExperimentConfig, ExposureSection, FluxModel,
    OutputSection, ParameterSource, PolicySection, PriorKind, PriorSection, SceneSection, SpadSection, SweepPoint,
    SweepSection,
};
pub use oracle::{
    likelihood_normalization_check, optimal_gate_check, OracleCheck, GATE_CHECK_FLUXES, NORMALIZATION_TOLERANCE,
};
pub use report::{
    compute_metrics, emit_csv, emit_summary_csv, format_sig, load_csv, GroupReport, MetricsReport, ResultRow, Stats,
    RESULT_HEADER, STATUS_FAILED, STATUS_OK, SUMMARY_HEADER,
};
pub use run::{
    load_scene_grid, random_depth, row_seed, run_pixel_experiment, run_scene_scan, run_scene_scan_on, run_sweep,
    with_threads, PixelSpec, ScanMaps, ScanResult, SweepResult, MAP_SENTINEL,
};
