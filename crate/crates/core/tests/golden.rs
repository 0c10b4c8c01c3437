//! Self-golden regression: one fully specified row, frozen after its first
//! run. Any change to the simulator, RNG streams, policies or estimators
//! shows up here.

use spadgate::harness::{emit_csv, run_sweep, ExperimentConfig};
use spadgate::policies::PolicyKind;

const GOLDEN: &str = "golden,adaptive,0,,,0.02,0.04,2,81,100,0,6791897765849424158,458,6.86524729,122,122.451795,\
1.82873399,336,1,0.958670048,5.95506241,0.0208449444,904,904,5,100.0738,ok,";

#[test]
fn golden_adaptive_row() {
    let mut cfg = ExperimentConfig::single_pixel(0.02, 0.04);
    cfg.experiment_id = "golden".into();
    cfg.scene.signal_flux = None;
    cfg.scene.sbr = Some(2.0);
    cfg.acquisition.global_seed = 1;
    cfg.acquisition.seeds = 1;
    cfg.policies.list = vec![PolicyKind::Adaptive];
    let res = run_sweep(&cfg).unwrap();
    assert_eq!(res.rows.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.csv");
    emit_csv(&res.rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert_eq!(row, GOLDEN);
}
