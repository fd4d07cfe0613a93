use ricforge::intent::{ActionType, LabelRule};
use ricforge::ricsim::{baseline_threshold_xapp, constant_xapp, run_closed_loop, ActionPolicy, RunConfig, RunRow};
use ricforge::telemetry::{
    default_scenario, generate_trace, read_trace, sidecar_path, write_trace, CellSimulator, TargetClass,
    TelemetryError, TraceReplay,
};

fn short_trace(seed: u64) -> ricforge::telemetry::TelemetryTrace {
    let (mut cell, ues) = default_scenario(seed);
    cell.duration_s = 400.0;
    generate_trace(&cell, &ues).unwrap()
}

fn rule() -> LabelRule {
    LabelRule { threshold_fraction: 0.8, horizon_intervals: 2 }
}

fn without_timing(rows: &[RunRow]) -> Vec<RunRow> {
    rows.iter().cloned().map(|r| RunRow { inference_us: 0.0, ..r }).collect()
}

#[test]
fn trace_files_round_trip_byte_for_byte() {
    let trace = short_trace(6);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_trace(&trace, &a).unwrap();
    let back = read_trace(&a).unwrap();
    assert_eq!(back, trace);
    write_trace(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(sidecar_path(&a)).unwrap(), std::fs::read(sidecar_path(&b)).unwrap());
}

#[test]
fn malformed_traces_report_the_line() {
    let trace = short_trace(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace(&trace, &path).unwrap();
    let good = std::fs::read_to_string(&path).unwrap();

    let mut lines: Vec<&str> = good.lines().collect();
    lines[5] = "1,2,3";
    std::fs::write(&path, lines.join("\n")).unwrap();
    match read_trace(&path) {
        Err(TelemetryError::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let swapped = good.replacen("t,ue_id", "ue_id,t", 1);
    std::fs::write(&path, swapped).unwrap();
    assert!(matches!(read_trace(&path), Err(TelemetryError::Parse { line: 1, .. })));

    std::fs::write(&path, &good).unwrap();
    std::fs::remove_file(sidecar_path(&path)).unwrap();
    assert!(matches!(read_trace(&path), Err(TelemetryError::Io { .. })));
}

#[test]
fn replaying_a_stored_trace_matches_live_simulation() {
    let (mut cell, ues) = default_scenario(8);
    cell.duration_s = 400.0;
    let trace = generate_trace(&cell, &ues).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace(&trace, &path).unwrap();
    let stored = read_trace(&path).unwrap();

    let policy =
        ActionPolicy { kind: ActionType::ReservePrb, fraction: 0.2, target_class: TargetClass::Edge, ttl_intervals: 3 };
    let config = RunConfig::new(rule());
    for handle in [baseline_threshold_xapp(0.8).with_action(policy), constant_xapp(true).with_action(policy)] {
        let live = run_closed_loop(&mut CellSimulator::new(cell.clone(), ues.clone()).unwrap(), &handle, &config).unwrap();
        let replay = run_closed_loop(&mut TraceReplay::new(&stored), &handle, &config).unwrap();
        assert_eq!(without_timing(&live.rows), without_timing(&replay.rows), "{}", handle.xapp_id);
        assert_eq!(live.actions, replay.actions);
        assert_eq!(live.to_csv(false), replay.to_csv(false));
    }
}

#[test]
fn monitor_only_replay_reproduces_recorded_allocations() {
    let trace = short_trace(10);
    let run = run_closed_loop(&mut TraceReplay::new(&trace), &baseline_threshold_xapp(0.8), &RunConfig::new(rule())).unwrap();
    assert_eq!(run.rows.len(), trace.interval_count());
    for (row, &u) in run.rows.iter().zip(&trace.util) {
        assert_eq!(row.util, u);
        assert!(!row.action_active);
        assert_eq!(row.reserved_prbs, 0);
    }
}

#[test]
fn reservations_raise_edge_allocation_during_bursts() {
    let trace = short_trace(12);
    let config = RunConfig::new(rule());
    let policy =
        ActionPolicy { kind: ActionType::ReservePrb, fraction: 0.2, target_class: TargetClass::Edge, ttl_intervals: 3 };
    let quiet = run_closed_loop(&mut TraceReplay::new(&trace), &constant_xapp(true), &config).unwrap();
    let acting = run_closed_loop(&mut TraceReplay::new(&trace), &constant_xapp(true).with_action(policy), &config).unwrap();
    let edge = |rows: &[RunRow]| rows.iter().filter(|r| r.burst_on).map(|r| u64::from(r.edge_prb_allocated)).sum::<u64>();
    assert!(edge(&acting.rows) > edge(&quiet.rows));
    for (a, q) in acting.rows.iter().zip(&quiet.rows) {
        assert_eq!(a.util, q.util, "work conservation keeps total utilization at t={}", a.t);
        assert!(a.edge_prb_allocated >= q.edge_prb_allocated);
        assert!(a.edge_prb_allocated <= a.edge_prb_demanded);
    }
}
