mod common;

use std::fs;
use std::path::Path;

use ndc_dpsgd::optimizer::assignment_report;
use ndc_dpsgd::scenario::{
    cell_name, parse_scenario, read_assignment_csv, read_summary_csv, read_trace_csv, run_plan, run_plan_stage,
    CellStatus, Manifest, ScenarioConfig, Stage,
};

fn config(out: &Path) -> ScenarioConfig {
    let text = format!(
        "[layout]\npreset = reference\n[radio]\npath_loss_index = 4\n[optimizer]\nlambda_target = 0.5\n\
         [training]\nepochs = 2\niterations_per_epoch = 30\nlearning_rate = 0.01\nseed = 4\n\
         [data]\nsamples_per_node = 100\ntest_samples = 50\n\
         [sweep]\nlambda_target = 0.2, 0.6\nepsilon = 3, 5\n[output]\ndir = {}\n",
        out.display()
    );
    parse_scenario(Path::new("inline.ini"), &text).unwrap()
}

#[test]
fn every_file_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let report = run_plan(&c).unwrap();
    assert_eq!(report.cells.len(), 4);
    for cell in &report.cells {
        let cell_dir = dir.path().join(&cell.dir);
        let assignment = cell.assignment.as_ref().unwrap();
        assert_eq!(
            read_assignment_csv(&cell_dir.join("assignment.csv")).unwrap(),
            assignment_report(assignment)
        );
        assert_eq!(
            read_trace_csv(&cell_dir.join("trace.csv")).unwrap(),
            cell.trace.as_ref().unwrap().records
        );
    }
    let summary = read_summary_csv(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(
        summary,
        report.cells.iter().map(|c| c.summary.clone()).collect::<Vec<_>>()
    );
    for row in &summary {
        assert_eq!(row.status, CellStatus::Ok);
        assert!(row.lambda.unwrap() <= row.lambda_target + 1e-9);
    }
    let manifest = Manifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.files, report.files);
    assert_eq!(manifest.seeds["training"], 4);
    let echoed: ScenarioConfig = serde_json::from_value(manifest.config).unwrap();
    assert_eq!(echoed, c);
}

#[test]
fn rerun_gives_identical_csv_bodies() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_plan(&config(a.path())).unwrap();
    run_plan(&config(b.path())).unwrap();
    for file in &ra.files {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn rates_stage_writes_no_traces() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_plan_stage(&config(dir.path()), Stage::Rates, "optimize").unwrap();
    assert!(report.cells.iter().all(|c| c.trace.is_none()));
    assert!(!dir.path().join(cell_name(0.2, 3.0)).join("trace.csv").exists());
    let summary = read_summary_csv(&dir.path().join("summary.csv")).unwrap();
    assert!(summary
        .iter()
        .all(|r| r.final_accuracy.is_none() && r.t_com_s.is_some()));
}

#[test]
fn shipped_scenarios_load() {
    for name in ["fig3.ini", "minimal.ini"] {
        ndc_dpsgd::scenario::load_scenario(&common::scenario_path(name)).unwrap();
    }
}

#[test]
fn layout_and_data_files_resolve_next_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("nodes.csv"), "x,y\n0,0\n40,0\n0,60\n").unwrap();
    let mut data = String::from("a,b,label\n");
    for i in 0..60 {
        data.push_str(&format!("{},{},{}\n", i % 7, (i * 3) % 5, i % 2));
    }
    fs::write(dir.path().join("data.csv"), data).unwrap();
    let ini = dir.path().join("s.ini");
    fs::write(
        &ini,
        "[layout]\nfile = nodes.csv\n[radio]\npath_loss_index = 3\n[optimizer]\nlambda_target = 0.5\n\
         [data]\nsource = csv\npath = data.csv\nlabel_column = label\n",
    )
    .unwrap();
    let c = ndc_dpsgd::scenario::load_scenario(&ini).unwrap();
    assert_eq!(c.layout.len(), 3);
    // Two features and two classes: 6 parameters.
    assert_eq!(c.optimizer.model_bits, 6.0 * 32.0);
}
