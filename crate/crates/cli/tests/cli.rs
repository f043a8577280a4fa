use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_union-sim"));
    c.env_remove("UNION_SIM_LOG");
    c
}

fn core(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core").join(path)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn deposit_table_default_grid_matches_golden() {
    let o = bin().arg("deposit-table").output().unwrap();
    assert!(o.status.success());
    let golden = include_str!("golden/deposit-table.txt");
    assert_eq!(stdout(&o), golden);
}

#[test]
fn deposit_table_rows_are_machine_readable() {
    let o = bin()
        .args(["deposit-table", "--fee-rates", "5,30", "--functionaries", "10", "100"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip_while(|l| !l.starts_with("functionaries,")).skip(1).collect();
    assert_eq!(
        rows,
        [
            "10,5,270332,12164940,0.12164940",
            "10,30,270332,72989640,0.72989640",
            "100,5,270332,133814340,1.33814340",
            "100,30,270332,802886040,8.02886040",
        ]
    );
}

#[test]
fn deposit_table_rejects_zero() {
    let o = bin().args(["deposit-table", "--fee-rates", "0"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_over_published_grid_matches_golden() {
    let o = bin().args(["sweep", "--grid"]).arg(core("grids/deposit-table.grid")).output().unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o), include_str!("golden/deposit-table.txt"));
}

#[test]
fn sweep_single_cell_gives_one_row() {
    let o = bin().args(["sweep", "--grid"]).arg(core("grids/single-cell.grid")).output().unwrap();
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("10,5,")).count(), 1);
    assert_eq!(out.lines().filter(|l| l.contains(" | ")).count(), 2);
}

#[test]
fn sweep_parallelism_column() {
    let o = bin().args(["sweep", "--grid"]).arg(core("grids/parallelism.grid")).output().unwrap();
    let p_max: Vec<u64> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(p_max, [5, 10]);
}

#[test]
fn sweep_rejects_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("bad.grid");
    std::fs::write(&grid, "colour 1 2\n").unwrap();
    let o = bin().args(["sweep", "--grid"]).arg(&grid).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown axis"));
}

#[test]
fn run_writes_a_log_that_check_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let o = bin().arg("run").arg(core("scenarios/fork-prover.scn")).arg("--log").arg(&log).output().unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("slashed f2"));
    let c = bin().arg("check").arg(&log).output().unwrap();
    assert!(c.status.success());
    assert!(!stdout(&c).contains("FAIL"));
}

#[test]
fn run_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (i, seed) in [9, 9, 10].iter().enumerate() {
        let log = dir.path().join(format!("{i}.jsonl"));
        let o = bin()
            .arg("run")
            .arg(core("scenarios/fake-proof-prover.scn"))
            .args(["--seed", &seed.to_string(), "--log"])
            .arg(&log)
            .output()
            .unwrap();
        assert!(o.status.success());
        logs.push(std::fs::read(&log).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_ne!(logs[0], logs[2]);
}

#[test]
fn negative_control_exits_one() {
    let o = bin().arg("run").arg(core("scenarios/all-leaked.scn")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL safety"));
}

#[test]
fn check_flags_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let o = bin().arg("run").arg(core("scenarios/happy-path.scn")).arg("--log").arg(&log).output().unwrap();
    assert!(o.status.success());
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let last = lines.pop().unwrap();
    let mut final_event: serde_json::Value = serde_json::from_str(&last).unwrap();
    let bal = &mut final_event["balances"][0][1];
    *bal = serde_json::json!(bal.as_u64().unwrap() + 1);
    lines.push(final_event.to_string());
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let c = bin().arg("check").arg(&log).output().unwrap();
    assert_eq!(c.status.code(), Some(1));
    assert!(stdout(&c).contains("FAIL conservation"));
}

#[test]
fn check_reports_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{not json}\n").unwrap();
    let o = bin().arg("check").arg(&log).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));
}

#[test]
fn bad_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    std::fs::write(&scn, "name x\nfunctionaries three\n").unwrap();
    let o = bin().arg("run").arg(&scn).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn verbosity_comes_from_the_environment() {
    let quiet = bin().arg("run").arg(core("scenarios/silent-prover.scn")).output().unwrap();
    assert!(quiet.stderr.is_empty());
    let loud = bin()
        .env("UNION_SIM_LOG", "info")
        .arg("run")
        .arg(core("scenarios/silent-prover.scn"))
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&loud.stderr).contains("slashed"));
    assert_eq!(quiet.stdout, loud.stdout);
}
