use std::path::Path;
use std::process::{Command, Output};

use hercules_core::{parse, Format};

fn sim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hercules-sim")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

const SMALL: &[&str] = &["--ops", "300", "--initial", "500", "--seed", "7"];

#[test]
fn run_writes_identical_json_for_equal_inputs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let mut args = vec!["run", "--workload", "bptree", "--design", "HERCULES", "--out", name];
        args.extend_from_slice(SMALL);
        ok(&sim(&args, dir.path()));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let runs = parse(std::str::from_utf8(&a).unwrap(), Format::Json).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].design, "HERCULES");
    assert_eq!(runs[0].tx.committed, 300);
}

#[test]
fn csv_output_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    for (d, f) in [("OPT", "opt.csv"), ("SWL_EADR", "swl.csv"), ("HERCULES", "h.csv")] {
        let mut args = vec!["run", "--workload", "hash_table", "--design", d, "--format", "csv", "--out", f];
        args.extend_from_slice(SMALL);
        ok(&sim(&args, dir.path()));
    }
    let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let o = sim(&["compare", "opt.csv", "swl.csv", "h.csv", "--baseline", "OPT"], dir.path());
    ok(&o);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let opt = rows.as_array().unwrap().iter().find(|r| r["design"] == "OPT").unwrap();
    assert_eq!(opt["throughput_ratio"], 1.0);

    let o = sim(&["compare", "swl.csv", "h.csv", "--baseline", "OPT"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no OPT run"));
}

#[test]
fn sweep_emits_one_row_per_point_and_design() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--workload",
        "rb_tree",
        "--design",
        "HERCULES,OPT",
        "--axis",
        "state_reset_cycles",
        "--points",
        "0,30,90",
        "--format",
        "csv",
    ];
    args.extend_from_slice(SMALL);
    let o = sim(&args, dir.path());
    ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 7);
}

#[test]
fn fuzz_passes_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["fuzz", "--workload", "linked_list", "--trials", "100", "--ops", "200", "--seed", "3"], dir.path());
    ok(&o);
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["trials"], 100);
    assert!(rep["violations"].as_array().unwrap().is_empty());

    let o = sim(
        &["fuzz", "--workload", "linked_list", "--ops", "200", "--seed", "3", "--replay-event", "500", "--dump", "c.bin"],
        dir.path(),
    );
    ok(&o);
    let o = sim(&["dump-inspect", "c.bin"], dir.path());
    ok(&o);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["clean_shutdown"], false);
}

#[test]
fn dump_inspect_reads_run_dumps_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--workload", "linked_list", "--design", "HERCULES", "--dump", "d.bin"];
    args.extend_from_slice(SMALL);
    ok(&sim(&args, dir.path()));
    let o = sim(&["dump-inspect", "d.bin"], dir.path());
    ok(&o);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["clean_shutdown"], true);
    assert_eq!(s["emergency_records"], 0);

    std::fs::write(dir.path().join("bad.bin"), b"HRCLDUMP\x01").unwrap();
    let o = sim(&["dump-inspect", "bad.bin"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt dump"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    // A small LLC so the log ring spills to pmem within a short run.
    std::fs::write(dir.path().join("cfg.toml"), "pmem_write_ns = 500\n").unwrap();
    let base = ["run", "--workload", "linked_list", "--design", "SWL_EADR", "--ops", "2000"];
    let small = ["--set", "cache_levels.2.capacity_bytes=262144", "--set", "cache_levels.1.capacity_bytes=65536"];
    let slow = sim(&[&base[..], &small, &["--config", "cfg.toml"]].concat(), dir.path());
    ok(&slow);
    let fast = sim(&[&base[..], &small, &["--config", "cfg.toml", "--set", "pmem_write_ns=100"]].concat(), dir.path());
    ok(&fast);
    let cycles = |o: &Output| parse(std::str::from_utf8(&o.stdout).unwrap(), Format::Json).unwrap()[0].cycles;
    assert!(cycles(&slow) > cycles(&fast));

    let o = sim(&[&base[..], &["--set", "no_such_key=1"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(1));
}
