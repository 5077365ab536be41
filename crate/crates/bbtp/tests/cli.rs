//! End-to-end tests of the command-line interface, run against the built
//! binary in hermetic temporary directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bbtp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bbtp"))
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Writes a 4-decoder configuration and returns the config directory.
fn write_configs(dir: &Path) -> PathBuf {
    let configs = dir.join("configs");
    fs::create_dir_all(&configs).unwrap();
    fs::write(
        configs.join("TEST4.json"),
        r#"{
            "name": "TEST4",
            "n_decoders": 4,
            "predecode_width": 5,
            "issue_width": 4,
            "dsb_width": 6,
            "idq_width": 64,
            "lsd_enabled": true,
            "lsd_unroll": {"3": 8},
            "jcc_erratum": false,
            "macro_fusible_on_last_decoder": false
        }"#,
    )
    .unwrap();
    // Same machine with a predecoder that only handles one instruction per
    // cycle; useful for shifting bottlenecks toward the front end.
    fs::write(
        configs.join("NARROWPRE.json"),
        r#"{
            "name": "NARROWPRE",
            "n_decoders": 4,
            "predecode_width": 1,
            "issue_width": 4,
            "dsb_width": 6,
            "idq_width": 64,
            "lsd_enabled": true,
            "lsd_unroll": {},
            "jcc_erratum": false,
            "macro_fusible_on_last_decoder": false
        }"#,
    )
    .unwrap();
    configs
}

/// A block of `count` plain single-uop instructions of 4 bytes each.
fn plain_block(count: usize) -> String {
    let instr = r#"{"length_bytes": 4, "fused_domain_uops": 1}"#;
    let list = vec![instr; count].join(",\n    ");
    format!("{{\n  \"instructions\": [\n    {}\n  ]\n}}\n", list)
}

/// A block whose uops all contend on execution port 0.
fn port_bound_block(count: usize) -> String {
    let instr = r#"{"length_bytes": 4, "fused_domain_uops": 1, "dispatch_uops": [[0]]}"#;
    let list = vec![instr; count].join(",\n    ");
    format!("{{\n  \"instructions\": [\n    {}\n  ]\n}}\n", list)
}

#[test]
fn analyze_text_report_contains_component_bounds() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("five.json");
    fs::write(&block, plain_block(5)).unwrap();

    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg(&block)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("Dec 1.25"), "report was:\n{}", text);
    assert!(text.contains("throughput: 1.25 cycles/iteration"));
    assert!(text.contains("primary bottleneck: Predec"));
}

#[test]
fn analyze_json_output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("five.json");
    fs::write(&block, plain_block(5)).unwrap();

    let run = || {
        let output = bbtp()
            .args([
                "analyze",
                "--arch",
                "TEST4",
                "--mode",
                "unroll",
                "--output",
                "json",
                "--config-dir",
            ])
            .arg(&configs)
            .arg(&block)
            .output()
            .unwrap();
        assert!(output.status.success(), "stderr: {}", stderr(&output));
        output.stdout
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.contains("\"exact\": \"5/4\""), "report was:\n{}", text);
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["throughput"]["decimal"], "1.25");
}

#[test]
fn analyze_unknown_arch_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("b.json");
    fs::write(&block, plain_block(2)).unwrap();

    let output = bbtp()
        .args(["analyze", "--arch", "NOPE", "--config-dir"])
        .arg(&configs)
        .arg(&block)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("unknown microarchitecture"));
}

#[test]
fn analyze_malformed_block_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("broken.json");
    fs::write(&block, "{ not json").unwrap();

    let output = bbtp()
        .args(["analyze", "--arch", "TEST4", "--config-dir"])
        .arg(&configs)
        .arg(&block)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("parse error"));
}

#[test]
fn analyze_idealize_reports_counterfactual() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("ports.json");
    fs::write(&block, port_bound_block(8)).unwrap();

    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--idealize",
            "ports",
            "--config-dir",
        ])
        .arg(&configs)
        .arg(&block)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    // Eight port-0 uops bound at 8.0; without them the machine issues
    // two cycles per iteration.
    assert!(text.contains("throughput: 8.00 cycles/iteration"));
    assert!(text.contains("idealizing Ports:"));
    assert!(text.contains("speedup: 4.00"));
}

fn write_bench_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let configs = write_configs(dir);
    let corpus = dir.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("one.json"), plain_block(4)).unwrap();
    fs::write(corpus.join("four.json"), plain_block(16)).unwrap();
    fs::write(corpus.join("ports.json"), port_bound_block(3)).unwrap();
    (configs, corpus)
}

#[test]
fn bench_scores_known_predictions() {
    let dir = TempDir::new().unwrap();
    let (configs, corpus) = write_bench_fixture(dir.path());
    // one.json predicts 1.00, four.json predicts 4.00 under unrolling.
    let measurements = dir.path().join("measured.csv");
    fs::write(
        &measurements,
        "block,measured\none.json,2.00\nfour.json,4.00\n",
    )
    .unwrap();

    let output = bbtp()
        .args([
            "bench",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--measurements")
        .arg(&measurements)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("MAPE: 25.00%"), "report was:\n{}", text);
    assert!(text.contains("Kendall tau-b: 1.0000"));
}

#[test]
fn bench_self_prediction_is_perfect() {
    let dir = TempDir::new().unwrap();
    let (configs, corpus) = write_bench_fixture(dir.path());

    // First pass with placeholder measurements captures the predictions.
    let measurements = dir.path().join("measured.csv");
    fs::write(
        &measurements,
        "block,measured\none.json,1.00\nfour.json,1.00\nports.json,1.00\n",
    )
    .unwrap();
    let per_block = dir.path().join("per-block.csv");
    let output = bbtp()
        .args([
            "bench",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--measurements")
        .arg(&measurements)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--per-block")
        .arg(&per_block)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));

    // Feed the predictions back as measurements.
    let mut feedback = String::from("block,measured\n");
    let mut distinct = std::collections::BTreeSet::new();
    for line in fs::read_to_string(&per_block).unwrap().lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4);
        feedback.push_str(&format!("{},{}\n", fields[0], fields[2]));
        distinct.insert(fields[2].to_string());
    }
    assert!(
        distinct.len() >= 2,
        "fixture should span several predictions"
    );
    fs::write(&measurements, feedback).unwrap();

    let output = bbtp()
        .args([
            "bench",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--measurements")
        .arg(&measurements)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("MAPE: 0.00%"), "report was:\n{}", text);
    assert!(text.contains("Kendall tau-b: 1.0000"));
}

#[test]
fn bench_missing_block_counts_as_zero_prediction() {
    let dir = TempDir::new().unwrap();
    let (configs, corpus) = write_bench_fixture(dir.path());
    let measurements = dir.path().join("measured.csv");
    // one.json predicts 1.00 (exact hit); gone.json does not exist.
    fs::write(
        &measurements,
        "block,measured\none.json,1.00\ngone.json,2.00\n",
    )
    .unwrap();

    let output = bbtp()
        .args([
            "bench",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--measurements")
        .arg(&measurements)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("reporting a throughput of zero"));
    // |1-1|/1 = 0 and |2-0|/2 = 1, so the mean error is 50%.
    assert!(stdout(&output).contains("MAPE: 50.00%"));
}

#[test]
fn bench_skips_non_positive_measurements() {
    let dir = TempDir::new().unwrap();
    let (configs, corpus) = write_bench_fixture(dir.path());
    let measurements = dir.path().join("measured.csv");
    fs::write(
        &measurements,
        "block,measured\none.json,1.00\nfour.json,0.00\nports.json,-1.00\n",
    )
    .unwrap();

    let output = bbtp()
        .args([
            "bench",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--measurements")
        .arg(&measurements)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("blocks: 1 (skipped: 2)"));
}

#[test]
fn study_reports_shares_transitions_and_idealization() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let corpus = dir.path().join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    // All three blocks are port-bound on TEST4; the single-instruction
    // predecoder of NARROWPRE moves the bottleneck to the front end.
    for name in ["a.json", "b.json", "c.json"] {
        fs::write(corpus.join(name), port_bound_block(6)).unwrap();
    }

    let output = bbtp()
        .args([
            "study",
            "--arch",
            "TEST4",
            "--arch",
            "NARROWPRE",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("arch TEST4: 3 blocks"));
    assert!(text.contains("Ports 100.00% (3)"), "report was:\n{}", text);
    assert!(text.contains("transitions TEST4 -> NARROWPRE:"));
    assert!(text.contains("Ports -> Predec: 3"));
    // Issue is never the bottleneck here, so idealizing it gains nothing.
    assert!(text.contains("Issue 1.00 / 1.00 / 1.00"));
}

#[test]
fn analyze_handles_several_blocks_in_one_invocation() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let five = dir.path().join("five.json");
    fs::write(&five, plain_block(5)).unwrap();
    let ports = dir.path().join("ports.json");
    fs::write(&ports, port_bound_block(3)).unwrap();

    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg(&five)
        .arg(&ports)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("Dec 1.25"));
    assert!(text.contains("Ports 3.00"));
    assert_eq!(text.matches("primary bottleneck:").count(), 2);

    // JSON output over several blocks is an array of reports.
    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--output",
            "json",
            "--config-dir",
        ])
        .arg(&configs)
        .arg(&five)
        .arg(&ports)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(parsed.as_array().map(|a| a.len()), Some(2));
}

#[test]
fn analyze_dumps_dependence_graph_as_dot() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("dep.json");
    fs::write(
        &block,
        r#"{
            "instructions": [
                {"length_bytes": 4, "fused_domain_uops": 1,
                 "reads": ["RAX"], "writes": ["RAX"],
                 "latencies": {"RAX->RAX": 3}}
            ]
        }"#,
    )
    .unwrap();
    let dot = dir.path().join("graph.dot");

    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "unroll",
            "--config-dir",
        ])
        .arg(&configs)
        .arg("--dump-graph")
        .arg(&dot)
        .arg(&block)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph dependence {"));
    assert!(text.contains("instr#0:consumed:RAX"));
    assert!(text.contains("label=\"3/0\""));
}

#[test]
fn analyze_loop_mode_uses_front_end_selection() {
    let dir = TempDir::new().unwrap();
    let configs = write_configs(dir.path());
    let block = dir.path().join("loop.json");
    fs::write(
        &block,
        r#"{
            "instructions": [
                {"length_bytes": 4, "fused_domain_uops": 1},
                {"length_bytes": 4, "fused_domain_uops": 1},
                {"length_bytes": 2, "fused_domain_uops": 1, "is_branch": true}
            ]
        }"#,
    )
    .unwrap();

    let output = bbtp()
        .args([
            "analyze",
            "--arch",
            "TEST4",
            "--mode",
            "loop",
            "--config-dir",
        ])
        .arg(&configs)
        .arg(&block)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    // Three uops fit the LSD; the configured unroll factor of 8 gives
    // ceil(24/4)/8 = 0.75.
    assert!(text.contains("LSD 0.75"), "report was:\n{}", text);
    assert!(!text.contains("DSB"));
}
