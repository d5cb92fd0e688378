//! Determinism acceptance check for the command-line interface: every
//! subcommand, executed twice with an identical configuration, must produce
//! byte-identical reports.
//!
//! Prints one `PASS`/`FAIL` line; run
//! `cargo test --test acceptance -- --nocapture` to see it.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pacbayes"))
}

/// Runs the binary with `args`, asserting success.
fn run_ok(args: &[&str]) {
    let out = binary().args(args).output().expect("binary starts");
    assert!(
        out.status.success(),
        "`pacbayes {}` failed with {:?}:\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// File name → raw bytes for every regular file in `dir`.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output directory exists") {
        let entry = entry.expect("readable entry");
        if entry.file_type().expect("file type").is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.insert(name, fs::read(entry.path()).expect("readable file"));
        }
    }
    assert!(!files.is_empty(), "no reports written to {}", dir.display());
    files
}

/// Executes `args` twice against the same output directory and asserts the
/// produced report files are byte-identical across the two runs.
fn assert_rerun_identical(label: &str, args: &[&str], out_dir: &Path) {
    run_ok(args);
    let first = snapshot(out_dir);
    run_ok(args);
    let second = snapshot(out_dir);
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "{label}: the two runs wrote different file sets"
    );
    for (name, bytes) in &first {
        assert_eq!(
            bytes, &second[name],
            "{label}: {name} differs between identical runs"
        );
    }
}

const SWEEP_TOML: &str = r#"
seed = 7
n_seeds = 2
delta = 0.05
output_dir = "{OUT}"

[synthetic]
d = 4
n_samples = 400

[splits]
train = 120
test = 80
validation = 40
trainsuffix = 40
z_true = 120

[arch]
hidden = [4]

[train]
epochs = 30

[grids]
lambda = [0.1, 1.0, 10.0, 100.0]
prior_var = [0.01, 0.05]

[mc]
m_empirical = 20
m_prior = 4
m_data = 4
metric_m = 20
"#;

const VALIDITY_TOML: &str = r#"
seed = 3
trials = 8
lambda = 0.5
prior_var = 0.05
delta = 0.05
output_dir = "{OUT}"
z_true_size = 200
m_empirical = 20
m_prior = 4
m_data = 4

[synthetic]
d = 6
n_per_draw = 30
"#;

const SYNTH_GEN_TOML: &str = r#"
output = "{OUT}/dataset.csv"
n_samples = 50

[synthetic]
d = 3
seed = 11
"#;

#[test]
fn criterion_9_reruns_produce_byte_identical_reports() {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let tmp = tempfile::tempdir().expect("temp dir");
        let root = tmp.path();

        let sweep_out = root.join("sweep_out");
        let sweep_cfg = root.join("sweep.toml");
        fs::write(&sweep_cfg, SWEEP_TOML.replace("{OUT}", &sweep_out.display().to_string()))
            .expect("config written");
        assert_rerun_identical(
            "sweep",
            &["sweep", sweep_cfg.to_str().expect("utf-8 path")],
            &sweep_out,
        );

        let corollary_out = root.join("corollary_out");
        assert_rerun_identical(
            "corollary",
            &[
                "corollary",
                "--delta",
                "0.1",
                "--grid",
                "lin:0.05:0.45:9",
                "--out",
                corollary_out.to_str().expect("utf-8 path"),
            ],
            &corollary_out,
        );

        let validity_out = root.join("validity_out");
        let validity_cfg = root.join("validity.toml");
        fs::write(
            &validity_cfg,
            VALIDITY_TOML.replace("{OUT}", &validity_out.display().to_string()),
        )
        .expect("config written");
        assert_rerun_identical(
            "validity",
            &["validity", validity_cfg.to_str().expect("utf-8 path")],
            &validity_out,
        );

        let synth_out = root.join("synth_out");
        fs::create_dir_all(&synth_out).expect("dir created");
        let synth_cfg = root.join("synth.toml");
        fs::write(
            &synth_cfg,
            SYNTH_GEN_TOML.replace("{OUT}", &synth_out.display().to_string()),
        )
        .expect("config written");
        assert_rerun_identical(
            "synth-gen",
            &["synth-gen", synth_cfg.to_str().expect("utf-8 path")],
            &synth_out,
        );
    }));
    let elapsed = start.elapsed();
    match outcome {
        Ok(()) => println!(
            "criterion 9 (byte-identical reports across reruns, all subcommands): \
             PASS ({elapsed:.2?})"
        ),
        Err(cause) => {
            println!("criterion 9 (byte-identical reports across reruns): FAIL ({elapsed:.2?})");
            std::panic::resume_unwind(cause);
        }
    }
}
