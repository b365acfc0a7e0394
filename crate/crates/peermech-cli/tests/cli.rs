//! End-to-end checks of the binary: output schemas, manifests, exit codes,
//! seeding fallbacks, and byte-identical reruns across worker counts.

use std::path::Path;
use std::process::Command;

fn peermech() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peermech"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn simulate_is_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, jobs) in [(&out_a, "1"), (&out_b, "4")] {
        let status = peermech()
            .args([
                "simulate",
                "--preset",
                "truthful",
                "--eta",
                "400",
                "--reliability-means",
                "2500,10000",
                "--trials-outer",
                "2",
                "--trials-inner",
                "2",
                "--gibbs-iterations",
                "200",
                "--gibbs-burn-in",
                "50",
                "--seed",
                "11",
                "--jobs",
                jobs,
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        read(&out_a.join("aggregate.csv")),
        read(&out_b.join("aggregate.csv"))
    );
    for name in [
        "replications_eta400.00_rel2500.00.csv",
        "replications_eta400.00_rel10000.00.csv",
    ] {
        assert_eq!(read(&out_a.join(name)), read(&out_b.join(name)));
    }
    // 4 mechanisms x 2 reliabilities.
    let aggregate = read(&out_a.join("aggregate.csv"));
    assert_eq!(aggregate.lines().count(), 1 + 8);
    assert!(aggregate.starts_with("mechanism,mean_reliability,eta,rmse,rmse_ci,"));
}

#[test]
fn simulate_manifest_lists_existing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = peermech()
        .args([
            "simulate",
            "--preset",
            "mismatched",
            "--eta",
            "177.78",
            "--reliability-means",
            "625",
            "--trials-outer",
            "1",
            "--trials-inner",
            "2",
            "--gibbs-iterations",
            "100",
            "--gibbs-burn-in",
            "20",
            "--seed",
            "3",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("command=simulate"));
    assert!(manifest.contains("master_seed=3"));
    assert!(manifest.contains("config_sha256="));
    // Mismatched preset defaults to a shifted mechanism prior.
    assert!(manifest.contains("config.prior_mu=1.25"));
    assert!(manifest.contains("config.generation_mu=1"));
    for line in manifest.lines().filter(|l| l.starts_with("output=")) {
        let path = Path::new(line.trim_start_matches("output="));
        assert!(path.exists(), "missing listed output {}", path.display());
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.conf");
    std::fs::write(
        &config_path,
        "# sweep config\nseed=99\ntrials_outer=1\ntrials_inner=2\nreliability_means=625\neta=400\ngibbs_iterations=100\ngibbs_burn_in=20\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = peermech()
        .args([
            "simulate",
            "--config",
            config_path.to_str().unwrap(),
            "--seed",
            "123",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = read(&out.join("manifest.txt"));
    assert!(
        manifest.contains("master_seed=123"),
        "flag seed must win over config"
    );
}

#[test]
fn env_seed_fallback_applies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = peermech()
        .env("PEERMECH_SEED", "4242")
        .args([
            "simulate",
            "--eta",
            "400",
            "--reliability-means",
            "625",
            "--trials-outer",
            "1",
            "--trials-inner",
            "2",
            "--gibbs-iterations",
            "100",
            "--gibbs-burn-in",
            "20",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(read(&out.join("manifest.txt")).contains("master_seed=4242"));
}

#[test]
fn bad_inputs_exit_with_config_code() {
    // Unknown preset.
    let status = peermech()
        .args(["simulate", "--preset", "bogus", "--out-dir", "/tmp/never"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Unknown config key.
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.conf");
    std::fs::write(&config_path, "not_a_key=1\n").unwrap();
    let status = peermech()
        .args(["simulate", "--config", config_path.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Infeasible shape: k/2 equals the probe count.
    let status = peermech()
        .args([
            "simulate",
            "--n",
            "10",
            "--probes",
            "5",
            "--k",
            "10",
            "--reliability-means",
            "625",
            "--eta",
            "400",
            "--out-dir",
            dir.path().join("x").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Missing dataset file.
    let status = peermech()
        .args(["dataset", "--path", "/definitely/not/here.csv"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Malformed dataset contents is a runtime failure.
    let bad_data = dir.path().join("bad_data.csv");
    std::fs::write(
        &bad_data,
        "paper_id,grader_id,peer_grade,true_grade,order\n1,1,9,9,1\n",
    )
    .unwrap();
    let status = peermech()
        .args(["dataset", "--path", bad_data.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn transfer_scale_multiplies_dumped_transfers() {
    let dir = tempfile::tempdir().unwrap();
    let base_args = [
        "simulate",
        "--preset",
        "truthful",
        "--eta",
        "400",
        "--reliability-means",
        "2500",
        "--trials-outer",
        "1",
        "--trials-inner",
        "2",
        "--gibbs-iterations",
        "100",
        "--gibbs-burn-in",
        "20",
        "--seed",
        "13",
    ];
    let out_one = dir.path().join("one");
    let out_two = dir.path().join("two");
    for (out, scale) in [(&out_one, "1.0"), (&out_two, "2.0")] {
        let status = peermech()
            .args(base_args)
            .args([
                "--transfer-scale",
                scale,
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let name = "replications_eta400.00_rel2500.00.csv";
    let parse_transfers = |text: &str| -> Vec<f64> {
        text.lines()
            .skip(1)
            .filter(|l| l.starts_with("trupeqa"))
            .map(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap())
            .collect()
    };
    let ones = parse_transfers(&read(&out_one.join(name)));
    let twos = parse_transfers(&read(&out_two.join(name)));
    assert_eq!(ones.len(), twos.len());
    for (a, b) in ones.iter().zip(&twos) {
        assert!((b - 2.0 * a).abs() < 1e-15);
    }
}

#[test]
fn audit_reports_verdicts_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit");
    let status = peermech()
        .args([
            "audit",
            "--strategies",
            "truthful,own-score",
            "--replications",
            "60",
            "--n",
            "20",
            "--probes",
            "5",
            "--k",
            "4",
            "--seed",
            "9",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = read(&out.join("audit.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("check,strategy,replications,"));
    assert!(lines[1].starts_with("epir,"));
    let truthful_row = lines
        .iter()
        .find(|l| l.starts_with("eiic,truthful"))
        .unwrap();
    assert!(truthful_row.ends_with("pass"));
    // The identity deviation has exactly equal means.
    let fields: Vec<&str> = truthful_row.split(',').collect();
    assert_eq!(fields[3], fields[5]);
    let graders = read(&out.join("epir_graders.csv"));
    assert_eq!(graders.lines().count(), 1 + 20);
}

#[test]
fn dataset_run_is_deterministic_and_schema_correct() {
    let dir = tempfile::tempdir().unwrap();
    let gen_out = dir.path().join("gen");
    let status = peermech()
        .args([
            "gen-dataset",
            "--seed",
            "21",
            "--out-dir",
            gen_out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let data_path = gen_out.join("synthetic_dataset.csv");
    assert_eq!(read(&data_path).lines().count(), 1 + 1347);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = peermech()
            .args([
                "dataset",
                "--path",
                data_path.to_str().unwrap(),
                "--prior",
                "uniform",
                "--reruns",
                "3",
                "--gibbs-iterations",
                "200",
                "--gibbs-burn-in",
                "40",
                "--seed",
                "77",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv = read(&out_a.join("dataset_metrics.csv"));
    assert_eq!(csv, read(&out_b.join("dataset_metrics.csv")));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(
        lines[0],
        "mechanism,prior,rmse,rmse_ci,regrade_fraction,frac_ci"
    );
    // Mean and median carry empty CI fields; trupeqa and gibbs carry values.
    for mechanism in ["mean", "median"] {
        let row = lines.iter().find(|l| l.starts_with(mechanism)).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[3], "");
        assert_eq!(fields[5], "");
    }
    for mechanism in ["trupeqa", "gibbs"] {
        let row = lines.iter().find(|l| l.starts_with(mechanism)).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert!(!fields[3].is_empty());
        assert!(!fields[5].is_empty());
    }
    let manifest = read(&out_a.join("manifest.txt"));
    assert!(manifest.contains("config.gibbs_discrete_score=mode-of-retained-samples"));
}
