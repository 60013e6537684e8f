use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vessel_risk::factors::CatalogConfig;
use vessel_risk::filter::FilterConfig;
use vessel_risk::forest::ForestConfig;
use vessel_risk::pipeline::{FilterArtifact, RankArtifact, RunConfig, RunReport};
use vessel_risk::resample::{ResampleConfig, TargetCounts};
use vessel_risk::select::{CvConfig, GridSpec, RankingConfig};
use vessel_risk::synth::SynthConfig;

fn small_config() -> RunConfig {
    let forest = ForestConfig {
        n_trees: 8,
        max_depth: Some(6),
        ..ForestConfig::default()
    };
    RunConfig {
        synth: Some(SynthConfig {
            n_vessels: 50,
            n_doc_companies: 4,
            n_flags: 3,
            ..SynthConfig::default()
        }),
        catalog: CatalogConfig {
            annual_years: vec![1, 2],
            cumulative_years: vec![2],
            decayed_years: vec![2],
            ..CatalogConfig::default()
        },
        ranking: RankingConfig {
            forest: forest.clone(),
            shap_samples: Some(60),
        },
        forest,
        resample: ResampleConfig {
            target_counts: TargetCounts::Ratio {
                weights: vec![10.0, 5.0, 2.0],
                majority_target: None,
            },
            ..ResampleConfig::default()
        },
        grid: GridSpec {
            tau_values: vec![0.3, 0.6],
            window_values: vec![5, 10],
        },
        cv: CvConfig { folds: 3, seed: 0 },
        max_n: Some(4),
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vessel-risk"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg("2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_all_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let o = run(&["run-all"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(!report.payload.key_factors.is_empty());
    assert!(report.payload.ground_truth.is_some());

    // report refuses to overwrite, then regenerates with --force
    assert_eq!(code(&run(&["report"], &cfg, &out)), 1);
    let o = run(&["report", "--force"], &cfg, &out);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    for row in &report.payload.key_factors {
        assert!(table.contains(&row.description), "{table}");
        assert!(table.contains(&row.category));
    }
}

#[test]
fn stage_wise_run_with_noop_filter() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.filter = FilterConfig {
        r_tau: 1.0,
        ..FilterConfig::default()
    };
    let cfg = write_config(dir.path(), &config);
    let out = dir.path().join("run");

    let o = run(&["build-dataset"], &cfg, &out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));

    for stage in ["ingest", "build-dataset", "resample", "train", "rank", "filter"] {
        let o = run(&[stage], &cfg, &out);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let rank: RankArtifact = serde_json::from_str(&std::fs::read_to_string(out.join("rank.json")).unwrap()).unwrap();
    let filtered: FilterArtifact =
        serde_json::from_str(&std::fs::read_to_string(out.join("filter.json")).unwrap()).unwrap();
    assert_eq!(filtered.outcome.rank, rank.rank);

    // select without a search uses the configured filter
    let o = run(&["select"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["train"], &cfg, &out)), 1);
    assert_eq!(code(&run(&["train", "--force"], &cfg, &out)), 0);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_vessel-risk"))
        .args(["run-all", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);

    let mut both = small_config();
    both.input = Some(dir.path().to_path_buf());
    let cfg = write_config(dir.path(), &both);
    assert_eq!(code(&run(&["ingest"], &cfg, &out)), 1);

    let o = Command::new(env!("CARGO_BIN_EXE_vessel-risk"))
        .args(["ingest", "--mode", "sideways"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn ingest_from_csv_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let synth_out = dir.path().join("synth");
    assert_eq!(code(&run(&["synth"], &cfg, &synth_out)), 0);

    let config = RunConfig {
        input: Some(synth_out.join("data")),
        synth: None,
        ..small_config()
    };
    let cfg = write_config(dir.path(), &config);
    let out = dir.path().join("run");
    let o = run(&["ingest"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["incidents.csv", "profiles.csv", "membership.csv"] {
        assert_eq!(
            std::fs::read_to_string(out.join("data").join(f)).unwrap(),
            std::fs::read_to_string(synth_out.join("data").join(f)).unwrap()
        );
    }
}
