use std::path::Path;
use std::process::Command as Process;

use mosaic_cli::config::{ExperimentConfig, Kind};
use mosaic_cli::error::CliError;
use mosaic_cli::experiments::compare::compare_manifests;
use mosaic_cli::experiments::icl::IclScores;
use mosaic_cli::experiments::moons::Transitions;
use mosaic_cli::experiments::sweep::{grid, select, GridPoint, PointResult};
use mosaic_cli::experiments::{meta_get, meta_string, read_checkpoint};
use mosaic_cli::manifest::RunManifest;
use mosaic_cli::{run, Command, Outcome};
use mosaic_core::evaluation::{ErrorCurve, IclScore};
use mosaic_core::networks::Family;

const BIN: &str = env!("CARGO_BIN_EXE_mosaic");

fn sets(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn cfg(items: &[&str]) -> ExperimentConfig {
    ExperimentConfig::load(None, &sets(items)).unwrap()
}

const SMALL_MOONS: &[&str] = &[
    "moons.iterations=6",
    "moons.warmup=1",
    "moons.seq_len=60",
    "moons.eval_sequences=3",
    "moons.batch=2",
];

const SMALL_IND: &[&str] = &[
    "induction.iterations=6",
    "induction.warmup=1",
    "induction.train_samples=20",
    "induction.test_samples=10",
    "induction.batch=2",
    "model.d_model=16",
];

const SMALL_ICL: &[&str] = &[
    "icl.iterations=4",
    "icl.warmup=1",
    "icl.batch=2",
    "icl.train_sequences=12",
    "icl.train_pfas=6",
    "icl.val_sequences=6",
    "icl.test_sequences=6",
    "icl.iid_sequences=6",
    "model.d_model=16",
];

fn with(base: &[&str], extra: &[&str]) -> ExperimentConfig {
    let all: Vec<&str> = base.iter().chain(extra).copied().collect();
    cfg(&all)
}

fn outcome(c: &Command, config: &ExperimentConfig) -> Outcome {
    run(c, config).unwrap()
}

fn csv_files(o: &Outcome) -> Vec<(String, Vec<u8>)> {
    o.output
        .files
        .iter()
        .filter(|(n, _)| n.ends_with(".csv"))
        .cloned()
        .collect()
}

#[test]
fn unknown_keys_are_rejected() {
    for bad in ["run.nope=1", "nosection.seed=1", "moons.iterationz=3"] {
        let e = ExperimentConfig::load(None, &sets(&[bad])).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{bad}: {e}");
        assert!(e.to_string().contains("unknown config key"), "{e}");
    }
    let e = ExperimentConfig::load(Some("[moons]\nheadz = 3\n"), &[]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn malformed_overrides_and_values_are_config_errors() {
    for bad in [
        "moons.heads",
        "seed=3",
        "moons.heads=two",
        "moons.heads=2",
        "model.slots=bogus",
        "run.family=rnn",
    ] {
        let e = ExperimentConfig::load(None, &sets(&[bad])).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{bad}");
    }
    assert!(ExperimentConfig::load(Some("[moons\n"), &[]).is_err());
}

#[test]
fn later_sources_override_earlier_ones() {
    let c = ExperimentConfig::load(Some("[run]\nseed = 5\n"), &sets(&["run.seed=9"])).unwrap();
    assert_eq!(c.run.seed, 9);
    let c = ExperimentConfig::load(Some("[run]\nseed = 5\n"), &[]).unwrap();
    assert_eq!(c.run.seed, 5);
}

#[test]
fn config_record_round_trip() {
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_record(&d.to_record()).unwrap(), d);
    let c = cfg(&[
        "model.slots=7",
        "sweep.d_model=16 48",
        "profile.lambdas=0.1 0.2",
        "run.kind=icl",
    ]);
    let text = c.to_record().to_string();
    assert_eq!(ExperimentConfig::load(Some(&text), &[]).unwrap(), c);
}

#[test]
fn manifest_round_trips_and_loads_as_config() {
    let c = cfg(&["run.seed=11", "profile.sequences=8"]);
    let o = outcome(&Command::AttnProfile, &c);
    let text = o.output.manifest.to_string();
    let parsed = RunManifest::parse(&text).unwrap();
    assert_eq!(parsed, o.output.manifest);
    assert_eq!(parsed.kind, Some(Kind::AttnProfile));
    assert_eq!(ExperimentConfig::load(Some(&text), &[]).unwrap(), c);
    assert!(text.contains("[manifest]") && text.contains("code_version"));
}

#[test]
fn kind_must_match_subcommand() {
    let c = cfg(&["run.kind=moons"]);
    let e = run(&Command::AttnProfile, &c).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(run(
        &Command::AttnProfile,
        &cfg(&["run.kind=attnprofile", "profile.sequences=4"])
    )
    .is_ok());
}

#[test]
fn reruns_from_manifest_reproduce_csv_bytes() {
    let cases: Vec<(Command, ExperimentConfig)> = vec![
        (Command::Gradcheck, cfg(&["gradcheck.coords=4"])),
        (Command::AttnProfile, cfg(&["profile.sequences=8"])),
        (Command::MoonsTrain, with(SMALL_MOONS, &[])),
        (Command::Induction, with(SMALL_IND, &[])),
        (Command::IclTrain, with(SMALL_ICL, &[])),
    ];
    for (c, config) in cases {
        let first = outcome(&c, &config);
        let again = ExperimentConfig::load(Some(&first.output.manifest.to_string()), &[]).unwrap();
        let second = outcome(&c, &again);
        assert_eq!(csv_files(&first), csv_files(&second), "{}", c.name());
        assert_eq!(
            first.output.file("checkpoint.bin"),
            second.output.file("checkpoint.bin")
        );
    }
}

#[test]
fn seed_changes_the_data() {
    let a = outcome(&Command::AttnProfile, &cfg(&["run.seed=1", "profile.sequences=4"]));
    let b = outcome(&Command::AttnProfile, &cfg(&["run.seed=2", "profile.sequences=4"]));
    assert_ne!(csv_files(&a), csv_files(&b));
}

#[test]
fn csv_schemas_are_fixed() {
    let m = outcome(&Command::MoonsTrain, &with(SMALL_MOONS, &[]));
    let curve = std::str::from_utf8(m.output.file("error_curve.csv").unwrap()).unwrap();
    assert_eq!(curve.lines().next(), Some("context_length,mean_error"));
    let p = outcome(&Command::AttnProfile, &cfg(&["profile.sequences=4"]));
    let prof = std::str::from_utf8(p.output.file("attention_profile_lambda0.csv").unwrap()).unwrap();
    assert_eq!(prof.lines().next(), Some("relative_position,head_id,weight"));
    for (file, schema) in &m.output.manifest.artifacts {
        if file.ends_with(".csv") {
            let body = std::str::from_utf8(m.output.file(file).unwrap()).unwrap();
            assert_eq!(body.lines().next(), Some(schema.as_str()));
        }
    }
}

#[test]
fn moons_checkpoint_reproduces_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let train = outcome(&Command::MoonsTrain, &with(SMALL_MOONS, &[]));
    train.output.write(dir.path()).unwrap();
    let ck = dir.path().join("checkpoint.bin");
    let eval = outcome(
        &Command::MoonsEval,
        &with(SMALL_MOONS, &[&format!("moons.checkpoint={}", ck.display())]),
    );
    assert_eq!(
        train.output.file("error_curve.csv"),
        eval.output.file("error_curve.csv")
    );
}

#[test]
fn icl_checkpoint_reproduces_scores() {
    let dir = tempfile::tempdir().unwrap();
    let train = outcome(&Command::IclTrain, &with(SMALL_ICL, &[]));
    train.output.write(dir.path()).unwrap();
    let ck = dir.path().join("checkpoint.bin");
    let eval = outcome(
        &Command::IclEval,
        &with(SMALL_ICL, &[&format!("icl.checkpoint={}", ck.display())]),
    );
    assert_eq!(train.output.file("icl_scores.csv"), eval.output.file("icl_scores.csv"));

    let prof = outcome(
        &Command::AttnProfile,
        &with(
            SMALL_ICL,
            &[
                &format!("profile.checkpoint={}", ck.display()),
                "profile.len=12",
                "profile.sequences=4",
            ],
        ),
    );
    let body = std::str::from_utf8(prof.output.file("attention_profile.csv").unwrap()).unwrap();
    // 2 heads plus the mean, 12 positions each (the transformer sees its own position).
    let rows = body.lines().count() - 1;
    assert!(rows == 3 * 11 || rows == 3 * 12, "{rows}");

    // Wrong architecture for the stored parameters.
    let e = run(
        &Command::IclEval,
        &with(
            SMALL_ICL,
            &[&format!("icl.checkpoint={}", ck.display()), "model.d_model=8"],
        ),
    )
    .unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn induction_checkpoints_hold_every_depth() {
    let dir = tempfile::tempdir().unwrap();
    let o = outcome(&Command::Induction, &with(SMALL_IND, &["induction.depths=1 2"]));
    o.output.write(dir.path()).unwrap();
    let ck_path = dir.path().join("checkpoint.bin");
    let ck = read_checkpoint(ck_path.to_str().unwrap()).unwrap();
    assert_eq!(meta_get(&ck.meta, "depths"), Some("1,2"));
    assert!(ck.params.iter().any(|p| p.path.starts_with("blocks1.")));
    assert!(ck.params.iter().any(|p| p.path.starts_with("blocks2.")));
    let e = run(
        &Command::AttnProfile,
        &with(SMALL_IND, &[&format!("profile.checkpoint={}", ck_path.display())]),
    )
    .unwrap_err();
    assert_eq!(e.exit_code(), 2);

    let single = outcome(&Command::Induction, &with(SMALL_IND, &["induction.depths=2"]));
    single.output.write(dir.path()).unwrap();
    let p = outcome(
        &Command::AttnProfile,
        &with(
            SMALL_IND,
            &[
                &format!("profile.checkpoint={}", ck_path.display()),
                "profile.layer=1",
                "profile.len=20",
                "profile.sequences=3",
            ],
        ),
    );
    assert!(p.output.manifest.get_metric("bandwidth").is_some());
}

#[test]
fn checkpoint_reading_failures_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(read_checkpoint("").unwrap_err().exit_code(), 2);
    let missing = dir.path().join("none.bin");
    assert_eq!(read_checkpoint(missing.to_str().unwrap()).unwrap_err().exit_code(), 2);
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(read_checkpoint(junk.to_str().unwrap()).unwrap_err().exit_code(), 2);
}

#[test]
fn meta_strings_round_trip() {
    let m = meta_string(&[("kind", "icl".into()), ("family", "mosaic".into())]);
    assert_eq!(meta_get(&m, "kind"), Some("icl"));
    assert_eq!(meta_get(&m, "family"), Some("mosaic"));
    assert_eq!(meta_get(&m, "heads"), None);
}

#[test]
fn compare_reports_deltas_and_refuses_mismatches() {
    let a = outcome(&Command::AttnProfile, &cfg(&["profile.sequences=4"]))
        .output
        .manifest;
    let rows = compare_manifests(&a, &a).unwrap();
    assert_eq!(rows.len(), a.metrics.len());
    assert!(rows.iter().all(|r| r.delta() == 0.0));

    let mut b = a.clone();
    b.metrics.retain(|(k, _)| k != "bandwidth_monotone");
    let e = compare_manifests(&a, &b).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("bandwidth_monotone"), "{e}");

    let g = outcome(&Command::Gradcheck, &cfg(&["gradcheck.coords=2"]))
        .output
        .manifest;
    assert_eq!(compare_manifests(&a, &g).unwrap_err().exit_code(), 3);

    let mut c = a.clone();
    c.metrics[0].1 += 1.5;
    let rows = compare_manifests(&a, &c).unwrap();
    assert_eq!(rows[0].delta(), 1.5);
}

#[test]
fn grid_is_sorted_and_deduplicated() {
    let c = cfg(&["sweep.blocks=2 1 2", "sweep.d_model=64 32", "sweep.peak_lr=0.01 0.003"]);
    let g = grid(&c);
    assert_eq!(g.len(), 8);
    assert_eq!(
        g[0],
        GridPoint {
            blocks: 1,
            d_model: 32,
            peak_lr: 0.003
        }
    );
    assert_eq!(
        g[7],
        GridPoint {
            blocks: 2,
            d_model: 64,
            peak_lr: 0.01
        }
    );
    for w in g.windows(2) {
        let key = |p: &GridPoint| (p.blocks, p.d_model, p.peak_lr.to_bits());
        assert!(key(&w[0]) < key(&w[1]));
    }
}

fn result(index: usize, validation: f64) -> PointResult {
    let s = |a| IclScore {
        accuracy: a,
        tvd: 0.5,
        items: 10,
    };
    PointResult {
        family: Family::Mosaic,
        index,
        point: GridPoint {
            blocks: 1,
            d_model: 32,
            peak_lr: 0.01,
        },
        params: 100,
        scores: IclScores {
            validation: s(validation),
            test: s(0.0),
            iid: s(0.0),
        },
    }
}

#[test]
fn selection_takes_best_validation_and_first_on_ties() {
    let rs = vec![result(0, 0.4), result(1, 0.6), result(2, 0.6), result(3, 0.5)];
    assert_eq!(select(&rs).unwrap().index, 1);
    let rs = vec![result(0, 0.7), result(1, 0.7)];
    assert_eq!(select(&rs).unwrap().index, 0);
    assert!(select(&[]).is_none());
}

#[test]
fn sweep_refuses_grids_over_budget() {
    let e = run(&Command::Sweep, &with(SMALL_ICL, &["sweep.budget=15"])).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("budget"), "{e}");
}

#[test]
fn single_point_sweep_runs_both_families() {
    let c = with(
        SMALL_ICL,
        &[
            "sweep.blocks=1",
            "sweep.d_model=16",
            "sweep.peak_lr=0.01",
            "model.heads=2",
        ],
    );
    let o = outcome(&Command::Sweep, &c);
    let table = std::str::from_utf8(o.output.file("sweep.csv").unwrap()).unwrap();
    assert_eq!(table.lines().count(), 3);
    let m = &o.output.manifest;
    assert_eq!(m.get_metric("mosaic.selected_point"), Some(0.0));
    assert_eq!(m.get_metric("transformer.selected_point"), Some(0.0));
    assert!(m.get_metric("parity.max_gap").unwrap() <= 0.02);
    assert!(o.output.file("points/mosaic-0/icl_scores.csv").is_some());
    assert!(o.output.file("points/transformer-0/manifest.txt").is_some());
}

#[test]
fn transition_windows_follow_the_periods() {
    // Error 4 up to p1, then halving at p1 and p2 and a floor after p3.
    let periods = [3, 4, 12];
    let points = (1..=24)
        .map(|t| {
            let e = match t {
                0..=3 => 4.0,
                4 => 2.0,
                5..=12 => 1.0,
                _ => 0.1,
            };
            (t, e)
        })
        .collect();
    let curve = ErrorCurve {
        points,
        periods,
        lcm: 12,
    };
    let tr = Transitions::from_curve(&curve, 24);
    assert_eq!(tr.windows[0], Some(4.0));
    assert_eq!(tr.windows[1], Some(2.0));
    assert_eq!(tr.windows[2], Some(1.0));
    assert_eq!(tr.ratio(0), Some(0.5));
    assert_eq!(tr.ratio(1), Some(0.5));
    // (p3, lcm] is empty when p3 = lcm.
    assert_eq!(tr.windows[3], None);
    assert_eq!(tr.ratio(2), None);
    assert!((tr.windows[4].unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(tr.pre, Some(4.0));
    assert!((tr.post_over_pre().unwrap() - 0.1 / 4.0).abs() < 1e-12);
}

#[test]
fn gradcheck_failure_still_writes_outputs() {
    let o = outcome(
        &Command::Gradcheck,
        &cfg(&["gradcheck.tol=1e-300", "gradcheck.coords=3"]),
    );
    let f = o.output.failure.as_ref().expect("tolerance cannot be met");
    assert_eq!(f.exit_code(), 3);
    assert!(o.output.file("gradcheck.csv").is_some());
}

fn exit_code(args: &[&str], cwd: &Path) -> i32 {
    Process::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        exit_code(&["attn-profile", "--set", "profile.sequences=4", "--out", "ok"], d),
        0
    );
    assert!(d.join("ok/manifest.txt").exists());
    assert!(d.join("ok/bandwidth.csv").exists());
    assert_eq!(exit_code(&["attn-profile", "--set", "profile.nope=1"], d), 2);
    assert_eq!(exit_code(&["attn-profile", "--config", "missing.toml"], d), 2);
    assert_eq!(exit_code(&["no-such-command"], d), 2);
    assert_eq!(
        exit_code(
            &[
                "gradcheck",
                "--set",
                "gradcheck.tol=1e-300",
                "--set",
                "gradcheck.coords=2",
                "--out",
                "gc"
            ],
            d
        ),
        3
    );
    assert!(d.join("gc/gradcheck.csv").exists());
    let mut args = vec!["induction", "--out", "div"];
    for s in SMALL_IND.iter().filter(|s| !s.starts_with("induction.warmup")) {
        args.extend(["--set", s]);
    }
    args.extend(["--set", "induction.warmup=0", "--set", "induction.peak_lr=1e300"]);
    assert_eq!(exit_code(&args, d), 4);
    // --seed overrides run.seed and the manifest records it.
    assert_eq!(
        exit_code(
            &[
                "attn-profile",
                "--seed",
                "42",
                "--set",
                "profile.sequences=4",
                "--out",
                "s"
            ],
            d
        ),
        0
    );
    let m = RunManifest::parse(&std::fs::read_to_string(d.join("s/manifest.txt")).unwrap()).unwrap();
    assert_eq!(m.config.get("run", "seed"), Some("42"));
    // compare: self is fine, a different kind is a contract violation.
    assert_eq!(exit_code(&["compare", "ok", "s", "--out", "cmp"], d), 0);
    assert!(d.join("cmp/compare.csv").exists());
    assert_eq!(exit_code(&["compare", "ok", "gc"], d), 3);
    // Rerun from a manifest.
    assert_eq!(
        exit_code(&["attn-profile", "--config", "ok/manifest.txt", "--out", "again"], d),
        0
    );
    assert_eq!(
        std::fs::read(d.join("ok/bandwidth.csv")).unwrap(),
        std::fs::read(d.join("again/bandwidth.csv")).unwrap()
    );
}
