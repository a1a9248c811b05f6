//! Command-level behaviour: reproducibility, twin consistency, dataset and
//! training bookkeeping, and process exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hybridfv::harness::{self, list_samples, ExperimentConfig};

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("harness").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn config(dir: &Path, name: &str, text: &str) -> ExperimentConfig {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    ExperimentConfig::load(&p).unwrap()
}

const SMALL_SA: &str = "plant = \"ns_sa\"\n[mesh]\nkind = \"bump_channel\"\nni = 8\nnj = 4\n";

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn solve_is_bitwise_reproducible_and_writes_its_outputs() {
    let d = scratch("solve");
    let cfg = config(&d, "c.toml", SMALL_SA);
    let a = harness::cmd_solve(&cfg, &d.join("a")).unwrap();
    harness::cmd_solve(&cfg, &d.join("b")).unwrap();
    assert!(a.final_residual() <= 1e-12);
    for f in ["state.dat", "mu_t.dat", "mesh.dat", "history.csv", "config.toml"] {
        assert_eq!(read(&d.join("a").join(f)), read(&d.join("b").join(f)), "{f}");
    }
    let manifest: toml::Table = read(&d.join("a/manifest.toml")).parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("solve"));
    assert_eq!(manifest["config_hash"].as_str().unwrap(), cfg.hash().unwrap());
    assert!(read(&d.join("a/history.csv")).starts_with("iter,cfl,residual_qnorm\n"));
}

#[test]
fn zero_truth_twin_reproduces_the_baseline_and_a_bump_changes_it() {
    let d = scratch("twin");
    harness::cmd_solve(&config(&d, "base.toml", SMALL_SA), &d.join("base")).unwrap();
    let zero = format!("{SMALL_SA}[twin.truth]\nshape = \"zero\"\n");
    harness::cmd_twin(&config(&d, "zero.toml", &zero), &d.join("zero")).unwrap();
    assert_eq!(read(&d.join("base/state.dat")), read(&d.join("zero/state.dat")));

    let bump = format!("{SMALL_SA}[twin.truth]\nshape = \"gaussian_bump\"\ncenter = [1.5, 0.1]\nwidth = 0.3\namplitude = 0.5\n");
    let r = harness::cmd_twin(&config(&d, "bump.toml", &bump), &d.join("bump")).unwrap();
    assert_ne!(read(&d.join("base/state.dat")), read(&d.join("bump/state.dat")));
    assert_eq!(r.observations.y.len(), 2 * 8 * 4);
}

#[test]
fn twin_noise_replays_with_the_seed() {
    let d = scratch("noise");
    let text = |seed: u64| format!("seed = {seed}\n{SMALL_SA}[twin]\nnoise = 0.01\n");
    harness::cmd_twin(&config(&d, "a.toml", &text(1)), &d.join("a")).unwrap();
    harness::cmd_twin(&config(&d, "b.toml", &text(1)), &d.join("b")).unwrap();
    harness::cmd_twin(&config(&d, "c.toml", &text(2)), &d.join("c")).unwrap();
    let obs = |s: &str| read(&d.join(s).join("observations.csv"));
    assert_eq!(obs("a"), obs("b"));
    assert_ne!(obs("a"), obs("c"));
}

#[test]
fn assimilating_an_uncorrected_state_keeps_the_correction_near_zero() {
    let d = scratch("assim_zero");
    harness::cmd_solve(&config(&d, "base.toml", SMALL_SA), &d.join("base")).unwrap();
    let text = format!(
        "{SMALL_SA}[correction]\nmodel = \"field\"\ninitial = 0.2\n[objective]\nkind = \"full_state\"\nmeasured = \"base/state.dat\"\n[optimizer]\nmax_iters = 300\ntol = 0.0\n"
    );
    let r = harness::cmd_assimilate(&config(&d, "a.toml", &text), &d.join("out")).unwrap();
    let peak = r.theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    assert!(peak <= 1e-4, "largest recovered entry {peak}");
    assert!(r.final_misfit <= 1e-8 * r.initial_misfit);
    assert!(d.join("out/theta.dat").is_file() && d.join("out/loss.csv").is_file());
}

#[test]
fn single_sample_dataset_uses_the_configured_case() {
    let d = scratch("gen_one");
    let text = format!("{SMALL_SA}[boundary]\nkind = \"channel\"\nangle_deg = 2.0\npressure_ratio = 0.97\n[dataset]\nn = 1\n");
    let r = harness::cmd_gen_dataset(&config(&d, "g.toml", &text), &d.join("out")).unwrap();
    assert_eq!(r.samples.len(), 1);
    let s = &r.samples[0];
    assert_eq!((s.angle_deg, s.pressure_ratio, s.bump_height), (2.0, 0.97, 0.1));
    let listed = list_samples(&d.join("out")).unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(listed[0].meta, *s);
}

#[test]
fn dataset_and_split_replay_with_the_seed() {
    let d = scratch("gen_replay");
    let gen = format!("seed = 5\n{SMALL_SA}[dataset]\nn = 3\n");
    let cfg = config(&d, "g.toml", &gen);
    let a = harness::cmd_gen_dataset(&cfg, &d.join("a")).unwrap();
    let b = harness::cmd_gen_dataset(&cfg, &d.join("b")).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(read(&d.join("a/sample_002/state.dat")), read(&d.join("b/sample_002/state.dat")));

    let train = "seed = 9\nplant = \"ns\"\n[correction]\nmodel = \"cnn\"\n[dataset]\npath = \"a\"\n[train]\ntrain_fraction = 0.67\n[optimizer]\nmax_iters = 3\ntol = 0.0\n";
    let cfg = config(&d, "t.toml", train);
    let r1 = harness::cmd_train(&cfg, &d.join("t1")).unwrap();
    let r2 = harness::cmd_train(&cfg, &d.join("t2")).unwrap();
    assert_eq!((r1.train.len(), r1.validation.len()), (2, 1));
    assert_eq!(read(&d.join("t1/split.csv")), read(&d.join("t2/split.csv")));
    assert_eq!(r1.members[0].theta, r2.members[0].theta);
    assert!(d.join("t1/checkpoint_member0.txt").is_file());
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hybridfv")).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn exit_codes_separate_convergence_failures_from_rejected_inputs() {
    let d = scratch("exit");
    let ok = d.join("ok.toml");
    fs::write(&ok, SMALL_SA).unwrap();
    let out = d.join("out");
    let out = out.to_str().unwrap();
    assert_eq!(run_cli(&["solve", "--config", ok.to_str().unwrap(), "--out", out]), 0);

    let short = d.join("short.toml");
    fs::write(&short, format!("{SMALL_SA}[newton]\nmax_iters = 1\n")).unwrap();
    assert_eq!(run_cli(&["solve", "--config", short.to_str().unwrap(), "--out", out]), 2);

    let bad = d.join("bad.toml");
    fs::write(&bad, format!("{SMALL_SA}unknown_key = 1\n")).unwrap();
    assert_eq!(run_cli(&["solve", "--config", bad.to_str().unwrap(), "--out", out]), 3);

    let missing = d.join("missing.toml");
    fs::write(&missing, format!("{SMALL_SA}[correction]\nmodel = \"field\"\n[objective]\nkind = \"full_state\"\nmeasured = \"nowhere.dat\"\n")).unwrap();
    assert_eq!(run_cli(&["assimilate", "--config", missing.to_str().unwrap(), "--out", out]), 3);
}

#[test]
fn checkgrad_rejects_an_unmet_tolerance() {
    let d = scratch("checkgrad");
    harness::cmd_twin(&config(&d, "twin.toml", &format!("{SMALL_SA}[twin.truth]\nshape = \"constant\"\nvalue = 0.3\n")), &d.join("twin")).unwrap();
    let text = |tol: &str| {
        format!("{SMALL_SA}[correction]\nmodel = \"field\"\n[objective]\nkind = \"partial\"\nobservations = \"twin/observations.csv\"\n[checkgrad]\nsamples = 2\ntol = {tol}\n")
    };
    let r = harness::cmd_checkgrad(&config(&d, "ok.toml", &text("1e-5")), &d.join("ok")).unwrap();
    assert_eq!(r.entries.len(), 2);
    let strict = harness::cmd_checkgrad(&config(&d, "strict.toml", &text("1e-300")), &d.join("strict"));
    let e = strict.unwrap_err();
    assert!(matches!(e, hybridfv::Error::Validation(_)));
    assert_eq!(harness::exit_code(&e), 3);
    assert!(d.join("strict/checkgrad.csv").is_file());
}
