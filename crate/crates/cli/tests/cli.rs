use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dcd_cli::checkpoint::{Checkpoint, CheckpointError, Network};
use dcd_cli::commands::*;
use dcd_cli::csvio::{read_samples, write_samples};
use dcd_cli::{CliError, Experiment, Overrides};
use dcd_core::nn::MlpCritic;
use dcd_core::numcore::{Rng, Tensor};
use dcd_core::synth::MixtureSpec;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 11

[dataset]
preset = "ring8"

[train]
hidden = 8
batch_size = 16
generator_iters = 20

[finetune]
iterations = 3
batch_size = 16
chain = "short"

[sample]
n = 50
preset = "short"

[levelset]
resolution = [2, 2]
x_range = [-1.5, 2.0]
y_range = [-0.5, 0.75]

[presets.short]
step_size = 0.2
steps = 4
noise_scale = 0.1

[presets.raw]
step_size = 0.2
steps = 0
"#;

fn experiment(text: &str, dir: &Path) -> Experiment {
    Experiment::parse(
        text,
        &Overrides {
            out_dir: Some(dir.to_path_buf()),
            ..Overrides::default()
        },
    )
    .unwrap()
}

fn with_preset(exp: &Experiment, dir: &Path, preset: &str) -> Experiment {
    Experiment::parse(
        SMALL,
        &Overrides {
            out_dir: Some(dir.to_path_buf()),
            preset: Some(preset.into()),
            seed: Some(exp.seed),
        },
    )
    .unwrap()
}

fn trained() -> (TempDir, Experiment, TrainOutputs) {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(SMALL, dir.path());
    let out = cmd_train(&exp).unwrap();
    (dir, exp, out)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcd"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_writes_checkpoints_and_log() {
    let (dir, exp, out) = trained();
    for p in [&out.generator, &out.critic, &out.log] {
        assert!(p.exists(), "{}", p.display());
    }
    let log = fs::read_to_string(&out.log).unwrap();
    assert_eq!(log.lines().count(), 1 + 20);
    assert!(log.starts_with("iteration,critic_loss,generator_loss,wall_seconds\n"));
    let (_, meta) = Checkpoint::load(&out.generator).unwrap().into_generator().unwrap();
    assert_eq!((meta.seed, meta.iterations), (11, 20));
    assert_eq!(meta.config_hash, exp.hash());
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn training_twice_gives_identical_bytes() {
    let (_a, _, first) = trained();
    let (_b, _, second) = trained();
    for (x, y) in [
        (&first.generator, &second.generator),
        (&first.critic, &second.critic),
        (&first.log, &second.log),
    ] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn checkpoint_files_round_trip_bit_exactly() {
    let (dir, _, out) = trained();
    for path in [&out.generator, &out.critic] {
        let ck = Checkpoint::load(path).unwrap();
        let copy = dir.path().join("copy.json");
        ck.save(&copy).unwrap();
        assert_eq!(Checkpoint::load(&copy).unwrap(), ck);
        assert_eq!(fs::read(&copy).unwrap(), fs::read(path).unwrap());
    }
}

#[test]
fn saved_critic_keeps_its_weights() {
    // Saving refreshes the power-iteration vectors only.
    let (_dir, exp, out) = trained();
    let mut rng = Rng::new(exp.seed, TRAIN_STREAM);
    let (g, c) = dcd_core::wgan::init_networks(exp.train.hidden, &mut rng);
    let spec = exp.spec();
    let mut t = dcd_core::wgan::Trainer::new(&spec, exp.train.clone(), g, c).unwrap();
    for _ in 0..exp.train.generator_iters {
        t.iteration(&mut rng).unwrap();
    }
    let (_, critic, _) = t.finish();
    let (loaded, _) = Checkpoint::load(&out.critic).unwrap().into_critic().unwrap();
    assert_eq!(loaded.mlp(), critic.mlp());
}

#[test]
fn other_major_versions_are_rejected_with_both_versions() {
    let (dir, _, out) = trained();
    let text = fs::read_to_string(&out.critic).unwrap();
    let bumped = text.replacen("\"version\": \"1.0\"", "\"version\": \"2.0\"", 1);
    assert_ne!(bumped, text);
    let path = dir.path().join("future.json");
    fs::write(&path, &bumped).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, CheckpointError::Version { .. }));
    let msg = err.to_string();
    assert!(msg.contains("2.0") && msg.contains("1.0"), "{msg}");

    let minor = text.replacen("\"version\": \"1.0\"", "\"version\": \"1.4\"", 1);
    fs::write(&path, minor).unwrap();
    assert!(Checkpoint::load(&path).is_ok());
}

#[test]
fn truncated_checkpoints_fail_to_load() {
    let (dir, _, out) = trained();
    let bytes = fs::read(&out.critic).unwrap();
    let path = dir.path().join("cut.json");
    for keep in [0, 1, bytes.len() / 3, bytes.len() / 2, bytes.len() - 3] {
        fs::write(&path, &bytes[..keep]).unwrap();
        assert!(Checkpoint::load(&path).is_err(), "kept {keep} bytes");
    }

    let cfg = write_config(dir.path(), SMALL);
    let status = bin()
        .args(["finetune", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("--critic")
        .arg(&path)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("cut.json"));
}

#[test]
fn missing_seed_fails_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 11", ""));
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "{err}");
    assert!(!dir.path().join(GENERATOR_FILE).exists());

    let out = bin()
        .args(["train", "--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join(GENERATOR_FILE).exists());
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let exp = experiment(SMALL, &blocker.join("sub"));
    assert!(matches!(cmd_train(&exp), Err(CliError::Io { .. })));
}

#[test]
fn zero_iteration_finetune_keeps_the_critic() {
    let (dir, _, out) = trained();
    let exp = experiment(&SMALL.replace("iterations = 3", "iterations = 0"), dir.path());
    let before: Vec<Vec<u8>> = [&out.generator, &out.critic]
        .iter()
        .map(|p| fs::read(p).unwrap())
        .collect();
    let ft = cmd_finetune(&exp, &out.generator, &out.critic).unwrap();
    let (orig, _) = Checkpoint::load(&out.critic).unwrap().into_critic().unwrap();
    let (tuned, meta) = Checkpoint::load(&ft.critic).unwrap().into_critic().unwrap();
    assert_eq!(tuned.mlp(), orig.mlp());
    assert_eq!(meta.iterations, 0);
    assert_eq!(fs::read_to_string(&ft.log).unwrap().lines().count(), 1);
    let after: Vec<Vec<u8>> = [&out.generator, &out.critic]
        .iter()
        .map(|p| fs::read(p).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn finetune_log_has_one_row_per_iteration() {
    let (dir, exp, out) = trained();
    let ft = cmd_finetune(&exp, &out.generator, &out.critic).unwrap();
    let log = fs::read_to_string(&ft.log).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(log.starts_with("iteration,objective,mean_real,mean_chain,acceptance\n"));
    let (tuned, _) = Checkpoint::load(&ft.critic).unwrap().into_critic().unwrap();
    let (orig, _) = Checkpoint::load(&out.critic).unwrap().into_critic().unwrap();
    assert_ne!(tuned.mlp(), orig.mlp());
    assert!(dir.path().join(CRITIC_DCD_FILE).exists());
}

#[test]
fn finetune_rejects_swapped_roles() {
    let (_dir, exp, out) = trained();
    let err = cmd_finetune(&exp, &out.critic, &out.generator).unwrap_err();
    assert!(matches!(
        err,
        CliError::CheckpointFile {
            source: CheckpointError::Role { .. },
            ..
        }
    ));
}

#[test]
fn empty_sample_request_writes_header_only() {
    let (dir, _, out) = trained();
    let exp = experiment(&SMALL.replace("n = 50", "n = 0"), dir.path());
    let s = cmd_sample(&exp, &out.generator, &out.critic).unwrap();
    assert_eq!(fs::read_to_string(&s.samples).unwrap(), "x0,x1\n");
    // Nothing to evaluate in an empty file.
    assert!(matches!(read_samples(&s.samples), Err(CliError::Csv { line: 1, .. })));
}

#[test]
fn zero_step_sampling_returns_generator_output() {
    let (dir, exp, out) = trained();
    let raw = with_preset(&exp, dir.path(), "raw");
    let s = cmd_sample(&raw, &out.generator, &out.critic).unwrap();
    let got = read_samples(&s.samples).unwrap();

    let (g, _) = Checkpoint::load(&out.generator).unwrap().into_generator().unwrap();
    let z = Rng::new(exp.seed, SAMPLE_STREAM).gaussian(&[50, 2]);
    let direct = g.generate(&z).unwrap();
    assert_eq!(got.shape(), direct.shape());
    for (a, b) in got.data().iter().zip(direct.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn trajectory_has_every_state_of_every_chain() {
    let (dir, _, out) = trained();
    let text = SMALL.replace("preset = \"short\"\n\n", "preset = \"short\"\ntrajectory = true\n\n");
    let exp = experiment(&text, dir.path());
    assert!(exp.sample.trajectory);
    let s = cmd_sample(&exp, &out.generator, &out.critic).unwrap();
    let x = read_samples(&s.samples).unwrap();
    assert_eq!(x.rows(), 50);
    assert!(x.is_finite());

    let text = fs::read_to_string(s.trajectory.unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("chain,step,x0,x1,d_value,accepted"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 50 * (4 + 1));
    for chain in 0..50 {
        let steps: Vec<usize> = rows
            .iter()
            .filter(|r| r[0] == chain.to_string())
            .map(|r| r[1].parse().unwrap())
            .collect();
        assert_eq!(steps, vec![0, 1, 2, 3, 4]);
    }
    // The last recorded state of each chain is the sample.
    let last: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] == "4")
        .flat_map(|r| [r[2].parse::<f64>().unwrap(), r[3].parse().unwrap()])
        .collect();
    assert_eq!(last, x.data());
    assert!(rows.iter().all(|r| r[5].is_empty()));
}

#[test]
fn adjusted_chain_records_acceptance() {
    let (dir, exp, out) = trained();
    let text = SMALL
        .replace("noise_scale = 0.1\n", "noise_scale = 0.1\nmh_correction = true\n")
        .replace("n = 50", "n = 5\ntrajectory = true");
    let exp2 = experiment(&text, dir.path());
    assert_eq!(exp2.seed, exp.seed);
    let s = cmd_sample(&exp2, &out.generator, &out.critic).unwrap();
    let text = fs::read_to_string(s.trajectory.unwrap()).unwrap();
    for line in text.lines().skip(1) {
        let acc = line.rsplit(',').next().unwrap();
        if line.split(',').nth(1) == Some("0") {
            assert_eq!(acc, "");
        } else {
            assert!(acc == "true" || acc == "false", "{line}");
        }
    }
}

#[test]
fn evaluating_true_mixture_samples() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(SMALL, dir.path());
    let spec = MixtureSpec::ring8();
    let path = dir.path().join("truth.csv");
    write_samples(&path, &spec.sample(&mut Rng::new(12, 0), 20_000)).unwrap();
    let (json, report) = cmd_evaluate(&exp, &path).unwrap();
    assert!(report.hq_fraction >= 0.999, "{}", report.hq_fraction);
    assert_eq!(report.modes_recovered, 8);
    let parsed: dcd_core::eval::ModeReport = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(parsed, report);
}

#[test]
fn malformed_sample_files_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(SMALL, dir.path());
    let path = dir.path().join("bad.csv");
    fs::write(&path, "x0,x1\n0.1,0.2\n0.3,0.4\n0.5,0.6\nx,0.8\n").unwrap();
    match cmd_evaluate(&exp, &path) {
        Err(CliError::Csv { line, .. }) => assert_eq!(line, 5),
        other => panic!("{other:?}"),
    }
    let cfg = write_config(dir.path(), SMALL);
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("--samples")
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));
}

#[test]
fn two_by_two_levelset_matches_pointwise_calls() {
    let (_dir, exp, out) = trained();
    let ls = cmd_levelset(&exp, &out.critic).unwrap();
    let (critic, _): (MlpCritic, _) = Checkpoint::load(&out.critic).unwrap().into_critic().unwrap();
    let text = fs::read_to_string(&ls.csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let mut corners = Vec::new();
    for r in &rows {
        let p = Tensor::from_rows(&[[r[2], r[3]]]).unwrap();
        assert_eq!(critic.value(&p).unwrap()[0].to_bits(), r[4].to_bits());
        corners.push((r[2], r[3]));
    }
    assert_eq!(corners, vec![(-1.5, -0.5), (2.0, -0.5), (-1.5, 0.75), (2.0, 0.75)]);

    let ppm = fs::read(&ls.pixmap).unwrap();
    let header = String::from_utf8_lossy(&ppm[..ppm.len() - 12]).to_string();
    assert!(header.starts_with("P6\n# critic value, min-max normalized: min="));
    assert!(header.ends_with("2 2\n255\n"));
}

#[test]
fn reversed_ranges_fail() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("y_range = [-0.5, 0.75]", "y_range = [0.75, -0.5]");
    let err = Experiment::parse(&text, &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("y_range"));
    let cfg = write_config(dir.path(), &text);
    let out = bin().args(["levelset", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn busy_output_directory_is_refused() {
    let (dir, exp, out) = trained();
    let _held = OutputLock::acquire(dir.path()).unwrap();
    assert!(matches!(
        cmd_sample(&exp, &out.generator, &out.critic),
        Err(CliError::Locked(_))
    ));
}

#[test]
fn generator_checkpoint_has_no_spectral_state() {
    let (_dir, _, out) = trained();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.generator).unwrap()).unwrap();
    assert!(v.get("spectral").is_none());
    assert_eq!(v["role"], "generator");
    assert_eq!(v["dims"], serde_json::json!([2, 8, 8, 8, 2]));
    let ck = Checkpoint::load(&out.critic).unwrap();
    assert!(matches!(ck.network, Network::Critic(_)));
}

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let cfg = write_config(dir, SMALL);
    let run = |args: &[&str]| {
        let out = bin()
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["train"]);
    run(&["finetune"]);
    run(&["sample"]);
    let samples = dir.join("samples_short.csv");
    run(&["evaluate", "--samples", samples.to_str().unwrap()]);
    run(&["levelset"]);
    [
        GENERATOR_FILE,
        CRITIC_FILE,
        CRITIC_DCD_FILE,
        "samples_short.csv",
        "samples_short_report.json",
        "levelset_critic_dcd.csv",
        "levelset_critic_dcd.ppm",
    ]
    .iter()
    .map(|f| fs::read(dir.join(f)).unwrap())
    .collect()
}

#[test]
fn full_pipeline_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}
