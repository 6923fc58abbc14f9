//! End-to-end runs of the `mpkit` binary on a small corpus and model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpkit::diffcore::Checkpoint;
use mpkit::prior::{load_model, METRICS_HEADER};

const SMALL: &str = "\
k = 32
latent_dim = 6
c_m = 6
c_s = 4
segments = 2
segment_len = 16
enc_widths = 6,8,8
dec_hidden = 16
attn_hidden = 4
fseq_embed = 8
pose_code_dim = 4
lr = 0.003
batch_size = 16
epochs = 2
clips = 6
clip_seconds = 4.5
val_fraction = 0.34
corpus_seed = 3
";

struct Scratch(PathBuf);

impl Scratch {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("mpkit-cli-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    /// The small configuration with the `key = value` lines of `extra`
    /// replacing or extending it.
    fn config(&self, extra: &str) -> PathBuf {
        let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
        let replaced: Vec<String> = extra.lines().map(key).collect();
        let mut text: String = SMALL.lines().filter(|l| !replaced.contains(&key(l))).map(|l| format!("{l}\n")).collect();
        text.push_str(extra);
        let path = self.0.join(format!("config-{}.txt", fs::read_dir(&self.0).unwrap().count()));
        fs::write(&path, text).unwrap();
        path
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn mpkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpkit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The run directory announced on the last stdout line.
fn run_dir(o: &Output) -> PathBuf {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), String::from_utf8_lossy(&o.stderr));
    let text = stdout(o);
    let line = text.lines().last().unwrap();
    PathBuf::from(line.strip_prefix("run: ").unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in manifest:\n{text}"))
}

fn report_value(report: &str, key: &str) -> f64 {
    report.lines().find_map(|l| l.strip_prefix(&format!("{key} = "))).unwrap().parse().unwrap()
}

#[test]
fn gradcheck_passes_on_the_tiny_model() {
    let tmp = Scratch::new("gradcheck");
    let o = mpkit(&["gradcheck"], &tmp.0);
    let dir = run_dir(&o);
    let line = stdout(&o).lines().find(|l| l.contains("max rel. error")).unwrap().to_string();
    let err: f64 = line.split("max rel. error ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{line}");
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("enc.attn")));
    assert_eq!(manifest_value(&dir, "status"), "ok");
}

#[test]
fn pipeline_runs_on_files_alone() {
    let tmp = Scratch::new("pipeline");
    let cfg = tmp.config("");
    let gen = run_dir(&mpkit(&["gen", "--config", s(&cfg)], &tmp.0));
    let corpus = gen.join("outputs/corpus");
    assert!(corpus.join("manifest.txt").exists());

    let train = run_dir(&mpkit(&["train", "--config", s(&cfg), "--corpus", s(&corpus)], &tmp.0));
    let metrics = fs::read_to_string(train.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let last = lines.last().unwrap();
    assert!(last.starts_with("2,"));
    let logged: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(manifest_value(&train, "checkpoint"), "checkpoint.bin");
    assert!(manifest_value(&train, "input.corpus").len() == 64);

    // Evaluation reproduces the last logged validation error.
    let ck = train.join("checkpoint.bin");
    let o = mpkit(&["eval", "--checkpoint", s(&ck), "--corpus", s(&corpus), "--split", "val"], &tmp.0);
    let eval = run_dir(&o);
    let reported: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("MPJPE: "))
        .unwrap()
        .trim_end_matches(" mm")
        .parse()
        .unwrap();
    assert!((reported - logged).abs() <= 1e-6, "{reported} vs {logged}");
    assert!(fs::read_to_string(eval.join("outputs/windows.csv")).unwrap().lines().count() > 1);

    let sample = run_dir(&mpkit(&["sample", "--checkpoint", s(&ck), "--n", "2", "--seed", "5"], &tmp.0));
    assert!(sample.join("outputs/sample_001.motion").exists());
    assert!(sample.join("outputs/sample_001_joints.csv").exists());

    let clip_a = corpus.join("clips/0000.clip");
    let clip_b = corpus.join("clips/0001.clip");
    let interp = run_dir(&mpkit(
        &["interp", "--checkpoint", s(&ck), "--clip-a", s(&clip_a), "--clip-b", s(&clip_b), "--t", "0.25"],
        &tmp.0,
    ));
    // A decoded motion is itself a valid input.
    let decoded = interp.join("outputs/interp.motion");
    run_dir(&mpkit(&["interp", "--checkpoint", s(&ck), "--clip-a", s(&decoded), "--clip-b", s(&clip_b)], &tmp.0));

    let o = mpkit(&["infill", "--checkpoint", s(&ck), "--clip", s(&clip_a), "--missing", "10"], &tmp.0);
    let infill = run_dir(&o);
    let report = fs::read_to_string(infill.join("outputs/report.txt")).unwrap();
    assert!(report.contains("missing_frames = 10"), "{report}");
    let problem = infill.join("outputs/problem.infill");
    let again = run_dir(&mpkit(&["infill", "--checkpoint", s(&ck), "--problem", s(&problem)], &tmp.0));
    // The problem file stores nine decimals, so the rerun agrees closely but not bitwise.
    let again = fs::read_to_string(again.join("outputs/report.txt")).unwrap();
    for key in ["infill_masked_mpjpe_mm", "interpolation_masked_mpjpe_mm"] {
        let (a, b) = (report_value(&report, key), report_value(&again, key));
        assert!((a - b).abs() < 1e-3, "{key}: {a} vs {b}");
    }

    let spectra = run_dir(&mpkit(&["spectra", "--config", s(&cfg), "--clip", s(&clip_a)], &tmp.0));
    let fseq = fs::read_to_string(spectra.join("outputs/fseq.csv")).unwrap();
    assert_eq!(fseq.lines().count(), 1 + 6 * 24 * 3);
    let energy = fs::read_to_string(spectra.join("outputs/highfreq_energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 1 + 2);
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let tmp = Scratch::new("zero");
    let cfg = tmp.config("");
    let dir = run_dir(&mpkit(&["train", "--config", s(&cfg), "--seed", "9"], &tmp.0));
    let cfg0 = tmp.config("epochs = 0\n");
    let dir0 = run_dir(&mpkit(&["train", "--config", s(&cfg0), "--seed", "9"], &tmp.0));
    let ck = Checkpoint::load(&dir0.join("checkpoint.bin")).unwrap();
    let (model, epochs) = load_model(&ck).unwrap();
    assert_eq!(epochs, 0);
    assert_eq!(model.config().seed, 9);
    assert_eq!(ck.params, model.init_params().unwrap());
    assert_eq!(manifest_value(&dir0, "status"), "ok");

    // Resuming the initial checkpoint with the full schedule matches the direct run.
    let resumed = run_dir(&mpkit(
        &["train", "--config", s(&cfg), "--seed", "9", "--resume", s(&dir0.join("checkpoint.bin"))],
        &tmp.0,
    ));
    for f in ["metrics.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(resumed.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn errors_map_to_categorized_exit_codes() {
    let tmp = Scratch::new("errors");
    let typo = tmp.config("epoch = 3\n");
    let o = mpkit(&["train", "--config", s(&typo)], &tmp.0);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `epoch`"));

    let missing = tmp.0.join("nope.bin");
    let o = mpkit(&["sample", "--checkpoint", s(&missing)], &tmp.0);
    assert_eq!(o.status.code(), Some(5));

    let garbage = tmp.0.join("garbage.clip");
    fs::write(&garbage, "not a motion\n").unwrap();
    let cfg = tmp.config("");
    let o = mpkit(&["spectra", "--config", s(&cfg), "--clip", s(&garbage)], &tmp.0);
    assert_eq!(o.status.code(), Some(3));

    // The failed run still leaves a manifest recording the failure.
    let failed: Vec<PathBuf> = fs::read_dir(&tmp.0)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with("-spectra"))
        .collect();
    assert_eq!(failed.len(), 1);
    assert!(manifest_value(&failed[0], "status").starts_with("failed (data)"));
}
