//! One function per subcommand. Each writes into an already created run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView3;

use mpkit::datagen::{
    preprocess, prepare_window, read_infill_problem, read_motion, resample, write_infill_problem, write_motion,
    Corpus, MotionFile, Window, DECODED_TAG, TARGET_RATE,
};
use mpkit::diffcore::gradcheck::primitive_suite;
use mpkit::diffcore::Checkpoint;
use mpkit::frequency::{extract_freq_seg, extract_freq_seq, highfreq_energy};
use mpkit::kinematics::{motion_joints, Motion, Skeleton};
use mpkit::prior::{
    encoder_samples, load_model, model_gradcheck, reconstruct, train_loop, PriorModel, TrainData, CHECKPOINT_FILE,
    METRICS_FILE,
};
use mpkit::tasks::{
    centered_gap, infill, interpolate, linear_interpolation_baseline, masked_mpjpe, sample, InfillOptimizer,
    InfillProblem, MetricsReport,
};
use mpkit::{Error, Result};

use crate::run::{io_err, Run};
use crate::settings::Settings;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `frame,joint,x,y,z` rows of a `K × J × 3` array.
fn joints_csv(joints: ArrayView3<f64>) -> String {
    let mut out = String::from("frame,joint,x,y,z\n");
    for (f, frame) in joints.outer_iter().enumerate() {
        for (j, p) in frame.outer_iter().enumerate() {
            let _ = writeln!(out, "{f},{j},{:.9},{:.9},{:.9}", p[0], p[1], p[2]);
        }
    }
    out
}

fn load_checkpoint(run: &mut Run, path: &Path) -> Result<(PriorModel, Checkpoint)> {
    run.input("checkpoint", path)?;
    let ck = Checkpoint::load(path)?;
    let (model, epochs) = load_model(&ck)?;
    log::info!("loaded {} ({epochs} epochs, D = {})", path.display(), model.config().latent_dim);
    Ok((model, ck))
}

/// The corpus in `dir`, or one generated from the settings.
fn corpus(run: &mut Run, settings: &Settings, dir: Option<&Path>) -> Result<Corpus> {
    match dir {
        Some(dir) => {
            run.input("corpus", dir)?;
            Corpus::load(dir)
        }
        None => {
            log::info!("no corpus given; generating {} clips in memory", settings.gen.clips);
            Corpus::generate(&settings.gen)
        }
    }
}

/// First `k`-frame window of a motion file, resampled and normalized the
/// same way as training windows.
fn first_window(skel: &Skeleton, file: &MotionFile, k: usize) -> Result<Motion> {
    let m = if file.motion.rate == TARGET_RATE { file.motion.clone() } else { resample(&file.motion, TARGET_RATE)? };
    if m.len() < k {
        return Err(Error::Data(format!("motion has {} frames at {TARGET_RATE} fps, the model needs {k}", m.len())));
    }
    prepare_window(skel, &Motion::new(m.frames[..k].to_vec(), m.rate))
}

pub fn gen(run: &mut Run, settings: &Settings) -> Result<()> {
    let corpus = Corpus::generate(&settings.gen)?;
    let dir = run.outputs().join("corpus");
    let entries = corpus.write(&dir)?;
    println!("wrote {} clips ({} validation) to {}", entries.len(), corpus.val_clips.len(), dir.display());
    Ok(())
}

pub fn train(run: &mut Run, settings: &Settings, corpus_dir: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let model = PriorModel::new(&settings.train)?;
    let corpus = corpus(run, settings, corpus_dir)?;
    let (train, val) = corpus.windows(model.skeleton(), settings.train.k)?;
    log::info!("{} training and {} validation windows", train.len(), val.len());
    let resume = match resume {
        Some(path) => {
            run.input("resume", path)?;
            let ck = Checkpoint::load(path)?;
            // Carry the earlier metrics over so the CSV covers the whole schedule.
            if let Some(prev) = path.parent().map(|p| p.join(METRICS_FILE)).filter(|p| p.exists()) {
                fs::copy(&prev, run.dir.join(METRICS_FILE)).map_err(|e| io_err(&prev, e))?;
            }
            Some(ck)
        }
        None => None,
    };
    run.set_metrics(run.dir.join(METRICS_FILE));
    run.set_checkpoint(run.dir.join(CHECKPOINT_FILE));
    let outcome = train_loop(&model, &TrainData { train, val }, resume, Some(&run.dir))?;
    match outcome.metrics.last() {
        Some(m) => println!("epoch {}: val MPJPE {:.9} mm", m.epoch, m.val_mpjpe_mm),
        None => println!("no epochs to run; checkpoint written"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

pub fn eval(run: &mut Run, settings: &Settings, checkpoint: &Path, split: Split, corpus_dir: Option<&Path>) -> Result<()> {
    let (model, ck) = load_checkpoint(run, checkpoint)?;
    let corpus = corpus(run, settings, corpus_dir)?;
    let windows: Vec<Window> = preprocess(model.skeleton(), &corpus.clips, model.config().k)?
        .windows
        .into_iter()
        .filter(|w| {
            let is_val = corpus.val_clips.binary_search(&w.clip).is_ok();
            match split {
                Split::Train => !is_val,
                Split::Val => is_val,
                Split::All => true,
            }
        })
        .collect();
    if windows.is_empty() {
        return Err(Error::Data(format!("the {split:?} split has no windows").to_lowercase()));
    }
    let motions: Vec<Motion> = windows.iter().map(|w| w.motion.clone()).collect();
    let decoded = reconstruct(&model, &ck.params, &motions)?;

    let mut rows = String::from("window,clip,start,mpjpe_mm,pa_mpjpe_mm,accel_error\n");
    let (mut mpjpe, mut pa, mut accel) = (0.0, 0.0, 0.0);
    for (i, (w, d)) in windows.iter().zip(&decoded).enumerate() {
        let gt = motion_joints(model.skeleton(), &w.motion, false)?;
        let r = MetricsReport::compute(d.joints.view(), gt.view())?;
        let _ = writeln!(rows, "{i},{},{},{:.9},{:.9},{:.9}", w.clip, w.start, r.mpjpe_mm, r.pa_mpjpe_mm, r.accel_error);
        mpjpe += r.mpjpe_mm;
        pa += r.pa_mpjpe_mm;
        accel += r.accel_error;
    }
    let n = windows.len() as f64;
    let (mpjpe, pa, accel) = (mpjpe / n, pa / n, accel / n);
    write_text(&run.outputs().join("windows.csv"), &rows)?;
    let split_name = format!("{split:?}").to_lowercase();
    let metrics = run.dir.join(METRICS_FILE);
    write_text(
        &metrics,
        &format!("split,windows,mpjpe_mm,pa_mpjpe_mm,accel_error\n{split_name},{},{mpjpe:.9},{pa:.9},{accel:.9}\n", windows.len()),
    )?;
    run.set_metrics(metrics);
    println!("{split_name} windows: {}", windows.len());
    println!("MPJPE: {mpjpe:.9} mm");
    println!("PA-MPJPE: {pa:.9} mm");
    println!("accel error: {accel:.9}");
    Ok(())
}

pub fn sample_cmd(run: &mut Run, checkpoint: &Path, n: usize, seed: u64) -> Result<()> {
    let (model, ck) = load_checkpoint(run, checkpoint)?;
    let out = run.outputs();
    for (i, d) in sample(&model, &ck.params, n, seed)?.iter().enumerate() {
        write_motion(&out.join(format!("sample_{i:03}.motion")), &d.motion, DECODED_TAG, seed)?;
        write_text(&out.join(format!("sample_{i:03}_joints.csv")), &joints_csv(d.joints.view()))?;
    }
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

pub fn interp(run: &mut Run, checkpoint: &Path, clip_a: &Path, clip_b: &Path, t: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Config(format!("interpolation weight must be finite, got {t}")));
    }
    let (model, ck) = load_checkpoint(run, checkpoint)?;
    run.input("clip_a", clip_a)?;
    run.input("clip_b", clip_b)?;
    let k = model.config().k;
    let a = first_window(model.skeleton(), &read_motion(clip_a)?, k)?;
    let b = first_window(model.skeleton(), &read_motion(clip_b)?, k)?;
    let samples = encoder_samples(&model, &[&a, &b])?;
    let mu = model.encode_mean(&ck.params, &samples)?;
    let d = interpolate(&model, &ck.params, &mu[0], &mu[1], t)?;
    let out = run.outputs();
    write_motion(&out.join("interp.motion"), &d.motion, DECODED_TAG, 0)?;
    write_text(&out.join("interp_joints.csv"), &joints_csv(d.joints.view()))?;
    println!("decoded t = {t} to {}", out.join("interp.motion").display());
    Ok(())
}

pub struct InfillArgs<'a> {
    pub problem: Option<&'a Path>,
    pub clip: Option<&'a Path>,
    pub missing: Option<usize>,
    pub iterations: Option<usize>,
    pub step: Option<f64>,
    pub optimizer: Option<InfillOptimizer>,
}

pub fn infill_cmd(run: &mut Run, settings: &Settings, checkpoint: &Path, args: InfillArgs<'_>) -> Result<()> {
    let (model, ck) = load_checkpoint(run, checkpoint)?;
    let skel = model.skeleton();
    let k = model.config().k;
    let (window, known) = match (args.problem, args.clip) {
        (Some(path), None) => {
            run.input("problem", path)?;
            let (file, known) = read_infill_problem(path)?;
            if file.motion.len() != k || file.motion.rate != TARGET_RATE {
                return Err(Error::Data(format!(
                    "infill problems must hold {k} frames at {TARGET_RATE} fps, got {} at {}",
                    file.motion.len(),
                    file.motion.rate
                )));
            }
            (first_window(skel, &file, k)?, known)
        }
        (None, Some(path)) => {
            run.input("clip", path)?;
            let window = first_window(skel, &read_motion(path)?, k)?;
            let missing = args.missing.unwrap_or(settings.infill.missing);
            if missing >= k {
                return Err(Error::Config(format!("cannot mask {missing} of {k} frames")));
            }
            let known = centered_gap(k, missing);
            // Saved so the same problem can be rerun with `--problem`.
            let file = MotionFile { motion: window.clone(), tag: DECODED_TAG.into(), seed: 0 };
            write_infill_problem(&run.outputs().join("problem.infill"), &file, &known)?;
            (window, known)
        }
        _ => return Err(Error::Config("give exactly one of --problem or --clip".into())),
    };

    let mut problem = InfillProblem::from_motion(skel, &window, known.clone())?;
    problem.iterations = args.iterations.unwrap_or(settings.infill.iterations);
    problem.step = args.step.unwrap_or(settings.infill.step);
    problem.optimizer = args.optimizer.unwrap_or(settings.infill.optimizer);
    let result = infill(&model, &ck.params, &problem)?;
    let baseline = linear_interpolation_baseline(problem.joints.view(), &known)?;
    let ours = masked_mpjpe(result.motion.joints.view(), problem.joints.view(), &known)?;
    let interp = masked_mpjpe(baseline.view(), problem.joints.view(), &known)?;

    let out = run.outputs();
    write_motion(&out.join("infilled.motion"), &result.motion.motion, DECODED_TAG, 0)?;
    write_text(&out.join("infilled_joints.csv"), &joints_csv(result.motion.joints.view()))?;
    write_text(&out.join("baseline_joints.csv"), &joints_csv(baseline.view()))?;
    write_text(&out.join("observed_joints.csv"), &joints_csv(problem.joints.view()))?;
    let mut curve = String::from("iteration,loss\n");
    for (i, l) in result.losses.iter().enumerate() {
        let _ = writeln!(curve, "{i},{l:.12e}");
    }
    let metrics = run.dir.join(METRICS_FILE);
    write_text(&metrics, &curve)?;
    run.set_metrics(metrics);
    let report = format!(
        "optimizer = {}\niterations = {}\nstep = {}\nmissing_frames = {}\ninitial_loss = {:.12e}\nfinal_loss = {:.12e}\ndiverged = {}\ninfill_masked_mpjpe_mm = {ours:.9}\ninterpolation_masked_mpjpe_mm = {interp:.9}\n",
        problem.optimizer,
        problem.iterations,
        problem.step,
        known.iter().filter(|k| !**k).count(),
        result.initial_loss,
        result.final_loss,
        result.diverged,
    );
    write_text(&out.join("report.txt"), &report)?;
    if result.diverged {
        log::warn!("latent optimization diverged; the best iterate was kept");
    }
    println!("masked MPJPE: infill {ours:.9} mm, interpolation {interp:.9} mm");
    Ok(())
}

pub fn spectra(run: &mut Run, settings: &Settings, clip: &Path) -> Result<()> {
    run.input("clip", clip)?;
    let cfg = &settings.train;
    let skel = cfg.skeleton.build()?;
    let window = first_window(&skel, &read_motion(clip)?, cfg.k)?;
    let joints = motion_joints(&skel, &window, false)?;
    let seq = extract_freq_seq(joints.view(), cfg.c_m)?;
    let seg = extract_freq_seg(joints.view(), cfg.scheme()?, cfg.c_s)?;

    let mut text = String::from("coeff,joint,axis,value\n");
    for ((c, j, a), v) in seq.0.indexed_iter() {
        let _ = writeln!(text, "{c},{j},{a},{v:.12e}");
    }
    let out = run.outputs();
    write_text(&out.join("fseq.csv"), &text)?;
    let mut text = String::from("segment,coeff,joint,axis,value\n");
    for ((s, c, j, a), v) in seg.0.indexed_iter() {
        let _ = writeln!(text, "{s},{c},{j},{a},{v:.12e}");
    }
    write_text(&out.join("fseg.csv"), &text)?;
    let mut text = String::from("segment,energy\n");
    for (s, e) in highfreq_energy(&seg).iter().enumerate() {
        let _ = writeln!(text, "{s},{e:.12e}");
    }
    write_text(&out.join("highfreq_energy.csv"), &text)?;
    println!("wrote spectra of {} to {}", clip.display(), out.display());
    Ok(())
}

pub fn gradcheck(run: &mut Run, settings: &Settings, seed: u64, threshold: f64) -> Result<()> {
    let mut entries = primitive_suite(seed)?;
    entries.extend(model_gradcheck(&settings.train, seed)?);
    let mut text = String::from("check,rel_error\n");
    for e in &entries {
        let _ = writeln!(text, "{},{:.6e}", e.name, e.rel_error);
    }
    let metrics = run.dir.join(METRICS_FILE);
    write_text(&metrics, &text)?;
    run.set_metrics(metrics);
    let worst = entries
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .ok_or_else(|| Error::Numeric("no gradient checks ran".into()))?;
    println!("{} checks, max rel. error {:.3e} ({})", entries.len(), worst.rel_error, worst.name);
    if !(worst.rel_error < threshold) {
        return Err(Error::Numeric(format!(
            "{} exceeds the {threshold:e} threshold with {:e}",
            worst.name, worst.rel_error
        )));
    }
    Ok(())
}
