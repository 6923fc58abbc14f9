//! Library-level pipeline: corpus, training, checkpoint, downstream tasks.

use mpkit::datagen::{Corpus, GenConfig};
use mpkit::diffcore::Checkpoint;
use mpkit::kinematics::Skeleton;
use mpkit::prior::{encoder_samples, load_model, reconstruction_mpjpe, train_loop, PriorModel, TrainConfig, TrainData};
use mpkit::tasks::{centered_gap, infill, interpolate, sample, InfillProblem};

fn small() -> TrainConfig {
    TrainConfig {
        k: 32,
        latent_dim: 6,
        c_m: 6,
        c_s: 4,
        segments: 2,
        segment_len: 16,
        enc_widths: [6, 8, 8],
        dec_hidden: 16,
        attn_hidden: 4,
        fseq_embed: 8,
        pose_code_dim: 4,
        lr: 3e-3,
        batch_size: 16,
        epochs: 2,
        ..TrainConfig::default()
    }
}

fn data() -> TrainData {
    let gen = GenConfig { clips: 6, clip_seconds: 4.5, val_fraction: 0.34, corpus_seed: 3, ..GenConfig::default() };
    let corpus = Corpus::generate(&gen).unwrap();
    let (train, val) = corpus.windows(&Skeleton::humanoid24(), 32).unwrap();
    assert!(!train.is_empty() && !val.is_empty());
    TrainData { train, val }
}

#[test]
fn train_save_load_and_use() {
    let data = data();
    let model = PriorModel::new(&small()).unwrap();
    let out = train_loop(&model, &data, None, None).unwrap();
    assert_eq!(out.metrics.len(), 2);

    let dir = std::env::temp_dir().join(format!("mpkit-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("checkpoint.bin");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(loaded, out.checkpoint);

    let (model, epochs) = load_model(&loaded).unwrap();
    assert_eq!(epochs, 2);
    let store = &loaded.params;
    let val = reconstruction_mpjpe(&model, store, &data.val).unwrap();
    assert!((val - out.metrics[1].val_mpjpe_mm).abs() < 1e-9);

    let a = sample(&model, store, 2, 5).unwrap();
    let b = sample(&model, store, 2, 5).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a[0].joints, b[0].joints);
    assert_eq!(a[0].joints.shape(), &[32, 24, 3]);

    let samples = encoder_samples(&model, &[&data.val[0], &data.train[0]]).unwrap();
    let mu = model.encode_mean(store, &samples).unwrap();
    let mid = interpolate(&model, store, &mu[0], &mu[1], 0.5).unwrap();
    assert_eq!(mid.joints.shape(), &[32, 24, 3]);

    let problem = InfillProblem::from_motion(model.skeleton(), &data.val[0], centered_gap(32, 10)).unwrap();
    let result = infill(&model, store, &problem).unwrap();
    assert!(result.final_loss <= result.initial_loss);
    assert!(result.z.iter().all(|v| v.is_finite()));
}
