use std::fs;
use std::path::Path;

use lapsr_core::imaging::{
    batch_rng, generate_synthetic_corpus, load_image, save_image, synthetic_image, AugmentSpec,
    CorpusManifest, ImageRgb, PatchSampler, SyntheticSpec,
};
use lapsr_core::loss::charbonnier_loss;
use lapsr_core::metrics::MetricConfig;
use lapsr_core::model::{forward_graph, save_checkpoint};
use lapsr_core::pipeline::{
    evaluate, lambda_grid, superresolve, sweep_lambda, train, train_on_manifest, Method,
    SweepEntry, TrainConfig, TrainLog, TrainState,
};
use lapsr_core::tensor::{conv_transpose2d, SgdMomentum};
use lapsr_core::{Error, Graph, ModelConfig, ModelParams, Scale};

fn tiny(epochs: usize, iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs,
        iters_per_epoch: iters,
        batch: 2,
        patch: 32,
        lr: 1e-6,
        lr_halving_period: 2,
        checkpoint_every: 1,
        ..TrainConfig::default()
    };
    cfg.model = ModelConfig {
        depth: 1,
        feature_channels: 4,
        ..ModelConfig::new(Scale::X2)
    };
    cfg
}

fn sampler(cfg: &TrainConfig) -> PatchSampler {
    let images = (0..3)
        .map(|i| synthetic_image(48, 40, 5, i).unwrap().0)
        .collect();
    PatchSampler::new(images, cfg.augment.clone(), cfg.model.scale, cfg.patch).unwrap()
}

fn corpus(dir: &Path) -> CorpusManifest {
    let spec = SyntheticSpec {
        count: 4,
        train: 2,
        width: 64,
        height: 64,
    };
    generate_synthetic_corpus(&spec, dir, 3).unwrap()
}

fn param_bits(p: &ModelParams) -> Vec<u32> {
    p.tensors()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn logged_lr_follows_the_halving_schedule() {
    let cfg = tiny(5, 2);
    let out = train(&cfg, &sampler(&cfg), None, None).unwrap();
    assert_eq!(out.log.rows.len(), 10);
    for row in &out.log.rows {
        let closed = cfg.lr * 0.5f64.powi(((row.epoch - 1) / 2) as i32);
        assert_eq!(row.lr, closed, "epoch {}", row.epoch);
        assert_eq!(row.epoch, (row.iteration - 1) / 2 + 1);
    }
    assert!(out
        .log
        .rows
        .windows(2)
        .all(|w| w[0].iteration < w[1].iteration));
    let defaults = TrainConfig::default();
    assert_eq!(
        (defaults.lr_at_epoch(50), defaults.lr_at_epoch(51)),
        (1e-5, 5e-6)
    );
}

#[test]
fn resume_matches_an_uninterrupted_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = tiny(4, 3);
    let s = sampler(&full_cfg);
    let full_dir = dir.path().join("full");
    let full = train(&full_cfg, &s, None, Some(&full_dir)).unwrap();

    // Stop after two epochs, then continue from the saved model.
    let half_dir = dir.path().join("half");
    train(&tiny(2, 3), &s, None, Some(&half_dir)).unwrap();
    let state = TrainState::load(half_dir.join("model.lpsr")).unwrap();
    assert_eq!(state.iteration, 6);
    let resumed = train(&full_cfg, &s, Some(state), Some(&half_dir)).unwrap();
    assert_eq!(
        param_bits(&resumed.state.params),
        param_bits(&full.state.params)
    );
    assert_eq!(resumed.state.velocity, full.state.velocity);
    assert_eq!(resumed.log.rows, full.log.rows[6..]);
    let log = |d: &Path| {
        TrainLog::parse_csv(&fs::read_to_string(d.join("train_log.csv")).unwrap())
            .unwrap()
            .rows
    };
    assert_eq!(log(&half_dir), log(&full_dir));

    // Resuming from an intermediate checkpoint of the full run gives the same end point.
    let mid = TrainState::load(full_dir.join("checkpoints").join("epoch_0003.lpsr")).unwrap();
    let again = train(&full_cfg, &s, Some(mid), None).unwrap();
    assert_eq!(
        param_bits(&again.state.params),
        param_bits(&full.state.params)
    );

    let other = tiny(4, 3);
    let mismatched = TrainConfig {
        model: ModelConfig {
            feature_channels: 5,
            ..other.model
        },
        ..other
    };
    let state = TrainState::load(half_dir.join("model.lpsr")).unwrap();
    assert!(matches!(
        train(&mismatched, &s, Some(state), None),
        Err(Error::Config(_))
    ));
}

#[test]
fn lambda_zero_equals_a_plain_charbonnier_loop_bitwise() {
    let mut cfg = tiny(2, 3);
    cfg.loss.lambda_gdl = 0.0;
    let s = sampler(&cfg);
    let trained = train(&cfg, &s, None, None).unwrap();
    for row in &trained.log.rows {
        assert_eq!(row.total.to_bits(), row.charbonnier.to_bits());
    }

    // The same optimisation written directly against the Charbonnier sum.
    let mut params = ModelParams::<f32>::build(cfg.model, cfg.seed).unwrap();
    let mut opt =
        SgdMomentum::new(params.tensors(), cfg.lr, cfg.momentum, cfg.weight_decay).unwrap();
    for iteration in 1..=cfg.total_iterations() {
        let batch = s
            .sample_batch::<f32>(cfg.batch, &mut batch_rng(cfg.seed, iteration))
            .unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let x = g.constant(batch.lr);
        let out = forward_graph(&cfg.model, &mut g, &bound, x, 1).unwrap();
        let t = g.constant(batch.targets[0].clone());
        let c = charbonnier_loss(&mut g, out.images[0], t, cfg.loss.epsilon).unwrap();
        let loss = g.scale(c, 1.0 / cfg.batch as f32);
        g.backward(loss).unwrap();
        params.collect_grads(&mut g, &bound).unwrap();
        opt.learning_rate =
            cfg.lr_at_epoch(((iteration - 1) / cfg.iters_per_epoch as u64 + 1) as usize);
        opt.step(params.iter_mut()).unwrap();
    }
    assert_eq!(param_bits(&params), param_bits(&trained.state.params));
}

#[test]
fn training_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("corpus"));
    let cfg = tiny(2, 2);
    let runs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for r in &runs {
        train_on_manifest(&cfg, &m, None, Some(r)).unwrap();
    }
    for file in [
        "model.lpsr",
        "model.lpso",
        "train_log.csv",
        "config.txt",
        "checkpoints/epoch_0001.lpsr",
    ] {
        assert_eq!(
            fs::read(runs[0].join(file)).unwrap(),
            fs::read(runs[1].join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(
        TrainConfig::from_file(runs[0].join("config.txt")).unwrap(),
        cfg
    );
}

#[test]
fn superresolve_dims_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        depth: 1,
        feature_channels: 4,
        ..ModelConfig::new(Scale::X4)
    };
    let params = ModelParams::<f32>::build(cfg, 1).unwrap();
    let ckpt = dir.path().join("m.lpsr");
    save_checkpoint(&params, &ckpt).unwrap();
    let input = dir.path().join("in.png");
    save_image(&synthetic_image(50, 40, 2, 0).unwrap().0, &input).unwrap();
    let (o1, o2) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let img = superresolve(&ckpt, &input, 4, &o1).unwrap();
    assert_eq!((img.width(), img.height()), (200, 160));
    superresolve(&ckpt, &input, 4, &o2).unwrap();
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    let half = superresolve(&ckpt, &input, 2, &o2).unwrap();
    assert_eq!((half.width(), half.height()), (100, 80));
    assert!(matches!(
        superresolve(&ckpt, &input, 8, &o2),
        Err(Error::ScaleExceedsModel { .. })
    ));
}

#[test]
fn zero_residual_checkpoint_reproduces_the_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        depth: 1,
        feature_channels: 4,
        ..ModelConfig::new(Scale::X4)
    };
    let mut params = ModelParams::<f32>::build(cfg, 2).unwrap();
    for (name, t) in params.iter_mut() {
        if name.contains(".residual.") {
            t.data_mut().fill(0.0);
        }
    }
    let ckpt = dir.path().join("zero.lpsr");
    save_checkpoint(&params, &ckpt).unwrap();
    let input = dir.path().join("in.png");
    save_image(&synthetic_image(24, 20, 3, 1).unwrap().0, &input).unwrap();
    let out = dir.path().join("out.png");
    superresolve(&ckpt, &input, 4, &out).unwrap();

    let mut x = load_image(&input).unwrap().to_tensor::<f32>();
    for l in 1..=2 {
        let w = params.get(&format!("level{l}.image_up.weight")).unwrap();
        let b = params.get(&format!("level{l}.image_up.bias")).unwrap();
        x = conv_transpose2d(&x, w, b, 2, 1).unwrap();
    }
    let expected = dir.path().join("expected.png");
    save_image(&ImageRgb::from_tensor(&x, 0).unwrap().clamped(), &expected).unwrap();
    assert_eq!(load_image(&out).unwrap(), load_image(&expected).unwrap());
}

#[test]
fn evaluation_contract() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("corpus"));
    let metrics = MetricConfig::default();
    assert!(matches!(
        evaluate(&Method::Bicubic, &m, 1, None, &metrics, None),
        Err(Error::UnsupportedScale(1))
    ));
    let sr = dir.path().join("sr");
    let report = evaluate(&Method::Bicubic, &m, 2, None, &metrics, Some(&sr)).unwrap();
    assert_eq!((report.count, report.failed, report.shave), (2, 0, 2));
    assert_eq!(report.to_csv().lines().count(), 3);
    assert!(sr.join("synth_0003.png").is_file());
    let again = evaluate(&Method::Bicubic, &m, 2, None, &metrics, None).unwrap();
    assert_eq!(report.to_csv(), again.to_csv());
    assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    // A ×2 model cannot be scored at ×4.
    let params = ModelParams::<f32>::build(tiny(1, 1).model, 0).unwrap();
    let method = Method::Model(Box::new(params));
    assert!(matches!(
        evaluate(&method, &m, 4, None, &metrics, None),
        Err(Error::ScaleExceedsModel { .. })
    ));
}

#[test]
fn sweep_uses_the_grid_and_one_data_order() {
    let grid = lambda_grid();
    assert_eq!(
        grid.iter().map(|e| e.lambda_gdl).collect::<Vec<_>>(),
        vec![0.0, 0.05, 0.1, 0.5, 1.0]
    );
    assert_eq!(TrainConfig::default().loss.lambda_gdl, 0.1);

    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("corpus"));
    let base = tiny(1, 2);
    let entries = [
        SweepEntry {
            lambda_gdl: 0.0,
            lr: 1e-6,
            lr_floor: None,
        },
        SweepEntry {
            lambda_gdl: 0.5,
            lr: 1e-6,
            lr_floor: Some(1e-7),
        },
    ];
    let out = dir.path().join("sweep");
    let table = sweep_lambda(&base, &entries, &m, &MetricConfig::default(), Some(&out)).unwrap();
    assert_eq!(table.rows.len(), 2);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv, table.to_csv());
    assert!(csv.lines().nth(2).unwrap().starts_with("0.5,1e-6/1e-7,"));
    // Same seed, same batches: the Charbonnier part of the first step agrees.
    let first = |l: &str| {
        let text =
            fs::read_to_string(out.join(format!("lambda_{l}")).join("train_log.csv")).unwrap();
        TrainLog::parse_csv(&text).unwrap().rows[0]
    };
    assert_eq!(first("0").charbonnier, first("0.5").charbonnier);
    assert!(sweep_lambda(&base, &[], &m, &MetricConfig::default(), None).is_err());
    let _ = AugmentSpec::default();
}
