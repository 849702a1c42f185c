use ndarray::{s, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::{PatchPosition, TokenGrid};
use crate::tensor::{gradcheck::check_gradients, Graph, ParamStore};
use crate::testutil::{jitter, rng};

fn random_patch(shape: [usize; 3], r: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn((shape[0], shape[1], shape[2]), |_| r.gen_range(-1.0..1.0))
}

fn random_triple(config: &CptmConfig, r: &mut ChaCha8Rng) -> PatchTriple {
    let [pd, ph, pw] = config.patch_shape;
    let v = random_patch([2 * pd, ph, pw], r);
    tri_crop(v.view(), config.patch_shape, 0, [0, 0]).unwrap()
}

fn bits(a: &ndarray::Array4<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn hierarchical_labels(model: &CptmModel, r: &mut ChaCha8Rng) -> Vec<usize> {
    let n = model.config().patch_voxels();
    let c = model.config().n_classes;
    (0..n).map(|_| r.gen_range(0..c)).collect()
}

fn loss_with(model: &CptmModel, store: &ParamStore, triple: &PatchTriple, labels: &[usize]) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let logits = model
        .logits(&mut g, &p, ModelInput::Triple(triple))
        .unwrap();
    let loss = g.cross_entropy(logits, labels).unwrap();
    g.value(loss)[0]
}

fn gradcheck(config: &CptmConfig, seed: u64, h: f64) {
    let mut model = CptmModel::new(config, ModelKind::Cptm, seed).unwrap();
    jitter(model.store_mut(), 0.05, &mut rng(seed + 100));
    let mut r = rng(seed + 200);
    let triple = random_triple(config, &mut r);
    let labels = hierarchical_labels(&model, &mut r);

    let mut g = Graph::new();
    let p = model.store().bind(&mut g);
    let logits = model
        .logits(&mut g, &p, ModelInput::Triple(&triple))
        .unwrap();
    let loss = g.cross_entropy(logits, &labels).unwrap();
    g.backward(loss).unwrap();
    let mut analytic = model.store().clone();
    analytic.collect_grads(&g, &p).unwrap();

    let check = check_gradients(model.store(), &analytic, h, |s| {
        loss_with(&model, s, &triple, &labels)
    });
    assert_eq!(check.checked, model.store().numel());
    assert!(check.max_relative_error < 1e-3, "{check:?}");
}

#[test]
fn micro_gradient_check() {
    gradcheck(&CptmConfig::micro(), 1, 1e-3);
}

#[test]
fn gradient_check_unshared_blocks_and_two_layers() {
    let config = CptmConfig {
        patch_shape: [8, 4, 4],
        overlap_depth: 4,
        embed_dim: 8,
        n_cptm_layers: 2,
        token_grid: TokenGrid::new(2, 2, 1),
        share_t1_params: false,
        share_t2_params: true,
        ..CptmConfig::micro()
    };
    // Narrow blocks curve more sharply; a smaller step keeps the central
    // difference truncation error below the tolerance.
    gradcheck(&config, 2, 1e-4);
}

#[test]
fn parameter_names_follow_the_layout() {
    let unshared = CptmConfig {
        share_t1_params: false,
        ..CptmConfig::micro()
    };
    let m = CptmModel::new(&unshared, ModelKind::Cptm, 0).unwrap();
    for name in [
        "enc.0.w",
        "dec.2.b",
        "pos",
        "t1.0.p2.attn.wq",
        "t2.0.from1.ln_kv.scale",
        "t2.0.from3.ffn.w2",
    ] {
        assert!(m.store().id(name).is_some(), "{name}");
    }
    let shared = CptmConfig {
        share_t2_params: true,
        positional_embedding: false,
        ..CptmConfig::micro()
    };
    let m = CptmModel::new(&shared, ModelKind::Cptm, 0).unwrap();
    assert!(m.store().id("t2.0.shared.attn.wo").is_some());
    assert!(m.store().id("t2.0.from1.attn.wo").is_none());
    assert!(m.store().id("pos").is_none());
    assert!(m.store().id("t1.0.ln1.scale").is_some());
    let b = CptmModel::new(&shared, ModelKind::Baseline, 0).unwrap();
    assert!(b.store().iter().all(|(_, n, _)| !n.starts_with("t2.")));
}

#[test]
fn zeroed_fusion_reduces_to_baseline_bit_exactly() {
    let config = CptmConfig {
        n_cptm_layers: 2,
        ..CptmConfig::micro()
    };
    let mut cptm = CptmModel::new(&config, ModelKind::Cptm, 9).unwrap();
    let mut base = CptmModel::new(&config, ModelKind::Baseline, 9).unwrap();
    // Shared parameters come first in both stores, so the same noise lands on
    // the same weights.
    jitter(cptm.store_mut(), 0.05, &mut rng(10));
    jitter(base.store_mut(), 0.05, &mut rng(10));
    cptm.zero_t2_output_projections();
    let mut r = rng(11);
    for _ in 0..10 {
        let t = random_triple(&config, &mut r);
        let a = cptm_forward(&cptm, &t).unwrap();
        let b = model_forward(&base, &t).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(
            bits(&a),
            bits(&baseline_forward(&cptm, t.middle()).unwrap())
        );
    }
}

#[test]
fn zeroed_blocks_make_every_layer_the_identity() {
    let config = CptmConfig {
        n_cptm_layers: 2,
        share_t1_params: false,
        ..CptmConfig::micro()
    };
    let mut m = CptmModel::new(&config, ModelKind::Cptm, 3).unwrap();
    jitter(m.store_mut(), 0.05, &mut rng(4));
    m.zero_block_output_projections();
    let t = random_triple(&config, &mut rng(5));
    let mut g = Graph::new();
    let p = m.store().bind(&mut g);
    let pos = [
        PatchPosition::First,
        PatchPosition::Middle,
        PatchPosition::Last,
    ];
    let z: [_; 3] = std::array::from_fn(|k| m.encode(&mut g, &p, &t.patches[k], pos[k]).unwrap());
    let before: Vec<Vec<u64>> = z
        .iter()
        .map(|s| g.value(s.tokens).iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut out = z;
    for l in 0..2 {
        out = m.cptm_layer(&mut g, &p, l, out, false).unwrap();
        for k in 0..3 {
            let after: Vec<u64> = g.value(out[k].tokens).iter().map(|v| v.to_bits()).collect();
            assert_eq!(after, before[k], "layer {l} patch {k}");
        }
    }
}

#[test]
fn middle_output_reads_only_the_overlapping_halves() {
    let config = CptmConfig {
        positional_embedding: false,
        ..CptmConfig::micro()
    };
    let half = config.overlap_depth;
    let mut r = rng(21);
    for trial in 0..20 {
        let mut m = CptmModel::new(&config, ModelKind::Cptm, 100 + trial).unwrap();
        jitter(m.store_mut(), 0.05, &mut r);
        let t = random_triple(&config, &mut r);
        let reference = cptm_forward(&m, &t).unwrap();

        let mut far = t.clone();
        far.patches[0]
            .slice_mut(s![..half, .., ..])
            .mapv_inplace(|v| v + r.gen_range(0.5..2.0));
        far.patches[2]
            .slice_mut(s![half.., .., ..])
            .mapv_inplace(|v| v - r.gen_range(0.5..2.0));
        assert_eq!(bits(&cptm_forward(&m, &far).unwrap()), bits(&reference));

        for (k, range) in [(0, half..2 * half), (2, 0..half)] {
            let mut near = t.clone();
            near.patches[k]
                .slice_mut(s![range, .., ..])
                .mapv_inplace(|v| v + 1.0);
            let diff = (&cptm_forward(&m, &near).unwrap() - &reference)
                .mapv(f64::abs)
                .sum();
            assert!(diff > 0.0, "trial {trial} patch {k}");
        }
    }
}

#[test]
fn forward_shapes_and_kind_contract() {
    let config = CptmConfig::micro();
    let cptm = CptmModel::new(&config, ModelKind::Cptm, 0).unwrap();
    let base = CptmModel::new(&config, ModelKind::Baseline, 0).unwrap();
    let t = random_triple(&config, &mut rng(1));
    assert_eq!(cptm_forward(&cptm, &t).unwrap().dim(), (4, 16, 16, 16));
    assert_eq!(cptm_forward(&base, &t).unwrap_err().kind(), "contract");
    let mut g = Graph::new();
    let p = cptm.store().bind(&mut g);
    assert_eq!(
        cptm.logits(&mut g, &p, ModelInput::Single(t.middle()))
            .unwrap_err()
            .kind(),
        "contract"
    );
    let wrong = Array3::zeros((8, 16, 16));
    assert_eq!(baseline_forward(&base, &wrong).unwrap_err().kind(), "shape");
}

#[test]
fn forward_is_deterministic_per_seed() {
    let config = CptmConfig::micro();
    let t = random_triple(&config, &mut rng(2));
    let a = CptmModel::new(&config, ModelKind::Cptm, 7).unwrap();
    let b = CptmModel::new(&config, ModelKind::Cptm, 7).unwrap();
    let c = CptmModel::new(&config, ModelKind::Cptm, 8).unwrap();
    let fa = cptm_forward(&a, &t).unwrap();
    assert_eq!(bits(&fa), bits(&cptm_forward(&b, &t).unwrap()));
    assert_ne!(bits(&fa), bits(&cptm_forward(&c, &t).unwrap()));
}

#[test]
fn hierarchical_order_round_trips() {
    let m = CptmModel::new(&CptmConfig::micro(), ModelKind::Baseline, 0).unwrap();
    let n = m.config().patch_voxels();
    let row_major: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let h = m.to_hierarchical(&row_major);
    // One class: the unpermuted logits are the row-major values again.
    let one = CptmModel::new(
        &CptmConfig {
            n_classes: 1,
            ..CptmConfig::micro()
        },
        ModelKind::Baseline,
        0,
    )
    .unwrap();
    let back = one.unpermute_logits(&h);
    assert_eq!(back.as_slice().unwrap(), &row_major[..]);
}

#[test]
fn checkpoint_round_trip() {
    let config = CptmConfig::micro();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut a = CptmModel::new(&config, ModelKind::Cptm, 1).unwrap();
    jitter(a.store_mut(), 0.1, &mut rng(2));
    a.save(&path).unwrap();
    let mut b = CptmModel::new(&config, ModelKind::Cptm, 5).unwrap();
    b.load_weights(&path).unwrap();
    let t = random_triple(&config, &mut rng(3));
    assert_eq!(
        bits(&cptm_forward(&a, &t).unwrap()),
        bits(&cptm_forward(&b, &t).unwrap())
    );
    let mut base = CptmModel::new(&config, ModelKind::Baseline, 1).unwrap();
    assert_eq!(base.load_weights(&path).unwrap_err().kind(), "data");
}

fn constant_sample(config: &CptmConfig, class: u16, r: &mut ChaCha8Rng) -> TrainSample {
    TrainSample {
        triple: random_triple(config, r),
        labels: Array3::from_elem(
            (
                config.patch_shape[0],
                config.patch_shape[1],
                config.patch_shape[2],
            ),
            class,
        ),
    }
}

#[test]
fn training_fits_a_constant_label() {
    let config = CptmConfig::micro();
    let mut m = CptmModel::new(&config, ModelKind::Cptm, 0).unwrap();
    let train = TrainConfig {
        steps: 200,
        batch_size: 2,
        lr: 1e-2,
        cosine_decay: false,
        ..TrainConfig::default()
    };
    let mut r = rng(1);
    let mut logged = Vec::new();
    let losses = fit(
        &mut m,
        &train,
        0,
        |_| {
            Ok((0..2)
                .map(|_| constant_sample(&config, 2, &mut r))
                .collect())
        },
        |e| logged.push(e.clone()),
    )
    .unwrap();
    assert_eq!(logged.len(), 200);
    assert!(losses[0] > 1.0, "{}", losses[0]);
    assert!(*losses.last().unwrap() < 0.01, "{}", losses.last().unwrap());
}

#[test]
fn training_is_bit_reproducible() {
    let config = CptmConfig::micro();
    let run = || {
        let mut m = CptmModel::new(&config, ModelKind::Cptm, 3).unwrap();
        let mut r = rng(4);
        let train = TrainConfig {
            steps: 5,
            batch_size: 3,
            ..TrainConfig::default()
        };
        fit(
            &mut m,
            &train,
            3,
            |_| {
                Ok((0..3)
                    .map(|_| {
                        let mut smp = constant_sample(&config, 0, &mut r);
                        smp.labels.mapv_inplace(|_| r.gen_range(0..4));
                        smp
                    })
                    .collect())
            },
            |_| {},
        )
        .unwrap()
    };
    let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn training_rejects_bad_labels_and_batches() {
    let config = CptmConfig::micro();
    let mut m = CptmModel::new(&config, ModelKind::Baseline, 0).unwrap();
    let mut adam = crate::tensor::Adam::new(TrainConfig::default().adam(), m.store());
    let bad = constant_sample(&config, 4, &mut rng(0));
    assert_eq!(
        train_step(&mut m, &mut adam, &[bad]).unwrap_err().kind(),
        "data"
    );
    assert_eq!(
        train_step(&mut m, &mut adam, &[]).unwrap_err().kind(),
        "input"
    );
    let bad_cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert_eq!(bad_cfg.validate().unwrap_err().kind(), "config");
}

#[test]
fn cosine_schedule_ends_at_the_floor() {
    let c = TrainConfig {
        steps: 11,
        lr: 1.0,
        min_lr_fraction: 0.1,
        ..TrainConfig::default()
    };
    assert_eq!(c.lr_at(0), 1.0);
    assert!((c.lr_at(10) - 0.1).abs() < 1e-15);
    assert!((c.lr_at(5) - 0.55).abs() < 1e-12);
}

#[test]
fn tile_starts_cover_with_clamped_last() {
    assert_eq!(tile_starts(10, 4, 4), vec![0, 4, 6]);
    assert_eq!(tile_starts(8, 4, 4), vec![0, 4]);
    assert_eq!(tile_starts(3, 4, 4), vec![0]);
    assert_eq!(tile_starts(32, 16, 8), vec![0, 8, 16]);
}

#[test]
fn single_window_volume_matches_one_forward() {
    let config = CptmConfig::micro();
    let mut m = CptmModel::new(&config, ModelKind::Cptm, 1).unwrap();
    jitter(m.store_mut(), 0.05, &mut rng(2));
    let v = random_patch(config.patch_shape, &mut rng(3));
    let logits = sliding_logits(&m, v.view()).unwrap();
    let (padded, _) = pad_to(v.view(), [32, 16, 16], min_value(v.view()));
    let t = tri_crop(padded.view(), config.patch_shape, 0, [0, 0]).unwrap();
    assert_eq!(bits(&logits), bits(&cptm_forward(&m, &t).unwrap()));
}

#[test]
fn sliding_inference_covers_the_volume() {
    let config = CptmConfig::micro();
    let mut m = CptmModel::new(&config, ModelKind::Baseline, 1).unwrap();
    let vol = crate::volume::ScalarVolume::new(
        random_patch([37, 20, 11], &mut rng(4)),
        [2.0, 1.0, 1.0],
        [0.0; 3],
    )
    .unwrap();
    let out = sliding_infer(&m, &vol).unwrap();
    assert_eq!(out.shape(), [37, 20, 11]);
    assert_eq!(out.spacing, [2.0, 1.0, 1.0]);
    assert!(out.voxels.iter().all(|&l| l < 4));
    // A model whose logits are all zero labels everything background.
    for t in m.store_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let out = sliding_infer(&m, &vol).unwrap();
    assert!(out.voxels.iter().all(|&l| l == 0));
    let shallow = crate::volume::ScalarVolume::new(
        random_patch([15, 16, 16], &mut rng(5)),
        [1.0; 3],
        [0.0; 3],
    )
    .unwrap();
    assert_eq!(sliding_infer(&m, &shallow).unwrap_err().kind(), "input");
}

fn tiny_experiment() -> PhantomExperimentConfig {
    let mut c = PhantomExperimentConfig {
        n_phantoms: 4,
        n_val: 1,
        ..PhantomExperimentConfig::default()
    };
    c.train.steps = 3;
    c.train.batch_size = 2;
    c
}

#[test]
fn experiment_interior_segments_and_validation() {
    let c = PhantomExperimentConfig::default();
    assert_eq!(c.interior_segments(), vec![4, 5, 6, 7]);
    c.validate().unwrap();
    let bad = PhantomExperimentConfig {
        margin_range: [3, 10],
        ..c.clone()
    };
    assert_eq!(bad.validate().unwrap_err().kind(), "config");
    let bad = PhantomExperimentConfig { n_val: 200, ..c };
    assert_eq!(bad.validate().unwrap_err().kind(), "config");
}

#[test]
fn experiment_phantoms_have_framed_columns() {
    let c = tiny_experiment();
    let a = c.phantoms(5).unwrap();
    let b = c.phantoms(5).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.image.data, q.image.data);
        let (d, _, _) = p.labels.voxels.dim();
        let top = (0..d).find(|&z| p.labels.voxels[[z, 4, 4]] != 0).unwrap();
        let bottom = d
            - 1
            - (0..d)
                .rev()
                .find(|&z| p.labels.voxels[[z, 4, 4]] != 0)
                .unwrap();
        assert!(top % 2 == 0 && (2..=10).contains(&top), "{top}");
        assert!(bottom % 2 == 0 && (2..=10).contains(&bottom), "{bottom}");
        assert_eq!(d, top + 48 + bottom);
    }
}

#[test]
fn experiment_is_deterministic() {
    let c = tiny_experiment();
    let a = run_phantom_experiment(&c, ModelKind::Cptm, 1, |_| {}).unwrap();
    let b = run_phantom_experiment(&c, ModelKind::Cptm, 1, |_| {}).unwrap();
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    assert_eq!(a, b);
    assert_eq!((a.steps, a.n_train, a.n_val), (3, 3, 1));
    assert_eq!(a.per_segment_id_rate.len(), 12);
    assert!((a.chance_id_rate - 100.0 / 12.0).abs() < 1e-12);
}
