use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::s;
use spinefuse_core::cptm::{
    min_value, model_forward, pad_to, sliding_logits, train_step, tri_crop, CptmModel, ModelKind,
    PhantomExperimentConfig, TrainSample,
};
use spinefuse_core::tensor::Adam;

fn cptm(c: &mut Criterion) {
    let config = PhantomExperimentConfig {
        n_phantoms: 2,
        n_val: 1,
        ..PhantomExperimentConfig::default()
    };
    let phantom = config.phantoms(0).unwrap().remove(0);
    let patch = config.model.patch_shape;
    let v = phantom.image.data.view();
    let (d, h, w) = v.dim();
    let (padded, _) = pad_to(v, [d + patch[0], h, w], min_value(v));
    let triple = tri_crop(padded.view(), patch, 8, [0, 0]).unwrap();
    let sample = TrainSample {
        triple: triple.clone(),
        labels: phantom
            .labels
            .voxels
            .slice(s![8..8 + patch[0], .., ..])
            .to_owned(),
    };
    for kind in [ModelKind::Baseline, ModelKind::Cptm] {
        let model = CptmModel::new(&config.model, kind, 0).unwrap();
        c.bench_function(&format!("{kind} forward"), |b| {
            b.iter(|| model_forward(&model, &triple).unwrap())
        });
        c.bench_function(&format!("{kind} sliding inference"), |b| {
            b.iter(|| sliding_logits(&model, phantom.image.data.view()).unwrap())
        });
        let mut model = model;
        let mut adam = Adam::new(config.train.adam(), model.store());
        let batch = vec![sample.clone(); config.train.batch_size];
        c.bench_function(&format!("{kind} train step"), |b| {
            b.iter(|| train_step(&mut model, &mut adam, &batch).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = cptm
}
criterion_main!(benches);
