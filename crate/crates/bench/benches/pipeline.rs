use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chronolens_core::catalog::Task;
use chronolens_core::evaluation::{
    confusion_matrix, kofn_ablation, time_distance_accuracy, topk_accuracy, AblationPhoto,
};
use chronolens_core::explain::gradcam;
use chronolens_core::models::{
    build_merged, build_single, ensemble_predict, BackboneSpec, Branch, BranchFlags,
    ProbabilityVector,
};
use chronolens_core::nn::BackboneFamily;

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> ProbabilityVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    ProbabilityVector::new(raw.iter().map(|v| v / sum).collect()).unwrap()
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truths: Vec<i32> = (0..2000).map(|_| rng.random_range(1930..=1999)).collect();
    let preds: Vec<i32> = (0..2000).map(|_| rng.random_range(1930..=1999)).collect();
    c.bench_function("time_distance_accuracy_2000", |b| {
        b.iter(|| time_distance_accuracy(black_box(&preds), black_box(&truths), 5).unwrap())
    });

    let probs: Vec<ProbabilityVector> = (0..2000).map(|_| simplex(&mut rng, 70)).collect();
    let labels: Vec<usize> = (0..2000).map(|_| rng.random_range(0..70)).collect();
    c.bench_function("topk_accuracy_2000x70", |b| {
        b.iter(|| topk_accuracy(black_box(&probs), black_box(&labels), 3).unwrap())
    });

    let class_preds: Vec<usize> = probs.iter().map(|p| p.argmax()).collect();
    c.bench_function("confusion_matrix_2000x70", |b| {
        b.iter(|| confusion_matrix(black_box(&class_preds), black_box(&labels), 70).unwrap())
    });
}

fn bench_ensemble(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let photo = simplex(&mut rng, 70);
    let faces: Vec<ProbabilityVector> = (0..4).map(|_| simplex(&mut rng, 70)).collect();
    let people: Vec<ProbabilityVector> = (0..4).map(|_| simplex(&mut rng, 70)).collect();
    c.bench_function("ensemble_predict_4faces_4people", |b| {
        b.iter(|| {
            ensemble_predict(black_box(Some(&photo)), black_box(&faces), black_box(&people), BranchFlags::ALL)
                .unwrap()
        })
    });
}

fn bench_ablation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let photos: Vec<AblationPhoto> = (0..6)
        .map(|i| AblationPhoto {
            photo_id: format!("p{i}"),
            true_class: rng.random_range(0..10),
            image: simplex(&mut rng, 10),
            faces: (0..5).map(|_| simplex(&mut rng, 10)).collect(),
            people: (0..5).map(|_| simplex(&mut rng, 10)).collect(),
        })
        .collect();
    c.bench_function("kofn_ablation_n5_6photos", |b| {
        b.iter(|| kofn_ablation(black_box(&photos), 5).unwrap())
    });
}

fn bench_model_paths(c: &mut Criterion) {
    let spec = BackboneSpec::new(BackboneFamily::Resnet50Class, false);
    let model = build_single(spec, Task::Dating, Branch::Image, 1, None).unwrap();
    let size = model.input_size() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = Array4::from_shape_fn((8, 3, size, size), |_| rng.random::<f64>() * 0.8);
    c.bench_function("backbone_forward_batch8", |b| {
        b.iter(|| model.forward_logits(black_box(&batch)).unwrap())
    });

    let image = Array3::from_shape_fn((3, size, size), |_| rng.random::<f64>() * 0.8);
    c.bench_function("gradcam_single", |b| {
        b.iter(|| gradcam(black_box(&model), black_box(&image), 7).unwrap())
    });

    let faces = build_single(spec, Task::Dating, Branch::Faces, 2, None).unwrap();
    let people = build_single(spec, Task::Dating, Branch::People, 3, None).unwrap();
    let merged = build_merged(&model, &faces, &people, Task::Dating, 4).unwrap();
    let crops: Vec<Array3<f64>> =
        (0..2).map(|_| Array3::from_shape_fn((3, size, size), |_| rng.random::<f64>() * 0.8)).collect();
    c.bench_function("merged_forward_2faces_2people", |b| {
        b.iter_batched(
            || (image.clone(), crops.clone()),
            |(photo, crops)| merged.forward(&photo, &crops, &crops).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_metrics, bench_ensemble, bench_ablation, bench_model_paths);
criterion_main!(benches);
