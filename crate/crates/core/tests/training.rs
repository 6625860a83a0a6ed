use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pointnorm::data::{synth_datasets, synth_datasets_at, Dataset, ShapeClass, SynthSpec};
use pointnorm::geometry::Point;
use pointnorm::network::{ModelConfig, PointNormNet};
use pointnorm::train::{accuracy_metrics, evaluate, predict_dataset, TrainConfig, Trainer};

fn small_spec(classes: Vec<ShapeClass>, train: usize, test: usize) -> SynthSpec {
    SynthSpec {
        classes,
        points: 64,
        train_count: train,
        test_count: test,
        ..Default::default()
    }
}

fn micro_net(classes: usize, seed: u64) -> PointNormNet<f32> {
    let mut c = ModelConfig::tiny(classes, 64);
    c.dropout = 0.0;
    PointNormNet::new(c, seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let (train, _) = synth_datasets(&small_spec(vec![ShapeClass::Sphere, ShapeClass::Cube], 16, 4)).unwrap();
    let net = micro_net(2, 0);
    let before: Vec<Vec<f32>> = net.params().iter().map(|p| p.value.data().to_vec()).collect();
    let mut trainer = Trainer::new(net, config(1)).unwrap();
    trainer.train_epoch_at(&train, 0, 0.0).unwrap();
    for (p, b) in trainer.net.params().iter().zip(&before) {
        assert_eq!(p.value.data(), &b[..], "{}", p.name);
    }
}

#[test]
fn loss_falls_on_a_two_class_problem() {
    let (train, test) = synth_datasets(&small_spec(vec![ShapeClass::Sphere, ShapeClass::Plane], 32, 16)).unwrap();
    // running BN statistics need a few dozen steps before eval mode settles
    let mut trainer = Trainer::new(micro_net(2, 1), config(15)).unwrap();
    let losses: Vec<f64> = (0..15)
        .map(|e| trainer.train_epoch(&train, e).unwrap().record.loss)
        .collect();
    assert!(losses[14] < losses[0], "{losses:?}");
    let oa = evaluate(&trainer.net, &test, 8).unwrap().overall_accuracy;
    assert!(oa >= 0.75, "test OA {oa}, losses {losses:?}");
}

#[test]
fn same_seed_same_trajectory() {
    let (train, _) = synth_datasets(&small_spec(
        vec![ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Torus],
        24,
        3,
    ))
    .unwrap();
    let run = || {
        let mut t = Trainer::new(micro_net(3, 4), config(3)).unwrap();
        (0..3)
            .map(|e| t.train_epoch(&train, e).unwrap().record.loss)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_shuffle_differently() {
    let (train, _) = synth_datasets(&small_spec(vec![ShapeClass::Sphere, ShapeClass::Cube], 16, 2)).unwrap();
    let run = |seed| {
        let mut cfg = config(1);
        cfg.seed = seed;
        let mut t = Trainer::new(micro_net(2, 0), cfg).unwrap();
        t.train_epoch(&train, 0).unwrap().record.loss
    };
    assert_ne!(run(0), run(1));
}

#[test]
fn accuracy_ignores_sample_order() {
    let (_, test) = synth_datasets(&small_spec(ShapeClass::ALL.to_vec(), 8, 24)).unwrap();
    let net = micro_net(8, 2);
    let a = evaluate(&net, &test, 5).unwrap();
    let mut shuffled = test.clone();
    shuffled.samples.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = evaluate(&net, &shuffled, 7).unwrap();
    assert_eq!(a.overall_accuracy, b.overall_accuracy);
    assert_eq!(a.mean_class_accuracy, b.mean_class_accuracy);
}

#[test]
fn per_class_accuracies_average_to_macc() {
    let (_, test) = synth_datasets(&small_spec(ShapeClass::ALL.to_vec(), 8, 30)).unwrap();
    let net = micro_net(8, 5);
    let preds = predict_dataset(&net, &test, 8).unwrap();
    let labels: Vec<usize> = test.samples.iter().map(|s| s.label).collect();
    let r = accuracy_metrics(&preds, &labels, 8).unwrap();
    let present: Vec<f64> = r.per_class_accuracy.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    assert!((mean - r.mean_class_accuracy).abs() < 1e-12);
}

fn moments(c: &[Point]) -> [f64; 6] {
    // second moments about the centroid, sorted: rotation about y keeps them
    // roughly stable across instances of a class
    let n = c.len() as f64;
    let mut m = [0.0; 3];
    for p in c {
        for a in 0..3 {
            m[a] += p[a] / n;
        }
    }
    let mut out = [0.0; 6];
    for p in c {
        let d: Vec<f64> = (0..3).map(|a| p[a] - m[a]).collect();
        let r = (d[0] * d[0] + d[2] * d[2]).sqrt();
        out[0] += r / n;
        out[1] += d[1].abs() / n;
        out[2] += r * r / n;
        out[3] += d[1] * d[1] / n;
        out[4] += (r * d[1]).abs() / n;
        out[5] += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / n;
    }
    out
}

fn nearest_centroid(train: &Dataset, test: &Dataset) -> f64 {
    let c = train.num_classes;
    let mut centroids = vec![[0.0; 6]; c];
    let mut counts = vec![0.0; c];
    for s in &train.samples {
        let f = moments(&s.coords);
        for (acc, v) in centroids[s.label].iter_mut().zip(f) {
            *acc += v;
        }
        counts[s.label] += 1.0;
    }
    for (cen, n) in centroids.iter_mut().zip(&counts) {
        cen.iter_mut().for_each(|v| *v /= n);
    }
    let correct = test
        .samples
        .iter()
        .filter(|s| {
            let f = moments(&s.coords);
            let d = |cen: &[f64; 6]| cen.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..c)
                .min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b])))
                .unwrap();
            best == s.label
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn synthetic_classes_are_separable_by_simple_moments() {
    let (train, test) = synth_datasets_at(&SynthSpec::default(), 256).unwrap();
    let acc = nearest_centroid(&train, &test);
    assert!(acc > 0.6, "moment baseline {acc}");
}
