use dsgtf::data::{split_subjects, synthesize_dataset, Dataset, Recording, SynthConfig};
use dsgtf::sensor_graph::AdjacencyMethod;
use dsgtf::train::{evaluate, train};
use dsgtf::TrainConfig;

fn small_config() -> TrainConfig {
    TrainConfig {
        segment_len: 20,
        window: 4,
        gat_out: 4,
        token_dim: 4,
        ff_hidden: 16,
        enc_heads: 4,
        batch_size: 8,
        epochs: 2,
        lr: 1e-3,
        adjacency: AdjacencyMethod::TopK { k: 2 },
        train_subjects: 3,
        test_subjects: 2,
        ..Default::default()
    }
}

fn dataset(seed: u64) -> Dataset {
    let synth = synthesize_dataset(&SynthConfig {
        subjects: 5,
        channels: 6,
        samples_per_task: 80,
        seed,
        noise: 0.2,
        ..Default::default()
    })
    .unwrap();
    Dataset::new(synth.layout, synth.recordings).unwrap()
}

#[test]
fn test_subject_data_never_touches_training() {
    for seed in 0..3 {
        let ds = dataset(seed);
        let split = split_subjects(&ds.subject_ids(), 3, 2, seed).unwrap();
        let mut scrambled = ds.clone();
        scrambled.recordings = ds
            .recordings
            .iter()
            .map(|r| {
                if split.is_test(&r.subject_id) {
                    let data = r.data().iter().map(|v| -3.0 * v + 1.0).collect();
                    Recording::new(r.subject_id.clone(), r.label, r.channels(), r.samples(), data).unwrap()
                } else {
                    r.clone()
                }
            })
            .collect();
        let cfg = TrainConfig { seed, ..small_config() };
        let a = train(&ds, &split, &cfg).unwrap();
        let b = train(&scrambled, &split, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn different_seeds_give_different_models() {
    let ds = dataset(0);
    let split = split_subjects(&ds.subject_ids(), 3, 2, 0).unwrap();
    let a = train(&ds, &split, &small_config()).unwrap();
    let b = train(
        &ds,
        &split,
        &TrainConfig {
            seed: 1,
            ..small_config()
        },
    )
    .unwrap();
    assert_ne!(a.params, b.params);
}

#[test]
fn evaluation_mean_is_unweighted_subject_average() {
    let ds = dataset(1);
    let split = split_subjects(&ds.subject_ids(), 3, 2, 0).unwrap();
    let cfg = small_config();
    let out = train(&ds, &split, &cfg).unwrap();
    let rep = evaluate(&out.params, &out.adjacency, &ds, &split.test_subjects, &cfg).unwrap();
    let mean = rep.per_subject.iter().map(|(_, a)| a).sum::<f64>() / rep.per_subject.len() as f64;
    assert_eq!(rep.mean, mean);
    let var = rep.per_subject.iter().map(|(_, a)| (a - mean).powi(2)).sum::<f64>() / rep.per_subject.len() as f64;
    assert_eq!(rep.std, var.sqrt());
}
