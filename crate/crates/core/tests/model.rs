use dsgtf::data::{synthesize_dataset, SynthConfig, TaskLabel, WindowedSegment};
use dsgtf::model::layers::{multi_head_self_attention, AttentionHeadVars};
use dsgtf::model::{
    forward, gat_forward, gradient_check, spatial_forward, temporal_forward, ClassProbabilities, DsGtfParams, GatHead,
    ModelConfig,
};
use dsgtf::numerics::{GradCheckOptions, Tape, Tensor};
use dsgtf::sensor_graph::{build_adjacency, AdjacencyMethod, Channel, SensorLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn ring(n: usize) -> SensorLayout {
    SensorLayout::new(
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                Channel::new(format!("c{i}"), [a.cos(), a.sin(), 0.0])
            })
            .collect(),
    )
    .unwrap()
}

fn toy_sample(config: &ModelConfig, seed: u64) -> WindowedSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random(&[config.channels, config.segment_len], &mut rng);
    WindowedSegment::from_raw("S01", TaskLabel::Motor, &raw, config.window).unwrap()
}

#[test]
fn zero_fusion_weights_give_uniform_probabilities() {
    let cfg = ModelConfig::toy();
    let mut params = DsGtfParams::init(&cfg, 1).unwrap();
    let fusion = params.layout().fusion;
    for id in [fusion.w, fusion.b] {
        let shape = params.tensors()[id].shape().to_vec();
        params.tensors_mut()[id] = Tensor::zeros(&shape);
    }
    let adj = build_adjacency(&ring(cfg.channels), 1.0, AdjacencyMethod::TopK { k: 2 }).unwrap();
    let probs = forward(&toy_sample(&cfg, 3), &adj, &params).unwrap();
    for p in probs.0 {
        assert!((p - 0.25).abs() < 1e-12);
    }
    assert_eq!(probs.argmax(), 0);
}

#[test]
fn probabilities_sum_to_one() {
    let cfg = ModelConfig::toy();
    let params = DsGtfParams::init(&cfg, 2).unwrap();
    let adj = build_adjacency(&ring(cfg.channels), 1.0, AdjacencyMethod::FullyConnected).unwrap();
    for seed in 0..5 {
        let p = forward(&toy_sample(&cfg, seed), &adj, &params).unwrap();
        assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.0.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn argmax_ties_go_to_lower_index() {
    assert_eq!(ClassProbabilities([0.1, 0.4, 0.4, 0.1]).argmax(), 1);
    assert_eq!(ClassProbabilities([0.25; 4]).argmax(), 0);
    assert_eq!(ClassProbabilities([0.1, 0.2, 0.3, 0.4]).argmax(), 3);
}

#[test]
fn identical_windows_with_shared_weights_double_the_spatial_output() {
    let one = ModelConfig {
        segment_len: 4,
        ..ModelConfig::toy()
    };
    let two = ModelConfig {
        segment_len: 8,
        ..ModelConfig::toy()
    };
    let p1 = DsGtfParams::init(&one, 4).unwrap();
    let mut p2 = DsGtfParams::init(&two, 5).unwrap();
    let (s1, s2) = (p1.layout().spatial.clone(), p2.layout().spatial.clone());
    for g in 0..2 {
        for (h1, h2) in s1.gat[0].iter().zip(&s2.gat[g]) {
            p2.tensors_mut()[h2.proj] = p1.tensors()[h1.proj].clone();
            p2.tensors_mut()[h2.attn] = p1.tensors()[h1.attn].clone();
        }
        p2.tensors_mut()[s2.dense_w[g]] = p1.tensors()[s1.dense_w[0]].clone();
        p2.tensors_mut()[s2.dense_b[g]] = p1.tensors()[s1.dense_b[0]].clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let window = random(&[one.channels, one.window], &mut rng);
    let adj = build_adjacency(&ring(one.channels), 1.0, AdjacencyMethod::TopK { k: 2 }).unwrap();
    let single = spatial_forward(std::slice::from_ref(&window), &adj, &p1).unwrap();
    let double = spatial_forward(&[window.clone(), window], &adj, &p2).unwrap();
    assert_eq!(single.shape(), &[1, one.channels * one.token_dim]);
    for (a, b) in single.data().iter().zip(double.data()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn single_token_attention_is_the_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[1, 6], &mut rng);
    let (wq, wk, wv) = (
        random(&[6, 3], &mut rng),
        random(&[6, 3], &mut rng),
        random(&[6, 3], &mut rng),
    );
    let mut tape = Tape::new();
    let xv = tape.constant_ref(&x);
    let head = AttentionHeadVars {
        wq: tape.constant_ref(&wq),
        wk: tape.constant_ref(&wk),
        wv: tape.constant_ref(&wv),
    };
    let out = multi_head_self_attention(&mut tape, xv, &[head]).unwrap();
    let mut t2 = Tape::new();
    let (a, b) = (t2.constant_ref(&x), t2.constant_ref(&wv));
    let expected = t2.matmul(a, b).unwrap();
    assert!(tape.value(out).max_abs_diff(t2.value(expected)) < 1e-15);
}

#[test]
fn zero_attention_vector_averages_neighbors() {
    let n = 5;
    let adj = build_adjacency(&ring(n), 1.0, AdjacencyMethod::TopK { k: 2 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[n, 3], &mut rng);
    let proj = random(&[3, 2], &mut rng);
    let head = GatHead {
        proj: proj.clone(),
        attn: Tensor::zeros(&[4, 1]),
    };
    let out = gat_forward(&x, &adj, &[head]).unwrap();
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| adj.get(i, j)).collect();
        assert_eq!(nbrs.len(), 3);
        for f in 0..2 {
            let mean = nbrs
                .iter()
                .map(|&j| (0..3).map(|k| x.get(j, k) * proj.get(k, f)).sum::<f64>())
                .sum::<f64>()
                / nbrs.len() as f64;
            let elu = if mean > 0.0 { mean } else { mean.exp_m1() };
            assert!((out.get(i, f) - elu).abs() < 1e-12);
        }
    }
}

#[test]
fn isolated_node_attends_only_to_itself() {
    let layout = SensorLayout::new(vec![
        Channel::new("a", [0.0, 0.0, 0.0]),
        Channel::new("b", [0.05, 0.0, 0.0]),
        Channel::new("c", [10.0, 0.0, 0.0]),
    ])
    .unwrap();
    let adj = build_adjacency(&layout, 100.0, AdjacencyMethod::Threshold { tau: 0.5 }).unwrap();
    assert!(adj.get(0, 1) && !adj.get(2, 0) && !adj.get(2, 1) && adj.get(2, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 4], &mut rng);
    let head = GatHead {
        proj: random(&[4, 2], &mut rng),
        attn: random(&[4, 1], &mut rng),
    };
    let out = gat_forward(&x, &adj, std::slice::from_ref(&head)).unwrap();
    for f in 0..2 {
        let z: f64 = (0..4).map(|k| x.get(2, k) * head.proj.get(k, f)).sum();
        let elu = if z > 0.0 { z } else { z.exp_m1() };
        assert!((out.get(2, f) - elu).abs() < 1e-12);
    }
}

#[test]
fn temporal_stream_has_flat_token_output() {
    let cfg = ModelConfig::toy();
    let params = DsGtfParams::init(&cfg, 6).unwrap();
    let out = temporal_forward(&toy_sample(&cfg, 1).segment, &params).unwrap();
    assert_eq!(out.shape(), &[1, cfg.channels * cfg.token_dim]);
}

#[test]
fn default_dims_parameter_count_matches_closed_form() {
    let cfg = ModelConfig::with_channels(16);
    let params = DsGtfParams::init(&cfg, 0).unwrap();
    let (c, w, f, hs, p, ht, d, ff) = (16, 10, 8, 3, 8, 8, 100, 256);
    let dk = d / ht;
    let m = d / w;
    let e = c * p;
    let spatial = m * (hs * (w * f + 2 * f) + c * hs * f * e + e);
    let encoder = 3 * ht * d * dk + ht * dk * d + d + 2 * d + d * ff + ff + ff * d + d + 2 * d + d * p + p;
    let fusion = 2 * e * 4 + 4;
    assert_eq!(params.param_count(), spatial + encoder + fusion);
    assert_eq!(cfg.param_count(), params.param_count());
}

#[test]
fn toy_gradients_match_finite_differences() {
    let cfg = ModelConfig::toy();
    let params = DsGtfParams::init(&cfg, 7).unwrap();
    let synth = synthesize_dataset(&SynthConfig {
        subjects: 2,
        channels: cfg.channels,
        samples_per_task: cfg.segment_len,
        noise: 0.5,
        ..Default::default()
    })
    .unwrap();
    let adj = build_adjacency(&synth.layout, 1.0, AdjacencyMethod::TopK { k: 2 }).unwrap();
    let batch: Vec<WindowedSegment> = synth.recordings[..2]
        .iter()
        .map(|r| {
            let raw = Tensor::new(
                vec![r.channels(), r.samples()],
                r.data().iter().map(|&v| v as f64).collect(),
            )
            .unwrap();
            WindowedSegment::from_raw(r.subject_id.clone(), r.label, &raw, cfg.window).unwrap()
        })
        .collect();
    let report = gradient_check(
        &params,
        &adj,
        &batch,
        &GradCheckOptions {
            max_coords_per_tensor: Some(40),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.tensors.len(), params.tensors().len());
    assert!(report.passed, "max rel error {}", report.max_rel_error);
}
