//! Strategies, brute-force oracles and property bodies shared by the
//! `properties` and `acceptance` test targets.

#![allow(dead_code)]

use dsgtf::data::{
    normalize_segment, segment_recording, split_subjects, synthesize_dataset, window_segment, Dataset, DatasetSplit,
    Recording, SynthConfig, TaskLabel,
};
use dsgtf::model::layers::{multi_head_self_attention, AttentionHeadVars};
use dsgtf::model::{gat_forward, GatHead};
use dsgtf::numerics::{Tape, Tensor};
use dsgtf::sensor_graph::{build_adjacency, AdjacencyMethod, Channel, SensorLayout};
use dsgtf::train::subject_segments;
use dsgtf::{Error, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const CASES: u32 = 256;

pub fn layout_from(points: &[[f64; 3]]) -> SensorLayout {
    SensorLayout::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| Channel::new(format!("ch{i}"), *p))
            .collect(),
    )
    .unwrap()
}

/// Distinct points on a quarter-unit grid in `[-1, 1]^3`; exact in binary so
/// distance ties are real ties.
pub fn grid_points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::btree_set((-4i32..=4, -4i32..=4, -4i32..=4), n).prop_map(|set| {
        set.into_iter()
            .map(|(x, y, z)| [x as f64 / 4.0, y as f64 / 4.0, z as f64 / 4.0])
            .collect()
    })
}

pub fn float_points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n)
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// O(n^2)-per-node reference construction; diagonal always set.
pub fn oracle_adjacency(points: &[[f64; 3]], gamma: f64, method: AdjacencyMethod) -> Vec<bool> {
    let n = points.len();
    let w = |i: usize, j: usize| (-gamma * sq_dist(points[i], points[j])).exp();
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = i == j
                || match method {
                    AdjacencyMethod::FullyConnected => true,
                    AdjacencyMethod::Threshold { tau } => w(i, j) >= tau,
                    AdjacencyMethod::TopK { k } => {
                        let better = (0..n)
                            .filter(|&l| l != i && l != j)
                            .filter(|&l| w(i, l) > w(i, j) || (w(i, l) == w(i, j) && l < j))
                            .count();
                        better < k
                    }
                };
        }
    }
    m
}

pub fn check_adjacency_oracle(points: &[[f64; 3]], gamma: f64, k_frac: f64, tau: f64) -> Result<(), TestCaseError> {
    let n = points.len();
    let layout = layout_from(points);
    let k = 1 + ((n - 2) as f64 * k_frac) as usize;
    for method in [
        AdjacencyMethod::FullyConnected,
        AdjacencyMethod::Threshold { tau },
        AdjacencyMethod::TopK { k },
    ] {
        let adj = build_adjacency(&layout, gamma, method).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(adj.mask(), &oracle_adjacency(points, gamma, method)[..], "{}", method);
        if let AdjacencyMethod::TopK { k } = method {
            prop_assert_eq!(adj.edges().len(), n * k);
        }
        if let AdjacencyMethod::Threshold { .. } = method {
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(adj.get(i, j), adj.get(j, i));
                }
            }
        }
    }
    Ok(())
}

/// Ten decreasing thresholds give nested, non-shrinking edge sets.
pub fn check_thresh_ladder(points: &[[f64; 3]], gamma: f64) -> Result<(), TestCaseError> {
    let layout = layout_from(points);
    let mut prev: Option<Vec<bool>> = None;
    for step in 0..10 {
        let tau = 0.95 - 0.1 * step as f64;
        let adj = build_adjacency(&layout, gamma, AdjacencyMethod::Threshold { tau }).unwrap();
        if let Some(p) = &prev {
            prop_assert!(
                p.iter().zip(adj.mask()).all(|(a, b)| !a || *b),
                "tau {tau} dropped an edge"
            );
        }
        prev = Some(adj.mask().to_vec());
    }
    Ok(())
}

/// Building on a permuted layout equals permuting the built adjacency.
pub fn check_adjacency_permutation(points: &[[f64; 3]], gamma: f64, k: usize, seed: u64) -> Result<(), TestCaseError> {
    let n = points.len();
    let layout = layout_from(points);
    let order = permutation(n, seed);
    let permuted = layout.permuted(&order).unwrap();
    for method in [
        AdjacencyMethod::FullyConnected,
        AdjacencyMethod::Threshold { tau: 0.3 },
        AdjacencyMethod::TopK { k: k.clamp(1, n - 1) },
    ] {
        let a = build_adjacency(&layout, gamma, method).unwrap().permuted(&order);
        let b = build_adjacency(&permuted, gamma, method).unwrap();
        prop_assert_eq!(a.mask(), b.mask(), "{}", method);
    }
    Ok(())
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn values(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

/// Rows of a masked softmax sum to one and vanish off the mask.
pub fn check_softmax(rows: usize, cols: usize, data: Vec<f64>, mask_bits: Vec<bool>) -> Result<(), TestCaseError> {
    let mut mask = mask_bits;
    for r in 0..rows {
        mask[r * cols + r % cols] = true;
    }
    let x = Tensor::new(vec![rows, cols], data).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant_ref(&x);
    let y = tape.masked_softmax(v, Some(&mask)).unwrap();
    let out = tape.value(y);
    for r in 0..rows {
        let row = out.row(r);
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
        for c in 0..cols {
            prop_assert!(row[c] >= 0.0);
            if !mask[r * cols + c] {
                prop_assert_eq!(row[c], 0.0);
            }
        }
    }
    let u = tape.softmax(v).unwrap();
    for r in 0..rows {
        prop_assert!((tape.value(u).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    Ok(())
}

pub fn permute_rows(t: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<&[f64]> = order.iter().map(|&i| t.row(i)).collect();
    Tensor::from_rows(&rows)
}

pub struct GatCase {
    pub points: Vec<[f64; 3]>,
    pub w: usize,
    pub f: usize,
    pub feats: Vec<f64>,
    pub heads: Vec<(Vec<f64>, Vec<f64>)>,
    pub k: usize,
    pub seed: u64,
}

impl std::fmt::Debug for GatCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "GatCase(n={}, w={}, f={}, heads={}, k={})",
            self.points.len(),
            self.w,
            self.f,
            self.heads.len(),
            self.k
        )
    }
}

pub fn gat_case() -> impl Strategy<Value = GatCase> {
    (
        float_points(3..=9),
        1usize..5,
        1usize..5,
        1usize..4,
        any::<u64>(),
        1usize..8,
    )
        .prop_flat_map(|(points, w, f, h, seed, k)| {
            let n = points.len();
            (
                Just(points),
                Just(w),
                Just(f),
                values(n * w, 2.0),
                prop::collection::vec((values(w * f, 1.0), values(2 * f, 1.0)), h),
                Just(k),
                Just(seed),
            )
        })
        .prop_map(|(points, w, f, feats, heads, k, seed)| GatCase {
            points,
            w,
            f,
            feats,
            heads,
            k,
            seed,
        })
}

/// Permuting nodes (features and adjacency) permutes GAT output rows.
pub fn check_gat_equivariance(case: &GatCase) -> Result<(), TestCaseError> {
    let n = case.points.len();
    let layout = layout_from(&case.points);
    let x = Tensor::new(vec![n, case.w], case.feats.clone()).unwrap();
    let heads: Vec<GatHead> = case
        .heads
        .iter()
        .map(|(p, a)| GatHead {
            proj: Tensor::new(vec![case.w, case.f], p.clone()).unwrap(),
            attn: Tensor::new(vec![2 * case.f, 1], a.clone()).unwrap(),
        })
        .collect();
    let order = permutation(n, case.seed);
    for method in [
        AdjacencyMethod::FullyConnected,
        AdjacencyMethod::TopK { k: case.k.min(n - 1) },
    ] {
        let adj = build_adjacency(&layout, 2.0, method).unwrap();
        let base = gat_forward(&x, &adj, &heads).unwrap();
        let moved = gat_forward(&permute_rows(&x, &order), &adj.permuted(&order), &heads).unwrap();
        let diff = permute_rows(&base, &order).max_abs_diff(&moved);
        prop_assert!(diff < 1e-5, "{} diff {diff}", method);
    }
    Ok(())
}

/// Self-attention without positional encoding is equivariant to token order.
pub fn check_attention_equivariance(
    tokens: usize,
    dim: usize,
    x: Vec<f64>,
    heads: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    dk: usize,
    seed: u64,
) -> Result<(), TestCaseError> {
    let x = Tensor::new(vec![tokens, dim], x).unwrap();
    let mats: Vec<[Tensor; 3]> = heads
        .into_iter()
        .map(|(q, k, v)| [q, k, v].map(|m| Tensor::new(vec![dim, dk], m).unwrap()))
        .collect();
    let run = |input: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.constant_ref(input);
        let hv: Vec<AttentionHeadVars> = mats
            .iter()
            .map(|[q, k, v]| AttentionHeadVars {
                wq: tape.constant_ref(q),
                wk: tape.constant_ref(k),
                wv: tape.constant_ref(v),
            })
            .collect();
        let out = multi_head_self_attention(&mut tape, xv, &hv).unwrap();
        tape.value(out).clone()
    };
    let order = permutation(tokens, seed);
    let diff = permute_rows(&run(&x), &order).max_abs_diff(&run(&permute_rows(&x, &order)));
    prop_assert!(diff < 1e-9, "diff {diff}");
    Ok(())
}

pub fn recording(c: usize, t: usize, data: Vec<f32>) -> Recording {
    Recording::new("S01", TaskLabel::Resting, c, t, data).unwrap()
}

/// Segment count is `floor((T - d) / s) + 1` and each segment is a verbatim slice.
pub fn check_segmentation(c: usize, t: usize, half: usize, data: Vec<f32>) -> Result<(), TestCaseError> {
    let d = 2 * half;
    let rec = recording(c, t, data);
    match segment_recording(&rec, d, 0.5) {
        Err(_) => prop_assert!(t < d),
        Ok(segs) => {
            prop_assert!(t >= d);
            prop_assert_eq!(segs.len(), (t - d) / half + 1);
            for (s, seg) in segs.iter().enumerate() {
                prop_assert_eq!(seg.shape(), &[c, d][..]);
                for ch in 0..c {
                    let want: Vec<f64> = rec.channel(ch)[s * half..s * half + d]
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    prop_assert_eq!(seg.row(ch), &want[..]);
                }
            }
        }
    }
    Ok(())
}

/// Concatenating the windows along time gives back the segment.
pub fn check_window_reassembly(c: usize, m: usize, w: usize, data: Vec<f64>) -> Result<(), TestCaseError> {
    let seg = Tensor::new(vec![c, m * w], data).unwrap();
    let windows = window_segment(&seg, w).unwrap();
    prop_assert_eq!(windows.len(), m);
    for r in 0..c {
        let joined: Vec<f64> = windows.iter().flat_map(|win| win.row(r).to_vec()).collect();
        prop_assert_eq!(&joined[..], seg.row(r));
    }
    Ok(())
}

/// Normalizing twice matches normalizing once, and rows come out zero-mean.
pub fn check_normalization(c: usize, d: usize, data: Vec<f64>) -> Result<(), TestCaseError> {
    let seg = Tensor::new(vec![c, d], data).unwrap();
    let once = normalize_segment(&seg);
    let twice = normalize_segment(&once);
    let diff = once.max_abs_diff(&twice);
    prop_assert!(diff < 1e-6, "diff {diff}");
    for r in 0..c {
        let mean: f64 = once.row(r).iter().sum::<f64>() / d as f64;
        prop_assert!(mean.abs() < 1e-9);
    }
    Ok(())
}

/// Splits are disjoint, sized as asked, and training segments only come from training subjects.
pub fn check_subject_split(subjects: usize, n_train: usize, n_test: usize, seed: u64) -> Result<(), TestCaseError> {
    let synth = synthesize_dataset(&SynthConfig {
        subjects,
        channels: 2,
        samples_per_task: 20,
        seed,
        noise: 0.1,
        ..Default::default()
    })
    .unwrap();
    let ds = Dataset::new(synth.layout, synth.recordings).unwrap();
    let ids = ds.subject_ids();
    let split = split_subjects(&ids, n_train, n_test, seed).unwrap();
    prop_assert_eq!(split.train_subjects.len(), n_train);
    prop_assert_eq!(split.test_subjects.len(), n_test);
    prop_assert!(split.train_subjects.iter().all(|s| !split.is_test(s)));

    let cfg = TrainConfig {
        segment_len: 10,
        window: 5,
        ..Default::default()
    };
    let segs = subject_segments(&ds, &split.train_subjects, &cfg).unwrap();
    prop_assert_eq!(segs.len(), n_train * 4 * 3);
    prop_assert!(segs.iter().all(|s| split.train_subjects.contains(&s.subject_id)));

    if let (Some(t), false) = (split.train_subjects.first(), split.test_subjects.is_empty()) {
        let mut leaky = split.test_subjects.clone();
        leaky.push(t.clone());
        let err = DatasetSplit::new(split.train_subjects.clone(), leaky);
        prop_assert!(matches!(err, Err(Error::SubjectLeakage(_))));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CompositeCase {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub head: Vec<f64>,
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
}

pub fn composite_case() -> impl Strategy<Value = CompositeCase> {
    (
        values(12, 2.0),
        values(16, 1.0),
        values(4, 1.5),
        values(4, 1.0),
        values(32, 1.0),
        prop::collection::vec(any::<bool>(), 9),
        prop::collection::vec(0usize..4, 3),
    )
        .prop_map(|(x, w, gain, bias, head, mask, labels)| CompositeCase {
            x,
            w,
            gain,
            bias,
            head,
            mask,
            labels,
        })
}

fn composite_loss(
    t: &mut Tape<'_>,
    v: &[dsgtf::numerics::Var],
    mask: &[bool],
    labels: &[usize],
) -> dsgtf::Result<dsgtf::numerics::Var> {
    let (x, w, gain, bias, head) = (v[0], v[1], v[2], v[3], v[4]);
    let h = t.matmul(x, w)?;
    let h = t.add_row(h, bias)?;
    let h = t.layer_norm(h, gain, bias)?;
    let a = t.leaky_relu(h, 0.2)?;
    let e = t.elu(a)?;
    let r = t.relu(h)?;
    let sq = t.mul(e, r)?;
    let sq = t.scale(sq, 0.5)?;
    let tt = t.transpose(sq)?;
    let back = t.transpose(tt)?;
    let sum = t.add(e, back)?;
    let top = t.slice_rows(sum, 0, 1)?;
    let rest = t.slice_rows(sum, 1, 2)?;
    let stacked = t.concat_rows(&[rest, top])?;
    let col = t.transpose(stacked)?;
    let col = t.slice_rows(col, 0, 1)?;
    let xt = t.transpose(x)?;
    let row = t.slice_rows(xt, 1, 1)?;
    let row = t.reshape(row, &[3])?;
    let scores = t.outer_add(col, row)?;
    let attn = t.masked_softmax(scores, Some(mask))?;
    let mixed = t.matmul(attn, sum)?;
    let wide = t.concat_cols(&[mixed, e])?;
    let logits = t.matmul(wide, head)?;
    let probs = t.softmax(logits)?;
    let ce = t.cross_entropy(probs, labels)?;
    let reg = t.sum(sq)?;
    let reg = t.scale(reg, 0.01)?;
    t.add(ce, reg)
}

/// Tape gradients of a chain using every primitive agree with central differences.
pub fn check_composite_gradients(case: &CompositeCase) -> Result<(), TestCaseError> {
    let mut mask = case.mask.clone();
    for i in 0..3 {
        mask[i * 3 + i] = true;
    }
    let params = vec![
        Tensor::matrix(3, 4, case.x.clone()).unwrap(),
        Tensor::matrix(4, 4, case.w.clone()).unwrap(),
        Tensor::new(vec![4], case.gain.clone()).unwrap(),
        Tensor::new(vec![4], case.bias.clone()).unwrap(),
        Tensor::matrix(8, 4, case.head.clone()).unwrap(),
    ];
    let mut probe = Tape::new();
    let v: Vec<_> = params.iter().map(|p| probe.param(p)).collect();
    let h = probe.matmul(v[0], v[1]).unwrap();
    let h = probe.add_row(h, v[3]).unwrap();
    let h = probe.layer_norm(h, v[2], v[3]).unwrap();
    prop_assume!(probe.value(h).data().iter().all(|x| x.abs() > 1e-3), "relu kink");
    let labels = case.labels.clone();
    let report = dsgtf::numerics::finite_diff_check(
        |t, v| composite_loss(t, v, &mask, &labels),
        &params,
        &dsgtf::numerics::GradCheckOptions::default(),
    )
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(report.passed, "max rel error {}", report.max_rel_error);
    Ok(())
}

/// Huge inputs either stay finite or surface as `Error::NonFinite`.
pub fn check_nonfinite_guard(data: Vec<f64>, exponent: i32) -> Result<(), TestCaseError> {
    let scale = 10f64.powi(exponent);
    let x = Tensor::matrix(2, 3, data.iter().map(|v| v * scale).collect()).unwrap();
    let w = Tensor::matrix(3, 3, data.iter().cycle().skip(1).take(9).map(|v| v * scale).collect()).unwrap();
    let mut t = Tape::new();
    let (xv, wv) = (t.constant(x), t.constant(w));
    let outcomes = [
        t.matmul(xv, wv),
        t.mul(xv, xv),
        t.scale(xv, scale),
        t.elu(xv),
        t.softmax(xv),
        t.outer_add(xv, xv),
    ];
    for out in outcomes {
        match out {
            Ok(v) => prop_assert!(t.value(v).data().iter().all(|x| x.is_finite())),
            Err(Error::NonFinite { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
    Ok(())
}
