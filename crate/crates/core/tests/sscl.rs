//! Loss values against a direct evaluation of the formulas, and analytic
//! gradients against central finite differences.

use megacurate_core::record::StyleLabel;
use megacurate_core::sscl::*;
use megacurate_core::vector::{l2_normalize, EmbeddingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum.
fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

struct Oracle {
    z: Vec<Vec<f64>>,
}

impl Oracle {
    fn new(x: &EmbeddingMatrix, w: &[f64], dout: usize) -> Self {
        let din = x.dim();
        let z = x
            .iter_rows()
            .map(|row| {
                let u: Vec<f64> = (0..dout)
                    .map(|m| ksum((0..din).map(|k| row[k] * w[k * dout + m])))
                    .collect();
                let n = ksum(u.iter().map(|v| v * v)).sqrt();
                u.into_iter().map(|v| v / n).collect()
            })
            .collect();
        Self { z }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        ksum(a.iter().zip(b).map(|(x, y)| x * y))
    }

    /// Direct transcription: mean over anchors of
    /// -1/|P| sum_p log(exp(s_ip) / sum_a exp(s_ia)).
    fn scl(&self, labels: &[u32], tau: f64) -> f64 {
        let b = labels.len();
        let mut terms = Vec::new();
        for i in 0..b {
            let p: Vec<usize> = (0..b)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if p.is_empty() {
                continue;
            }
            let denom = ksum(
                (0..b)
                    .filter(|&a| a != i)
                    .map(|a| (Self::dot(&self.z[i], &self.z[a]) / tau).exp()),
            );
            let s = ksum(
                p.iter()
                    .map(|&j| ((Self::dot(&self.z[i], &self.z[j]) / tau).exp() / denom).ln()),
            );
            terms.push(-s / p.len() as f64);
        }
        ksum(terms.iter().copied()) / terms.len() as f64
    }

    fn itc(&self, texts: &[Vec<f64>], labels: &[u32], pairs: &[usize]) -> f64 {
        let b = labels.len();
        let mut terms = Vec::new();
        for i in 0..b {
            for j in 0..b {
                let y = if labels[i] == labels[j] { 1.0 } else { -1.0 };
                terms.push((1.0 + (-y * Self::dot(&self.z[i], &texts[pairs[j]])).exp()).ln());
            }
        }
        ksum(terms) / (b * b) as f64
    }
}

struct Draw {
    batch: LabeledBatch,
    head: ProjectionHead,
    labels: Vec<u32>,
    texts: Vec<Vec<f64>>,
}

fn random_draw(rng: &mut ChaCha8Rng, b: usize, din: usize, dout: usize) -> Draw {
    let n_labels = (b / 2).max(1);
    let labels: Vec<u32> = (0..b).map(|i| (i % n_labels) as u32).collect();
    let x = EmbeddingMatrix::new(
        b,
        din,
        (0..b * din).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let t = EmbeddingMatrix::new(
        n_labels,
        dout,
        (0..n_labels * dout)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let t = l2_normalize(&t).unwrap();
    let texts: Vec<Vec<f64>> = t.iter_rows().map(<[f64]>::to_vec).collect();
    let pairs: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let head = ProjectionHead::random(din, dout, rng.random());
    let batch =
        LabeledBatch::new(x, t, labels.iter().map(|&l| StyleLabel(l)).collect(), pairs).unwrap();
    Draw {
        batch,
        head,
        labels,
        texts,
    }
}

fn fd_max_rel_error(d: &Draw, config: &SsclConfig) -> f64 {
    let analytic = sscl_grad(&d.batch, &d.head, config).unwrap().grad;
    let h = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..analytic.len() {
        let mut plus = d.head.clone();
        plus.params_mut()[k] += h;
        let mut minus = d.head.clone();
        minus.params_mut()[k] -= h;
        let lp = sscl_loss(&d.batch, &plus, config).unwrap().total;
        let lm = sscl_loss(&d.batch, &minus, config).unwrap().total;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1.0);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn two_same_label_samples_give_zero_scl() {
    let x = EmbeddingMatrix::from_rows(&[[1.0, 0.2], [0.3, -1.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 0.0]).unwrap();
    let b = LabeledBatch::new(x, t, vec![StyleLabel(0); 2], vec![0, 0]).unwrap();
    let l = scl_loss(&b, &ProjectionHead::identity(2), 0.07).unwrap();
    assert_eq!(l.loss, 0.0);
    assert_eq!(l.excluded, 0);
}

#[test]
fn fixed_batch_matches_direct_formula() {
    let rows = [
        [0.9, 0.1, -0.3],
        [0.8, 0.3, -0.1],
        [-0.2, 1.0, 0.4],
        [0.1, 0.7, 0.6],
    ];
    let x = EmbeddingMatrix::from_rows(&rows).unwrap();
    let t = l2_normalize(&EmbeddingMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.2]]).unwrap())
        .unwrap();
    let labels = [0u32, 0, 1, 1];
    let b = LabeledBatch::new(
        x.clone(),
        t.clone(),
        labels.iter().map(|&l| StyleLabel(l)).collect(),
        vec![0, 0, 1, 1],
    )
    .unwrap();
    let head = ProjectionHead::identity(3);
    let oracle = Oracle::new(&x, head.weight(), 3);
    let got = scl_loss(&b, &head, 0.07).unwrap().loss;
    assert!((got - oracle.scl(&labels, 0.07)).abs() <= 1e-9, "{got}");
    let texts: Vec<Vec<f64>> = t.iter_rows().map(<[f64]>::to_vec).collect();
    let itc = itc_loss(&b, &head, PairingMode::Label).unwrap();
    assert!((itc - oracle.itc(&texts, &labels, &[0, 0, 1, 1])).abs() <= 1e-9);
}

#[test]
fn symmetric_two_label_configuration_has_closed_form() {
    let tau = 0.07;
    let x =
        EmbeddingMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
    let b = LabeledBatch::new(
        x,
        t,
        [0, 0, 1, 1].map(StyleLabel).to_vec(),
        vec![0, 0, 1, 1],
    )
    .unwrap();
    let l = scl_loss(&b, &ProjectionHead::identity(2), tau).unwrap();
    // one positive at cosine 1, two negatives at cosine -1
    let e = (1.0f64 / tau).exp();
    let expected = -(e / (e + 2.0 / e)).ln();
    for term in l.per_anchor.iter().flatten() {
        assert!((term - expected).abs() < 1e-12);
    }
    assert!((l.loss - expected).abs() < 1e-12);
}

#[test]
fn itc_scalar_cases() {
    let t = EmbeddingMatrix::new_normalized(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let single = EmbeddingMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
    let ortho = LabeledBatch::new(single.clone(), t.clone(), vec![StyleLabel(0)], vec![0]).unwrap();
    let l = itc_loss(&ortho, &ProjectionHead::identity(2), PairingMode::Label).unwrap();
    assert!((l - 2f64.ln()).abs() <= 1e-12);

    let aligned = LabeledBatch::new(single, t, vec![StyleLabel(0)], vec![1]).unwrap();
    let l = itc_loss(&aligned, &ProjectionHead::identity(2), PairingMode::Label).unwrap();
    assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    assert!((l - 0.3133).abs() < 5e-5);
}

#[test]
fn flipping_pair_signs_changes_only_those_terms() {
    // same label but different prompt rows: label pairing says +1 off the
    // diagonal, instance pairing says -1
    let x = EmbeddingMatrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]).unwrap();
    let t = l2_normalize(&EmbeddingMatrix::from_rows(&[[1.0, 1.0], [1.0, -2.0]]).unwrap()).unwrap();
    let b = LabeledBatch::new(x.clone(), t.clone(), vec![StyleLabel(0); 2], vec![0, 1]).unwrap();
    let head = ProjectionHead::identity(2);
    let label = itc_loss(&b, &head, PairingMode::Label).unwrap();
    let inst = itc_loss(&b, &head, PairingMode::Instance).unwrap();
    let z = l2_normalize(&x).unwrap();
    let s01 = megacurate_core::dot(z.row(0), t.row(1));
    let s10 = megacurate_core::dot(z.row(1), t.row(0));
    let sp = |v: f64| (1.0 + v.exp()).ln();
    let expected = (sp(s01) - sp(-s01) + sp(s10) - sp(-s10)) / 4.0;
    assert!((inst - label - expected).abs() < 1e-14);
}

#[test]
fn sscl_is_sum_of_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_draw(&mut rng, 8, 6, 4);
    let config = SsclConfig::default();
    let o = sscl_loss(&d.batch, &d.head, &config).unwrap();
    let scl = scl_loss(&d.batch, &d.head, config.tau).unwrap();
    let itc = itc_loss(&d.batch, &d.head, config.pairing).unwrap();
    assert_eq!(o.total, scl.loss + itc);
    let oracle = Oracle::new(&d.batch.image_embeddings, d.head.weight(), 4);
    let expected =
        oracle.scl(&d.labels, config.tau) + oracle.itc(&d.texts, &d.labels, &d.batch.pair_index);
    assert!((o.total - expected).abs() <= 1e-9);

    let weighted = sscl_loss(
        &d.batch,
        &d.head,
        &SsclConfig {
            itc_weight: 0.25,
            ..config
        },
    )
    .unwrap();
    assert!((weighted.total - (scl.loss + 0.25 * itc)).abs() < 1e-15);
}

#[test]
fn gradient_matches_finite_differences_on_8x16_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = random_draw(&mut rng, 8, 16, 8);
    let err = fd_max_rel_error(&d, &SsclConfig::default());
    assert!(err <= 1e-5, "max rel error {err}");
}

#[test]
fn gradient_check_symmetric_zero_similarity() {
    // images orthogonal to every text: itc at its sigmoid midpoint
    let x = EmbeddingMatrix::from_rows(&[
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
    ])
    .unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
    let batch = LabeledBatch::new(x, t, [0, 1, 0, 1].map(StyleLabel).to_vec(), vec![0; 4]).unwrap();
    let d = Draw {
        batch,
        head: ProjectionHead::identity(3),
        labels: vec![0, 1, 0, 1],
        texts: vec![vec![0.0, 0.0, 1.0]],
    };
    let config = SsclConfig {
        tau: 0.5,
        ..Default::default()
    };
    let err = fd_max_rel_error(&d, &config);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn gradient_check_on_zero_loss_configuration() {
    let x = EmbeddingMatrix::from_rows(&[[1.0, 0.3], [0.2, 1.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 0.0]).unwrap();
    let batch = LabeledBatch::new(x, t, vec![StyleLabel(0); 2], vec![0, 0]).unwrap();
    let d = Draw {
        batch,
        head: ProjectionHead::identity(2),
        labels: vec![0, 0],
        texts: vec![vec![1.0, 0.0]],
    };
    let config = SsclConfig {
        itc_weight: 0.0,
        ..Default::default()
    };
    assert_eq!(sscl_loss(&d.batch, &d.head, &config).unwrap().total, 0.0);
    assert!(fd_max_rel_error(&d, &config) <= 1e-6);
}

#[test]
fn tiled_similarity_pass_matches_single_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_draw(&mut rng, 16, 12, 6);
    let whole = sscl_grad(&d.batch, &d.head, &SsclConfig::default()).unwrap();
    for tile in [1, 3, 5, 16, 40] {
        let tiled = sscl_grad(
            &d.batch,
            &d.head,
            &SsclConfig {
                tile_size: tile,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((whole.objective.total - tiled.objective.total).abs() <= 1e-10);
        for (a, b) in whole.grad.iter().zip(&tiled.grad) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn permuting_rows_leaves_scl_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = random_draw(&mut rng, 10, 5, 5);
    let perm = [3, 7, 0, 9, 1, 4, 8, 2, 6, 5];
    let p = d.batch.subset(&perm);
    let a = scl_loss(&d.batch, &d.head, 0.07).unwrap().loss;
    let b = scl_loss(&p, &d.head, 0.07).unwrap().loss;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn rotating_projected_features_leaves_scl_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = random_draw(&mut rng, 8, 4, 3);
    // Givens rotation in the (0, 2) plane applied after the head
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let w = d.head.weight();
    let mut rotated = w.to_vec();
    for k in 0..4 {
        let (a, b) = (w[k * 3], w[k * 3 + 2]);
        rotated[k * 3] = c * a - s * b;
        rotated[k * 3 + 2] = s * a + c * b;
    }
    let rh = ProjectionHead::new(4, 3, rotated).unwrap();
    let a = scl_loss(&d.batch, &d.head, 0.07).unwrap().loss;
    let b = scl_loss(&d.batch, &rh, 0.07).unwrap().loss;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn itc_decreases_as_positive_pair_aligns() {
    let t = l2_normalize(&EmbeddingMatrix::from_rows(&[[1.0, 2.0, -1.0]]).unwrap()).unwrap();
    let base = [0.5, -1.0, 0.3];
    let mut last = f64::INFINITY;
    for step in 0..10 {
        let a = step as f64 / 10.0;
        let row: Vec<f64> = base
            .iter()
            .zip(t.row(0))
            .map(|(b, t)| (1.0 - a) * b + a * t)
            .collect();
        let x = EmbeddingMatrix::from_rows(&[row]).unwrap();
        let b = LabeledBatch::new(x, t.clone(), vec![StyleLabel(0)], vec![0]).unwrap();
        let l = itc_loss(&b, &ProjectionHead::identity(3), PairingMode::Label).unwrap();
        assert!(l > 0.0);
        assert!(l < last);
        last = l;
    }
}

#[test]
fn anchors_without_positives_are_excluded() {
    let x = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 0.0]).unwrap();
    let b =
        LabeledBatch::new(x, t.clone(), [0, 0, 1].map(StyleLabel).to_vec(), vec![0; 3]).unwrap();
    let l = scl_loss(&b, &ProjectionHead::identity(2), 0.07).unwrap();
    assert_eq!(l.excluded, 1);
    assert!(l.per_anchor[2].is_none());
    assert!(l.loss >= 0.0);
    let lonely = LabeledBatch::new(
        EmbeddingMatrix::from_rows(&[[1.0, 0.0]]).unwrap(),
        t,
        vec![StyleLabel(0)],
        vec![0],
    )
    .unwrap();
    assert_eq!(
        scl_loss(&lonely, &ProjectionHead::identity(2), 0.07),
        Err(SsclError::NoPositives)
    );
}

#[test]
fn zero_projection_is_reported() {
    let x = EmbeddingMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 0.0]).unwrap();
    let b = LabeledBatch::new(x, t, vec![StyleLabel(0); 2], vec![0, 0]).unwrap();
    assert_eq!(
        scl_loss(&b, &ProjectionHead::identity(2), 0.07),
        Err(SsclError::BadProjection { row: 0 })
    );
}

fn separable_dataset(styles: usize, per: usize, dim: usize, seed: u64) -> LabeledBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..styles)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (s, c) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(
                c.iter()
                    .map(|v| v + rng.random_range(-0.3..0.3))
                    .collect::<Vec<f64>>(),
            );
            labels.push(StyleLabel(s as u32));
        }
    }
    let texts = l2_normalize(&EmbeddingMatrix::from_rows(&centers).unwrap()).unwrap();
    let pairs = labels.iter().map(|l| l.0 as usize).collect();
    LabeledBatch::new(
        EmbeddingMatrix::from_rows(&rows).unwrap(),
        texts,
        labels,
        pairs,
    )
    .unwrap()
}

#[test]
fn training_reduces_the_loss() {
    let data = separable_dataset(20, 6, 64, 1);
    let config = SsclConfig {
        epochs: 10,
        lr: 0.005,
        ..Default::default()
    };
    let initial = ProjectionHead::random(64, 64, 3);
    let out = train_head(&data, initial.clone(), &config).unwrap();
    assert_eq!(out.history.len(), 10);
    let before = sscl_loss(&data, &initial, &config).unwrap().total;
    let after = sscl_loss(&data, &out.head, &config).unwrap().total;
    assert!(after < before, "{before} -> {after} {:?}", out.history);
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let data = separable_dataset(5, 4, 8, 2);
    let head = ProjectionHead::random(8, 8, 1);
    let config = SsclConfig {
        epochs: 2,
        lr: 0.0,
        weight_decay: 0.0,
        ..Default::default()
    };
    let out = train_head(&data, head.clone(), &config).unwrap();
    assert_eq!(out.head, head);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = separable_dataset(6, 5, 8, 3);
    let config = SsclConfig {
        epochs: 3,
        lr: 0.01,
        ..Default::default()
    };
    let a = train_head(&data, ProjectionHead::identity(8), &config).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| train_head(&data, ProjectionHead::identity(8), &config).unwrap());
    assert_eq!(a, b);
}

#[test]
fn batches_always_carry_positives() {
    let labels: Vec<StyleLabel> = (0..103).map(|i| StyleLabel(i % 17)).collect();
    let config = SsclConfig {
        batch_size: 16,
        group_size: 4,
        ..Default::default()
    };
    let batches = build_batches(&labels, &config, 0);
    let mut seen = vec![false; labels.len()];
    for b in &batches {
        assert!(b.len() <= 16 + 1);
        for &i in b {
            assert!(!seen[i]);
            seen[i] = true;
            assert!(b.iter().filter(|&&j| labels[j] == labels[i]).count() >= 2);
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn underpopulated_style_rejected() {
    let x = EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let t = EmbeddingMatrix::new_normalized(1, 2, vec![1.0, 0.0]).unwrap();
    let b = LabeledBatch::new(x, t, [0, 0, 1].map(StyleLabel).to_vec(), vec![0; 3]).unwrap();
    assert_eq!(
        train_head(&b, ProjectionHead::identity(2), &SsclConfig::default()).unwrap_err(),
        SsclError::UnderpopulatedStyle { label: 1, count: 1 }
    );
}
