mod common;

use common::*;
use geotopic_core::losses::{
    alignment_loss, coherence_loss, contrastive_loss, inter_cluster_similarity, intra_cluster_similarity, total_loss,
    total_loss_grad, LossWeights,
};
use ndarray::Array2;
use rand::Rng as _;

struct Case {
    z: Array2<f64>,
    labels: Vec<usize>,
    positives: Vec<(usize, usize)>,
}

fn cases() -> Vec<Case> {
    let mut r = rng("loss-cases");
    let mut out = Vec::new();
    for n in [3, 8, 20, 50] {
        for _ in 0..4 {
            let d = r.random_range(2..10);
            let k = r.random_range(2..n.min(6));
            // Every cluster is non-empty and k < n, so both pair classes exist.
            let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
            let positives = (0..n)
                .flat_map(|i| {
                    let j = (i + 1 + r.random_range(0..n - 1)) % n;
                    [(i, j), (j, i)]
                })
                .collect();
            out.push(Case {
                z: uniform(n, d, -2.0, 2.0, &mut r),
                labels,
                positives,
            });
        }
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-10
}

#[test]
fn cluster_similarities_match_pair_loops() {
    for c in cases() {
        assert!(close(
            intra_cluster_similarity(&c.z, &c.labels).unwrap(),
            intra_oracle(&c.z, &c.labels)
        ));
        assert!(close(
            inter_cluster_similarity(&c.z, &c.labels).unwrap(),
            inter_oracle(&c.z, &c.labels)
        ));
    }
}

#[test]
fn coherence_matches_oracle() {
    for c in cases() {
        for lambda in [0.0, 0.1, 1.0] {
            let got = coherence_loss(&c.z, &c.labels, lambda).unwrap();
            assert!(close(got, coherence_oracle(&c.z, &c.labels, lambda)));
        }
    }
}

#[test]
fn contrastive_matches_oracle() {
    for c in cases() {
        for tau in [0.1, 0.5, 2.0] {
            let got = contrastive_loss(&c.z, &c.positives, tau).unwrap();
            let expected = contrastive_oracle(&c.z, &c.positives, tau);
            assert!(close(got, expected), "{got} vs {expected}");
        }
    }
}

#[test]
fn alignment_matches_oracle() {
    for c in cases() {
        assert!(close(
            alignment_loss(&c.z, &c.labels).unwrap(),
            alignment_oracle(&c.z, &c.labels)
        ));
    }
}

#[test]
fn total_is_weighted_sum_of_components() {
    let w = LossWeights {
        alpha: 0.7,
        beta: 0.4,
        gamma: 0.25,
        lambda_coh: 0.3,
        tau: 0.5,
    };
    for c in cases() {
        let b = total_loss(&c.z, &c.labels, &c.positives, &w).unwrap();
        let expected = 0.7 * contrastive_oracle(&c.z, &c.positives, 0.5)
            + 0.4 * coherence_oracle(&c.z, &c.labels, 0.3)
            + 0.25 * alignment_oracle(&c.z, &c.labels);
        assert!(close(b.total, expected));
        let sum = 0.7 * b.contrast.unwrap() + 0.4 * b.coherence.unwrap() + 0.25 * b.align.unwrap();
        assert!((b.total - sum).abs() < 1e-12);
        let (bg, _) = total_loss_grad(&c.z, &c.labels, &c.positives, &w).unwrap();
        assert_eq!(bg, b);
    }
}

#[test]
fn zero_weight_terms_are_skipped_and_contribute_no_gradient() {
    let c = &cases()[6];
    let w = LossWeights {
        alpha: 0.0,
        beta: 1.0,
        gamma: 0.0,
        ..LossWeights::default()
    };
    let (b, g) = total_loss_grad(&c.z, &c.labels, &c.positives, &w).unwrap();
    assert_eq!((b.contrast, b.align), (None, None));
    assert!(close(b.total, coherence_oracle(&c.z, &c.labels, w.lambda_coh)));
    let only = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..w
    };
    let (b0, g0) = total_loss_grad(&c.z, &c.labels, &c.positives, &only).unwrap();
    assert_eq!(b0.total, 0.0);
    assert!(g0.iter().all(|&v| v == 0.0));
    assert!(g.iter().any(|&v| v != 0.0));
}

#[test]
fn cosine_terms_are_invariant_to_row_scaling() {
    let mut r = rng("scale");
    for c in cases() {
        let scales: Vec<f64> = (0..c.z.nrows()).map(|_| r.random_range(0.1..10.0)).collect();
        let mut scaled = c.z.clone();
        for (mut row, s) in scaled.rows_mut().into_iter().zip(&scales) {
            row *= *s;
        }
        assert!(close(
            contrastive_loss(&scaled, &c.positives, 0.5).unwrap(),
            contrastive_loss(&c.z, &c.positives, 0.5).unwrap()
        ));
        assert!(close(
            coherence_loss(&scaled, &c.labels, 0.1).unwrap(),
            coherence_loss(&c.z, &c.labels, 0.1).unwrap()
        ));
    }
}

#[test]
fn missing_pair_classes_are_errors() {
    let z = uniform(3, 2, -1.0, 1.0, &mut rng("undefined"));
    assert!(intra_cluster_similarity(&z, &[0, 1, 2]).is_err());
    assert!(inter_cluster_similarity(&z, &[0, 0, 0]).is_err());
}
