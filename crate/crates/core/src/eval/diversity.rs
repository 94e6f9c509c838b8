//! Determinant of the squared-exponential Gram matrix over policy embeddings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `exp(-|a - b|² / (2 h²))`.
pub fn se_kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * h * h)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median of the pairwise embedding distances.
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub score: f64,
    /// Bandwidth actually used.
    pub h: f64,
}

fn median_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(euclidean(&points[i], &points[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let m = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    // all embeddings equal: any bandwidth gives a zero determinant
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `det K` with `K_ij = se_kernel(phi_i, phi_j, h)`, clamped below at 0.
pub fn diversity_score(embeddings: &[Vec<f64>], bandwidth: Bandwidth) -> Result<Diversity> {
    if embeddings.is_empty() {
        return Err(Error::contract("diversity needs at least one embedding"));
    }
    let h = match bandwidth {
        Bandwidth::Median => median_distance(embeddings),
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(h) => return Err(Error::contract(format!("bandwidth {h} must be positive"))),
    };
    let m = embeddings.len();
    let k = DMatrix::from_fn(m, m, |i, j| se_kernel(&embeddings[i], &embeddings[j], h));
    Ok(Diversity {
        score: k.determinant().max(0.0),
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        assert_eq!(se_kernel(&[0.3, 0.2], &[0.3, 0.2], 0.7), 1.0);
        // |d|² = 2h²
        let h = 0.5;
        let k = se_kernel(&[0.0, 0.0], &[h, h], h);
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(se_kernel(&[0.1, 0.9], &[0.4, 0.2], 0.3), se_kernel(&[0.4, 0.2], &[0.1, 0.9], 0.3));
    }

    #[test]
    fn hand_computed_determinants() {
        let one = diversity_score(&[vec![0.3, 0.3]], Bandwidth::Median).unwrap();
        assert_eq!(one.score, 1.0);
        let dup = diversity_score(&[vec![0.3, 0.3], vec![0.3, 0.3]], Bandwidth::Median).unwrap();
        assert_eq!(dup.score, 0.0);
        // k = 0.5 when |d|² = 2 h² ln 2
        let h = 0.4;
        let d = (2.0 * h * h * 2f64.ln()).sqrt();
        let half = diversity_score(&[vec![0.0, 0.0], vec![d, 0.0]], Bandwidth::Fixed(h)).unwrap();
        assert!((half.score - 0.75).abs() < 1e-12, "{}", half.score);
    }

    #[test]
    fn median_bandwidth_is_reported() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 4.0]];
        // distances 3, 4, 5
        assert_eq!(diversity_score(&pts, Bandwidth::Median).unwrap().h, 4.0);
        assert!(diversity_score(&pts, Bandwidth::Fixed(0.0)).is_err());
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_permutation_invariant(
            pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..9),
            h in 0.05f64..1.0,
            rot in 0usize..8,
        ) {
            let e: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let s = diversity_score(&e, Bandwidth::Fixed(h)).unwrap().score;
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
            let mut p = e.clone();
            p.rotate_left(rot % e.len());
            p.swap(0, e.len() - 1);
            let sp = diversity_score(&p, Bandwidth::Fixed(h)).unwrap().score;
            prop_assert!((s - sp).abs() < 1e-9);
            let mut dup = e.clone();
            dup.push(e[0].clone());
            prop_assert!(diversity_score(&dup, Bandwidth::Fixed(h)).unwrap().score < 1e-9);
        }
    }
}
