//! Building grouping by appearance and height.
//!
//! Features concatenate an appearance embedding with the building height;
//! grouping runs a from-scratch HDBSCAN: core distances, mutual
//! reachability, an exact MST, single-linkage dendrogram, condensation,
//! and excess-of-mass extraction.

mod hdbscan;

pub use hdbscan::{mst_mutual_reachability, ExtractionMethod, MstEdge};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingSet;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("min_cluster_size must be >= 2, got {0}")]
    BadMinClusterSize(usize),
    #[error("min_samples must be >= 1, got {0}")]
    BadMinSamples(usize),
    #[error("feature dimensions inconsistent: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("embedding/height alignment: {0}")]
    Alignment(String),
    #[error("non-finite feature value for {0}")]
    NonFinite(String),
}

/// Appearance embedding concatenated with scaled height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub building_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Multiplier applied to the height before concatenation.
    pub height_scale: f64,
    /// Z-score every dimension over the set after concatenation.
    pub standardize: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            height_scale: 1.0,
            standardize: false,
        }
    }
}

/// Builds `[embedding; height]` features. Heights align positionally with
/// the embedding set's ids and the two lengths must match.
pub fn build_features(
    embeddings: &EmbeddingSet,
    heights: &[f64],
    options: &FeatureOptions,
) -> Result<Vec<FeatureVector>, ClusterError> {
    if embeddings.len() != heights.len() {
        return Err(ClusterError::Alignment(format!(
            "{} embeddings vs {} heights",
            embeddings.len(),
            heights.len()
        )));
    }
    let mut features: Vec<FeatureVector> = Vec::with_capacity(embeddings.len());
    for (i, (id, v)) in embeddings.iter().enumerate() {
        let mut values = v.to_vec();
        values.push(options.height_scale * heights[i]);
        if values.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(id.to_string()));
        }
        features.push(FeatureVector {
            building_id: id.to_string(),
            values,
        });
    }
    if options.standardize {
        standardize_in_place(&mut features);
    }
    Ok(features)
}

fn standardize_in_place(features: &mut [FeatureVector]) {
    if features.is_empty() {
        return;
    }
    let d = features[0].values.len();
    let n = features.len() as f64;
    for dim in 0..d {
        let mean: f64 = features.iter().map(|f| f.values[dim]).sum::<f64>() / n;
        let var: f64 = features
            .iter()
            .map(|f| (f.values[dim] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-12);
        for f in features.iter_mut() {
            f.values[dim] = (f.values[dim] - mean) / std;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub extraction: ExtractionMethod,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        HdbscanParams {
            min_cluster_size: 2,
            min_samples: 2,
            extraction: ExtractionMethod::ExcessOfMass,
        }
    }
}

/// Cluster assignment: -1 is noise, clusters are 0..K-1 renumbered by
/// smallest member index so identical data always yields identical labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<i32>,
    pub probabilities: Vec<f64>,
}

impl ClusterLabels {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map(|m| (m + 1).max(0) as usize).unwrap_or(0)
    }

    pub fn to_csv(&self, ids: &[String]) -> String {
        let mut out = String::from("id,label,probability\n");
        for (i, id) in ids.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                id, self.labels[i], self.probabilities[i]
            ));
        }
        out
    }
}

/// Full HDBSCAN over feature vectors.
pub fn hdbscan(
    points: &[FeatureVector],
    params: &HdbscanParams,
) -> Result<ClusterLabels, ClusterError> {
    let n = points.len();
    if params.min_cluster_size < 2 {
        return Err(ClusterError::BadMinClusterSize(params.min_cluster_size));
    }
    if params.min_samples < 1 {
        return Err(ClusterError::BadMinSamples(params.min_samples));
    }
    if n < 2 || n < params.min_samples {
        return Err(ClusterError::TooFewPoints {
            needed: params.min_samples.max(2),
            got: n,
        });
    }
    let dim = points[0].values.len();
    for p in points {
        if p.values.len() != dim {
            return Err(ClusterError::DimMismatch(dim, p.values.len()));
        }
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(p.building_id.clone()));
        }
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let core = hdbscan::core_distances(&coords, params.min_samples);
    let mst = mst_mutual_reachability(&coords, &core);
    let slt = hdbscan::single_linkage(n, &mst);
    let rows = hdbscan::condense_tree(&slt, n, params.min_cluster_size);
    let selected = hdbscan::extract_clusters(&rows, n, params.extraction);
    let raw = hdbscan::label_points(&rows, n, &selected);

    // Canonical renumbering by smallest member point index.
    let mut first_member: Vec<(usize, usize)> = Vec::new(); // (min point, cluster id)
    for &c in &selected {
        if let Some(minp) = (0..n).find(|&p| raw.cluster_of_point[p] == c) {
            first_member.push((minp, c));
        }
    }
    first_member.sort_unstable();
    let renumber: std::collections::BTreeMap<usize, i32> = first_member
        .iter()
        .enumerate()
        .map(|(new, &(_, c))| (c, new as i32))
        .collect();

    let labels: Vec<i32> = raw
        .cluster_of_point
        .iter()
        .map(|&c| renumber.get(&c).copied().unwrap_or(-1))
        .collect();

    // Membership strength: lambda relative to the strongest member.
    let mut max_lambda: std::collections::BTreeMap<i32, f64> = std::collections::BTreeMap::new();
    for p in 0..n {
        if labels[p] >= 0 {
            let e = max_lambda.entry(labels[p]).or_insert(0.0);
            *e = e.max(raw.lambda_of_point[p]);
        }
    }
    let probabilities: Vec<f64> = (0..n)
        .map(|p| {
            if labels[p] < 0 {
                0.0
            } else {
                let m = max_lambda[&labels[p]];
                if m <= 0.0 {
                    1.0
                } else {
                    (raw.lambda_of_point[p] / m).min(1.0)
                }
            }
        })
        .collect();

    Ok(ClusterLabels {
        labels,
        probabilities,
    })
}

/// Adjusted Rand index between two labelings of the same points.
/// Noise labels are treated as ordinary singleton-able labels.
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len(), "label vectors must align");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    use std::collections::BTreeMap;
    let mut contingency: BTreeMap<(i32, i32), u64> = BTreeMap::new();
    let mut row: BTreeMap<i32, u64> = BTreeMap::new();
    let mut col: BTreeMap<i32, u64> = BTreeMap::new();
    for i in 0..n {
        *contingency.entry((a[i], b[i])).or_insert(0) += 1;
        *row.entry(a[i]).or_insert(0) += 1;
        *col.entry(b[i]).or_insert(0) += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = contingency.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = row.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = col.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = (sum_a + sum_b) / 2.0;
    if (max_index - expected).abs() < 1e-300 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fv(id: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            building_id: id.into(),
            values,
        }
    }

    #[test]
    fn features_concatenate_height() {
        let mut set = EmbeddingSet::new(2);
        set.push("a", &[1.0, 2.0]).unwrap();
        let f = build_features(&set, &[7.0], &FeatureOptions::default()).unwrap();
        assert_eq!(f[0].values, vec![1.0, 2.0, 7.0]);
    }

    #[test]
    fn features_standardize() {
        let mut set = EmbeddingSet::new(1);
        set.push("a", &[0.0]).unwrap();
        set.push("b", &[2.0]).unwrap();
        let opts = FeatureOptions {
            height_scale: 1.0,
            standardize: true,
        };
        let f = build_features(&set, &[10.0, 30.0], &opts).unwrap();
        for dim in 0..2 {
            let mean: f64 = f.iter().map(|x| x.values[dim]).sum::<f64>() / 2.0;
            let var: f64 = f.iter().map(|x| x.values[dim].powi(2)).sum::<f64>() / 2.0 - mean * mean;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn features_reject_misalignment() {
        let mut set = EmbeddingSet::new(1);
        set.push("a", &[0.0]).unwrap();
        assert!(build_features(&set, &[1.0, 2.0], &FeatureOptions::default()).is_err());
    }

    #[test]
    fn paper_dimensionality() {
        let mut set = EmbeddingSet::new(1024);
        set.push("a", &vec![0.5; 1024]).unwrap();
        set.push("b", &vec![0.25; 1024]).unwrap();
        let f = build_features(&set, &[12.0, 9.0], &FeatureOptions::default()).unwrap();
        assert_eq!(f[0].values.len(), 1025);
    }

    fn blob_dataset(seed: u64) -> (Vec<FeatureVector>, Vec<i32>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let centers = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (ci, c) in centers.iter().enumerate() {
            for i in 0..100 {
                let dx: f64 = normal.sample(&mut rng);
                let dy: f64 = normal.sample(&mut rng);
                points.push(fv(
                    &format!("b{ci}_{i}"),
                    vec![c[0] + 0.1 * dx, c[1] + 0.1 * dy],
                ));
                truth.push(ci as i32);
            }
        }
        (points, truth)
    }

    #[test]
    fn three_blobs_recovered() {
        let (points, truth) = blob_dataset(42);
        let labels = hdbscan(
            &points,
            &HdbscanParams {
                min_cluster_size: 10,
                min_samples: 5,
                extraction: ExtractionMethod::ExcessOfMass,
            },
        )
        .unwrap();
        let ari = adjusted_rand_index(&labels.labels, &truth);
        assert!(ari >= 0.95, "ARI {ari}");
        assert_eq!(labels.n_clusters(), 3);
    }

    #[test]
    fn blobs_plus_scattered_outliers_mark_noise() {
        // Outliers must be widely scattered; a compact box of them is a
        // legitimate low-density cluster, not noise.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let normal = StandardNormal;
        let mut points = Vec::new();
        for i in 0..120 {
            let dx: f64 = normal.sample(&mut rng);
            let dy: f64 = normal.sample(&mut rng);
            let cx = if i < 60 { 0.0 } else { 5.0 };
            points.push(fv(&format!("core{i}"), vec![cx + 0.05 * dx, 0.05 * dy]));
        }
        for i in 0..10 {
            points.push(fv(
                &format!("out{i}"),
                vec![
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                ],
            ));
        }
        let labels = hdbscan(
            &points,
            &HdbscanParams {
                min_cluster_size: 10,
                min_samples: 5,
                extraction: ExtractionMethod::ExcessOfMass,
            },
        )
        .unwrap();
        let noise_outliers = labels.labels[120..].iter().filter(|&&l| l == -1).count();
        assert!(noise_outliers >= 8, "only {noise_outliers} outliers flagged");
        assert_eq!(labels.n_clusters(), 2);
        for i in 0..120 {
            assert!(labels.labels[i] >= 0, "blob point {i} marked noise");
        }
    }

    #[test]
    fn duplicated_points_share_labels() {
        let (points, _) = blob_dataset(3);
        let doubled: Vec<FeatureVector> = points
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                [
                    fv(&format!("{}_a", i), p.values.clone()),
                    fv(&format!("{}_b", i), p.values.clone()),
                ]
            })
            .collect();
        let labels = hdbscan(
            &doubled,
            &HdbscanParams {
                min_cluster_size: 10,
                min_samples: 5,
                extraction: ExtractionMethod::ExcessOfMass,
            },
        )
        .unwrap();
        for i in 0..points.len() {
            assert_eq!(labels.labels[2 * i], labels.labels[2 * i + 1]);
        }
    }

    #[test]
    fn permutation_consistency() {
        let (points, _) = blob_dataset(11);
        let params = HdbscanParams {
            min_cluster_size: 10,
            min_samples: 5,
            extraction: ExtractionMethod::ExcessOfMass,
        };
        let base = hdbscan(&points, &params).unwrap();
        // Reverse the input order: labels must permute identically after
        // canonical renumbering.
        let reversed: Vec<FeatureVector> = points.iter().rev().cloned().collect();
        let rev = hdbscan(&reversed, &params).unwrap();
        let n = points.len();
        // Build the mapping from base labels to reversed labels; it must be
        // a bijection consistent across every point.
        let mut mapping = std::collections::BTreeMap::new();
        for i in 0..n {
            let a = base.labels[i];
            let b = rev.labels[n - 1 - i];
            assert_eq!((a == -1), (b == -1));
            if a >= 0 {
                assert_eq!(*mapping.entry(a).or_insert(b), b);
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let (points, _) = blob_dataset(19);
        let params = HdbscanParams {
            min_cluster_size: 10,
            min_samples: 5,
            extraction: ExtractionMethod::ExcessOfMass,
        };
        let base = hdbscan(&points, &params).unwrap();
        let scaled: Vec<FeatureVector> = points
            .iter()
            .map(|p| fv(&p.building_id, p.values.iter().map(|v| v * 37.5).collect()))
            .collect();
        let s = hdbscan(&scaled, &params).unwrap();
        assert_eq!(base.labels, s.labels);
    }

    #[test]
    fn every_cluster_meets_min_size() {
        let (points, _) = blob_dataset(23);
        let params = HdbscanParams {
            min_cluster_size: 12,
            min_samples: 4,
            extraction: ExtractionMethod::ExcessOfMass,
        };
        let out = hdbscan(&points, &params).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for &l in &out.labels {
            if l >= 0 {
                *counts.entry(l).or_insert(0usize) += 1;
            }
        }
        for (label, count) in counts {
            assert!(count >= 12, "cluster {label} has {count} members");
        }
    }

    #[test]
    fn argument_validation() {
        let p = vec![fv("a", vec![0.0]), fv("b", vec![1.0])];
        assert!(hdbscan(
            &p,
            &HdbscanParams {
                min_cluster_size: 1,
                min_samples: 1,
                extraction: ExtractionMethod::ExcessOfMass
            }
        )
        .is_err());
        assert!(hdbscan(
            &p[..1],
            &HdbscanParams::default()
        )
        .is_err());
        assert!(hdbscan(
            &p,
            &HdbscanParams {
                min_cluster_size: 2,
                min_samples: 5,
                extraction: ExtractionMethod::ExcessOfMass
            }
        )
        .is_err());
    }

    #[test]
    fn ari_extremes() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 1, 2, 0, 1, 2];
        let ari = adjusted_rand_index(&a, &b);
        assert!(ari < 0.1, "ARI {ari}");
    }
}
