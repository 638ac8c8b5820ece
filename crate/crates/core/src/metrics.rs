//! Evaluation metrics: Chamfer distance, F-score, top-down IoU, pairwise
//! embedding similarity, the regional consistency score, and paired
//! embedding similarity against references.
//!
//! Nearest-neighbor queries run through an exact kd-tree; distances it
//! returns are identical to brute force, not approximations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingSet;
use crate::scene::Mesh;
use crate::voxel::BinaryMask;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh has no area to sample")]
    DegenerateMesh,
    #[error("threshold tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    MaskDimMismatch(u32, u32, u32, u32),
    #[error("need at least 2 embeddings, got {0}")]
    TooFewEmbeddings(usize),
    #[error("zero-length embedding vector for id {0}")]
    ZeroVector(String),
    #[error("embedding sets misaligned: {0}")]
    Misaligned(String),
}

/// A finite, non-empty set of 3D points in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud(pub Vec<[f64; 3]>);

impl PointCloud {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &self.0 {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let d = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Exact nearest-neighbor index over 3D points (median-split kd-tree).
pub struct NearestIndex {
    points: Vec<[f64; 3]>,
    nodes: Vec<KdNode>,
    root: usize,
}

enum KdNode {
    Leaf {
        start: usize,
        len: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 12;

impl NearestIndex {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let root = Self::build_rec(points, &mut order, 0, points.len(), &mut nodes);
        // Reorder point storage so leaves are contiguous.
        let stored: Vec<[f64; 3]> = order.iter().map(|&i| points[i]).collect();
        NearestIndex {
            points: stored,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[[f64; 3]],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<KdNode>,
    ) -> usize {
        let len = end - start;
        if len <= LEAF_SIZE {
            nodes.push(KdNode::Leaf { start, len });
            return nodes.len() - 1;
        }
        // Split along the widest axis of this subset.
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &order[start..end] {
            for a in 0..3 {
                min[a] = min[a].min(points[i][a]);
                max[a] = max[a].max(points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| {
                (max[a] - min[a])
                    .partial_cmp(&(max[b] - min[b]))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        let mid = start + len / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = points[order[mid]][axis];
        let placeholder = nodes.len();
        nodes.push(KdNode::Leaf { start: 0, len: 0 });
        let left = Self::build_rec(points, order, start, mid, nodes);
        let right = Self::build_rec(points, order, mid, end, nodes);
        nodes[placeholder] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        placeholder
    }

    /// Squared distance to the nearest stored point.
    pub fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut f64) {
        match &self.nodes[node] {
            KdNode::Leaf { start, len } => {
                for p in &self.points[*start..*start + *len] {
                    let d = dist_sq(q, *p);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis] - *value;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, best);
                if delta * delta < *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Samples `n` points area-uniformly over the mesh surface: triangles are
/// chosen proportionally to area, positions barycentric-uniform within.
pub fn sample_points(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud, MetricError> {
    if mesh.triangles.is_empty() || n == 0 {
        return Err(MetricError::DegenerateMesh);
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(MetricError::DegenerateMesh);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random_range(0.0..total);
        let t = cumulative.partition_point(|&c| c <= r).min(mesh.triangles.len() - 1);
        let [ia, ib, ic] = mesh.triangles[t];
        let a = mesh.vertices[ia as usize];
        let b = mesh.vertices[ib as usize];
        let c = mesh.vertices[ic as usize];
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let sq = r1.sqrt();
        let (wa, wb, wc) = (1.0 - sq, sq * (1.0 - r2), sq * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(PointCloud(points))
}

/// Symmetric Chamfer distance with non-squared Euclidean distances:
/// half the sum of both directed mean nearest-neighbor distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let index_b = NearestIndex::build(&b.0);
    let index_a = NearestIndex::build(&a.0);
    let mean_ab: f64 =
        a.0.iter().map(|&p| index_b.nearest_sq(p).sqrt()).sum::<f64>() / a.len() as f64;
    let mean_ba: f64 =
        b.0.iter().map(|&p| index_a.nearest_sq(p).sqrt()).sum::<f64>() / b.len() as f64;
    Ok(0.5 * (mean_ab + mean_ba))
}

/// F-score at threshold tau: harmonic mean of the fraction of A within tau
/// of B (precision) and of B within tau of A (recall). Distances strictly
/// below tau count.
pub fn fscore(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(MetricError::NonPositiveTau(tau));
    }
    let tau_sq = tau * tau;
    let index_b = NearestIndex::build(&b.0);
    let index_a = NearestIndex::build(&a.0);
    let hits_a = a.0.iter().filter(|&&p| index_b.nearest_sq(p) < tau_sq).count();
    let hits_b = b.0.iter().filter(|&&p| index_a.nearest_sq(p) < tau_sq).count();
    let precision = hits_a as f64 / a.len() as f64;
    let recall = hits_b as f64 / b.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Default F-score threshold: 5% of the reference cloud's bbox diagonal.
pub fn default_tau(reference: &PointCloud) -> f64 {
    0.05 * reference.bbox_diagonal()
}

/// Intersection over union of two equally sized masks. Two empty masks
/// agree vacuously and score 1.0.
pub fn iou_top(mask_gen: &BinaryMask, mask_gt: &BinaryMask) -> Result<f64, MetricError> {
    if mask_gen.width != mask_gt.width || mask_gen.height != mask_gt.height {
        return Err(MetricError::MaskDimMismatch(
            mask_gen.width,
            mask_gen.height,
            mask_gt.width,
            mask_gt.height,
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (a, b) in mask_gen.bits().iter().zip(mask_gt.bits()) {
        if *a && *b {
            inter += 1;
        }
        if *a || *b {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

const ZERO_NORM: f64 = 1e-300;

/// Mean cosine similarity over all unordered pairs.
pub fn pairwise_cos(embeddings: &EmbeddingSet) -> Result<f64, MetricError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricError::TooFewEmbeddings(n));
    }
    for (id, v) in embeddings.iter() {
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() <= ZERO_NORM {
            return Err(MetricError::ZeroVector(id.to_string()));
        }
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += cosine(embeddings.vector(i), embeddings.vector(j));
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

/// Mean cosine similarity over pairs aligned by id.
pub fn clip_score(gen: &EmbeddingSet, reference: &EmbeddingSet) -> Result<f64, MetricError> {
    if gen.len() != reference.len() {
        return Err(MetricError::Misaligned(format!(
            "{} generated vs {} reference embeddings",
            gen.len(),
            reference.len()
        )));
    }
    if gen.is_empty() {
        return Err(MetricError::TooFewEmbeddings(0));
    }
    let mut acc = 0.0;
    for (id, v) in gen.iter() {
        let r = reference
            .get(id)
            .ok_or_else(|| MetricError::Misaligned(format!("id {id} missing from reference")))?;
        for (label, vec) in [(id, v), (id, r)] {
            if vec.iter().map(|x| x * x).sum::<f64>().sqrt() <= ZERO_NORM {
                return Err(MetricError::ZeroVector(label.to_string()));
            }
        }
        acc += cosine(v, r);
    }
    Ok(acc / gen.len() as f64)
}

/// Regional consistency: the product of mean top-down IoU and pairwise
/// embedding similarity, gating on both geometric fidelity and style
/// uniformity.
pub fn regional_score(iou_mean: f64, clip_pairwise: f64) -> f64 {
    iou_mean * clip_pairwise
}

/// Evaluation report for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub region: String,
    pub cd: Option<f64>,
    pub fscore: Option<f64>,
    pub tau: Option<f64>,
    pub iou_top: Option<f64>,
    pub clip_pairwise: Option<f64>,
    pub s_regional: Option<f64>,
    pub clip_score: Option<f64>,
    pub seeds: Vec<u64>,
    pub counts: MetricCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub points_gen: usize,
    pub points_gt: usize,
    pub buildings: usize,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "region,cd,fscore,tau,iou_top,clip_pairwise,s_regional,clip_score"
    }

    pub fn csv_row(&self) -> String {
        let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.region,
            fmt(&self.cd),
            fmt(&self.fscore),
            fmt(&self.tau),
            fmt(&self.iou_top),
            fmt(&self.clip_pairwise),
            fmt(&self.s_regional),
            fmt(&self.clip_score),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{voxels_to_mesh, Mesh};
    use crate::voxel::{GridFrame, GridSpec, VoxelGrid};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud(pts.to_vec())
    }

    #[test]
    fn chamfer_identity_and_single_pair() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        let c = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&b, &c).unwrap(), 1.0);
    }

    #[test]
    fn chamfer_is_symmetric() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = PointCloud((0..40).map(|_| rng.random::<[f64; 3]>()).collect());
        let b = PointCloud((0..55).map(|_| rng.random::<[f64; 3]>()).collect());
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
    }

    #[test]
    fn fscore_extremes_and_half() {
        let a = cloud(&[[0.0; 3], [10.0, 0.0, 0.0]]);
        assert_eq!(fscore(&a, &a, 0.1).unwrap(), 1.0);
        let far = cloud(&[[100.0, 0.0, 0.0], [110.0, 0.0, 0.0]]);
        assert_eq!(fscore(&a, &far, 1.0).unwrap(), 0.0);
        // Exactly half of each cloud within tau of the other.
        let b = cloud(&[[0.0; 3], [50.0, 0.0, 0.0]]);
        let f = fscore(&a, &b, 1.0).unwrap();
        assert_eq!(f, 0.5);
        assert!(fscore(&a, &b, 0.0).is_err());
    }

    #[test]
    fn fscore_monotone_in_tau() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let a = PointCloud((0..100).map(|_| rng.random::<[f64; 3]>()).collect());
        let b = PointCloud((0..100).map(|_| rng.random::<[f64; 3]>()).collect());
        let mut last = f64::INFINITY;
        for tau in [1.0, 0.5, 0.25, 0.1, 0.05] {
            let f = fscore(&a, &b, tau).unwrap();
            assert!(f <= last + 1e-15);
            last = f;
        }
    }

    #[test]
    fn iou_cases() {
        let mut a = BinaryMask::new(4, 4, 1.0);
        let mut b = BinaryMask::new(4, 4, 1.0);
        // Half-overlapping equal 2x2 squares -> IoU 1/3.
        for y in 0..2 {
            for x in 0..2 {
                a.set(x, y, true);
                b.set(x + 1, y, true);
            }
        }
        assert!((iou_top(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou_top(&a, &a).unwrap(), 1.0);
        let empty = BinaryMask::new(4, 4, 1.0);
        assert_eq!(iou_top(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou_top(&a, &empty).unwrap(), 0.0);
        let other = BinaryMask::new(3, 4, 1.0);
        assert!(iou_top(&a, &other).is_err());
    }

    #[test]
    fn pairwise_cos_cases() {
        let mut same = EmbeddingSet::new(2);
        for i in 0..4 {
            same.push(format!("e{i}"), &[2.0, 0.0]).unwrap();
        }
        assert!((pairwise_cos(&same).unwrap() - 1.0).abs() < 1e-15);

        let mut ortho = EmbeddingSet::new(2);
        ortho.push("a", &[1.0, 0.0]).unwrap();
        ortho.push("b", &[0.0, 5.0]).unwrap();
        assert_eq!(pairwise_cos(&ortho).unwrap(), 0.0);

        // Three unit vectors at pairwise 60 degrees.
        let mut sixty = EmbeddingSet::new(3);
        sixty.push("a", &[1.0, 0.0, 0.0]).unwrap();
        sixty.push("b", &[0.5, 3.0f64.sqrt() / 2.0, 0.0]).unwrap();
        sixty
            .push("c", &[0.5, 3.0f64.sqrt() / 6.0, (2.0f64 / 3.0).sqrt()])
            .unwrap();
        assert!((pairwise_cos(&sixty).unwrap() - 0.5).abs() < 1e-12);

        let mut zero = EmbeddingSet::new(2);
        zero.push("a", &[0.0, 0.0]).unwrap();
        zero.push("b", &[1.0, 0.0]).unwrap();
        assert!(pairwise_cos(&zero).is_err());
    }

    #[test]
    fn clip_score_cases() {
        let mut gen = EmbeddingSet::new(2);
        gen.push("a", &[1.0, 1.0]).unwrap();
        gen.push("b", &[0.5, -0.5]).unwrap();
        assert!((clip_score(&gen, &gen).unwrap() - 1.0).abs() < 1e-15);

        let mut neg = EmbeddingSet::new(2);
        neg.push("a", &[-1.0, -1.0]).unwrap();
        neg.push("b", &[-0.5, 0.5]).unwrap();
        assert!((clip_score(&gen, &neg).unwrap() + 1.0).abs() < 1e-15);

        let mut missing = EmbeddingSet::new(2);
        missing.push("a", &[1.0, 0.0]).unwrap();
        missing.push("c", &[1.0, 0.0]).unwrap();
        assert!(clip_score(&gen, &missing).is_err());
    }

    #[test]
    fn regional_score_gates() {
        assert_eq!(regional_score(1.0, 1.0), 1.0);
        assert_eq!(regional_score(0.0, 0.9), 0.0);
        assert!((regional_score(0.5, 0.8) - 0.4).abs() < 1e-15);
    }

    fn unit_cube_mesh() -> Mesh {
        let mut g = VoxelGrid::new(GridSpec {
            resolution: 2,
            frame: GridFrame {
                origin: [0.0; 3],
                cell_size: 1.0,
            },
        })
        .unwrap();
        g.insert([0, 0, 0]);
        voxels_to_mesh(&g).unwrap()
    }

    #[test]
    fn sampled_points_lie_on_surface_and_reproduce() {
        let mesh = unit_cube_mesh();
        let a = sample_points(&mesh, 500, 7).unwrap();
        let b = sample_points(&mesh, 500, 7).unwrap();
        assert_eq!(a, b);
        for p in &a.0 {
            let on_face = (0..3).any(|ax| p[ax].abs() < 1e-12 || (p[ax] - 1.0).abs() < 1e-12);
            assert!(on_face, "point {p:?} off the cube surface");
            for ax in 0..3 {
                assert!(p[ax] >= -1e-12 && p[ax] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn triangle_choice_follows_area() {
        // Two triangles with area ratio 1:3.
        let mesh = Mesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [10.0, 0.0, 0.0],
                [13.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            groups: vec![],
        };
        let pts = sample_points(&mesh, 100_000, 11).unwrap();
        let big = pts.0.iter().filter(|p| p[0] >= 5.0).count();
        let frac = big as f64 / pts.len() as f64;
        assert!((frac - 0.75).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn kd_matches_brute_force_exactly() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| rng.random()).collect();
        let queries: Vec<[f64; 3]> = (0..500).map(|_| rng.random()).collect();
        let index = NearestIndex::build(&pts);
        for q in queries {
            let brute = pts
                .iter()
                .map(|&p| dist_sq(q, p))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(index.nearest_sq(q), brute);
        }
    }
}
