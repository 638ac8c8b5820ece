//! HDBSCAN internals: core distances, the mutual-reachability MST,
//! single-linkage tree, condensation, and cluster extraction.
//!
//! Conventions follow the common reference implementations: the core
//! distance of a point is the distance to its min_samples-th nearest
//! neighbor counting the point itself, and excess-of-mass extraction never
//! selects the root. Zero distances would give infinite density, so lambda
//! values are capped at a large finite constant to keep stability sums
//! well-defined on datasets with exact duplicates.

/// 1/distance cap for coincident points.
const MAX_LAMBDA: f64 = 1e15;

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        (1.0 / distance).min(MAX_LAMBDA)
    } else {
        MAX_LAMBDA
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance to the min_samples-th nearest neighbor, self included, so
/// min_samples = 1 gives 0 and min_samples = 2 gives the nearest other
/// point.
pub(crate) fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if min_samples <= 1 {
            out.push(0.0);
            continue;
        }
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| euclidean(&points[i], &points[j]))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(dists[min_samples - 2]);
    }
    out
}

pub(crate) fn mutual_reachability(
    points: &[Vec<f64>],
    core: &[f64],
    a: usize,
    b: usize,
) -> f64 {
    euclidean(&points[a], &points[b]).max(core[a]).max(core[b])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Prim's algorithm over the implicit complete mutual-reachability graph.
/// Exactly n-1 edges; ties resolve toward the smallest index pair.
pub fn mst_mutual_reachability(points: &[Vec<f64>], core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);

    in_tree[0] = true;
    let mut latest = 0usize;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mutual_reachability(points, core, latest, j);
            // Strict improvement keeps the earliest (smallest) source on ties.
            if d < best_dist[j] || (d == best_dist[j] && latest < best_from[j]) {
                best_dist[j] = d;
                best_from[j] = latest;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best_dist[j] < best_dist[next]) {
                next = j;
            }
        }
        edges.push(MstEdge {
            a: best_from[next].min(next),
            b: best_from[next].max(next),
            weight: best_dist[next],
        });
        in_tree[next] = true;
        latest = next;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Current single-linkage node id for each root.
    node: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
            node: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, new_node: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let total = self.size[ra] + self.size[rb];
        self.parent[ra] = rb;
        self.size[rb] = total;
        self.node[rb] = new_node;
        total
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SltNode {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Single-linkage dendrogram from the MST. Node ids: leaves 0..n, internal
/// nodes n..2n-1 in merge order (edges sorted by weight, then index pair).
pub(crate) fn single_linkage(n: usize, edges: &[MstEdge]) -> Vec<SltNode> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(|x, y| {
        x.weight
            .partial_cmp(&y.weight)
            .unwrap()
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (i, e) in sorted.iter().enumerate() {
        let ra = uf.find(e.a);
        let rb = uf.find(e.b);
        let left = uf.node[ra];
        let right = uf.node[rb];
        let size = uf.union(e.a, e.b, n + i);
        tree.push(SltNode {
            left,
            right,
            distance: e.weight,
            size,
        });
    }
    tree
}

/// One row of the condensed tree: `child` is a point when `child < n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

fn slt_size(tree: &[SltNode], n: usize, node: usize) -> usize {
    if node < n {
        1
    } else {
        tree[node - n].size
    }
}

fn collect_leaves(tree: &[SltNode], n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(cur) = stack.pop() {
        if cur < n {
            out.push(cur);
        } else {
            let t = &tree[cur - n];
            stack.push(t.left);
            stack.push(t.right);
        }
    }
}

/// Collapses the dendrogram into clusters of at least `min_cluster_size`
/// members. Condensed cluster ids start at n (the root).
pub(crate) fn condense_tree(
    tree: &[SltNode],
    n: usize,
    min_cluster_size: usize,
) -> Vec<CondensedRow> {
    let mut rows = Vec::new();
    if tree.is_empty() {
        return rows;
    }
    let root = n + tree.len() - 1;
    let mut relabel = vec![usize::MAX; 2 * n];
    relabel[root] = n;
    let mut next_label = n + 1;
    // (slt node, condensed parent label)
    let mut stack: Vec<(usize, usize)> = vec![(root, n)];
    while let Some((node, label)) = stack.pop() {
        let t = &tree[node - n];
        let lambda = lambda_of(t.distance);
        let left_size = slt_size(tree, n, t.left);
        let right_size = slt_size(tree, n, t.right);
        let left_big = left_size >= min_cluster_size;
        let right_big = right_size >= min_cluster_size;
        match (left_big, right_big) {
            (true, true) => {
                for (child, size) in [(t.left, left_size), (t.right, right_size)] {
                    let child_label = next_label;
                    next_label += 1;
                    relabel[child] = child_label;
                    rows.push(CondensedRow {
                        parent: label,
                        child: child_label,
                        lambda,
                        size,
                    });
                    if child >= n {
                        stack.push((child, child_label));
                    } else {
                        // A big "cluster" that is a single point can only
                        // happen with min_cluster_size <= 1; emit the point.
                        rows.push(CondensedRow {
                            parent: child_label,
                            child,
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
            (false, false) => {
                // Cluster dissolves: every point falls out here.
                let mut leaves = Vec::new();
                collect_leaves(tree, n, t.left, &mut leaves);
                collect_leaves(tree, n, t.right, &mut leaves);
                for p in leaves {
                    rows.push(CondensedRow {
                        parent: label,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
            }
            (true, false) | (false, true) => {
                let (big, small) = if left_big {
                    (t.left, t.right)
                } else {
                    (t.right, t.left)
                };
                // The surviving side keeps the parent's label.
                if big >= n {
                    stack.push((big, label));
                } else {
                    rows.push(CondensedRow {
                        parent: label,
                        child: big,
                        lambda,
                        size: 1,
                    });
                }
                let mut leaves = Vec::new();
                collect_leaves(tree, n, small, &mut leaves);
                for p in leaves {
                    rows.push(CondensedRow {
                        parent: label,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
            }
        }
    }
    rows
}

fn lambda_diff(a: f64, b: f64) -> f64 {
    if a >= MAX_LAMBDA && b >= MAX_LAMBDA {
        0.0
    } else {
        a - b
    }
}

/// Excess-of-mass stability per condensed cluster.
pub(crate) fn cluster_stabilities(
    rows: &[CondensedRow],
    n: usize,
) -> std::collections::BTreeMap<usize, f64> {
    use std::collections::BTreeMap;
    let mut birth: BTreeMap<usize, f64> = BTreeMap::new();
    birth.insert(n, 0.0);
    for r in rows {
        if r.child >= n {
            birth.insert(r.child, r.lambda);
        }
    }
    let mut stability: BTreeMap<usize, f64> = birth.keys().map(|&c| (c, 0.0)).collect();
    for r in rows {
        let b = birth[&r.parent];
        *stability.get_mut(&r.parent).unwrap() += lambda_diff(r.lambda, b) * r.size as f64;
    }
    stability
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMethod {
    /// Standard excess-of-mass selection (the default).
    ExcessOfMass,
    /// Select the leaves of the condensed cluster tree.
    Leaf,
}

/// Returns the selected condensed cluster ids.
pub(crate) fn extract_clusters(
    rows: &[CondensedRow],
    n: usize,
    method: ExtractionMethod,
) -> Vec<usize> {
    use std::collections::BTreeMap;
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut clusters: Vec<usize> = vec![n];
    for r in rows {
        if r.child >= n {
            children.entry(r.parent).or_default().push(r.child);
            clusters.push(r.child);
        }
    }
    clusters.sort_unstable();
    clusters.dedup();

    match method {
        ExtractionMethod::Leaf => clusters
            .into_iter()
            .filter(|c| *c != n && !children.contains_key(c))
            .collect(),
        ExtractionMethod::ExcessOfMass => {
            let mut stability = cluster_stabilities(rows, n);
            let mut selected: BTreeMap<usize, bool> =
                clusters.iter().map(|&c| (c, c != n)).collect();
            for &c in clusters.iter().rev() {
                if c == n {
                    continue;
                }
                let child_sum: f64 = children
                    .get(&c)
                    .map(|ch| ch.iter().map(|k| stability[k]).sum())
                    .unwrap_or(0.0);
                let has_children = children.get(&c).map(|ch| !ch.is_empty()).unwrap_or(false);
                if has_children && child_sum > stability[&c] {
                    selected.insert(c, false);
                    stability.insert(c, child_sum);
                } else if has_children {
                    // Winner: clear all descendants.
                    let mut stack = children.get(&c).cloned().unwrap_or_default();
                    while let Some(d) = stack.pop() {
                        selected.insert(d, false);
                        if let Some(gs) = children.get(&d) {
                            stack.extend(gs.iter().copied());
                        }
                    }
                }
            }
            selected
                .into_iter()
                .filter_map(|(c, keep)| keep.then_some(c))
                .collect()
        }
    }
}

/// Output of the full pipeline before canonical renumbering: raw condensed
/// labels per point (usize::MAX for noise) and point lambdas.
pub(crate) struct RawLabels {
    pub cluster_of_point: Vec<usize>,
    pub lambda_of_point: Vec<f64>,
}

pub(crate) fn label_points(
    rows: &[CondensedRow],
    n: usize,
    selected: &[usize],
) -> RawLabels {
    use std::collections::BTreeMap;
    let selected_set: std::collections::BTreeSet<usize> = selected.iter().copied().collect();
    let mut parent_of_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    for r in rows {
        if r.child >= n {
            parent_of_cluster.insert(r.child, r.parent);
        }
    }
    let mut cluster_of_point = vec![usize::MAX; n];
    let mut lambda_of_point = vec![0.0; n];
    for r in rows {
        if r.child < n {
            lambda_of_point[r.child] = r.lambda;
            // Nearest selected ancestor, starting at the attachment parent.
            let mut cur = r.parent;
            loop {
                if selected_set.contains(&cur) {
                    cluster_of_point[r.child] = cur;
                    break;
                }
                match parent_of_cluster.get(&cur) {
                    Some(&p) => cur = p,
                    None => break, // reached the root: noise
                }
            }
        }
    }
    RawLabels {
        cluster_of_point,
        lambda_of_point,
    }
}
