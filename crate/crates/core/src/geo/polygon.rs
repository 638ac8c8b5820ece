//! Planar polygon primitives: rings, winding, area, centroids, and the
//! even-odd containment test shared by the rasterizers.

use serde::{Deserialize, Serialize};

/// A closed ring of 2D vertices. The first vertex is repeated as the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring(pub Vec<[f64; 2]>);

impl Ring {
    /// Builds a ring from vertices, closing it if the input is open.
    ///
    /// Returns `None` when fewer than 3 distinct vertices remain.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Option<Self> {
        if let (Some(first), Some(last)) = (vertices.first().copied(), vertices.last().copied()) {
            if first != last {
                vertices.push(first);
            }
        }
        let distinct = {
            let mut seen: Vec<[f64; 2]> = Vec::new();
            for v in vertices.iter().take(vertices.len().saturating_sub(1)) {
                if !seen.contains(v) {
                    seen.push(*v);
                }
            }
            seen.len()
        };
        if distinct < 3 {
            return None;
        }
        Some(Ring(vertices))
    }

    /// Signed shoelace area: positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        let v = &self.0;
        let mut acc = 0.0;
        for w in v.windows(2) {
            acc += w[0][0] * w[1][1] - w[1][0] * w[0][1];
        }
        acc / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area-weighted centroid of the region enclosed by this ring.
    ///
    /// Degenerate (zero-area) rings fall back to the vertex mean.
    pub fn centroid(&self) -> [f64; 2] {
        let a = self.signed_area();
        if a.abs() < 1e-12 {
            let n = (self.0.len() - 1).max(1) as f64;
            let mut cx = 0.0;
            let mut cy = 0.0;
            for v in self.0.iter().take(self.0.len() - 1) {
                cx += v[0];
                cy += v[1];
            }
            return [cx / n, cy / n];
        }
        let mut cx = 0.0;
        let mut cy = 0.0;
        for w in self.0.windows(2) {
            let cross = w[0][0] * w[1][1] - w[1][0] * w[0][1];
            cx += (w[0][0] + w[1][0]) * cross;
            cy += (w[0][1] + w[1][1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    pub fn bbox(&self) -> Bbox {
        let mut bb = Bbox::empty();
        for v in &self.0 {
            bb.expand(*v);
        }
        bb
    }

    pub fn reverse(&mut self) {
        self.0.reverse();
    }

    /// Translates every vertex by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Ring {
        Ring(self.0.iter().map(|v| [v[0] + dx, v[1] + dy]).collect())
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bbox {
    pub fn empty() -> Self {
        Bbox {
            min: [f64::INFINITY, f64::INFINITY],
            max: [f64::NEG_INFINITY, f64::NEG_INFINITY],
        }
    }

    pub fn expand(&mut self, p: [f64; 2]) {
        self.min[0] = self.min[0].min(p[0]);
        self.min[1] = self.min[1].min(p[1]);
        self.max[0] = self.max[0].max(p[0]);
        self.max[1] = self.max[1].max(p[1]);
    }

    pub fn union(&self, other: &Bbox) -> Bbox {
        Bbox {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn contains_bbox(&self, other: &Bbox) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.min[0] > self.max[0]
    }
}

/// A footprint polygon: one outer ring plus optional holes.
///
/// Winding is normalized on construction: outer counter-clockwise, holes
/// clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub outer: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(mut outer: Ring, mut holes: Vec<Ring>) -> Self {
        if outer.signed_area() < 0.0 {
            outer.reverse();
        }
        for h in &mut holes {
            if h.signed_area() > 0.0 {
                h.reverse();
            }
        }
        Polygon { outer, holes }
    }

    /// Outer-ring area (hole area is not subtracted).
    pub fn outer_area(&self) -> f64 {
        self.outer.area()
    }

    pub fn bbox(&self) -> Bbox {
        self.outer.bbox()
    }

    /// Area-weighted centroid of the outer ring.
    pub fn centroid(&self) -> [f64; 2] {
        self.outer.centroid()
    }

    /// Even-odd containment over all rings, so holes are excluded.
    ///
    /// Edges use the half-open crossing rule, which breaks ties at shared
    /// vertices consistently.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for ring in std::iter::once(&self.outer).chain(self.holes.iter()) {
            for w in ring.0.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a[1] > p[1]) != (b[1] > p[1]) {
                    let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    if p[0] < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            outer: self.outer.translated(dx, dy),
            holes: self.holes.iter().map(|h| h.translated(dx, dy)).collect(),
        }
    }

    /// Axis-aligned rectangle helper used across tests and demos.
    pub fn rect(min: [f64; 2], max: [f64; 2]) -> Polygon {
        Polygon::new(
            Ring::new(vec![
                [min[0], min[1]],
                [max[0], min[1]],
                [max[0], max[1]],
                [min[0], max[1]],
            ])
            .expect("rectangle ring"),
            Vec::new(),
        )
    }
}
