//! Volumetric building proxies on cubic grids.
//!
//! Footprints become LOD0 (extruded bounding box) or LOD1 (extruded
//! footprint) occupancy, with max-pool downsampling and top-down
//! rasterization. Occupancy tests use cell centers with a half-open
//! convention so results are exactly reproducible by brute force.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::geo::{Bbox, BuildingRecord, Polygon};

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("building {id} exceeds grid frame (footprint or height out of bounds)")]
    OutOfFrame { id: String },
    #[error("building {id}: degenerate zero-area footprint")]
    DegeneratePolygon { id: String },
    #[error("factor {factor} does not divide resolution {resolution}")]
    NonDivisorFactor { resolution: u32, factor: u32 },
    #[error("resolution {0} exceeds the u16 index range")]
    ResolutionTooLarge(u32),
    #[error("voxel io: {0}")]
    Io(#[from] io::Error),
    #[error("bad voxel file: {0}")]
    Format(String),
}

/// Placement of a cubic grid in local meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    /// Position of the grid corner at index (0, 0, 0).
    pub origin: [f64; 3],
    pub cell_size: f64,
}

impl GridFrame {
    pub fn side(&self, resolution: u32) -> f64 {
        self.cell_size * resolution as f64
    }
}

/// Grid resolution plus frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: u32,
    pub frame: GridFrame,
}

impl GridSpec {
    /// The per-building canonical frame: footprint bbox centered in x/y,
    /// ground at z = 0, uniform cell size covering the larger of footprint
    /// extent and height with the given padding fraction.
    ///
    /// A uniform cell size keeps the footprint aspect ratio intact in index
    /// space, so contour and orientation cues survive encoding.
    pub fn canonical_for(record: &BuildingRecord, resolution: u32, padding: f64) -> GridSpec {
        let bb = record.bbox();
        let extent = bb.width().max(bb.height()).max(record.height);
        let cell_size = extent * (1.0 + padding) / resolution as f64;
        let side = cell_size * resolution as f64;
        let c = bb.center();
        GridSpec {
            resolution,
            frame: GridFrame {
                origin: [c[0] - side / 2.0, c[1] - side / 2.0, 0.0],
                cell_size,
            },
        }
    }

    fn contains_building(&self, record: &BuildingRecord) -> bool {
        let bb = record.bbox();
        let side = self.frame.side(self.resolution);
        let x0 = self.frame.origin[0];
        let y0 = self.frame.origin[1];
        bb.min[0] >= x0 - 1e-9
            && bb.min[1] >= y0 - 1e-9
            && bb.max[0] <= x0 + side + 1e-9
            && bb.max[1] <= y0 + side + 1e-9
            && record.height <= side + 1e-9
    }
}

/// Sparse binary occupancy over an axis-aligned cubic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: u32,
    cell_size: f64,
    frame_origin: [f64; 3],
    occupancy: BTreeSet<[u16; 3]>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec) -> Result<Self, VoxelError> {
        if spec.resolution > u16::MAX as u32 {
            return Err(VoxelError::ResolutionTooLarge(spec.resolution));
        }
        Ok(VoxelGrid {
            resolution: spec.resolution,
            cell_size: spec.frame.cell_size,
            frame_origin: spec.frame.origin,
            occupancy: BTreeSet::new(),
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn frame_origin(&self) -> [f64; 3] {
        self.frame_origin
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            resolution: self.resolution,
            frame: GridFrame {
                origin: self.frame_origin,
                cell_size: self.cell_size,
            },
        }
    }

    /// Number of activated cells.
    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn contains(&self, idx: [u16; 3]) -> bool {
        self.occupancy.contains(&idx)
    }

    /// Inserts an index; out-of-range indices are a caller bug.
    pub fn insert(&mut self, idx: [u16; 3]) {
        debug_assert!(idx.iter().all(|&c| (c as u32) < self.resolution));
        self.occupancy.insert(idx);
    }

    /// Activated indices in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = [u16; 3]> + '_ {
        self.occupancy.iter().copied()
    }

    /// World-space center of a cell.
    pub fn cell_center(&self, idx: [u16; 3]) -> [f64; 3] {
        [
            self.frame_origin[0] + (idx[0] as f64 + 0.5) * self.cell_size,
            self.frame_origin[1] + (idx[1] as f64 + 0.5) * self.cell_size,
            self.frame_origin[2] + (idx[2] as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn is_subset_of(&self, other: &VoxelGrid) -> bool {
        self.occupancy.is_subset(&other.occupancy)
    }

    /// Mean (x, y) of occupied columns' centers; `None` when empty.
    pub fn topdown_centroid(&self) -> Option<[f64; 2]> {
        let columns: BTreeSet<[u16; 2]> = self.occupancy.iter().map(|&[i, j, _]| [i, j]).collect();
        if columns.is_empty() {
            return None;
        }
        let mut cx = 0.0;
        let mut cy = 0.0;
        for &[i, j] in &columns {
            cx += self.frame_origin[0] + (i as f64 + 0.5) * self.cell_size;
            cy += self.frame_origin[1] + (j as f64 + 0.5) * self.cell_size;
        }
        let n = columns.len() as f64;
        Some([cx / n, cy / n])
    }

    /// Serializes as: magic "UVOX", u32 N, f32 cell size, f32 x3 origin,
    /// u32 count, then count (u16, u16, u16) triples. Little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), VoxelError> {
        w.write_all(b"UVOX")?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&(self.cell_size as f32).to_le_bytes())?;
        for c in self.frame_origin {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
        w.write_all(&(self.occupancy.len() as u32).to_le_bytes())?;
        for idx in &self.occupancy {
            for c in idx {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, VoxelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"UVOX" {
            return Err(VoxelError::Format("bad magic, expected UVOX".into()));
        }
        let resolution = read_u32(r)?;
        if resolution > u16::MAX as u32 {
            return Err(VoxelError::ResolutionTooLarge(resolution));
        }
        let cell_size = read_f32(r)? as f64;
        let origin = [
            read_f32(r)? as f64,
            read_f32(r)? as f64,
            read_f32(r)? as f64,
        ];
        let count = read_u32(r)? as usize;
        let mut occupancy = BTreeSet::new();
        for _ in 0..count {
            let idx = [read_u16(r)?, read_u16(r)?, read_u16(r)?];
            if idx.iter().any(|&c| c as u32 >= resolution) {
                return Err(VoxelError::Format(format!(
                    "index {idx:?} out of range for N={resolution}"
                )));
            }
            occupancy.insert(idx);
        }
        Ok(VoxelGrid {
            resolution,
            cell_size,
            frame_origin: origin,
            occupancy,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, VoxelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, VoxelError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, VoxelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// LOD0: every cell whose center lies inside the footprint's bbox extruded
/// from z = 0 to the building height. Half-open on all bounds.
pub fn extrude_lod0(record: &BuildingRecord, spec: GridSpec) -> Result<VoxelGrid, VoxelError> {
    if !spec.contains_building(record) {
        return Err(VoxelError::OutOfFrame {
            id: record.id.clone(),
        });
    }
    let mut grid = VoxelGrid::new(spec)?;
    let bb = record.bbox();
    let n = spec.resolution as usize;
    for i in 0..n {
        let x = spec.frame.origin[0] + (i as f64 + 0.5) * spec.frame.cell_size;
        if x < bb.min[0] || x >= bb.max[0] {
            continue;
        }
        for j in 0..n {
            let y = spec.frame.origin[1] + (j as f64 + 0.5) * spec.frame.cell_size;
            if y < bb.min[1] || y >= bb.max[1] {
                continue;
            }
            fill_column(&mut grid, spec, i as u16, j as u16, record.height);
        }
    }
    Ok(grid)
}

/// LOD1: cells whose (x, y) center passes the even-odd footprint test
/// (holes respected) and whose z center is below the height.
pub fn extrude_lod1(record: &BuildingRecord, spec: GridSpec) -> Result<VoxelGrid, VoxelError> {
    if record.footprint.outer_area() <= 0.0 {
        return Err(VoxelError::DegeneratePolygon {
            id: record.id.clone(),
        });
    }
    if !spec.contains_building(record) {
        return Err(VoxelError::OutOfFrame {
            id: record.id.clone(),
        });
    }
    let mut grid = VoxelGrid::new(spec)?;
    let bb = record.bbox();
    let n = spec.resolution as usize;
    for i in 0..n {
        let x = spec.frame.origin[0] + (i as f64 + 0.5) * spec.frame.cell_size;
        if x < bb.min[0] || x >= bb.max[0] {
            continue;
        }
        for j in 0..n {
            let y = spec.frame.origin[1] + (j as f64 + 0.5) * spec.frame.cell_size;
            if y < bb.min[1] || y >= bb.max[1] {
                continue;
            }
            if record.footprint.contains([x, y]) {
                fill_column(&mut grid, spec, i as u16, j as u16, record.height);
            }
        }
    }
    Ok(grid)
}

fn fill_column(grid: &mut VoxelGrid, spec: GridSpec, i: u16, j: u16, height: f64) {
    // Ground sits at the frame's z = 0 plane.
    for k in 0..spec.resolution {
        let z = (k as f64 + 0.5) * spec.frame.cell_size;
        if z >= height {
            break;
        }
        grid.insert([i, j, k as u16]);
    }
}

/// Fills cells until no "checkerboard" edge remains: two diagonally
/// touching active cells whose two common neighbors are both empty. Such
/// edges pinch the extracted surface, so meshes of cleaned grids satisfy
/// the two-triangles-per-edge property structurally. The smaller of the
/// two empty neighbors (lexicographic) is filled; the pass iterates to a
/// fixed point and only ever adds cells.
pub fn fill_checkerboard_edges(grid: &VoxelGrid) -> VoxelGrid {
    let mut out = grid.clone();
    loop {
        let mut to_fill: BTreeSet<[u16; 3]> = BTreeSet::new();
        let cells: Vec<[u16; 3]> = out.iter().collect();
        for &c in &cells {
            for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
                for (da, db) in [(1i32, 1i32), (1, -1), (-1, 1), (-1, -1)] {
                    let diag = offset(c, a, da, b, db, out.resolution);
                    let n1 = offset(c, a, da, b, 0, out.resolution);
                    let n2 = offset(c, a, 0, b, db, out.resolution);
                    if let (Some(diag), Some(n1), Some(n2)) = (diag, n1, n2) {
                        if out.contains(diag) && !out.contains(n1) && !out.contains(n2) {
                            to_fill.insert(n1.min(n2));
                        }
                    }
                }
            }
        }
        if to_fill.is_empty() {
            return out;
        }
        for idx in to_fill {
            out.insert(idx);
        }
    }
}

fn offset(c: [u16; 3], a: usize, da: i32, b: usize, db: i32, n: u32) -> Option<[u16; 3]> {
    let mut out = [c[0] as i32, c[1] as i32, c[2] as i32];
    out[a] += da;
    out[b] += db;
    if out.iter().any(|&x| x < 0 || x >= n as i32) {
        return None;
    }
    Some([out[0] as u16, out[1] as u16, out[2] as u16])
}

/// Max-pool downsampling: a coarse cell is active iff any cell of its
/// factor-cubed block is active.
pub fn downsample_occupancy(grid: &VoxelGrid, factor: u32) -> Result<VoxelGrid, VoxelError> {
    if factor == 0 || grid.resolution % factor != 0 {
        return Err(VoxelError::NonDivisorFactor {
            resolution: grid.resolution,
            factor,
        });
    }
    let coarse_res = grid.resolution / factor;
    let mut out = VoxelGrid::new(GridSpec {
        resolution: coarse_res,
        frame: GridFrame {
            origin: grid.frame_origin,
            cell_size: grid.cell_size * factor as f64,
        },
    })?;
    let f = factor as u16;
    for [i, j, k] in grid.iter() {
        out.insert([i / f, j / f, k / f]);
    }
    Ok(out)
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub pixel_size: f64,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, pixel_size: f64) -> Self {
        BinaryMask {
            width,
            height,
            pixel_size,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Binary PGM (P5) bytes, set pixels white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0u8 }));
        out
    }
}

/// Projects the grid down the z axis onto a mask: a pixel is set iff any
/// voxel in the column mapped to it (nearest neighbor) is active.
pub fn rasterize_topdown(grid: &VoxelGrid, out_resolution: u32) -> BinaryMask {
    let n = grid.resolution;
    let mut column = vec![false; (n * n) as usize];
    for [i, j, _] in grid.iter() {
        column[(j as u32 * n + i as u32) as usize] = true;
    }
    let pixel_size = grid.cell_size * n as f64 / out_resolution as f64;
    let mut mask = BinaryMask::new(out_resolution, out_resolution, pixel_size);
    for py in 0..out_resolution {
        let gy = ((py as u64 * n as u64) / out_resolution as u64).min(n as u64 - 1) as u32;
        for px in 0..out_resolution {
            let gx = ((px as u64 * n as u64) / out_resolution as u64).min(n as u64 - 1) as u32;
            if column[(gy * n + gx) as usize] {
                mask.set(px, py, true);
            }
        }
    }
    mask
}

/// Rasterizes a footprint directly at the same cell centers a grid of this
/// spec would use. This is the reference mask for prior-alignment checks.
pub fn rasterize_footprint(footprint: &Polygon, spec: GridSpec) -> BinaryMask {
    let n = spec.resolution;
    let mut mask = BinaryMask::new(n, n, spec.frame.cell_size);
    for j in 0..n {
        let y = spec.frame.origin[1] + (j as f64 + 0.5) * spec.frame.cell_size;
        for i in 0..n {
            let x = spec.frame.origin[0] + (i as f64 + 0.5) * spec.frame.cell_size;
            if footprint.contains([x, y]) {
                mask.set(i, j, true);
            }
        }
    }
    mask
}

/// Bbox of the record helper used by tests.
pub fn record_bbox(record: &BuildingRecord) -> Bbox {
    record.bbox()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Polygon, Ring};

    fn record(id: &str, footprint: Polygon, height: f64) -> BuildingRecord {
        let centroid = footprint.centroid();
        BuildingRecord {
            id: id.into(),
            footprint,
            height,
            centroid,
            levels: None,
        }
    }

    fn unit_spec(n: u32) -> GridSpec {
        GridSpec {
            resolution: n,
            frame: GridFrame {
                origin: [0.0, 0.0, 0.0],
                cell_size: 1.0,
            },
        }
    }

    #[test]
    fn lod0_square_exact_count() {
        // 8 x 8 footprint, height 8, 1 m cells, frame at the corner.
        let r = record("sq", Polygon::rect([0.0, 0.0], [8.0, 8.0]), 8.0);
        let g = extrude_lod0(&r, unit_spec(16)).unwrap();
        assert_eq!(g.len(), 512);
    }

    #[test]
    fn low_height_gives_empty_grid() {
        let r = record("flat", Polygon::rect([0.0, 0.0], [4.0, 4.0]), 0.4);
        let g = extrude_lod0(&r, unit_spec(8)).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn lod0_covers_hull_of_l_shape() {
        let l = Polygon::new(
            Ring::new(vec![
                [0.0, 0.0],
                [8.0, 0.0],
                [8.0, 4.0],
                [4.0, 4.0],
                [4.0, 8.0],
                [0.0, 8.0],
            ])
            .unwrap(),
            vec![],
        );
        let r = record("l", l, 4.0);
        let g0 = extrude_lod0(&r, unit_spec(16)).unwrap();
        assert_eq!(g0.len(), 8 * 8 * 4);
        let g1 = extrude_lod1(&r, unit_spec(16)).unwrap();
        // L footprint covers 8x4 + 4x4 = 48 columns, 4 layers each.
        assert_eq!(g1.len(), 48 * 4);
        assert!(g1.is_subset_of(&g0));
    }

    #[test]
    fn lod1_respects_holes() {
        let outer = Ring::new(vec![[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]]).unwrap();
        let hole = Ring::new(vec![[3.0, 3.0], [5.0, 3.0], [5.0, 5.0], [3.0, 5.0]]).unwrap();
        let r = record("holed", Polygon::new(outer, vec![hole]), 2.0);
        let g = extrude_lod1(&r, unit_spec(16)).unwrap();
        assert_eq!(g.len(), (64 - 4) * 2);
        for k in 0..2 {
            assert!(!g.contains([3, 3, k]));
            assert!(!g.contains([4, 4, k]));
        }
    }

    #[test]
    fn out_of_frame_names_building() {
        let r = record("big", Polygon::rect([0.0, 0.0], [20.0, 20.0]), 4.0);
        match extrude_lod0(&r, unit_spec(8)) {
            Err(VoxelError::OutOfFrame { id }) => assert_eq!(id, "big"),
            other => panic!("expected out-of-frame, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let collinear = Ring(vec![[0.0, 0.0], [4.0, 0.0], [8.0, 0.0], [0.0, 0.0]]);
        let r = record("thin", Polygon { outer: collinear, holes: vec![] }, 3.0);
        assert!(matches!(
            extrude_lod1(&r, unit_spec(16)),
            Err(VoxelError::DegeneratePolygon { .. })
        ));
    }

    #[test]
    fn downsample_identity_singleton_and_full() {
        let r = record("sq", Polygon::rect([0.0, 0.0], [8.0, 8.0]), 8.0);
        let g = extrude_lod0(&r, unit_spec(16)).unwrap();
        assert_eq!(downsample_occupancy(&g, 1).unwrap(), g);

        let mut single = VoxelGrid::new(unit_spec(16)).unwrap();
        single.insert([5, 6, 7]);
        let coarse = downsample_occupancy(&single, 4).unwrap();
        assert_eq!(coarse.len(), 1);
        assert!(coarse.contains([1, 1, 1]));

        let mut full = VoxelGrid::new(unit_spec(4)).unwrap();
        for i in 0..4u16 {
            for j in 0..4u16 {
                for k in 0..4u16 {
                    full.insert([i, j, k]);
                }
            }
        }
        let half = downsample_occupancy(&full, 2).unwrap();
        assert_eq!(half.len(), 8);
        assert!(downsample_occupancy(&full, 3).is_err());
    }

    #[test]
    fn topdown_mask_matches_footprint_raster() {
        let l = Polygon::new(
            Ring::new(vec![
                [0.0, 0.0],
                [8.0, 0.0],
                [8.0, 4.0],
                [4.0, 4.0],
                [4.0, 8.0],
                [0.0, 8.0],
            ])
            .unwrap(),
            vec![],
        );
        let r = record("l", l.clone(), 4.0);
        let spec = unit_spec(16);
        let g = extrude_lod1(&r, spec).unwrap();
        let mask = rasterize_topdown(&g, 16);
        let reference = rasterize_footprint(&l, spec);
        assert_eq!(mask.bits(), reference.bits());
    }

    #[test]
    fn projection_ignores_extra_height() {
        let r = record("sq", Polygon::rect([0.0, 0.0], [4.0, 4.0]), 2.0);
        let spec = unit_spec(8);
        let mut g = extrude_lod1(&r, spec).unwrap();
        let before = rasterize_topdown(&g, 8);
        // Stack more cells on existing columns only.
        let tops: Vec<[u16; 3]> = g.iter().map(|[i, j, _]| [i, j, 5]).collect();
        for t in tops {
            g.insert(t);
        }
        let after = rasterize_topdown(&g, 8);
        assert_eq!(before.bits(), after.bits());
    }

    #[test]
    fn empty_grid_rasterizes_to_zero_mask() {
        let g = VoxelGrid::new(unit_spec(8)).unwrap();
        assert_eq!(rasterize_topdown(&g, 8).count_set(), 0);
    }

    #[test]
    fn uvox_round_trip() {
        let r = record("sq", Polygon::rect([0.0, 0.0], [5.0, 3.0]), 4.0);
        let g = extrude_lod1(&r, unit_spec(8)).unwrap();
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        let back = VoxelGrid::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.resolution(), g.resolution());
        assert_eq!(back.iter().collect::<Vec<_>>(), g.iter().collect::<Vec<_>>());
    }

    #[test]
    fn pgm_has_expected_header() {
        let mut m = BinaryMask::new(4, 2, 1.0);
        m.set(1, 0, true);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 8);
    }
}
