//! Mesh extraction, placement, merging, and export.
//!
//! Occupancy grids become cube-face meshes through face culling. Faces are
//! stitched by walking around each edge through empty space, and vertices
//! are derived from that stitching rather than from raw corner positions.
//! This keeps every edge on exactly two triangles even where voxels touch
//! only diagonally: the sheets stay combinatorially separate, so each
//! connected surface is a closed 2-manifold.

use std::collections::HashMap;

use thiserror::Error;

use crate::geo::{Bbox, BuildingRecord};
use crate::voxel::VoxelGrid;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot mesh an empty grid")]
    EmptyGrid,
    #[error("building {id}: centroid ({x}, {y}) outside region bounds")]
    CentroidOutsideRegion { id: String, x: f64, y: f64 },
    #[error("unknown mesh format \"{0}\"")]
    UnknownFormat(String),
    #[error("mesh parse error: {0}")]
    Parse(String),
    #[error("mesh io: {0}")]
    Io(#[from] std::io::Error),
}

/// Contiguous triangle range tagged with a building id.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGroup {
    pub name: String,
    pub tri_start: usize,
    pub tri_count: usize,
}

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub groups: Vec<MeshGroup>,
}

impl Mesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a as usize];
        let pb = self.vertices[b as usize];
        let pc = self.vertices[c as usize];
        let u = sub(pb, pa);
        let v = sub(pc, pa);
        norm(cross(u, v)) / 2.0
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                min[a] = min[a].min(v[a]);
                max[a] = max[a].max(v[a]);
            }
        }
        (min, max)
    }

    /// Applies `v -> scale * v + translation` to every vertex.
    pub fn transformed(&self, scale: [f64; 3], translation: [f64; 3]) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| {
                    [
                        v[0] * scale[0] + translation[0],
                        v[1] * scale[1] + translation[1],
                        v[2] * scale[2] + translation[2],
                    ]
                })
                .collect(),
            triangles: self.triangles.clone(),
            groups: self.groups.clone(),
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// True when every undirected edge borders exactly two triangles.
pub fn is_watertight(mesh: &Mesh) -> bool {
    let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
    for t in &mesh.triangles {
        for e in 0..3 {
            let a = t[e];
            let b = t[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    !counts.is_empty() && counts.values().all(|&c| c == 2)
}

const DIRS: [[i32; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

fn dir_index(d: [i32; 3]) -> usize {
    DIRS.iter().position(|&x| x == d).expect("axis direction")
}

/// Tangent pair (u, v) with u x v = n for each direction.
fn tangent_basis(dir: usize) -> ([i32; 3], [i32; 3]) {
    match dir {
        0 => ([0, 1, 0], [0, 0, 1]),  // +x
        1 => ([0, 0, 1], [0, 1, 0]),  // -x
        2 => ([0, 0, 1], [1, 0, 0]),  // +y
        3 => ([1, 0, 0], [0, 0, 1]),  // -y
        4 => ([1, 0, 0], [0, 1, 0]),  // +z
        5 => ([0, 1, 0], [1, 0, 0]),  // -z
        _ => unreachable!(),
    }
}

fn add3(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn neg3(a: [i32; 3]) -> [i32; 3] {
    [-a[0], -a[1], -a[2]]
}

/// Corner coordinates of face (cell, dir) in CCW order seen from outside.
fn face_corners(cell: [i32; 3], dir: usize) -> [[i32; 3]; 4] {
    let n = DIRS[dir];
    let (u, v) = tangent_basis(dir);
    // Base corner: cell corner shifted by the positive components of n.
    let base = [
        cell[0] + n[0].max(0),
        cell[1] + n[1].max(0),
        cell[2] + n[2].max(0),
    ];
    // Tangents are always positive-axis unit vectors.
    let c0 = base;
    let c1 = add3(base, u);
    let c2 = add3(add3(base, u), v);
    let c3 = add3(base, v);
    [c0, c1, c2, c3]
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n as u32).collect())
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.0[root as usize] != root {
            root = self.0[root as usize];
        }
        let mut cur = x;
        while self.0[cur as usize] != root {
            let next = self.0[cur as usize];
            self.0[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Deterministic: smaller root wins.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi as usize] = lo;
        }
    }
}

/// Extracts the culled cube-face surface of an occupancy grid.
///
/// Vertex coordinates are grid-local meters (corner index times cell size).
pub fn voxels_to_mesh(grid: &VoxelGrid) -> Result<Mesh, SceneError> {
    if grid.is_empty() {
        return Err(SceneError::EmptyGrid);
    }
    let solid: std::collections::HashSet<[i32; 3]> = grid
        .iter()
        .map(|[i, j, k]| [i as i32, j as i32, k as i32])
        .collect();
    let is_solid = |c: [i32; 3]| solid.contains(&c);

    // Exposed faces in deterministic order.
    let mut faces: Vec<([i32; 3], usize)> = Vec::new();
    let mut face_id: HashMap<([i32; 3], usize), usize> = HashMap::new();
    for idx in grid.iter() {
        let cell = [idx[0] as i32, idx[1] as i32, idx[2] as i32];
        for dir in 0..6 {
            if !is_solid(add3(cell, DIRS[dir])) {
                face_id.insert((cell, dir), faces.len());
                faces.push((cell, dir));
            }
        }
    }

    // Glue face corners along shared edges, walking around each edge
    // through the empty side so diagonally touching sheets stay separate.
    let mut uf = UnionFind::new(faces.len() * 4);
    for (fi, &(cell, dir)) in faces.iter().enumerate() {
        let n = DIRS[dir];
        let (u, v) = tangent_basis(dir);
        let corners = face_corners(cell, dir);
        // In-plane outward direction per edge e: c[e] -> c[e+1].
        let outward = [neg3(v), u, v, neg3(u)];
        for e in 0..4 {
            let w = outward[e];
            let diag = add3(add3(cell, w), n);
            let adj = add3(cell, w);
            // Rotate around the edge through the solid: own-cell fold first,
            // then coplanar continuation, then the concave diagonal. This
            // keeps diagonally touching sheets as separate closed shells.
            let (mate_cell, mate_dir) = if !is_solid(adj) {
                (cell, dir_index(w))
            } else if !is_solid(diag) {
                (adj, dir)
            } else {
                (diag, dir_index(neg3(w)))
            };
            let mi = *face_id
                .get(&(mate_cell, mate_dir))
                .expect("mate face must be exposed");
            let a = corners[e];
            let b = corners[(e + 1) % 4];
            let mate_corners = face_corners(mate_cell, mate_dir);
            let me = (0..4)
                .find(|&me| mate_corners[me] == b && mate_corners[(me + 1) % 4] == a)
                .expect("mate edge must reverse this edge");
            // The mate edge runs b -> a, so its start pairs with our end.
            uf.union((fi * 4 + e) as u32, (mi * 4 + (me + 1) % 4) as u32);
            uf.union((fi * 4 + (e + 1) % 4) as u32, (mi * 4 + me) as u32);
        }
    }

    // Vertices in first-encounter order of union-find classes.
    let cell_size = grid.cell_size();
    let mut class_to_vertex: HashMap<u32, u32> = HashMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut corner_vertex = vec![0u32; faces.len() * 4];
    for (fi, &(cell, dir)) in faces.iter().enumerate() {
        let corners = face_corners(cell, dir);
        for (e, corner) in corners.iter().enumerate() {
            let class = uf.find((fi * 4 + e) as u32);
            let vid = *class_to_vertex.entry(class).or_insert_with(|| {
                vertices.push([
                    corner[0] as f64 * cell_size,
                    corner[1] as f64 * cell_size,
                    corner[2] as f64 * cell_size,
                ]);
                (vertices.len() - 1) as u32
            });
            corner_vertex[fi * 4 + e] = vid;
        }
    }

    let mut triangles = Vec::with_capacity(faces.len() * 2);
    for fi in 0..faces.len() {
        let q = [
            corner_vertex[fi * 4],
            corner_vertex[fi * 4 + 1],
            corner_vertex[fi * 4 + 2],
            corner_vertex[fi * 4 + 3],
        ];
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }

    Ok(Mesh {
        vertices,
        triangles,
        groups: Vec::new(),
    })
}

/// Scale plus translation mapping an asset into the region frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlacedAsset {
    pub building_id: String,
    pub scale: [f64; 3],
    pub translation: [f64; 3],
    pub source_resolution: u32,
}

/// Scales the asset so its frame spans the building's padded extents and
/// translates it so the asset's footprint centroid lands on the record
/// centroid with the ground at z = 0.
pub fn place_building(
    mesh: &Mesh,
    asset_grid: &VoxelGrid,
    record: &BuildingRecord,
    region_bounds: &Bbox,
    padding: f64,
) -> Result<(PlacedAsset, Mesh), SceneError> {
    if !region_bounds.contains(record.centroid) {
        return Err(SceneError::CentroidOutsideRegion {
            id: record.id.clone(),
            x: record.centroid[0],
            y: record.centroid[1],
        });
    }
    let centroid_world = asset_grid.topdown_centroid().ok_or(SceneError::EmptyGrid)?;
    let origin = asset_grid.frame_origin();
    // Footprint centroid in the same grid-local space as the mesh.
    let local = [centroid_world[0] - origin[0], centroid_world[1] - origin[1]];

    let bb = record.bbox();
    let target_side = (1.0 + padding) * bb.width().max(bb.height()).max(record.height);
    let asset_side = asset_grid.cell_size() * asset_grid.resolution() as f64;
    let s = target_side / asset_side;

    let translation = [
        record.centroid[0] - s * local[0],
        record.centroid[1] - s * local[1],
        0.0,
    ];
    let placed = PlacedAsset {
        building_id: record.id.clone(),
        scale: [s, s, s],
        translation,
        source_resolution: asset_grid.resolution(),
    };
    let transformed = mesh.transformed(placed.scale, placed.translation);
    Ok((placed, transformed))
}

/// Concatenates placed meshes into one scene mesh with per-building groups.
///
/// Parts are sorted by building id first, so the output is byte-identical
/// regardless of input order.
pub fn merge_scene(placed: &[(String, Mesh)]) -> Mesh {
    let mut order: Vec<usize> = (0..placed.len()).collect();
    order.sort_by(|&a, &b| placed[a].0.cmp(&placed[b].0));

    let mut out = Mesh::default();
    for &i in &order {
        let (id, mesh) = &placed[i];
        let base = out.vertices.len() as u32;
        let tri_start = out.triangles.len();
        out.vertices.extend_from_slice(&mesh.vertices);
        out.triangles.extend(
            mesh.triangles
                .iter()
                .map(|t| [t[0] + base, t[1] + base, t[2] + base]),
        );
        out.groups.push(MeshGroup {
            name: id.clone(),
            tri_start,
            tri_count: mesh.triangles.len(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl std::str::FromStr for MeshFormat {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            other => Err(SceneError::UnknownFormat(other.to_string())),
        }
    }
}

/// Serializes a mesh. OBJ is ASCII with `g` lines per group and 1-based
/// indices; PLY is binary little-endian.
pub fn export_mesh(mesh: &Mesh, format: MeshFormat) -> Result<Vec<u8>, SceneError> {
    match format {
        MeshFormat::Obj => Ok(export_obj(mesh).into_bytes()),
        MeshFormat::Ply => export_ply(mesh),
    }
}

fn export_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:.6} {:.6} {:.6}\n", v[0], v[1], v[2]));
    }
    let write_tri = |out: &mut String, t: &[u32; 3]| {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    };
    if mesh.groups.is_empty() {
        for t in &mesh.triangles {
            write_tri(&mut out, t);
        }
    } else {
        for g in &mesh.groups {
            out.push_str(&format!("g {}\n", g.name));
            for t in &mesh.triangles[g.tri_start..g.tri_start + g.tri_count] {
                write_tri(&mut out, t);
            }
        }
    }
    out
}

fn export_ply(mesh: &Mesh) -> Result<Vec<u8>, SceneError> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
            mesh.vertices.len(),
            mesh.triangles.len()
        )
        .as_bytes(),
    );
    for v in &mesh.vertices {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3u8);
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses OBJ `v`/`f`/`g` lines (indices may carry `/...` suffixes).
pub fn import_obj(bytes: &[u8]) -> Result<Mesh, SceneError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| SceneError::Parse(format!("obj is not utf-8: {e}")))?;
    let mut mesh = Mesh::default();
    let mut current_group: Option<MeshGroup> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    *c = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| SceneError::Parse(format!("bad v at line {}", line_no + 1)))?;
                }
                mesh.vertices.push(coords);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for p in parts {
                    let first = p.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| SceneError::Parse(format!("bad f at line {}", line_no + 1)))?;
                    if i < 1 {
                        return Err(SceneError::Parse(format!(
                            "non-positive index at line {}",
                            line_no + 1
                        )));
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() != 3 {
                    return Err(SceneError::Parse(format!(
                        "only triangles supported, line {}",
                        line_no + 1
                    )));
                }
                if let Some(g) = current_group.as_mut() {
                    g.tri_count += 1;
                }
                mesh.triangles.push([idx[0], idx[1], idx[2]]);
            }
            Some("g") => {
                if let Some(g) = current_group.take() {
                    mesh.groups.push(g);
                }
                current_group = Some(MeshGroup {
                    name: parts.collect::<Vec<_>>().join(" "),
                    tri_start: mesh.triangles.len(),
                    tri_count: 0,
                });
            }
            _ => {}
        }
    }
    if let Some(g) = current_group.take() {
        mesh.groups.push(g);
    }
    for t in &mesh.triangles {
        if t.iter().any(|&i| i as usize >= mesh.vertices.len()) {
            return Err(SceneError::Parse("face index out of range".into()));
        }
    }
    Ok(mesh)
}

/// Parses the PLY flavor written by [`export_mesh`].
pub fn import_ply(bytes: &[u8]) -> Result<Mesh, SceneError> {
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| SceneError::Parse("missing end_header".into()))?
        + 11;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| SceneError::Parse(format!("bad header: {e}")))?;
    let mut n_vertices = None;
    let mut n_faces = None;
    for line in header.lines() {
        let mut p = line.split_whitespace();
        if p.next() == Some("element") {
            match (p.next(), p.next().and_then(|s| s.parse::<usize>().ok())) {
                (Some("vertex"), Some(n)) => n_vertices = Some(n),
                (Some("face"), Some(n)) => n_faces = Some(n),
                _ => {}
            }
        }
    }
    let (nv, nf) = match (n_vertices, n_faces) {
        (Some(v), Some(f)) => (v, f),
        _ => return Err(SceneError::Parse("missing element counts".into())),
    };
    let mut cursor = header_end;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], SceneError> {
        if *cursor + n > bytes.len() {
            return Err(SceneError::Parse("truncated body".into()));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    let mut mesh = Mesh::default();
    for _ in 0..nv {
        let mut v = [0.0f64; 3];
        for c in &mut v {
            let b = take(&mut cursor, 8)?;
            *c = f64::from_le_bytes(b.try_into().unwrap());
        }
        mesh.vertices.push(v);
    }
    for _ in 0..nf {
        let count = take(&mut cursor, 1)?[0];
        if count != 3 {
            return Err(SceneError::Parse("only triangle faces supported".into()));
        }
        let mut t = [0u32; 3];
        for i in &mut t {
            let b = take(&mut cursor, 4)?;
            *i = u32::from_le_bytes(b.try_into().unwrap());
        }
        mesh.triangles.push(t);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{GridFrame, GridSpec};

    fn grid_with(cells: &[[u16; 3]], n: u32) -> VoxelGrid {
        let mut g = VoxelGrid::new(GridSpec {
            resolution: n,
            frame: GridFrame {
                origin: [0.0, 0.0, 0.0],
                cell_size: 1.0,
            },
        })
        .unwrap();
        for &c in cells {
            g.insert(c);
        }
        g
    }

    #[test]
    fn single_voxel_cube() {
        let mesh = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 4)).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert!(is_watertight(&mesh));
        assert!((mesh.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bar_culls_interior_face() {
        let mesh = voxels_to_mesh(&grid_with(&[[0, 0, 0], [1, 0, 0]], 4)).unwrap();
        assert_eq!(mesh.triangles.len(), 20); // 10 exposed faces
        assert_eq!(mesh.vertices.len(), 12);
        assert!(is_watertight(&mesh));
    }

    #[test]
    fn diagonal_contact_stays_manifold() {
        // Two voxels touching only along one edge: sheets must not fuse.
        let mesh = voxels_to_mesh(&grid_with(&[[0, 0, 0], [1, 1, 0]], 4)).unwrap();
        assert_eq!(mesh.triangles.len(), 24);
        assert_eq!(mesh.vertices.len(), 16);
        assert!(is_watertight(&mesh));
    }

    #[test]
    fn l_bracket_with_diagonal_edge_in_one_component() {
        // Diagonal contact whose voxels are also 6-connected via a third.
        let mesh = voxels_to_mesh(&grid_with(&[[0, 0, 0], [1, 0, 0], [1, 1, 0]], 4)).unwrap();
        assert!(is_watertight(&mesh));
        assert!((mesh.surface_area() - 14.0).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_errors() {
        assert!(matches!(
            voxels_to_mesh(&grid_with(&[], 4)),
            Err(SceneError::EmptyGrid)
        ));
    }

    #[test]
    fn outward_winding() {
        let mesh = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 2)).unwrap();
        // Every triangle normal must point away from the cube center.
        let center = [0.5, 0.5, 0.5];
        for t in &mesh.triangles {
            let a = mesh.vertices[t[0] as usize];
            let b = mesh.vertices[t[1] as usize];
            let c = mesh.vertices[t[2] as usize];
            let n = cross(sub(b, a), sub(c, a));
            let to_face = sub(a, center);
            let dot = n[0] * to_face[0] + n[1] * to_face[1] + n[2] * to_face[2];
            assert!(dot > 0.0, "inward-facing triangle {t:?}");
        }
    }

    #[test]
    fn no_degenerate_triangles() {
        let mesh =
            voxels_to_mesh(&grid_with(&[[0, 0, 0], [1, 1, 1], [1, 0, 0], [2, 1, 1]], 4)).unwrap();
        for t in 0..mesh.triangles.len() {
            assert!(mesh.triangle_area(t) > 0.0);
        }
    }

    #[test]
    fn merge_counts_and_groups() {
        let cube = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 2)).unwrap();
        let parts: Vec<(String, Mesh)> = (0..3)
            .map(|i| (format!("b{i}"), cube.clone()))
            .collect();
        let scene = merge_scene(&parts);
        assert_eq!(scene.vertices.len(), 24);
        assert_eq!(scene.triangles.len(), 36);
        assert_eq!(scene.groups.len(), 3);

        // Order independence up to canonical group sort.
        let mut shuffled = parts.clone();
        shuffled.swap(0, 2);
        assert_eq!(merge_scene(&shuffled), scene);
    }

    #[test]
    fn single_input_merge_is_identity_with_one_group() {
        let cube = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 2)).unwrap();
        let scene = merge_scene(&[("only".to_string(), cube.clone())]);
        assert_eq!(scene.vertices, cube.vertices);
        assert_eq!(scene.triangles, cube.triangles);
        assert_eq!(scene.groups.len(), 1);
    }

    #[test]
    fn obj_export_shape() {
        let cube = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 2)).unwrap();
        let obj = String::from_utf8(export_mesh(&cube, MeshFormat::Obj).unwrap()).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 12);
        assert_eq!(obj.lines().filter(|l| l.starts_with("g ")).count(), 0);
    }

    #[test]
    fn obj_round_trip_counts() {
        let cube = voxels_to_mesh(&grid_with(&[[0, 0, 0], [0, 1, 0]], 2)).unwrap();
        let scene = merge_scene(&[("a".into(), cube.clone()), ("b".into(), cube)]);
        let bytes = export_mesh(&scene, MeshFormat::Obj).unwrap();
        let back = import_obj(&bytes).unwrap();
        assert_eq!(back.vertices.len(), scene.vertices.len());
        assert_eq!(back.triangles.len(), scene.triangles.len());
        assert_eq!(back.groups.len(), 2);
    }

    #[test]
    fn ply_round_trip_counts() {
        let cube = voxels_to_mesh(&grid_with(&[[0, 0, 0]], 2)).unwrap();
        let bytes = export_mesh(&cube, MeshFormat::Ply).unwrap();
        let back = import_ply(&bytes).unwrap();
        assert_eq!(back.vertices.len(), 8);
        assert_eq!(back.triangles.len(), 12);
        assert_eq!(back.vertices, cube.vertices);
    }
}
