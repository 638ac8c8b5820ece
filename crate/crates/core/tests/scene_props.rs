//! Mesh extraction properties on random occupancy grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use urbanflow::scene::{is_watertight, voxels_to_mesh};
use urbanflow::voxel::{fill_checkerboard_edges, GridFrame, GridSpec, VoxelGrid};

fn random_grid(rng: &mut ChaCha12Rng, n: u16, fill: f64) -> VoxelGrid {
    let mut g = VoxelGrid::new(GridSpec {
        resolution: n as u32,
        frame: GridFrame {
            origin: [0.0; 3],
            cell_size: 0.5,
        },
    })
    .unwrap();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if rng.random::<f64>() < fill {
                    g.insert([i, j, k]);
                }
            }
        }
    }
    g
}

/// Independent exposed-face counter: six neighbor probes per active cell.
fn exposed_faces(grid: &VoxelGrid) -> usize {
    let cells: std::collections::HashSet<[i32; 3]> = grid
        .iter()
        .map(|[i, j, k]| [i as i32, j as i32, k as i32])
        .collect();
    let mut count = 0;
    for c in &cells {
        for d in [
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [0, 0, 1],
            [0, 0, -1],
        ] {
            if !cells.contains(&[c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn surface_area_equals_exposed_face_count() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for case in 0..12 {
        let fill = rng.random_range(0.15..0.75);
        let grid = random_grid(&mut rng, 8, fill);
        if grid.is_empty() {
            continue;
        }
        let mesh = voxels_to_mesh(&grid).unwrap();
        let expected = exposed_faces(&grid) as f64 * 0.5 * 0.5;
        assert!(
            (mesh.surface_area() - expected).abs() < 1e-9,
            "case {case}: area {} vs {}",
            mesh.surface_area(),
            expected
        );
        assert_eq!(mesh.triangles.len(), exposed_faces(&grid) * 2);
    }
}

#[test]
fn cleaned_random_grids_are_watertight() {
    let mut rng = ChaCha12Rng::seed_from_u64(808);
    for case in 0..12 {
        let fill = rng.random_range(0.1..0.9);
        let grid = fill_checkerboard_edges(&random_grid(&mut rng, 8, fill));
        if grid.is_empty() {
            continue;
        }
        let mesh = voxels_to_mesh(&grid).unwrap();
        assert!(is_watertight(&mesh), "case {case} not watertight");
        for t in 0..mesh.triangles.len() {
            assert!(mesh.triangle_area(t) > 0.0, "case {case}: degenerate tri");
        }
        // The cleaned grid still obeys the exposed-face area contract.
        let expected = exposed_faces(&grid) as f64 * 0.25;
        assert!((mesh.surface_area() - expected).abs() < 1e-9);
    }
}

#[test]
fn cleanup_only_adds_cells_and_converges() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for _ in 0..8 {
        let grid = random_grid(&mut rng, 8, 0.5);
        let cleaned = fill_checkerboard_edges(&grid);
        assert!(grid.is_subset_of(&cleaned));
        // Idempotent at the fixed point.
        let twice = fill_checkerboard_edges(&cleaned);
        assert_eq!(twice.len(), cleaned.len());
    }
}

#[test]
fn meshing_is_deterministic() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let grid = random_grid(&mut rng, 6, 0.4);
    let a = voxels_to_mesh(&grid).unwrap();
    let b = voxels_to_mesh(&grid).unwrap();
    assert_eq!(a, b);
}
