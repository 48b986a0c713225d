//! Brute-force checks of culling: nothing that can contribute to an image is
//! ever dropped, for 3D perspective cameras and for the 2D toy renderer.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oocsplat::blocking::{build_layout, BlockOrder, Dims};
use oocsplat::commands::permute_rows;
use oocsplat::geometry::{mat_vec, quat_to_mat, sub, transpose, Mat3, Vec3};
use oocsplat::param_table::{owner_block, BlockPayload, TableConfig};
use oocsplat::trainer::scene::{encode, ToyGeometry};
use oocsplat::trainer::{render, Prim, TOY_DIM};
use oocsplat::visibility::{fine_filter, frustum_from_camera, visible_blocks, Camera, PrimitiveGeometry, SplatGeometry3D};

struct Persp {
    rotation: Mat3,
    position: Vec3,
    tx: f64,
    ty: f64,
    near: f64,
    far: f64,
}

impl Persp {
    /// Projection-based containment, independent of the plane construction.
    fn sees(&self, p: Vec3) -> bool {
        let q = mat_vec(&transpose(&self.rotation), sub(p, self.position));
        let depth = -q[2];
        depth >= self.near && depth <= self.far && q[0].abs() <= self.tx * depth && q[1].abs() <= self.ty * depth
    }
}

fn random_camera(rng: &mut ChaCha8Rng) -> (Camera, Persp) {
    let q = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    let rotation = quat_to_mat(q).unwrap_or(oocsplat::geometry::IDENTITY);
    let position = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let fov_y: f64 = rng.random_range(0.3..2.0);
    let aspect = rng.random_range(0.5..2.0);
    let near = rng.random_range(0.05..1.0);
    let far = near + rng.random_range(2.0..30.0);
    let cam = Camera::Perspective {
        rotation,
        position,
        fov_y,
        aspect,
        near,
        far,
        width: 32,
        height: 32,
    };
    let ty = (fov_y / 2.0).tan();
    (
        cam,
        Persp {
            rotation,
            position,
            tx: ty * aspect,
            ty,
            near,
            far,
        },
    )
}

/// Points of the ball: center, surface points and interior points.
fn ball_samples(rng: &mut ChaCha8Rng, c: Vec3, r: f64, n: usize) -> Vec<Vec3> {
    let mut out = vec![c];
    for i in 0..n {
        let d: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
        let t = if i % 2 == 0 { r } else { r * rng.random_range(0.0..1.0f64) };
        out.push([c[0] + d[0] / len * t, c[1] + d[1] / len * t, c[2] + d[2] / len * t]);
    }
    out
}

#[test]
fn perspective_blocks_cover_every_visible_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dim = 10;
    let (mut pairs, mut seen) = (0, 0);
    for _ in 0..60 {
        let n = 300;
        let rows: Vec<f32> = (0..n)
            .flat_map(|_| {
                let mut r = vec![0f32; dim];
                for a in 0..3 {
                    r[a] = rng.random_range(-12.0..12.0);
                }
                for a in 3..6 {
                    r[a] = rng.random_range(-3.0f32..-0.5);
                }
                r
            })
            .collect();
        let table = TableConfig::new(n as u64, dim, 16).unwrap();
        let (c, e): (Vec<_>, Vec<_>) = rows.chunks_exact(dim).map(|r| SplatGeometry3D.sphere(r)).unzip();
        let layout = build_layout(&c, &e, &table, Dims::Three, BlockOrder::Morton).unwrap();
        let sorted = permute_rows(&rows, dim, &layout.permutation);
        for _ in 0..20 {
            let (cam, oracle) = random_camera(&mut rng);
            let vis = visible_blocks(std::slice::from_ref(&cam), &layout.bounds).unwrap().union;
            pairs += 1;
            for (i, row) in sorted.chunks_exact(dim).enumerate() {
                let (center, radius) = SplatGeometry3D.sphere(row);
                if ball_samples(&mut rng, center, radius, 24).into_iter().any(|p| oracle.sees(p)) {
                    seen += 1;
                    let k = owner_block(i as u64, &table).unwrap();
                    assert!(vis.contains(&k), "primitive {i} is in view but block {k} was culled");
                }
            }
        }
    }
    assert!(pairs == 1200 && seen > 1000, "{pairs} pairs, {seen} visible primitives");
}

#[test]
fn plane_frustum_agrees_with_projection_on_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut inside = 0;
    for _ in 0..200 {
        let (cam, oracle) = random_camera(&mut rng);
        let f = frustum_from_camera(&cam).unwrap();
        for _ in 0..200 {
            let p = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
            let q = mat_vec(&transpose(&oracle.rotation), sub(p, oracle.position));
            // skip points within rounding distance of a face
            let depth = -q[2];
            let margin = [depth - oracle.near, oracle.far - depth, oracle.tx * depth - q[0].abs(), oracle.ty * depth - q[1].abs()]
                .into_iter()
                .fold(f64::INFINITY, |m, x| m.min(x.abs()));
            if margin < 1e-9 {
                continue;
            }
            inside += usize::from(oracle.sees(p));
            assert_eq!(f.contains_point(p), oracle.sees(p), "point {p:?}");
        }
    }
    assert!(inside > 0);
}

#[test]
fn fine_filter_keeps_every_primitive_that_renders() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..200 {
        let n = 60;
        let table = TableConfig::new(n, TOY_DIM, 8).unwrap();
        let rows: Vec<f32> = (0..n)
            .flat_map(|_| {
                encode(
                    (rng.random_range(0.0..12.0), rng.random_range(0.0..12.0)),
                    (rng.random_range(-2.0..0.5), rng.random_range(-2.0..0.5)),
                    rng.random_range(-3.2..3.2),
                    [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)],
                    rng.random_range(-2.0..2.0),
                )
                .map(|x| x as f32)
            })
            .collect();
        let blocks: Vec<BlockPayload> = (0..table.k_blocks()).map(|k| BlockPayload::from_table(&rows, k, &table)).collect();
        let all: BTreeSet<u32> = (0..table.k_blocks()).collect();
        let (x0, y0) = (rng.random_range(-2.0..10.0), rng.random_range(-2.0..10.0));
        let cam = Camera::window([x0, y0], [x0 + rng.random_range(1.0..6.0), y0 + rng.random_range(1.0..6.0)], 12, 10);
        let f = frustum_from_camera(&cam).unwrap();
        let kept: BTreeSet<u64> = fine_filter(&blocks, &all, &f, &table, &ToyGeometry).into_iter().collect();
        // render each primitive alone; any nonzero pixel means it contributes
        for (i, row) in rows.chunks_exact(TOY_DIM).enumerate() {
            let mut p = [0f64; TOY_DIM];
            for (d, s) in p.iter_mut().zip(row) {
                *d = *s as f64;
            }
            let prim: Prim = (i as u64, p);
            let img = render(&cam, &[prim]).unwrap().image;
            if img.rgb.iter().any(|&v| v != 0.0) {
                assert!(kept.contains(&(i as u64)), "primitive {i} renders but was filtered out");
            }
        }
    }
}
