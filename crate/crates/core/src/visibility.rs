//! Level-1 block culling against camera frusta and Level-2 per-primitive
//! filtering inside resident blocks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::blocking::BlockBound;
use crate::error::{Error, Result};
use crate::geometry::{self, dot, mat_vec, normalize, Mat3, Vec3};
use crate::param_table::{BlockId, BlockPayload, TableConfig};

/// A training view. `Window` is an axis-aligned 2D viewport (the toy
/// trainer's camera); `Perspective` is a pinhole camera looking down -z in
/// its own frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Camera {
    Window {
        min: [f64; 2],
        max: [f64; 2],
        width: u32,
        height: u32,
    },
    Perspective {
        /// World-from-camera rotation.
        rotation: Mat3,
        position: Vec3,
        fov_y: f64,
        aspect: f64,
        near: f64,
        far: f64,
        width: u32,
        height: u32,
    },
}

impl Camera {
    pub fn window(min: [f64; 2], max: [f64; 2], width: u32, height: u32) -> Self {
        Camera::Window {
            min,
            max,
            width,
            height,
        }
    }

    pub fn resolution(&self) -> (u32, u32) {
        match *self {
            Camera::Window { width, height, .. } | Camera::Perspective { width, height, .. } => (width, height),
        }
    }

    /// Camera position used for view ordering (window center for 2D views).
    pub fn position(&self) -> Vec3 {
        match *self {
            Camera::Window { min, max, .. } => [(min[0] + max[0]) * 0.5, (min[1] + max[1]) * 0.5, 0.0],
            Camera::Perspective { position, .. } => position,
        }
    }
}

/// Oriented half-space; a point is inside iff `normal . p + offset >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let n = geometry::norm(normal);
        let unit = normalize(normal).ok_or_else(|| Error::DegenerateCamera("zero plane normal".into()))?;
        Ok(Self {
            normal: unit,
            offset: offset / n,
        })
    }

    #[inline]
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        dot(self.normal, p) + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    pub planes: Vec<Plane>,
}

impl Frustum {
    pub fn contains_point(&self, p: Vec3) -> bool {
        self.planes.iter().all(|pl| pl.signed_distance(p) >= 0.0)
    }
}

pub fn frustum_from_camera(c: &Camera) -> Result<Frustum> {
    match *c {
        Camera::Window { min, max, .. } => {
            if !(min[0] < max[0] && min[1] < max[1]) || !min.iter().chain(&max).all(|v| v.is_finite()) {
                return Err(Error::DegenerateCamera(format!("empty window {min:?}..{max:?}")));
            }
            Ok(Frustum {
                planes: vec![
                    Plane::new([1.0, 0.0, 0.0], -min[0])?,
                    Plane::new([-1.0, 0.0, 0.0], max[0])?,
                    Plane::new([0.0, 1.0, 0.0], -min[1])?,
                    Plane::new([0.0, -1.0, 0.0], max[1])?,
                ],
            })
        }
        Camera::Perspective {
            rotation,
            position,
            fov_y,
            aspect,
            near,
            far,
            ..
        } => {
            if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
                return Err(Error::DegenerateCamera(format!("fov_y {fov_y} outside (0, pi)")));
            }
            if !(aspect > 0.0 && aspect.is_finite()) {
                return Err(Error::DegenerateCamera(format!("aspect {aspect}")));
            }
            if !(near > 0.0 && near < far && far.is_finite()) {
                return Err(Error::DegenerateCamera(format!("near {near} / far {far}")));
            }
            if (geometry::determinant(&rotation) - 1.0).abs() > 1e-6 {
                return Err(Error::DegenerateCamera("pose rotation is not a proper rotation".into()));
            }
            let ty = (fov_y * 0.5).tan();
            let tx = ty * aspect;
            // camera-space planes; the camera looks along -z
            let local = [
                ([0.0, 0.0, -1.0], -near),
                ([0.0, 0.0, 1.0], far),
                ([1.0, 0.0, -tx], 0.0),
                ([-1.0, 0.0, -tx], 0.0),
                ([0.0, 1.0, -ty], 0.0),
                ([0.0, -1.0, -ty], 0.0),
            ];
            let planes = local
                .iter()
                .map(|&(n, d)| {
                    let pl = Plane::new(n, d)?;
                    // n_c . R^T (p - t) + d = (R n_c) . p + d - (R n_c) . t
                    let nw = mat_vec(&rotation, pl.normal);
                    Ok(Plane {
                        normal: nw,
                        offset: pl.offset - dot(nw, position),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Frustum { planes })
        }
    }
}

/// Culls iff some plane has signed distance d < -r; d == -r is kept.
#[inline]
pub fn sphere_visible(b: &BlockBound, f: &Frustum) -> bool {
    sphere_visible_raw(b.center, b.radius, f)
}

#[inline]
pub fn sphere_visible_raw(center: Vec3, radius: f64, f: &Frustum) -> bool {
    !f.planes.iter().any(|pl| pl.signed_distance(center) < -radius)
}

/// K_t as the union of per-camera visible block sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisibleSets {
    pub union: BTreeSet<BlockId>,
    pub per_camera: Vec<BTreeSet<BlockId>>,
    /// Sphere tests performed; K * |batch| by construction.
    pub sphere_tests: u64,
}

pub fn visible_blocks(batch: &[Camera], bounds: &[BlockBound]) -> Result<VisibleSets> {
    let frusta = batch.iter().map(frustum_from_camera).collect::<Result<Vec<_>>>()?;
    Ok(visible_blocks_for(&frusta, bounds))
}

pub fn visible_blocks_for(frusta: &[Frustum], bounds: &[BlockBound]) -> VisibleSets {
    let mut out = VisibleSets::default();
    for f in frusta {
        let set: BTreeSet<BlockId> = bounds
            .iter()
            .enumerate()
            .filter(|(_, b)| sphere_visible(b, f))
            .map(|(k, _)| k as BlockId)
            .collect();
        out.sphere_tests += bounds.len() as u64;
        out.union.extend(set.iter().copied());
        out.per_camera.push(set);
    }
    out
}

/// Decodes a primitive's conservative sphere (center, extent) from its row.
pub trait PrimitiveGeometry: Sync {
    fn sphere(&self, row: &[f32]) -> (Vec3, f64);
}

/// Row layout of the full 3D splat table: position at 0..3, log-scales at 3..6.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplatGeometry3D;

impl PrimitiveGeometry for SplatGeometry3D {
    fn sphere(&self, row: &[f32]) -> (Vec3, f64) {
        let center = [row[0] as f64, row[1] as f64, row[2] as f64];
        let max_log = row[3].max(row[4]).max(row[5]) as f64;
        (center, 3.0 * max_log.exp())
    }
}

/// Level-2 filter: global indices of primitives inside resident visible
/// blocks whose extent sphere passes the same strict plane test. Output is
/// ascending.
pub fn fine_filter<'a, G: PrimitiveGeometry + ?Sized>(
    resident: impl IntoIterator<Item = &'a BlockPayload>,
    visible: &BTreeSet<BlockId>,
    f: &Frustum,
    cfg: &TableConfig,
    geometry: &G,
) -> Vec<u64> {
    let mut blocks: Vec<&BlockPayload> = resident
        .into_iter()
        .filter(|b| visible.contains(&b.block_id))
        .collect();
    blocks.sort_by_key(|b| b.block_id);
    let mut out = Vec::new();
    for b in blocks {
        let base = cfg.first_row(b.block_id);
        for r in 0..cfg.rows_in_block(b.block_id) {
            let (c, e) = geometry.sphere(b.row(r, cfg.dim()));
            if sphere_visible_raw(c, e, f) {
                out.push(base + r as u64);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IDENTITY;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn persp() -> Camera {
        Camera::Perspective {
            rotation: IDENTITY,
            position: [0.0; 3],
            fov_y: std::f64::consts::FRAC_PI_2,
            aspect: 1.0,
            near: 0.1,
            far: 100.0,
            width: 64,
            height: 64,
        }
    }

    #[test]
    fn perspective_examples() {
        let f = frustum_from_camera(&persp()).unwrap();
        assert_eq!(f.planes.len(), 6);
        for pl in &f.planes {
            assert!((geometry::norm(pl.normal) - 1.0).abs() < 1e-12);
        }
        assert!(f.contains_point([0.0, 0.0, -1.0]));
        assert!(!f.contains_point([0.0, 0.0, 1.0]));
        assert!(!f.contains_point([0.0, 0.0, -0.05]));
        assert!(!f.contains_point([0.0, 0.0, -101.0]));
        // 90 degree fov: |x| <= -z
        assert!(f.contains_point([0.99, 0.0, -1.0]));
        assert!(!f.contains_point([1.01, 0.0, -1.0]));
    }

    #[test]
    fn translated_rotated_camera() {
        // rotate 90 degrees about y: camera -z axis maps to world -x
        let rot = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let cam = Camera::Perspective {
            rotation: rot,
            position: [10.0, 0.0, 0.0],
            fov_y: 1.0,
            aspect: 1.5,
            near: 0.5,
            far: 20.0,
            width: 8,
            height: 8,
        };
        let f = frustum_from_camera(&cam).unwrap();
        assert!(f.contains_point([5.0, 0.0, 0.0]));
        assert!(!f.contains_point([15.0, 0.0, 0.0]));
    }

    #[test]
    fn window_examples() {
        let f = frustum_from_camera(&Camera::window([0.0, 0.0], [10.0, 10.0], 8, 8)).unwrap();
        assert_eq!(f.planes.len(), 4);
        assert!(f.contains_point([5.0, 5.0, 0.0]));
        assert!(!f.contains_point([11.0, 5.0, 0.0]));
    }

    #[test]
    fn degenerate_cameras() {
        assert!(frustum_from_camera(&Camera::window([1.0, 0.0], [1.0, 1.0], 4, 4)).is_err());
        let mut c = persp();
        if let Camera::Perspective { ref mut near, .. } = c {
            *near = 200.0;
        }
        assert!(frustum_from_camera(&c).is_err());
        let mut c = persp();
        if let Camera::Perspective { ref mut fov_y, .. } = c {
            *fov_y = 0.0;
        }
        assert!(frustum_from_camera(&c).is_err());
    }

    #[test]
    fn boundary_sphere_is_kept() {
        let f = frustum_from_camera(&Camera::window([0.0, 0.0], [10.0, 10.0], 8, 8)).unwrap();
        // distance to x >= 0 plane is exactly -r
        let b = BlockBound {
            center: [-2.0, 5.0, 0.0],
            radius: 2.0,
        };
        assert!(sphere_visible(&b, &f));
        let b = BlockBound {
            center: [-2.0 - 1e-9, 5.0, 0.0],
            radius: 2.0,
        };
        assert!(!sphere_visible(&b, &f));
        let inside = BlockBound {
            center: [5.0, 5.0, 0.0],
            radius: 0.0,
        };
        assert!(sphere_visible(&inside, &f));
    }

    /// Point-sampling oracle: a sphere truly intersects the frustum when some
    /// sampled point of the ball is inside all planes.
    #[test]
    fn sphere_test_never_drops_intersecting_spheres() {
        let f = frustum_from_camera(&persp()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut true_hits = 0;
        for _ in 0..1000 {
            let c = [
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-8.0..3.0),
            ];
            let r = rng.random_range(0.0..2.0);
            let mut intersects = f.contains_point(c);
            for _ in 0..400 {
                if intersects {
                    break;
                }
                let d = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0f64..1.0),
                ];
                let n = geometry::norm(d);
                if n == 0.0 || n > 1.0 {
                    continue;
                }
                let p = [c[0] + d[0] * r, c[1] + d[1] * r, c[2] + d[2] * r];
                intersects = f.contains_point(p);
            }
            if intersects {
                true_hits += 1;
                assert!(sphere_visible(&BlockBound { center: c, radius: r }, &f));
            }
        }
        assert!(true_hits > 50);
    }

    #[test]
    fn visible_block_unions() {
        let empty = visible_blocks(&[], &[]).unwrap();
        assert!(empty.union.is_empty());

        let bounds: Vec<BlockBound> = (0..3)
            .map(|k| BlockBound {
                center: [k as f64 * 10.0 + 5.0, 5.0, 0.0],
                radius: 1.0,
            })
            .collect();
        let all = visible_blocks(&[Camera::window([0.0, 0.0], [30.0, 10.0], 4, 4)], &bounds).unwrap();
        assert_eq!(all.union, BTreeSet::from([0, 1, 2]));

        let batch = [
            Camera::window([0.0, 0.0], [15.0, 10.0], 4, 4),
            Camera::window([15.0, 0.0], [25.0, 10.0], 4, 4),
        ];
        let v = visible_blocks(&batch, &bounds).unwrap();
        assert_eq!(v.per_camera[0], BTreeSet::from([0, 1]));
        assert_eq!(v.per_camera[1], BTreeSet::from([1, 2]));
        assert_eq!(v.union, BTreeSet::from([0, 1, 2]));
        assert_eq!(v.sphere_tests, 6);
    }

    struct PointGeom;
    impl PrimitiveGeometry for PointGeom {
        fn sphere(&self, row: &[f32]) -> (Vec3, f64) {
            ([row[0] as f64, row[1] as f64, row[2] as f64], row[3] as f64)
        }
    }

    #[test]
    fn fine_filter_examples() {
        let cfg = TableConfig::new(4, 4, 2).unwrap();
        let f = frustum_from_camera(&persp()).unwrap();
        // block 0: both primitives behind the camera; block 1: both in front
        let b0 = BlockPayload {
            block_id: 0,
            values: vec![0.0, 0.0, 5.0, 0.1, 1.0, 0.0, 4.0, 0.1],
            version: 0,
        };
        let b1 = BlockPayload {
            block_id: 1,
            values: vec![0.0, 0.0, -5.0, 0.1, 0.5, 0.5, -2.0, 0.1],
            version: 0,
        };
        let visible = BTreeSet::from([0, 1]);
        let got = fine_filter([&b1, &b0], &visible, &f, &cfg, &PointGeom);
        assert_eq!(got, vec![2, 3]);
        let only0 = BTreeSet::from([0]);
        assert!(fine_filter([&b0, &b1], &only0, &f, &cfg, &PointGeom).is_empty());
    }
}
