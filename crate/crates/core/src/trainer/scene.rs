//! Toy primitive layout and synthetic scenes for the splatting trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec3;
use crate::visibility::{Camera, PrimitiveGeometry};

/// Row layout: x, y, log sx, log sy, θ, r, g, b, opacity logit.
pub const TOY_DIM: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyPrimitive {
    pub center: (f64, f64),
    pub scales: (f64, f64),
    pub theta: f64,
    pub color: [f64; 3],
    /// Decoded opacity in (0, 1).
    pub opacity: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn decode(row: &[f64; TOY_DIM]) -> ToyPrimitive {
    ToyPrimitive {
        center: (row[0], row[1]),
        scales: (row[2].exp(), row[3].exp()),
        theta: row[4],
        color: [row[5], row[6], row[7]],
        opacity: sigmoid(row[8]),
    }
}

pub fn encode(center: (f64, f64), log_scales: (f64, f64), theta: f64, color: [f64; 3], opacity_logit: f64) -> [f64; TOY_DIM] {
    [
        center.0,
        center.1,
        log_scales.0,
        log_scales.1,
        theta,
        color[0],
        color[1],
        color[2],
        opacity_logit,
    ]
}

pub fn row_to_f64(row: &[f32]) -> [f64; TOY_DIM] {
    let mut out = [0.0; TOY_DIM];
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x as f64;
    }
    out
}

/// Conservative footprint of a toy primitive: its center on the z = 0 plane
/// and 3 × its largest scale.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyGeometry;

impl PrimitiveGeometry for ToyGeometry {
    fn sphere(&self, row: &[f32]) -> (Vec3, f64) {
        let m = (row[2] as f64).max(row[3] as f64);
        ([row[0] as f64, row[1] as f64, 0.0], 3.0 * m.exp())
    }
}

/// Parameters of a synthetic 2D scene observed by windows sliding along a
/// smooth closed path.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_primitives: usize,
    /// Scene occupies [0, extent]².
    pub extent: f64,
    pub n_views: usize,
    /// Side length of each view window.
    pub view_size: f64,
    pub resolution: u32,
    /// Number of laps around the path; >1 makes the trajectory revisit.
    pub laps: f64,
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_primitives: 200,
            extent: 16.0,
            n_views: 30,
            view_size: 6.0,
            resolution: 16,
            laps: 1.0,
            scale_range: (0.25, 0.6),
            seed: 7,
        }
    }
}

/// Ground-truth rows (flattened, `TOY_DIM` per primitive).
pub fn synth_scene(spec: &SynthSpec) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_primitives * TOY_DIM);
    for _ in 0..spec.n_primitives {
        let (lo, hi) = spec.scale_range;
        let row = encode(
            (rng.random_range(0.0..spec.extent), rng.random_range(0.0..spec.extent)),
            (rng.random_range(lo..hi).ln(), rng.random_range(lo..hi).ln()),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            [
                rng.random_range(0.05..0.6),
                rng.random_range(0.05..0.6),
                rng.random_range(0.05..0.6),
            ],
            rng.random_range(-1.0..2.0),
        );
        out.extend(row.iter().map(|&x| x as f32));
    }
    out
}

/// Initial guess for training: same geometry with jittered centers, flat
/// gray color and mid opacity.
pub fn perturb_scene(truth: &[f32], jitter: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = truth.to_vec();
    for row in out.chunks_exact_mut(TOY_DIM) {
        row[0] += rng.random_range(-jitter..=jitter) as f32;
        row[1] += rng.random_range(-jitter..=jitter) as f32;
        row[5] = 0.3;
        row[6] = 0.3;
        row[7] = 0.3;
        row[8] = 0.0;
    }
    out
}

/// Square windows whose centers follow a rounded loop inside the scene.
pub fn synth_views(spec: &SynthSpec) -> Vec<Camera> {
    let half = spec.view_size * 0.5;
    let c = spec.extent * 0.5;
    let r = (spec.extent * 0.5 - half).max(0.0);
    (0..spec.n_views)
        .map(|j| {
            let phase = std::f64::consts::TAU * spec.laps * j as f64 / spec.n_views as f64;
            let (x, y) = (c + r * phase.cos(), c + r * phase.sin());
            Camera::window([x - half, y - half], [x + half, y + half], spec.resolution, spec.resolution)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let row = encode((1.0, 2.0), (0.0, (2.0f64).ln()), 0.3, [0.1, 0.2, 0.3], 0.0);
        let p = decode(&row);
        assert_eq!(p.center, (1.0, 2.0));
        assert!((p.scales.1 - 2.0).abs() < 1e-12);
        assert_eq!(p.opacity, 0.5);
        assert!(p.scales.0 > 0.0 && p.opacity > 0.0 && p.opacity < 1.0);
    }

    #[test]
    fn synthetic_scene_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synth_scene(&spec), synth_scene(&spec));
        assert_eq!(synth_scene(&spec).len(), spec.n_primitives * TOY_DIM);
        assert_eq!(synth_views(&spec).len(), spec.n_views);
    }

    #[test]
    fn geometry_extent_uses_largest_scale() {
        let row: Vec<f32> = encode((1.0, 1.0), (0.0, (2.0f64).ln()), 0.0, [0.0; 3], 0.0)
            .iter()
            .map(|&x| x as f32)
            .collect();
        let (c, e) = ToyGeometry.sphere(&row);
        assert_eq!(c, [1.0, 1.0, 0.0]);
        assert!((e - 6.0).abs() < 1e-6);
    }
}
