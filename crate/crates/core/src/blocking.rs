//! Morton ordering of primitive centers, partition into blocks, and
//! conservative per-block bounding spheres.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};
use crate::param_table::TableConfig;

pub const MORTON_BITS_2D: u32 = 31;
pub const MORTON_BITS_3D: u32 = 21;

/// Relative and absolute slack added to every radius so floating-point
/// rounding in the plane test can never drop a contributing primitive.
const RADIUS_REL_SLACK: f64 = 1e-9;
const RADIUS_ABS_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MortonKey(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    pub fn bits(self) -> u32 {
        match self {
            Dims::Two => MORTON_BITS_2D,
            Dims::Three => MORTON_BITS_3D,
        }
    }

    fn count(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }
}

/// Interleaves quantized coordinates, x in the lowest bit. The number of
/// coordinates selects 2D (31 bits per axis) or 3D (21 bits per axis).
pub fn morton_code(p: &[u64]) -> Result<MortonKey> {
    let dims = match p.len() {
        2 => Dims::Two,
        3 => Dims::Three,
        n => return Err(Error::InvalidConfig(format!("morton codes need 2 or 3 axes, got {n}"))),
    };
    let bits = dims.bits();
    let mut code = 0u64;
    for (axis, &c) in p.iter().enumerate() {
        if c >> bits != 0 {
            return Err(Error::MortonRange { value: c, bits });
        }
        for b in 0..bits {
            code |= ((c >> b) & 1) << (b as usize * p.len() + axis);
        }
    }
    Ok(MortonKey(code))
}

/// Bounding sphere of one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBound {
    pub center: Vec3,
    pub radius: f64,
}

impl BlockBound {
    /// True when `center_i` with conservative extent `extent_i` lies within the sphere.
    pub fn covers(&self, center: Vec3, extent: f64) -> bool {
        distance(center, self.center) + extent <= self.radius
    }
}

/// How primitives are ordered before blocking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockOrder {
    Morton,
    /// Uniform random permutation; the locality ablation.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// `permutation[new_row] = original_index`.
    pub permutation: Vec<u32>,
    pub bounds: Vec<BlockBound>,
}

/// Sorts primitives (Morton or random), cuts the sorted order into blocks of
/// B rows and fits a conservative sphere per block.
pub fn build_layout(
    centers: &[Vec3],
    extents: &[f64],
    cfg: &TableConfig,
    dims: Dims,
    order: BlockOrder,
) -> Result<Layout> {
    if centers.is_empty() {
        return Err(Error::Empty("build_layout needs at least one primitive"));
    }
    if centers.len() != extents.len() || centers.len() as u64 != cfg.n_primitives() {
        return Err(Error::Shape(format!(
            "{} centers, {} extents, table has {} rows",
            centers.len(),
            extents.len(),
            cfg.n_primitives()
        )));
    }

    let mut permutation: Vec<u32> = (0..centers.len() as u32).collect();
    match order {
        BlockOrder::Morton => {
            let keys = morton_keys(centers, dims);
            // stable sort keeps ties in original index order
            permutation.sort_by_key(|&i| keys[i as usize]);
        }
        BlockOrder::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            permutation.shuffle(&mut rng);
        }
    }

    let bounds = permutation
        .chunks(cfg.block_size())
        .map(|rows| {
            let c: Vec<Vec3> = rows.iter().map(|&i| centers[i as usize]).collect();
            let e: Vec<f64> = rows.iter().map(|&i| extents[i as usize]).collect();
            fit_bound(&c, &e)
        })
        .collect();
    Ok(Layout { permutation, bounds })
}

fn morton_keys(centers: &[Vec3], dims: Dims) -> Vec<MortonKey> {
    let n_axes = dims.count();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in centers {
        for a in 0..n_axes {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let max_q = ((1u64 << dims.bits()) - 1) as f64;
    centers
        .iter()
        .map(|c| {
            let q: Vec<u64> = (0..n_axes)
                .map(|a| {
                    let span = hi[a] - lo[a];
                    if span > 0.0 {
                        (((c[a] - lo[a]) / span).clamp(0.0, 1.0) * max_q).floor() as u64
                    } else {
                        0
                    }
                })
                .collect();
            morton_code(&q).expect("quantized coordinates are in range")
        })
        .collect()
}

fn padded(r: f64) -> f64 {
    r * (1.0 + RADIUS_REL_SLACK) + RADIUS_ABS_SLACK
}

/// Tight fit: centroid center, radius = max(distance + extent).
pub fn fit_bound(centers: &[Vec3], extents: &[f64]) -> BlockBound {
    let n = centers.len().max(1) as f64;
    let mut center = [0.0; 3];
    for c in centers {
        for a in 0..3 {
            center[a] += c[a];
        }
    }
    for v in &mut center {
        *v /= n;
    }
    if centers.len() == 1 {
        center = centers[0];
    }
    let radius = max_reach(center, centers, extents);
    BlockBound {
        center,
        radius: if radius > 0.0 { padded(radius) } else { 0.0 },
    }
}

fn max_reach(center: Vec3, centers: &[Vec3], extents: &[f64]) -> f64 {
    centers
        .iter()
        .zip(extents)
        .map(|(&c, &e)| distance(c, center) + e)
        .fold(0.0, f64::max)
}

/// Grow-only refresh: keeps the center and enlarges the radius until every
/// current center plus extent is covered. Never shrinks.
pub fn refresh_bound(bound: &BlockBound, centers: &[Vec3], extents: &[f64]) -> BlockBound {
    let reach = max_reach(bound.center, centers, extents);
    if reach <= bound.radius {
        *bound
    } else {
        BlockBound {
            center: bound.center,
            radius: padded(reach),
        }
    }
}

/// Recompute barrier: refits center and radius from scratch, possibly tightening.
pub fn recompute_bound(centers: &[Vec3], extents: &[f64]) -> BlockBound {
    fit_bound(centers, extents)
}
