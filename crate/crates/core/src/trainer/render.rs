//! Additive 2D splatting over window cameras, with analytic gradients.
//!
//! Each primitive contributes `sigmoid(o) * c * K(m2)` to every pixel, where
//! `m2` is the squared Mahalanobis distance of the pixel center and
//! `K(m2) = exp(-m2/2) * (1 - m2/9)^2` for `m2 < 9` and zero beyond. The taper
//! makes the footprint compact (radius 3 * largest scale) while keeping the
//! kernel continuously differentiable. Pixel values are clamped to [0, 1].

use serde::{Deserialize, Serialize};

use super::scene::{decode, TOY_DIM};
use crate::error::{Error, Result};
use crate::visibility::Camera;

/// Row-major RGB image, row 0 at the window's minimum y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<f32>,
}

impl Image {
    pub fn black(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn pixel(&self, u: u32, v: u32) -> [f32; 3] {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        check_shape(self, other.width, other.height)?;
        let sum: f64 = self
            .rgb
            .iter()
            .zip(&other.rgb)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.rgb.len() as f64)
    }
}

fn check_shape(img: &Image, width: u32, height: u32) -> Result<()> {
    if img.width != width || img.height != height || img.rgb.len() != width as usize * height as usize * 3 {
        return Err(Error::Shape(format!(
            "image is {}x{} ({} values), expected {width}x{height}",
            img.width,
            img.height,
            img.rgb.len()
        )));
    }
    Ok(())
}

/// 10·log10(1/MSE), capped at 99 dB.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return 99.0;
    }
    (10.0 * (1.0 / mse).log10()).min(99.0)
}

/// Primitive as seen by the renderer: global index plus its row in f64.
pub type Prim = (u64, [f64; TOY_DIM]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Window {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn from_camera(c: &Camera) -> Result<Self> {
        match *c {
            Camera::Window {
                min,
                max,
                width,
                height,
            } => {
                if width == 0 || height == 0 || !(max[0] > min[0]) || !(max[1] > min[1]) {
                    return Err(Error::DegenerateCamera(format!("window {min:?}..{max:?} at {width}x{height}")));
                }
                Ok(Self {
                    x0: min[0],
                    y0: min[1],
                    dx: (max[0] - min[0]) / width as f64,
                    dy: (max[1] - min[1]) / height as f64,
                    w: width as usize,
                    h: height as usize,
                })
            }
            Camera::Perspective { .. } => Err(Error::InvalidConfig(
                "the splatting renderer only supports window cameras".into(),
            )),
        }
    }

    pub fn center(&self, u: usize, v: usize) -> (f64, f64) {
        (
            self.x0 + (u as f64 + 0.5) * self.dx,
            self.y0 + (v as f64 + 0.5) * self.dy,
        )
    }

    /// Pixel index ranges whose centers may lie within `r` of (cx, cy).
    fn cover(&self, cx: f64, cy: f64, r: f64) -> Option<(usize, usize, usize, usize)> {
        let span = |c: f64, o: f64, d: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((c - r - o) / d - 0.5).ceil().max(0.0);
            let hi = ((c + r - o) / d - 0.5).floor().min(n as f64 - 1.0);
            if !(lo <= hi) {
                return None;
            }
            Some((lo as usize, hi as usize))
        };
        let (u0, u1) = span(cx, self.x0, self.dx, self.w)?;
        let (v0, v1) = span(cy, self.y0, self.dy, self.h)?;
        Some((u0, u1, v0, v1))
    }
}

pub const KERNEL_CUTOFF: f64 = 9.0;

/// Tapered Gaussian and its derivative with respect to m2.
#[inline]
pub fn kernel(m2: f64) -> (f64, f64) {
    if !(m2 < KERNEL_CUTOFF) {
        return (0.0, 0.0);
    }
    let e = (-0.5 * m2).exp();
    let q = 1.0 - m2 / KERNEL_CUTOFF;
    (e * q * q, e * q * (-0.5 * q - 2.0 / KERNEL_CUTOFF))
}

/// Per-primitive quantities reused across pixels.
#[derive(Clone, Copy)]
struct Splat {
    mx: f64,
    my: f64,
    cos: f64,
    sin: f64,
    inv_sx2: f64,
    inv_sy2: f64,
    alpha: f64,
    color: [f64; 3],
    radius: f64,
}

impl Splat {
    fn new(row: &[f64; TOY_DIM]) -> Option<Self> {
        let d = decode(row);
        let (sx, sy) = d.scales;
        if !(sx > 1e-12 && sy > 1e-12 && sx.is_finite() && sy.is_finite()) {
            return None;
        }
        Some(Self {
            mx: d.center.0,
            my: d.center.1,
            cos: d.theta.cos(),
            sin: d.theta.sin(),
            inv_sx2: 1.0 / (sx * sx),
            inv_sy2: 1.0 / (sy * sy),
            alpha: d.opacity,
            color: d.color,
            radius: 3.0 * sx.max(sy),
        })
    }

    /// (u, v, m2) in the primitive frame for pixel center (px, py).
    #[inline]
    fn local(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mx;
        let dy = py - self.my;
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u, v, u * u * self.inv_sx2 + v * v * self.inv_sy2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Unclamped per-channel sums.
    pub sum: Vec<f64>,
    /// Primitives skipped because their scale under- or overflowed.
    pub skipped: usize,
}

/// Renders the given primitives (in the given order) into the camera's window.
pub fn render(camera: &Camera, prims: &[Prim]) -> Result<RenderOutput> {
    let win = Window::from_camera(camera)?;
    let mut sum = vec![0.0f64; win.w * win.h * 3];
    let mut skipped = 0;
    for (_, row) in prims {
        let Some(s) = Splat::new(row) else {
            skipped += 1;
            continue;
        };
        let Some((u0, u1, v0, v1)) = win.cover(s.mx, s.my, s.radius) else {
            continue;
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                let (px, py) = win.center(u, v);
                let (_, _, m2) = s.local(px, py);
                let (k, _) = kernel(m2);
                if k == 0.0 {
                    continue;
                }
                let w = s.alpha * k;
                let i = (v * win.w + u) * 3;
                for c in 0..3 {
                    sum[i + c] += s.color[c] * w;
                }
            }
        }
    }
    let rgb = sum.iter().map(|&x| x.clamp(0.0, 1.0) as f32).collect();
    Ok(RenderOutput {
        image: Image {
            width: win.w as u32,
            height: win.h as u32,
            rgb,
        },
        sum,
        skipped,
    })
}

/// Mean squared error against `target` and its gradient for each primitive
/// (aligned with `prims`). Skipped primitives get zero rows.
pub fn loss_and_grads(camera: &Camera, target: &Image, prims: &[Prim]) -> Result<(f64, Vec<[f64; TOY_DIM]>)> {
    let out = render(camera, prims)?;
    let win = Window::from_camera(camera)?;
    check_shape(target, win.w as u32, win.h as u32)?;
    let n = out.sum.len() as f64;
    let mut loss = 0.0;
    // dL/dS per channel; zero where the clamp is saturated
    let mut ds = vec![0.0f64; out.sum.len()];
    for (i, &s) in out.sum.iter().enumerate() {
        let img = s.clamp(0.0, 1.0);
        let r = img - target.rgb[i] as f64;
        loss += r * r;
        if s > 0.0 && s < 1.0 {
            ds[i] = 2.0 * r / n;
        }
    }
    loss /= n;

    let mut grads = vec![[0.0f64; TOY_DIM]; prims.len()];
    for ((_, row), g) in prims.iter().zip(grads.iter_mut()) {
        let Some(s) = Splat::new(row) else { continue };
        let Some((u0, u1, v0, v1)) = win.cover(s.mx, s.my, s.radius) else {
            continue;
        };
        let dsig = s.alpha * (1.0 - s.alpha);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let (px, py) = win.center(u, v);
                let (lu, lv, m2) = s.local(px, py);
                let (k, dk) = kernel(m2);
                if k == 0.0 && dk == 0.0 {
                    continue;
                }
                let i = (v * win.w + u) * 3;
                // dL/dK and dL/dalpha, summed over channels
                let mut gk = 0.0;
                let mut ga = 0.0;
                for c in 0..3 {
                    let d = ds[i + c];
                    if d == 0.0 {
                        continue;
                    }
                    g[5 + c] += d * s.alpha * k;
                    gk += d * s.alpha * s.color[c];
                    ga += d * s.color[c] * k;
                }
                g[8] += ga * dsig;
                let gm = gk * dk;
                if gm == 0.0 {
                    continue;
                }
                let a = 2.0 * lu * s.inv_sx2;
                let b = 2.0 * lv * s.inv_sy2;
                // d(u,v)/dmx = (-cos, sin), d(u,v)/dmy = (-sin, -cos)
                g[0] += gm * (-a * s.cos + b * s.sin);
                g[1] += gm * (-a * s.sin - b * s.cos);
                g[2] += gm * (-2.0 * lu * lu * s.inv_sx2);
                g[3] += gm * (-2.0 * lv * lv * s.inv_sy2);
                // du/dθ = v, dv/dθ = -u
                g[4] += gm * (a * lv - b * lu);
            }
        }
    }
    Ok((loss, grads))
}
