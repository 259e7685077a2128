//! Heatmaps of posterior samples: planar positions and Mollweide-projected
//! viewing directions, encoded as binary PPM images with CSV count sidecars.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use thiserror::Error;

pub use crate::colormap::VIRIDIS;
use crate::geometry::{Pose, Rotation};
use crate::math;

pub const MOLLWEIDE_TOL: f64 = 1e-10;
pub const MOLLWEIDE_MAX_ITERS: usize = 50;
/// Half-width of the Mollweide ellipse.
pub const MOLLWEIDE_U_MAX: f64 = 2.0 * SQRT_2;
/// Half-height of the Mollweide ellipse.
pub const MOLLWEIDE_V_MAX: f64 = SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VizError {
    #[error("histogram needs at least one bin per axis, got {0}x{1}")]
    NoBins(usize, usize),
    #[error("invalid histogram range [{0}, {1}]")]
    Range(f64, f64),
    #[error("Mollweide solve did not converge at latitude {0}")]
    NoConvergence(f64),
    #[error("image cell size must be positive")]
    CellSize,
}

/// Counts on a regular grid. Cell `(ix, iy)` is stored at `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub counts: Vec<u64>,
    /// Samples that fell outside the range (or were not finite) and were
    /// clamped into an edge cell.
    pub clamped: u64,
}

impl Histogram2D {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], nx: usize, ny: usize) -> Result<Self, VizError> {
        if nx == 0 || ny == 0 {
            return Err(VizError::NoBins(nx, ny));
        }
        for r in [x_range, y_range] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(VizError::Range(r[0], r[1]));
            }
        }
        Ok(Histogram2D {
            x_range,
            y_range,
            nx,
            ny,
            counts: vec![0; nx * ny],
            clamped: 0,
        })
    }

    fn bin(v: f64, range: [f64; 2], n: usize) -> (usize, bool) {
        if !v.is_finite() {
            return (0, true);
        }
        let outside = v < range[0] || v > range[1];
        let f = math::floor((v - range[0]) / (range[1] - range[0]) * n as f64);
        let i = if f < 0.0 { 0 } else { (f as usize).min(n - 1) };
        (i, outside)
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let (ix, ox) = Self::bin(x, self.x_range, self.nx);
        let (iy, oy) = Self::bin(y, self.y_range, self.ny);
        self.counts[iy * self.nx + ix] += 1;
        self.clamped += (ox || oy) as u64;
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.nx + ix]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// `ix,iy,count` rows, `iy` outer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ix,iy,count\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push_str(&format!("{ix},{iy},{}\n", self.count(ix, iy)));
            }
        }
        out
    }

    /// Binary PPM with each cell drawn as a `cell × cell` block. Colors map
    /// `count / max_count` linearly onto the viridis table; the top image row
    /// holds the largest `y`. An empty histogram renders as the index-0 color.
    pub fn to_ppm(&self, cell: usize) -> Result<Vec<u8>, VizError> {
        if cell == 0 {
            return Err(VizError::CellSize);
        }
        let (w, h) = (self.nx * cell, self.ny * cell);
        let header = format!("P6\n{w} {h}\n255\n");
        let mut out = Vec::with_capacity(header.len() + 3 * w * h);
        out.extend_from_slice(header.as_bytes());
        let max = self.max_count();
        for row in 0..h {
            let iy = self.ny - 1 - row / cell;
            for col in 0..w {
                let c = self.count(col / cell, iy);
                let idx = (c * 255 + max / 2).checked_div(max).unwrap_or(0) as usize;
                out.extend_from_slice(&VIRIDIS[idx]);
            }
        }
        Ok(out)
    }
}

/// Histogram of sample `(x, y)` positions, marginalizing height.
pub fn position_heatmap(
    samples: &[Pose],
    x_range: [f64; 2],
    y_range: [f64; 2],
    nx: usize,
    ny: usize,
) -> Result<Histogram2D, VizError> {
    let mut h = Histogram2D::new(x_range, y_range, nx, ny)?;
    for p in samples {
        h.add(p.translation[0], p.translation[1]);
    }
    Ok(h)
}

/// Image of the reference axis `ê = (0, 0, 1)` under `r`, as
/// `(longitude, latitude)`. Rotations about `ê` map to the same point.
pub fn orientation_to_sphere(r: &Rotation) -> (f64, f64) {
    let v = r.column(2);
    let lat = math::asin(v[2].clamp(-1.0, 1.0));
    let lon = math::atan2(v[1], v[0]);
    (lon, lat)
}

/// Auxiliary angle `θ` solving `2θ + sin 2θ = π sin(lat)`.
pub fn mollweide_theta(lat: f64) -> Result<f64, VizError> {
    if lat >= FRAC_PI_2 {
        return Ok(FRAC_PI_2);
    }
    if lat <= -FRAC_PI_2 {
        return Ok(-FRAC_PI_2);
    }
    let target = PI * math::sin(lat);
    let mut theta = lat;
    for _ in 0..MOLLWEIDE_MAX_ITERS {
        let f = 2.0 * theta + math::sin(2.0 * theta) - target;
        let df = 2.0 + 2.0 * math::cos(2.0 * theta);
        if df <= 0.0 {
            // Derivative vanishes only at the poles; fall back to the closed form.
            return Ok(if lat > 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 });
        }
        let step = f / df;
        theta = (theta - step).clamp(-FRAC_PI_2, FRAC_PI_2);
        if step.abs() <= MOLLWEIDE_TOL {
            return Ok(theta);
        }
    }
    Err(VizError::NoConvergence(lat))
}

/// Equal-area projection onto the ellipse `u²/8 + v²/2 ≤ 1`.
pub fn mollweide_project(lon: f64, lat: f64) -> Result<(f64, f64), VizError> {
    let theta = mollweide_theta(lat)?;
    let u = (2.0 * SQRT_2 / PI) * lon * math::cos(theta);
    let v = SQRT_2 * math::sin(theta);
    Ok((u, v))
}

/// Histogram of Mollweide-projected viewing directions over the bounding box
/// of the ellipse.
pub fn orientation_heatmap(samples: &[Pose], nx: usize, ny: usize) -> Result<Histogram2D, VizError> {
    let mut h = Histogram2D::new(
        [-MOLLWEIDE_U_MAX, MOLLWEIDE_U_MAX],
        [-MOLLWEIDE_V_MAX, MOLLWEIDE_V_MAX],
        nx,
        ny,
    )?;
    for p in samples {
        let (lon, lat) = orientation_to_sphere(&p.rotation);
        let (u, v) = mollweide_project(lon, lat)?;
        h.add(u, v);
    }
    Ok(h)
}
