//! Reflections across vertical planes through the origin, plus uniform
//! sampling in Euclidean balls.
//!
//! A [`Reflection`] mirrors across the `xoz` plane after it has been rotated
//! by `theta_z` about the `z` axis. In 2D the "plane" is the line through the
//! origin at angle `theta_z`. The map is the Householder transform
//! `p - 2 (p . n) n` with unit normal `n = (-sin theta_z, cos theta_z[, 0])`,
//! so the `z` coordinate is never touched.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Euclidean distance between two points of equal length.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mirror symmetry across a vertical plane rotated by `theta_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reflection {
    theta_z: f64,
    dim: usize,
    // cached unit normal (x, y); the z component is always zero
    normal: [f64; 2],
}

impl Reflection {
    /// `theta_z` is reduced modulo pi: planes are unoriented, so `theta` and
    /// `theta + pi` are the same symmetry.
    pub fn new(theta_z: f64, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDim(dim));
        }
        if !theta_z.is_finite() {
            return Err(Error::NonFinite("reflection angle".into()));
        }
        let mut theta = theta_z.rem_euclid(PI);
        // rem_euclid can round up to exactly PI for tiny negative inputs
        if theta >= PI {
            theta = 0.0;
        }
        let (sin, cos) = theta.sin_cos();
        Ok(Self {
            theta_z: theta,
            dim,
            normal: [-sin, cos],
        })
    }

    pub fn theta_z(&self) -> f64 {
        self.theta_z
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit normal of the mirror plane, length `dim`.
    pub fn normal(&self) -> Vec<f64> {
        let mut n = self.normal.to_vec();
        n.resize(self.dim, 0.0);
        n
    }

    /// Writes the mirror image of `p` into `out`.
    pub fn apply_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, p.len())?;
        check_dim(self.dim, out.len())?;
        let [nx, ny] = self.normal;
        let dot = p[0] * nx + p[1] * ny;
        out[0] = p[0] - 2.0 * dot * nx;
        out[1] = p[1] - 2.0 * dot * ny;
        if self.dim == 3 {
            out[2] = p[2];
        }
        Ok(())
    }

    pub fn reflect_point(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(p, &mut out)?;
        Ok(out)
    }

    /// Same linear map as [`reflect_point`](Self::reflect_point); actions and
    /// velocities transform exactly like positions for planes through the
    /// origin.
    pub fn reflect_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.reflect_point(v)
    }

    /// Reflects `p` in place.
    pub fn reflect_in_place(&self, p: &mut [f64]) -> Result<()> {
        check_dim(self.dim, p.len())?;
        let [nx, ny] = self.normal;
        let dot = p[0] * nx + p[1] * ny;
        p[0] -= 2.0 * dot * nx;
        p[1] -= 2.0 * dot * ny;
        Ok(())
    }
}

/// Draws a reflection with `theta_z ~ U[0, pi)`.
pub fn random_reflection<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Reflection> {
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDim(dim));
    }
    Reflection::new(rng.random_range(0.0..PI), dim)
}

/// Uniform sampler over the closed ball `{g : |g - center| <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSampler {
    center: Vec<f64>,
    radius: f64,
}

impl BallSampler {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_in_ball(&self.center, self.radius, rng)
    }
}

/// Uniform point in the closed ball of `radius` around `center`.
///
/// Direction comes from a normalized Gaussian vector, length from
/// `radius * u^(1/d)`. A zero radius returns `center` without touching `rng`.
pub fn sample_in_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let mut out = center.to_vec();
    if radius == 0.0 || center.is_empty() {
        return out;
    }
    let dim = center.len();
    let mut dir: Vec<f64> = Vec::with_capacity(dim);
    let len = loop {
        dir.clear();
        dir.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let len = norm(&dir);
        if len > 1e-300 {
            break len;
        }
    };
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    let scale = r / len;
    for (o, d) in out.iter_mut().zip(&dir) {
        *o += d * scale;
    }
    // Guard the closed-ball contract against rounding at r == radius.
    let d = distance(&out, center);
    if d > radius {
        let shrink = radius / d;
        for (o, c) in out.iter_mut().zip(center) {
            *o = c + (*o - c) * shrink;
        }
    }
    out
}
