//! Uniform sphere samplers, the one-dimensional projection density, and
//! reproducible random streams.
//!
//! `d = 1` is the Rademacher case (`+-1`), `d = 2` the uniform circle
//! (Steinhaus). Projection draws are the first coordinate of a sphere draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::specfun::log_gamma;

/// Uniform distribution on the unit sphere `S^{d-1}` of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereDist {
    d: usize,
}

impl SphereDist {
    pub fn new(d: usize) -> Result<Self> {
        if d < 1 {
            return Err(domain("sphere dimension must be at least 1"));
        }
        Ok(Self { d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// Law of the first coordinate of a uniform point on `S^{d-1}`, `d >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionDist {
    d: usize,
}

impl ProjectionDist {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(domain("projection density needs d >= 2"));
        }
        Ok(Self { d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn pdf(&self, t: f64) -> f64 {
        projection_pdf_unchecked(t, self.d)
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// The same pair always yields the same draws. Distinct stream ids select
/// independent ChaCha8 streams under the same key, so they can be consumed
/// concurrently without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream `index` of this stream. Children of different parents
    /// use different keys, so `(a.substream(i), b.substream(j))` never collide
    /// for distinct parents.
    pub fn substream(&self, index: u64) -> RandomStream {
        RandomStream {
            seed: splitmix64(
                self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_f42d_4c95_7f2d)),
            ),
            stream_id: index,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fill `out` with one uniform draw on `S^{out.len() - 1}` by normalizing a
/// standard Gaussian vector.
pub fn fill_sphere_point<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = g;
            norm2 += g * g;
        }
        if norm2 > 0.0 {
            if let [v] = out {
                // sqrt(g * g) can miss |g| by an ulp
                *v = v.signum();
                return;
            }
            let inv = 1.0 / norm2.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// `count` i.i.d. uniform draws on the sphere, each a `d`-vector.
pub fn sample_sphere(dist: SphereDist, count: usize, stream: RandomStream) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    (0..count)
        .map(|_| {
            let mut v = vec![0.0; dist.d];
            fill_sphere_point(&mut rng, &mut v);
            v
        })
        .collect()
}

/// Normalizing constant `Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))` of the projection density.
pub fn projection_constant(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(domain("projection density needs d >= 2"));
    }
    let d = d as f64;
    Ok((log_gamma(d / 2.0)? - 0.5 * std::f64::consts::PI.ln() - log_gamma((d - 1.0) / 2.0)?).exp())
}

fn projection_pdf_unchecked(t: f64, d: usize) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    let c = projection_constant(d).expect("d >= 2 checked by caller");
    let e = (d as f64 - 3.0) / 2.0;
    if e == 0.0 {
        return c;
    }
    let base = (1.0 - t) * (1.0 + t);
    if base == 0.0 && e < 0.0 {
        return f64::INFINITY;
    }
    c * base.powf(e)
}

/// Density of `<xi, e_1>` for `xi` uniform on `S^{d-1}`:
/// `Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)) (1 - t^2)^((d-3)/2)` on `|t| <= 1`.
///
/// For `d = 2` the density has poles at `t = +-1`, signalled by `+inf`.
pub fn projection_pdf(t: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(domain("projection density needs d >= 2"));
    }
    Ok(projection_pdf_unchecked(t, d))
}

/// `count` i.i.d. draws of `<xi, e_1>`.
pub fn sample_projection(d: usize, count: usize, stream: RandomStream) -> Result<Vec<f64>> {
    let dist = ProjectionDist::new(d)?;
    let mut rng = stream.rng();
    let mut buf = vec![0.0; dist.d];
    Ok((0..count)
        .map(|_| {
            fill_sphere_point(&mut rng, &mut buf);
            buf[0]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn moments(xs: &[f64], k: i32) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().map(|x| x.powi(k)).sum::<f64>() / n;
        let var = xs.iter().map(|x| (x.powi(k) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn rademacher_draws_are_signs() {
        let v = sample_sphere(SphereDist::new(1).unwrap(), 4, RandomStream::new(3, 0));
        assert_eq!(v.len(), 4);
        for x in v {
            assert!(x[0] == 1.0 || x[0] == -1.0);
        }
    }

    #[test]
    fn sphere_draws_have_unit_norm() {
        for d in [2, 3, 7] {
            for v in sample_sphere(
                SphereDist::new(d).unwrap(),
                1000,
                RandomStream::new(11, d as u64),
            ) {
                let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn circle_first_coordinate_is_centered() {
        let count = 100_000;
        let v = sample_sphere(SphereDist::new(2).unwrap(), count, RandomStream::new(5, 1));
        let mean = v.iter().map(|x| x[0]).sum::<f64>() / count as f64;
        assert!(mean.abs() < 4.0 / (count as f64).sqrt());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(SphereDist::new(0).is_err());
        assert!(ProjectionDist::new(1).is_err());
        assert!(projection_pdf(0.0, 1).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_projection(3, 16, RandomStream::new(9, 4)).unwrap();
        let b = sample_projection(3, 16, RandomStream::new(9, 4)).unwrap();
        let c = sample_projection(3, 16, RandomStream::new(9, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = RandomStream::new(9, 4);
        assert_eq!(s.substream(2), s.substream(2));
        assert_ne!(
            s.substream(2).rng().random::<u64>(),
            s.substream(3).rng().random::<u64>()
        );
    }

    #[test]
    fn pdf_golden() {
        assert_relative_eq!(projection_pdf(0.3, 3).unwrap(), 0.5, max_relative = 1e-14);
        assert_eq!(projection_pdf(1.5, 5).unwrap(), 0.0);
        // oracle: arcsine density 1 / (pi sqrt(1 - t^2)) at t = 0
        assert_relative_eq!(
            projection_pdf(0.0, 2).unwrap(),
            1.0 / std::f64::consts::PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            projection_pdf(0.0, 2).unwrap(),
            std::f64::consts::FRAC_1_PI,
            epsilon = 1e-15
        );
        assert!(projection_pdf(1.0, 2).unwrap().is_infinite());
        for d in 2..8 {
            for &t in &[0.1, 0.55, 0.9] {
                assert_eq!(
                    projection_pdf(t, d).unwrap(),
                    projection_pdf(-t, d).unwrap()
                );
            }
        }
    }

    #[test]
    fn projection_moments() {
        let count = 100_000;
        let s3 = sample_projection(3, count, RandomStream::new(1, 0)).unwrap();
        let (m2, se2) = moments(&s3, 2);
        assert!((m2 - 1.0 / 3.0).abs() < 4.0 * se2);
        let s2 = sample_projection(2, count, RandomStream::new(1, 1)).unwrap();
        assert!(s2.iter().all(|t| t.abs() <= 1.0));
        let s5 = sample_projection(5, count, RandomStream::new(1, 2)).unwrap();
        let (m4, se4) = moments(&s5, 4);
        assert!(
            (m4 - 3.0 / 35.0).abs() < 4.0 * se4,
            "{m4} vs {}",
            3.0 / 35.0
        );
        // odd moments vanish by symmetry
        for k in [1, 3] {
            let (m, se) = moments(&s5, k);
            assert!(m.abs() < 4.0 * se);
        }
    }
}
