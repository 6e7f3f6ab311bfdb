#![allow(dead_code)]

use fokker_fit::coefficients::LearnedCoefficients;
use fokker_fit::density::DensityModel;
use fokker_fit::kernels::{MaternKernel, RadialJet, WindowedKernel};
use fokker_fit::sde_sim::ObservationSet;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> DMatrix<f64> {
    let r = DMatrix::from_fn(rank, dim, |_, _| rng.random_range(-1.0..1.0));
    r.transpose() * r
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))
}

/// Gaussian-looking samples drawn by Box–Muller from the test RNG.
pub fn observation_set(rng: &mut ChaCha8Rng, n: usize, m: usize, count: usize, t_end: f64) -> ObservationSet {
    let samples = (0..m)
        .map(|_| {
            (0..count)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            let (u1, u2): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
                            0.6 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    ObservationSet::from_samples(n, t_end, samples, 0).unwrap()
}

pub fn density(rng: &mut ChaCha8Rng, n: usize, m: usize, count: usize, bandwidth: f64) -> DensityModel {
    DensityModel::build(&observation_set(rng, n, m, count, 1.0), bandwidth, MaternKernel::sobolev_time(1, 1.0)).unwrap()
}

pub fn kernel(n: usize) -> WindowedKernel {
    WindowedKernel::for_smoothness(1, n, 2.5, 1.0, 1.0)
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, q: usize, alpha: f64) -> LearnedCoefficients {
    let centers: Vec<Vec<f64>> = (0..q)
        .map(|_| {
            let mut c = vec![rng.random_range(0.0..1.0)];
            c.extend((0..n).map(|_| rng.random_range(-1.2..1.2)));
            c
        })
        .collect();
    let qn = q * n;
    let a = random_psd(rng, qn, qn) * 0.3;
    let b = random_vector(rng, qn);
    LearnedCoefficients::new(kernel(n), centers, a, b, alpha).unwrap()
}

/// `(1 − ((y − c)/w)²)⁴` on `|y − c| < w`: C³ with compact support.
pub fn bump(c: f64, w: f64, scale: f64) -> impl Fn(f64, &[f64]) -> RadialJet + Sync {
    move |_t, y| {
        let s = (y[0] - c) / w;
        if s.abs() >= 1.0 {
            return RadialJet::zeros(1);
        }
        let u = 1.0 - s * s;
        RadialJet {
            value: scale * u.powi(4),
            grad: vec![scale * -8.0 * s * u.powi(3) / w],
            hess: vec![scale * (48.0 * s * s * u * u - 8.0 * u.powi(3)) / (w * w)],
        }
    }
}
