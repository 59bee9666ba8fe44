//! Driving noise: two Brownian motions and a finite-mark Poisson random
//! measure, sampled reproducibly from per-path counter-mode substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{MarkSpace, TimeGrid};

/// All noise increments of one experiment. Increment `[path][step]` covers
/// the interval (t_j, t_{j+1}]; jumps are attributed to the step on whose
/// half-open interval they land, so the state entering a jump is the left
/// limit x_j.
#[derive(Clone, Debug)]
pub struct NoiseBundle {
    pub grid: TimeGrid,
    pub marks: MarkSpace,
    /// Brownian increments dW, shape n_paths x n_steps.
    pub dw: Vec<Vec<f64>>,
    /// Brownian increments of the second driver, dW_tilde / d xi under the
    /// reference measure.
    pub dxi: Vec<Vec<f64>>,
    /// Poisson counts per path, step, mark; shape n_paths x n_steps x n_marks.
    pub jump_counts: Vec<Vec<Vec<u32>>>,
    pub seed: u64,
}

impl NoiseBundle {
    pub fn n_paths(&self) -> usize {
        self.dw.len()
    }

    /// Count of mark-i jumps on (t_j, t_{j+1}] for one path.
    pub fn jumps(&self, path: usize, step: usize, mark: usize) -> u32 {
        self.jump_counts[path][step][mark]
    }

    /// Compensated jump increment sum_i c(e_i) (dN_i - nu_i dt) for a
    /// mark-dependent integrand evaluated at the step's left limit.
    pub fn compensated_jump_increment(
        &self,
        path: usize,
        step: usize,
        integrand: impl Fn(f64) -> f64,
    ) -> f64 {
        let dt = self.grid.dt();
        let mut acc = 0.0;
        for (i, (&mark, &nu)) in self
            .marks
            .marks
            .iter()
            .zip(&self.marks.intensities)
            .enumerate()
        {
            let dn = self.jump_counts[path][step][i] as f64;
            acc += integrand(mark) * (dn - nu * dt);
        }
        acc
    }

    /// Raw (uncompensated) jump increment sum_i c(e_i) dN_i.
    pub fn raw_jump_increment(
        &self,
        path: usize,
        step: usize,
        integrand: impl Fn(f64) -> f64,
    ) -> f64 {
        let mut acc = 0.0;
        for (i, &mark) in self.marks.marks.iter().enumerate() {
            acc += integrand(mark) * self.jump_counts[path][step][i] as f64;
        }
        acc
    }
}

/// Integral of a predictable (t, mark) integrand against the compensated
/// measure over the whole horizon: jump sum minus grid-quadrature
/// compensator.
pub fn compensated_jump_integral(
    bundle: &NoiseBundle,
    path: usize,
    integrand: impl Fn(f64, f64) -> f64,
) -> f64 {
    let dt = bundle.grid.dt();
    let mut acc = 0.0;
    for j in 0..bundle.grid.n_steps {
        let t = bundle.grid.t(j);
        for (i, (&mark, &nu)) in bundle
            .marks
            .marks
            .iter()
            .zip(&bundle.marks.intensities)
            .enumerate()
        {
            let v = integrand(t, mark);
            acc += v * bundle.jump_counts[path][j][i] as f64 - v * nu * dt;
        }
    }
    acc
}

/// Samples all driving noise. Each path draws from an independent ChaCha
/// substream keyed by (seed, path index), so the bundle is bit-reproducible
/// regardless of thread scheduling.
pub fn sample_noise(
    seed: u64,
    n_paths: usize,
    grid: TimeGrid,
    marks: &MarkSpace,
) -> Result<NoiseBundle> {
    if n_paths == 0 {
        return Err(crate::error::Error::config("n_paths", "must be at least 1"));
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let n_steps = grid.n_steps;
    let n_marks = marks.len();

    let poissons: Vec<Poisson<f64>> = marks
        .intensities
        .iter()
        .map(|&nu| Poisson::new(nu * dt).expect("positive rate"))
        .collect();

    let mut dw = vec![vec![0.0; n_steps]; n_paths];
    let mut dxi = vec![vec![0.0; n_steps]; n_paths];
    let mut jump_counts = vec![vec![vec![0u32; n_marks]; n_steps]; n_paths];

    dw.par_iter_mut()
        .zip(dxi.par_iter_mut())
        .zip(jump_counts.par_iter_mut())
        .enumerate()
        .for_each(|(p, ((dw_p, dxi_p), jc_p))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64 + 1);
            for j in 0..n_steps {
                let g1: f64 = StandardNormal.sample(&mut rng);
                let g2: f64 = StandardNormal.sample(&mut rng);
                dw_p[j] = sqrt_dt * g1;
                dxi_p[j] = sqrt_dt * g2;
                for (i, pois) in poissons.iter().enumerate() {
                    jc_p[j][i] = pois.sample(&mut rng) as u32;
                }
            }
        });

    Ok(NoiseBundle {
        grid,
        marks: marks.clone(),
        dw,
        dxi,
        jump_counts,
        seed,
    })
}
