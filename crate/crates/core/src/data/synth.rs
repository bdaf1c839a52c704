//! Planted-heterogeneity cohorts.
//!
//! Every patient's bag has the same expected mean, so mean pooling sees no
//! signal. The spread of the instances along a hidden unit direction `w*`
//! is `s_i`, and the hazard grows with `s_i²`.
//!
//! ```text
//! x_ij = m + s_i g_ij w* + 0.1 ε_ij        g ~ N(0,1), ε ~ N(0, I_d)
//! t_i  = exp(-β s_i² + 0.25 ξ_i)           ξ ~ N(0,1)
//! ```
//!
//! With probability `censor_rate` a patient is censored at `u_i t_i`,
//! `u_i ~ Uniform(0, 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Bag, Cohort, DataError, Patient};
use crate::survival::SurvivalLabel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub n_patients: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub dim: usize,
    /// Effect size β on the hazard score `β s²`.
    pub beta: f64,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_patients: 500,
            n_min: 32,
            n_max: 96,
            dim: 16,
            beta: 2.0,
            censor_rate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCohort {
    pub cohort: Cohort,
    /// Per-patient spread `s_i`.
    pub heterogeneity: Vec<f64>,
    /// Unit direction `w*` carrying the spread.
    pub direction: Vec<f64>,
    /// Global mean `m` shared by every bag.
    pub mean: Vec<f64>,
}

impl SynthCohort {
    /// The planted hazard ordering, `s_i²`; a perfect-knowledge risk score.
    pub fn oracle_scores(&self) -> Vec<f64> {
        self.heterogeneity.iter().map(|s| s * s).collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Features are rounded to 32-bit precision so an in-memory cohort equals
/// its round trip through bag files.
pub fn synth_generate(p: &SynthParams) -> Result<SynthCohort, DataError> {
    if p.dim < 2 {
        return Err(DataError::Invalid("synthetic dimension must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&p.censor_rate) {
        return Err(DataError::Invalid(format!("censor_rate {} outside [0, 1)", p.censor_rate)));
    }
    if p.n_min == 0 || p.n_min > p.n_max {
        return Err(DataError::Invalid(format!("bad bag size range {}..={}", p.n_min, p.n_max)));
    }
    if p.n_patients == 0 || !p.beta.is_finite() {
        return Err(DataError::Invalid("need at least one patient and a finite beta".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let d = p.dim;
    let mut direction: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let mean: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();

    let spread = Uniform::new(0.5, 2.0).expect("valid range");
    let sizes = Uniform::new_inclusive(p.n_min, p.n_max).expect("valid range");
    let mut patients = Vec::with_capacity(p.n_patients);
    let mut heterogeneity = Vec::with_capacity(p.n_patients);
    let width = p.n_patients.to_string().len().max(4);
    for i in 0..p.n_patients {
        let s: f64 = spread.sample(&mut rng);
        let n = sizes.sample(&mut rng);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let g = normal(&mut rng);
            for c in 0..d {
                let x = mean[c] + s * g * direction[c] + 0.1 * normal(&mut rng);
                data.push(x as f32 as f64);
            }
        }
        let hazard = p.beta * s * s;
        let event_time = (-hazard + 0.25 * normal(&mut rng)).exp();
        let censored = rng.random_bool(p.censor_rate);
        let time = if censored {
            let u = 1.0 - rng.random::<f64>();
            u * event_time
        } else {
            event_time
        };
        // exp of a bounded argument cannot reach 0, but a tiny censoring fraction could
        let time = time.max(f64::MIN_POSITIVE);
        patients.push(Patient {
            bag: Bag::new(format!("P{i:0width$}"), Tensor::matrix(n, d, data)?)?,
            label: SurvivalLabel::new(time, censored)?,
        });
        heterogeneity.push(s);
    }
    Ok(SynthCohort {
        cohort: Cohort::new(patients)?,
        heterogeneity,
        direction,
        mean,
    })
}
