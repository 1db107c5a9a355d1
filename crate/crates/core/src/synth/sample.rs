use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PlantedModel, SynthError};
use crate::rng;
use crate::scale::{ResponseMatrix, ResponseVector, Subscale};

/// Named shift of the factor means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfileSpec {
    pub name: String,
    /// One offset per factor, in the model's factor order.
    pub offsets: Vec<f64>,
}

impl PersonaProfileSpec {
    pub fn neutral(k: usize) -> Self {
        Self {
            name: "neutral".into(),
            offsets: vec![0.0; k],
        }
    }

    fn ams(name: &str, shifts: &[(Subscale, f64)]) -> Self {
        let mut offsets = vec![0.0; 7];
        for &(s, v) in shifts {
            offsets[s.index()] = v;
        }
        Self {
            name: name.into(),
            offsets,
        }
    }

    /// Raised intrinsic factors, lowered amotivation.
    pub fn intrinsic_dominant(delta: f64) -> Self {
        use Subscale::*;
        Self::ams(
            "intrinsic",
            &[(ToKnow, delta), (TowardAccomplishment, delta), (ExperienceStimulation, delta), (Amotivation, -delta)],
        )
    }

    /// Raised introjected and external regulation, lowered intrinsic factors.
    pub fn external_dominant(delta: f64) -> Self {
        use Subscale::*;
        Self::ams(
            "external",
            &[
                (ToKnow, -delta),
                (TowardAccomplishment, -delta),
                (ExperienceStimulation, -delta),
                (Introjected, delta),
                (External, delta),
            ],
        )
    }

    /// Raised amotivation, lowered intrinsic and identified regulation.
    pub fn amotivated(delta: f64) -> Self {
        use Subscale::*;
        Self::ams(
            "amotivated",
            &[
                (ToKnow, -delta),
                (TowardAccomplishment, -delta),
                (ExperienceStimulation, -delta),
                (Identified, -delta),
                (Amotivation, delta),
            ],
        )
    }
}

/// Weighted set of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMix {
    pub profiles: Vec<PersonaProfileSpec>,
    pub weights: Vec<f64>,
}

impl ProfileMix {
    pub fn single(profile: PersonaProfileSpec) -> Self {
        Self {
            profiles: vec![profile],
            weights: vec![1.0],
        }
    }

    pub fn neutral(k: usize) -> Self {
        Self::single(PersonaProfileSpec::neutral(k))
    }

    /// Equal halves of intrinsic- and external-dominant respondents.
    pub fn two_profile(delta: f64) -> Self {
        Self {
            profiles: vec![
                PersonaProfileSpec::intrinsic_dominant(delta),
                PersonaProfileSpec::external_dominant(delta),
            ],
            weights: vec![0.5, 0.5],
        }
    }

    /// Intrinsic, external and amotivated respondents at 40/35/25 percent.
    pub fn three_profile(delta: f64) -> Self {
        Self {
            profiles: vec![
                PersonaProfileSpec::intrinsic_dominant(delta),
                PersonaProfileSpec::external_dominant(delta),
                PersonaProfileSpec::amotivated(delta),
            ],
            weights: vec![0.40, 0.35, 0.25],
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), SynthError> {
        if self.profiles.is_empty() || self.profiles.len() != self.weights.len() {
            return Err(SynthError::InvalidMix("one weight per profile required".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(SynthError::InvalidMix("weights must be non-negative with a positive sum".into()));
        }
        for p in &self.profiles {
            if p.offsets.len() != k {
                return Err(SynthError::InvalidMix(format!(
                    "profile '{}' has {} offsets for {k} factors",
                    p.name,
                    p.offsets.len()
                )));
            }
            if p.offsets.iter().any(|v| !v.is_finite()) {
                return Err(SynthError::InvalidMix(format!("profile '{}' has non-finite offsets", p.name)));
            }
        }
        Ok(())
    }

    /// Profile index for each of `n` rows: contiguous blocks sized by
    /// largest-remainder apportionment of the weights.
    pub fn allocate(&self, n: usize) -> Vec<usize> {
        let total: f64 = self.weights.iter().sum();
        let exact: Vec<f64> = self.weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect()
    }

    /// Weighted draw from a uniform variate in [0, 1).
    pub fn pick(&self, u: f64) -> usize {
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w / total;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

const BLOCK: usize = 256;

/// One respondent's 1..7 answers given the factor-mean offsets.
pub(crate) fn sample_row(model: &PlantedModel, chol: &nalgebra::DMatrix<f64>, offsets: &[f64], r: &mut rng::Rng) -> Vec<u8> {
    let k = model.k();
    let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(r)).collect();
    let factors: Vec<f64> = (0..k)
        .map(|a| offsets[a] + (0..=a).map(|b| chol[(a, b)] * z[b]).sum::<f64>())
        .collect();
    model
        .loadings
        .iter()
        .zip(&model.uniquenesses)
        .map(|(row, psi)| {
            let e: f64 = StandardNormal.sample(r);
            let latent = row.iter().zip(&factors).map(|(l, f)| l * f).sum::<f64>() + psi.sqrt() * e;
            1 + model.thresholds.iter().filter(|&&t| latent > t).count() as u8
        })
        .collect()
}

/// Sample `n` respondents; rows get persona ids 1..=n and the profile index
/// each row was drawn from.
pub fn sample_with_labels(
    model: &PlantedModel,
    n: usize,
    mix: &ProfileMix,
    seed: u64,
) -> Result<(ResponseMatrix, Vec<usize>), SynthError> {
    model.validate()?;
    mix.validate(model.k())?;
    if n == 0 {
        return Err(SynthError::InvalidMix("n must be at least 1".into()));
    }
    let chol = model.phi().cholesky().expect("validated").l();
    let labels = mix.allocate(n);
    let rows: Vec<ResponseVector> = labels
        .par_chunks(BLOCK)
        .enumerate()
        .flat_map_iter(|(block, chunk)| {
            let mut r = rng::derived(seed, block as u64);
            let chol = &chol;
            chunk
                .iter()
                .enumerate()
                .map(|(offset, &profile)| {
                    let id = (block * BLOCK + offset + 1) as u32;
                    let values = sample_row(model, chol, &mix.profiles[profile].offsets, &mut r);
                    ResponseVector { persona_id: id, values }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let matrix = ResponseMatrix::new(rows).expect("ids are unique");
    Ok((matrix, labels))
}

pub fn sample_respondents(
    model: &PlantedModel,
    n: usize,
    mix: &ProfileMix,
    seed: u64,
) -> Result<ResponseMatrix, SynthError> {
    sample_with_labels(model, n, mix, seed).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::pearson_correlation;
    use crate::scale::{subscale_scores, ItemBank, N_ITEMS};

    #[test]
    fn saturated_thresholds_give_sevens() {
        let mut m = PlantedModel::ams_default();
        m.thresholds = [-100.0, -99.0, -98.0, -97.0, -96.0, -95.0];
        let x = sample_respondents(&m, 10, &ProfileMix::neutral(7), 1).unwrap();
        assert!(x.rows().iter().all(|r| r.values.iter().all(|&v| v == 7)));
    }

    #[test]
    fn deterministic_and_in_range() {
        let m = PlantedModel::ams_default();
        let a = sample_respondents(&m, 600, &ProfileMix::neutral(7), 9).unwrap();
        let b = sample_respondents(&m, 600, &ProfileMix::neutral(7), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_respondents(&m, 600, &ProfileMix::neutral(7), 10).unwrap());
        assert!(a.rows().iter().flat_map(|r| &r.values).all(|v| (1..=7).contains(v)));
        assert_eq!(a.persona_ids(), (1..=600).collect::<Vec<u32>>());
        assert_eq!(a.rows()[0].values.len(), N_ITEMS);
    }

    #[test]
    fn sample_correlation_near_discretized_population() {
        // Deviations scaled by the normal-theory standard error of r,
        // (1 - rho^2) / sqrt(n). Over 378 entries a correct sampler keeps
        // the largest |z| well under 4.5, mean z^2 near 1 and no bias.
        let m = PlantedModel::ams_default();
        let pop = m.discretized_population_correlation();
        let n = 2000.0f64;
        for seed in [42, 7] {
            let x = sample_respondents(&m, 2000, &ProfileMix::neutral(7), seed).unwrap();
            let r = pearson_correlation(&x.to_matrix()).unwrap().matrix;
            let (mut max_z, mut sum_z2, mut bias, mut max_abs) = (0.0f64, 0.0, 0.0, 0.0f64);
            for i in 0..28 {
                for j in 0..i {
                    let d = r[(i, j)] - pop[(i, j)];
                    let z = d / ((1.0 - pop[(i, j)].powi(2)) / n.sqrt());
                    max_z = max_z.max(z.abs());
                    sum_z2 += z * z;
                    bias += d;
                    max_abs = max_abs.max(d.abs());
                }
            }
            let (mean_z2, bias) = (sum_z2 / 378.0, bias / 378.0);
            assert!(max_z < 4.5, "seed {seed}: max |z| {max_z}");
            assert!((0.4..2.0).contains(&mean_z2), "seed {seed}: mean z^2 {mean_z2}");
            assert!(bias.abs() < 0.02, "seed {seed}: bias {bias}");
            assert!(max_abs < 0.08, "seed {seed}: max abs {max_abs}");
        }
    }

    #[test]
    fn intrinsic_profile_scores_higher_on_imtk() {
        let m = PlantedModel::ams_default();
        let (x, labels) = sample_with_labels(&m, 400, &ProfileMix::two_profile(1.0), 3).unwrap();
        let bank = ItemBank::canonical();
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for (row, &l) in x.rows().iter().zip(&labels) {
            sums[l] += subscale_scores(row, &bank).get(Subscale::ToKnow);
            counts[l] += 1.0;
        }
        assert_eq!(counts, [200.0, 200.0]);
        assert!(sums[0] / counts[0] > sums[1] / counts[1] + 1.0);
    }

    #[test]
    fn less_noise_and_wider_grid_approach_the_common_part() {
        // Mean relative shortfall of sample correlations against ΛΦΛᵀ.
        let shortfall = |loading: f64, thresholds: [f64; 6]| {
            let mut m = PlantedModel::ams(loading, 0.3).unwrap();
            m.thresholds = thresholds;
            let x = sample_respondents(&m, 4000, &ProfileMix::neutral(7), 5).unwrap();
            let r = pearson_correlation(&x.to_matrix()).unwrap().matrix;
            let lambda = m.lambda();
            let common = &lambda * m.phi() * lambda.transpose();
            let mut total = 0.0;
            for i in 0..28 {
                for j in 0..i {
                    total += (common[(i, j)] - r[(i, j)]) / common[(i, j)];
                }
            }
            total / 378.0
        };
        let noisy = shortfall(0.6, [-0.75, -0.45, -0.15, 0.15, 0.45, 0.75]);
        let clean = shortfall(0.95, super::super::DEFAULT_THRESHOLDS);
        assert!(clean > 0.0 && clean < noisy, "{clean} vs {noisy}");
    }

    #[test]
    fn allocation_follows_weights() {
        let mix = ProfileMix::three_profile(1.0);
        let a = mix.allocate(2000);
        assert_eq!(a.iter().filter(|&&l| l == 0).count(), 800);
        assert_eq!(a.iter().filter(|&&l| l == 1).count(), 700);
        assert_eq!(a.iter().filter(|&&l| l == 2).count(), 500);
        assert_eq!(mix.allocate(7).len(), 7);
        assert!(ProfileMix::two_profile(1.0).validate(3).is_err());
    }
}
