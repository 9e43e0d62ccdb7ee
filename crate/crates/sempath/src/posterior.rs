//! Nonparametric posterior over per-class risk: weighted resampling of the
//! sensor readings (Dirichlet(1,…,1) weights, one scalar statistic per
//! resample) and tail-risk extraction from the resulting distribution.
//!
//! The headline number is CVaR: the mean of the statistic's upper tail at
//! level `alpha`. Low `alpha` stays close to the posterior mean; `alpha`
//! near 1 approaches the worst resample.

use std::collections::BTreeMap;

use rand::distributions::OpenClosed01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, substream_seed};
use crate::sensor::SampleSet;

#[derive(Debug, thiserror::Error)]
pub enum PosteriorError {
    #[error("resample count R must be at least 1")]
    ZeroResamples,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("quantile q must lie strictly between 0 and 1, got {0}")]
    InvalidQuantile(f64),
    #[error("weight count k must be at least 1")]
    ZeroWeights,
    #[error("sample list is empty")]
    EmptySamples,
    #[error("sample {0} is outside [0,1]")]
    SampleOutOfRange(f64),
    #[error("value list is empty")]
    EmptyValues,
    #[error("{got} weights for {expected} values")]
    WeightLengthMismatch { got: usize, expected: usize },
    #[error("weights must be nonnegative and sum to 1, got sum {0}")]
    BadWeights(f64),
}

/// The scalar reduced from each weighted resample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Σ wᵢ·xᵢ — the posterior-mean reading under the resample weights.
    WeightedMean,
    /// The weighted q-quantile of the readings (same cumulative-weight
    /// convention as [`cvar`]).
    WeightedQuantile(f64),
}

impl Default for Statistic {
    fn default() -> Self {
        Statistic::WeightedMean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Resample count.
    #[serde(rename = "R")]
    pub resamples: usize,
    /// Tail level in (0,1).
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub statistic: Statistic,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 3000,
            alpha: 0.1,
            seed: 7,
            statistic: Statistic::WeightedMean,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), PosteriorError> {
        if self.resamples == 0 {
            return Err(PosteriorError::ZeroResamples);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PosteriorError::InvalidAlpha(self.alpha));
        }
        if let Statistic::WeightedQuantile(q) = self.statistic {
            if !(q > 0.0 && q < 1.0) {
                return Err(PosteriorError::InvalidQuantile(q));
            }
        }
        Ok(())
    }
}

/// Posterior over one class's risk: all R resample statistics plus their
/// mean and tail summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub class_name: String,
    pub statistic_samples: Vec<f64>,
    pub mean: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    pub config: BootstrapConfig,
}

/// One draw of Dirichlet(1,…,1) weights over `k` components: `k` standard
/// exponentials, normalized. Nonnegative, summing to 1 within 1e-12.
pub fn dirichlet_weights<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
) -> Result<Vec<f64>, PosteriorError> {
    if k == 0 {
        return Err(PosteriorError::ZeroWeights);
    }
    let mut weights: Vec<f64> = (0..k)
        .map(|_| -f64::ln(rng.sample::<f64, _>(OpenClosed01)))
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 {
        // All draws hit the u = 1 endpoint; fall back to the simplex center.
        weights.fill(1.0 / k as f64);
    } else {
        for w in &mut weights {
            *w /= sum;
        }
    }
    Ok(weights)
}

/// Tail summary of a discrete distribution: sorts ascending, walks the
/// cumulative weight to the smallest value reaching `alpha` (the
/// value-at-risk), then averages everything from that value up (the
/// conditional value-at-risk). Ties in value are merged by accumulating
/// their weight. Returns `(var_alpha, cvar_alpha)`.
pub fn cvar(
    values: &[f64],
    weights: Option<&[f64]>,
    alpha: f64,
) -> Result<(f64, f64), PosteriorError> {
    if values.is_empty() {
        return Err(PosteriorError::EmptyValues);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PosteriorError::InvalidAlpha(alpha));
    }
    let uniform;
    let weights = match weights {
        Some(w) => {
            if w.len() != values.len() {
                return Err(PosteriorError::WeightLengthMismatch {
                    got: w.len(),
                    expected: values.len(),
                });
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(PosteriorError::BadWeights(sum));
            }
            w
        }
        None => {
            uniform = vec![1.0 / values.len() as f64; values.len()];
            &uniform
        }
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    // Merge equal values, accumulating weight.
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for &i in &order {
        match merged.last_mut() {
            Some((v, w)) if *v == values[i] => *w += weights[i],
            _ => merged.push((values[i], weights[i])),
        }
    }

    let mut var = merged.last().expect("nonempty").0;
    let mut tail_from = merged.len() - 1;
    let mut cumulative = 0.0;
    for (idx, &(value, weight)) in merged.iter().enumerate() {
        cumulative += weight;
        if cumulative >= alpha {
            var = value;
            tail_from = idx;
            break;
        }
        // Rounding can leave the final cumulative a hair under alpha; the
        // initializers above then report the maximum, the correct limit.
    }

    let mut tail_weight = 0.0;
    let mut tail_sum = 0.0;
    for &(value, weight) in &merged[tail_from..] {
        tail_weight += weight;
        tail_sum += value * weight;
    }
    let cvar = if tail_weight > 0.0 {
        tail_sum / tail_weight
    } else {
        var
    };
    Ok((var, cvar))
}

fn apply_statistic(
    statistic: Statistic,
    samples: &[f64],
    weights: &[f64],
) -> Result<f64, PosteriorError> {
    match statistic {
        Statistic::WeightedMean => Ok(samples
            .iter()
            .zip(weights)
            .map(|(x, w)| x * w)
            .sum()),
        Statistic::WeightedQuantile(q) => Ok(cvar(samples, Some(weights), q)?.0),
    }
}

/// Runs the weighted resampling posterior over one class's readings:
/// R Dirichlet draws, one statistic each, then mean and tail summaries of
/// the statistic distribution. Deterministic given `config.seed`.
pub fn bootstrap_posterior(
    class_name: &str,
    samples: &[f64],
    config: &BootstrapConfig,
) -> Result<PosteriorSummary, PosteriorError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(PosteriorError::EmptySamples);
    }
    for &x in samples {
        if !(0.0..=1.0).contains(&x) {
            return Err(PosteriorError::SampleOutOfRange(x));
        }
    }
    let mut rng = seeded(config.seed);
    let mut statistic_samples = Vec::with_capacity(config.resamples);
    for _ in 0..config.resamples {
        let weights = dirichlet_weights(&mut rng, samples.len())?;
        statistic_samples.push(apply_statistic(config.statistic, samples, &weights)?);
    }
    let mean = statistic_samples.iter().sum::<f64>() / statistic_samples.len() as f64;
    let (var_alpha, cvar_alpha) = cvar(&statistic_samples, None, config.alpha)?;
    debug_assert!(mean <= cvar_alpha + 1e-12);
    debug_assert!(var_alpha <= cvar_alpha + 1e-12);
    Ok(PosteriorSummary {
        class_name: class_name.to_string(),
        statistic_samples,
        mean,
        var_alpha,
        cvar_alpha,
        config: *config,
    })
}

/// Posterior for every class of a sample set, in the set's class order.
/// Class `i` resamples on a substream derived from `(config.seed, i)`, so
/// appending a class never perturbs earlier classes' posteriors and classes
/// may be processed concurrently. Each summary echoes the root config.
pub fn posterior_for_all_classes(
    set: &SampleSet,
    config: &BootstrapConfig,
) -> Result<BTreeMap<String, PosteriorSummary>, PosteriorError> {
    config.validate()?;
    let mut out = BTreeMap::new();
    for (i, class) in set.classes().iter().enumerate() {
        let substream = BootstrapConfig {
            seed: substream_seed(config.seed, i as u64),
            ..*config
        };
        let mut summary = bootstrap_posterior(class.name(), class.readings(), &substream)?;
        summary.config = *config;
        out.insert(class.name().to_string(), summary);
    }
    Ok(out)
}

/// One class's entry in the posterior export document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorExport {
    pub mean: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    #[serde(rename = "R")]
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Flattens per-class summaries into the export document consumed by the
/// cost-field stage and the CLI.
pub fn export_posteriors(
    posteriors: &BTreeMap<String, PosteriorSummary>,
) -> BTreeMap<String, PosteriorExport> {
    posteriors
        .iter()
        .map(|(name, s)| {
            (
                name.clone(),
                PosteriorExport {
                    mean: s.mean,
                    var_alpha: s.var_alpha,
                    cvar_alpha: s.cvar_alpha,
                    resamples: s.config.resamples,
                    alpha: s.config.alpha,
                    seed: s.config.seed,
                },
            )
        })
        .collect()
}
