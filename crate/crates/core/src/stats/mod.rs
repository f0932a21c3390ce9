//! Coverage statistics: predicted-to-official incident ratios per city,
//! Welch's ANOVA across crime types with pairwise follow-up tests, and
//! annotator agreement.

mod coverage;
mod kappa;
mod special;
mod welch;

use serde::{Deserialize, Serialize};

pub use coverage::{common_cities, coverage_ratios, load_counts, CityRatio, CountTable, Place, RatioSample};
pub use kappa::{annotator_agreement, cohen_kappa, Agreement, AgreementField};
pub use special::{betainc, f_sf, ln_beta, ln_gamma, t_two_sided};
pub use welch::{classic_anova, holm_adjust, posthoc_pairwise, welch_anova, welch_t_test, PairwiseTest, WelchResult};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPairwiseTest {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_crime_ratios: Vec<RatioSample>,
    pub welch: WelchResult,
    pub posthoc: Vec<NamedPairwiseTest>,
}

/// Ratios for each crime type over the cities covered by all of them,
/// followed by the omnibus and pairwise tests on those ratios.
pub fn coverage_report(predicted: &CountTable, official: &CountTable, crime_types: &[&str]) -> Result<StatsReport> {
    let samples: Vec<RatioSample> = crime_types.iter().map(|c| coverage_ratios(predicted, official, c)).collect();
    let samples = common_cities(&samples);
    let groups: Vec<Vec<f64>> = samples.iter().map(RatioSample::ratios).collect();
    let welch = welch_anova(&groups)?;
    let posthoc = posthoc_pairwise(&groups)?
        .into_iter()
        .map(|t| NamedPairwiseTest {
            a: samples[t.a].crime_type.clone(),
            b: samples[t.b].crime_type.clone(),
            t: t.t,
            df: t.df,
            p_raw: t.p_raw,
            p_adjusted: t.p_adjusted,
        })
        .collect();
    Ok(StatsReport {
        per_crime_ratios: samples,
        welch,
        posthoc,
    })
}
