use serde::{Deserialize, Serialize};

use crate::error::{GenError, Result};

/// Target fractions of the whole patient population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quotas {
    pub pregnant: f64,
    pub breastfeeding: f64,
    pub reduced_liver: f64,
    pub reduced_renal: f64,
    pub allergies: f64,
}

impl Default for Quotas {
    fn default() -> Self {
        Quotas {
            pregnant: 0.035,
            breastfeeding: 0.054,
            reduced_liver: 0.029,
            reduced_renal: 0.094,
            allergies: 0.20,
        }
    }
}

/// Ages in `[min, max)` drawn uniformly, with band weight `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBand {
    pub min: u32,
    pub max: u32,
    pub weight: f64,
}

/// A pyramid-shaped default; weights are percentages.
pub fn default_age_distribution() -> Vec<AgeBand> {
    [
        (0, 5, 5.5),
        (5, 12, 8.0),
        (12, 18, 6.5),
        (18, 30, 15.5),
        (30, 45, 21.5),
        (45, 60, 22.0),
        (60, 65, 6.0),
        (65, 75, 9.5),
        (75, 90, 5.5),
    ]
    .into_iter()
    .map(|(min, max, weight)| AgeBand { min, max, weight })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_patients: usize,
    /// Probability that a patient is female.
    pub female_ratio: f64,
    pub quotas: Quotas,
    pub max_patients_per_disease: usize,
    pub concomitant_min: usize,
    pub concomitant_max: usize,
    /// Train, dev and test percentages.
    pub split: [usize; 3],
    pub age_distribution: Vec<AgeBand>,
    /// Inclusive age window for pregnancy.
    pub pregnant_ages: (u32, u32),
    /// Inclusive age window for breastfeeding.
    pub breastfeeding_ages: (u32, u32),
    pub child_below_age: u32,
    pub elderly_from_age: u32,
    /// Allergies per allergic patient, inclusive range.
    pub allergies_per_patient: (usize, usize),
    /// Disease and history redraws per patient before the patient is skipped.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_patients: 1000,
            female_ratio: 0.5,
            quotas: Quotas::default(),
            max_patients_per_disease: 2,
            concomitant_min: 1,
            concomitant_max: 3,
            split: [60, 20, 20],
            age_distribution: default_age_distribution(),
            pregnant_ages: (18, 45),
            breastfeeding_ages: (18, 50),
            child_below_age: 12,
            elderly_from_age: 65,
            allergies_per_patient: (1, 2),
            max_retries: 20,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Probability mass of ages in `lo..=hi` under the age distribution.
    pub fn age_mass(&self, lo: u32, hi: u32) -> f64 {
        let total: f64 = self.age_distribution.iter().map(|b| b.weight).sum();
        let mut mass = 0.0;
        for b in &self.age_distribution {
            let from = b.min.max(lo);
            let to = b.max.min(hi.saturating_add(1));
            if to > from {
                mass += b.weight * f64::from(to - from) / f64::from(b.max - b.min);
            }
        }
        mass / total
    }

    /// Conditional draw probabilities `(pregnant | eligible, breastfeeding |
    /// eligible and not pregnant)` that hit the quotas in expectation.
    pub fn conditional_rates(&self) -> Result<(f64, f64)> {
        let (pl, ph) = self.pregnant_ages;
        let (bl, bh) = self.breastfeeding_ages;
        let p_preg = self.female_ratio * self.age_mass(pl, ph);
        let p_bf = self.female_ratio * self.age_mass(bl, bh);
        let q = self.quotas;
        let r_preg = if q.pregnant == 0.0 { 0.0 } else { q.pregnant / p_preg };
        // pregnant window lies inside the breastfeeding window
        let r_bf = if q.breastfeeding == 0.0 {
            0.0
        } else {
            q.breastfeeding / (p_bf - q.pregnant)
        };
        if !(0.0..=1.0).contains(&r_preg) || !(0.0..=1.0).contains(&r_bf) {
            return Err(GenError::Config(format!(
                "quotas pregnant {} / breastfeeding {} are unreachable with the eligible population \
                 ({p_preg:.4} / {p_bf:.4})",
                q.pregnant, q.breastfeeding
            )));
        }
        Ok((r_preg, r_bf))
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.quotas;
        for (name, v) in [
            ("pregnant", q.pregnant),
            ("breastfeeding", q.breastfeeding),
            ("reduced_liver", q.reduced_liver),
            ("reduced_renal", q.reduced_renal),
            ("allergies", q.allergies),
            ("female_ratio", self.female_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GenError::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.split.iter().sum::<usize>() != 100 {
            return Err(GenError::Config(format!(
                "split {:?} does not sum to 100",
                self.split
            )));
        }
        if self.concomitant_min == 0 || self.concomitant_min > self.concomitant_max {
            return Err(GenError::Config(format!(
                "concomitant range [{}, {}] is invalid",
                self.concomitant_min, self.concomitant_max
            )));
        }
        let (a, b) = self.allergies_per_patient;
        if a == 0 || a > b {
            return Err(GenError::Config("allergies_per_patient range is invalid".into()));
        }
        if self.max_patients_per_disease == 0 {
            return Err(GenError::Config("max_patients_per_disease must be positive".into()));
        }
        if self.age_distribution.is_empty()
            || self
                .age_distribution
                .iter()
                .any(|b| b.max <= b.min || !(b.weight >= 0.0))
            || self.age_distribution.iter().all(|b| b.weight == 0.0)
        {
            return Err(GenError::Config("age distribution is empty or malformed".into()));
        }
        if self.pregnant_ages.0 < self.breastfeeding_ages.0 || self.pregnant_ages.1 > self.breastfeeding_ages.1 {
            return Err(GenError::Config(
                "pregnancy age window must lie inside the breastfeeding window".into(),
            ));
        }
        self.conditional_rates()?;
        Ok(())
    }

    /// Exact split sizes: train and dev are rounded down, test takes the rest.
    pub fn split_sizes(&self, n: usize) -> [usize; 3] {
        let train = n * self.split[0] / 100;
        let dev = n * self.split[1] / 100;
        [train, dev, n - train - dev]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let c = GenConfig::default();
        assert_eq!(c.split_sizes(1000), [600, 200, 200]);
        assert_eq!(c.split_sizes(21_000), [12_600, 4_200, 4_200]);
    }

    #[test]
    fn default_config_is_valid() {
        GenConfig::default().validate().unwrap();
        let (p, b) = GenConfig::default().conditional_rates().unwrap();
        assert!(p > 0.0 && p < 1.0 && b > 0.0 && b < 1.0);
    }

    #[test]
    fn age_mass_covers_everything() {
        let c = GenConfig::default();
        assert!((c.age_mass(0, 200) - 1.0).abs() < 1e-12);
        // one band exactly
        assert!((c.age_mass(18, 29) - 0.155).abs() < 1e-12);
    }

    #[test]
    fn impossible_quota_is_rejected() {
        let mut c = GenConfig::default();
        c.quotas.pregnant = 0.4;
        assert!(c.validate().is_err());
        c.quotas.pregnant = 0.035;
        c.split = [60, 20, 30];
        assert!(c.validate().is_err());
    }
}
