use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fgsm,
    Pgd,
    PgdHc,
    Spsa,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(Method::Fgsm),
            "pgd" => Ok(Method::Pgd),
            "pgd_hc" | "pgd-hc" => Ok(Method::PgdHc),
            "spsa" => Ok(Method::Spsa),
            _ => Err(Error::invalid(format!("unknown attack {s:?} (fgsm, pgd, pgd_hc, spsa)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Fgsm => "fgsm",
            Method::Pgd => "pgd",
            Method::PgdHc => "pgd_hc",
            Method::Spsa => "spsa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Untargeted,
    /// Uniform over the classes other than the true one.
    Random,
    Fixed(usize),
}

/// Attack hyper-parameters. `epsilon` and `step_size` are on the `[0, 1]`
/// pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: Method,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub target: TargetRule,
    /// Required softmax confidence for `pgd_hc` successes.
    pub min_confidence: f64,
    /// Step-size search rounds for `pgd_hc`; each runs `iterations` steps.
    pub search_steps: usize,
    pub spsa_perturbation: f64,
    pub spsa_batch: usize,
    pub spsa_learning_rate: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: Method::Pgd,
            epsilon: 4.0 / 255.0,
            step_size: 0.01,
            iterations: 40,
            random_start: true,
            target: TargetRule::Untargeted,
            min_confidence: 0.9,
            search_steps: 5,
            spsa_perturbation: 0.01,
            spsa_batch: 64,
            spsa_learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn pgd(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            ..Default::default()
        }
    }

    pub fn pgd_high_confidence() -> Self {
        AttackConfig {
            method: Method::PgdHc,
            epsilon: 0.3,
            ..Default::default()
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            method: Method::Fgsm,
            epsilon,
            step_size: epsilon,
            iterations: 1,
            random_start: false,
            ..Default::default()
        }
    }

    pub fn spsa(epsilon: f64) -> Self {
        AttackConfig {
            method: Method::Spsa,
            epsilon,
            iterations: 300,
            random_start: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("step size must be finite and >= 0"));
        }
        if !(self.min_confidence > 0.0 && self.min_confidence < 1.0) {
            return Err(Error::invalid("min confidence must lie in (0, 1)"));
        }
        if self.method == Method::PgdHc && self.search_steps == 0 {
            return Err(Error::invalid("pgd_hc needs at least one search step"));
        }
        if self.method == Method::Spsa
            && (self.spsa_batch == 0 || !(self.spsa_perturbation > 0.0) || !(self.spsa_learning_rate > 0.0))
        {
            return Err(Error::invalid("spsa needs positive batch, perturbation and learning rate"));
        }
        Ok(())
    }
}

/// Parses a perturbation budget: integers are on the 0–255 scale
/// (`"16"` is 16/255), anything with a decimal point is on `[0, 1]`.
pub fn parse_epsilon(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u32>() {
        if v > 255 {
            return Err(Error::invalid(format!("epsilon {v}/255 exceeds the pixel range")));
        }
        return Ok(v as f64 / 255.0);
    }
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(Error::invalid(format!("cannot read epsilon {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_conventions() {
        assert_eq!(parse_epsilon("16").unwrap(), 16.0 / 255.0);
        assert_eq!(parse_epsilon("0.1").unwrap(), 0.1);
        assert_eq!(parse_epsilon("0").unwrap(), 0.0);
        assert_eq!(parse_epsilon("1.0").unwrap(), 1.0);
        assert!(parse_epsilon("1.5").is_err());
        assert!(parse_epsilon("300").is_err());
        assert!(parse_epsilon("-0.1").is_err());
    }

    #[test]
    fn validation() {
        assert!(AttackConfig::pgd(0.1).validate().is_ok());
        assert!(AttackConfig { iterations: 0, ..AttackConfig::pgd(0.1) }.validate().is_err());
        assert!(AttackConfig { epsilon: -1.0, ..AttackConfig::pgd(0.1) }.validate().is_err());
        assert!(AttackConfig { min_confidence: 1.0, ..AttackConfig::pgd(0.1) }.validate().is_err());
    }
}
