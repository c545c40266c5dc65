//! Parametric speed-density fundamental diagrams.
//!
//! All evaluation here happens in reporting units: speeds in km/h and
//! densities in veh/km. Convert SI samples with [`kmh_from_mps`] and
//! [`veh_per_km_from_veh_per_m`] before calling into this module.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MPS_TO_KMH: f64 = 3.6;
pub const VEH_PER_M_TO_VEH_PER_KM: f64 = 1000.0;

#[inline]
pub fn kmh_from_mps(v: f64) -> f64 {
    v * MPS_TO_KMH
}

#[inline]
pub fn veh_per_km_from_veh_per_m(k: f64) -> f64 {
    k * VEH_PER_M_TO_VEH_PER_KM
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("{model} expects {expected} parameters, got {got}")]
    Arity {
        model: ModelKind,
        expected: usize,
        got: usize,
    },
    #[error("logistic scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Greenberg,
    Smulders,
    FranklinNewell,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Greenberg,
        ModelKind::Smulders,
        ModelKind::FranklinNewell,
    ];

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Greenberg => &["v0", "k_jam"],
            ModelKind::Smulders => &["v0", "k_crit", "k_jam"],
            ModelKind::FranklinNewell => &["v0", "lambda", "k_jam"],
        }
    }

    pub fn arity(self) -> usize {
        self.param_names().len()
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "greenberg" => Some(ModelKind::Greenberg),
            "smulders" => Some(ModelKind::Smulders),
            "franklin_newell" | "franklinnewell" | "newell" => Some(ModelKind::FranklinNewell),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Greenberg => "greenberg",
            ModelKind::Smulders => "smulders",
            ModelKind::FranklinNewell => "franklin_newell",
        })
    }
}

/// Model-tagged FD parameters in km/h and veh/km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum FdParams {
    Greenberg { v0: f64, k_jam: f64 },
    Smulders { v0: f64, k_crit: f64, k_jam: f64 },
    FranklinNewell { v0: f64, lambda: f64, k_jam: f64 },
}

impl FdParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            FdParams::Greenberg { .. } => ModelKind::Greenberg,
            FdParams::Smulders { .. } => ModelKind::Smulders,
            FdParams::FranklinNewell { .. } => ModelKind::FranklinNewell,
        }
    }

    /// Parameters in the order given by [`ModelKind::param_names`].
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            FdParams::Greenberg { v0, k_jam } => vec![v0, k_jam],
            FdParams::Smulders { v0, k_crit, k_jam } => vec![v0, k_crit, k_jam],
            FdParams::FranklinNewell { v0, lambda, k_jam } => vec![v0, lambda, k_jam],
        }
    }

    pub fn from_slice(kind: ModelKind, p: &[f64]) -> Result<Self, ModelError> {
        if p.len() != kind.arity() {
            return Err(ModelError::Arity {
                model: kind,
                expected: kind.arity(),
                got: p.len(),
            });
        }
        Ok(match kind {
            ModelKind::Greenberg => FdParams::Greenberg { v0: p[0], k_jam: p[1] },
            ModelKind::Smulders => FdParams::Smulders {
                v0: p[0],
                k_crit: p[1],
                k_jam: p[2],
            },
            ModelKind::FranklinNewell => FdParams::FranklinNewell {
                v0: p[0],
                lambda: p[1],
                k_jam: p[2],
            },
        })
    }

    pub fn v0(&self) -> f64 {
        match *self {
            FdParams::Greenberg { v0, .. }
            | FdParams::Smulders { v0, .. }
            | FdParams::FranklinNewell { v0, .. } => v0,
        }
    }

    pub fn k_jam(&self) -> f64 {
        match *self {
            FdParams::Greenberg { k_jam, .. }
            | FdParams::Smulders { k_jam, .. }
            | FdParams::FranklinNewell { k_jam, .. } => k_jam,
        }
    }

    /// Equilibrium speed at density `k`.
    pub fn speed(&self, k: f64) -> Result<f64, ModelError> {
        match *self {
            FdParams::Greenberg { v0, k_jam } => eval_greenberg(v0, k_jam, k),
            FdParams::Smulders { v0, k_crit, k_jam } => eval_smulders(v0, k_crit, k_jam, k),
            FdParams::FranklinNewell { v0, lambda, k_jam } => {
                eval_franklin_newell(v0, lambda, k_jam, k)
            }
        }
    }

    /// Smallest density with the given equilibrium speed, found by bisection
    /// on the non-increasing curve. Returns `None` if `v` is outside the
    /// range the model attains on `(0, k_jam]`.
    pub fn density_at_speed(&self, v: f64) -> Option<f64> {
        let k_jam = self.k_jam();
        if !(v >= 0.0) || !(k_jam > 0.0) {
            return None;
        }
        let mut lo = k_jam * 1e-9;
        let mut hi = k_jam;
        if self.speed(lo).ok()? < v {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.speed(mid).ok()? > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

impl fmt::Display for FdParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = self.kind();
        write!(f, "{kind}(")?;
        for (i, (name, value)) in kind.param_names().iter().zip(self.to_vec()).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={value:.4}")?;
        }
        f.write_str(")")
    }
}

fn check_density(k: f64) -> Result<(), ModelError> {
    if k > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositiveDensity(k))
    }
}

/// `v0 * ln(k_jam / k)`, zero beyond jam density.
pub fn eval_greenberg(v0: f64, k_jam: f64, k: f64) -> Result<f64, ModelError> {
    check_density(k)?;
    if k >= k_jam {
        return Ok(0.0);
    }
    Ok(v0 * (k_jam / k).ln())
}

/// Linear free-flow branch below `k_crit`, hyperbolic congested branch above.
pub fn eval_smulders(v0: f64, k_crit: f64, k_jam: f64, k: f64) -> Result<f64, ModelError> {
    check_density(k)?;
    if k >= k_jam {
        return Ok(0.0);
    }
    let v = if k < k_crit {
        v0 * (1.0 - k / k_jam)
    } else {
        v0 * k_crit * (1.0 / k - 1.0 / k_jam)
    };
    Ok(v.max(0.0))
}

pub fn eval_franklin_newell(v0: f64, lambda: f64, k_jam: f64, k: f64) -> Result<f64, ModelError> {
    check_density(k)?;
    if k >= k_jam {
        return Ok(0.0);
    }
    let exponent = -(lambda / v0) * (1.0 / k - 1.0 / k_jam);
    Ok(-v0 * exponent.exp_m1())
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability that traffic at speed `v` with anticipated density `k_a`
/// decelerates: `logistic((v - f(k_a)) / scale)`.
pub fn deceleration_probability(
    v: f64,
    k_a: f64,
    params: &FdParams,
    scale: f64,
) -> Result<f64, ModelError> {
    if !(scale > 0.0) {
        return Err(ModelError::NonPositiveScale(scale));
    }
    let f = params.speed(k_a)?;
    Ok(logistic((v - f) / scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositive { param: String, value: f64 },
    CritNotBelowJam { k_crit: f64, k_jam: f64 },
    JamNotAboveObserved { k_jam: f64, k_max_observed: f64 },
}

impl Violation {
    /// Distance from the feasible region, in parameter units.
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::NonPositive { value, .. } => -value,
            Violation::CritNotBelowJam { k_crit, k_jam } => k_crit - k_jam,
            Violation::JamNotAboveObserved {
                k_jam,
                k_max_observed,
            } => k_max_observed - k_jam,
        }
        .max(0.0)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive { param, value } => write!(f, "{param} = {value} is not positive"),
            Violation::CritNotBelowJam { k_crit, k_jam } => {
                write!(f, "k_crit ({k_crit}) >= k_jam ({k_jam})")
            }
            Violation::JamNotAboveObserved {
                k_jam,
                k_max_observed,
            } => write!(f, "k_jam ({k_jam}) <= k_max_observed ({k_max_observed})"),
        }
    }
}

/// Checks positivity, Smulders ordering and that the jam density lies above
/// every observed density. An empty list means the parameters are usable.
pub fn validate_params(params: &FdParams, k_max_observed: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, value) in params.kind().param_names().iter().zip(params.to_vec()) {
        if !(value > 0.0) {
            out.push(Violation::NonPositive {
                param: (*name).to_string(),
                value,
            });
        }
    }
    if let FdParams::Smulders { k_crit, k_jam, .. } = *params {
        if k_crit >= k_jam {
            out.push(Violation::CritNotBelowJam { k_crit, k_jam });
        }
    }
    let k_jam = params.k_jam();
    if k_jam <= k_max_observed {
        out.push(Violation::JamNotAboveObserved {
            k_jam,
            k_max_observed,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMULDERS: FdParams = FdParams::Smulders {
        v0: 86.8,
        k_crit: 65.0,
        k_jam: 199.9,
    };
    const GREENBERG: FdParams = FdParams::Greenberg {
        v0: 46.3,
        k_jam: 189.9,
    };

    #[test]
    fn greenberg_examples() {
        assert_eq!(GREENBERG.speed(189.9).unwrap(), 0.0);
        let at_e = GREENBERG.speed(189.9 / std::f64::consts::E).unwrap();
        assert!((at_e - 46.3).abs() < 1e-12);
        assert_eq!(GREENBERG.speed(250.0).unwrap(), 0.0);
        assert_eq!(
            GREENBERG.speed(0.0),
            Err(ModelError::NonPositiveDensity(0.0))
        );
    }

    #[test]
    fn smulders_examples() {
        let v = SMULDERS.speed(65.0).unwrap();
        let free_branch = 86.8 * (1.0 - 65.0 / 199.9);
        assert!((v - free_branch).abs() < 1e-12);
        assert!((v - 58.58).abs() < 5e-3);
        assert_eq!(SMULDERS.speed(199.9).unwrap(), 0.0);
        assert!((SMULDERS.speed(1e-9).unwrap() - 86.8).abs() < 1e-6);
        assert!(SMULDERS.speed(-1.0).is_err());
    }

    #[test]
    fn franklin_newell_examples() {
        let p = FdParams::FranklinNewell {
            v0: 80.2,
            lambda: 1000.0,
            k_jam: 168.3,
        };
        assert_eq!(p.speed(168.3).unwrap(), 0.0);
        assert!((p.speed(1e-6).unwrap() - 80.2).abs() < 1e-9);
        // 80.2 * (1 - exp(-(1000/80.2) * (1/84.15 - 1/168.3))) = 5.727003...
        let v = p.speed(84.15).unwrap();
        assert!((v - 5.727_003_3).abs() < 1e-6, "{v}");
    }

    #[test]
    fn logistic_saturates_without_overflow() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((1.0 - logistic(40.0)).abs() <= 1e-15);
        let tiny = logistic(-40.0);
        assert!(tiny > 0.0 && tiny < 1e-17);
        assert!(logistic(-800.0) >= 0.0);
        assert_eq!(logistic(800.0), 1.0);
    }

    #[test]
    fn deceleration_probability_at_equilibrium_is_half() {
        let f = SMULDERS.speed(40.0).unwrap();
        let p = deceleration_probability(f, 40.0, &SMULDERS, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(deceleration_probability(f, 40.0, &SMULDERS, 0.0).is_err());
    }

    #[test]
    fn validate_params_examples() {
        assert!(validate_params(&SMULDERS, 150.0).is_empty());
        let bad = FdParams::Smulders {
            v0: 86.8,
            k_crit: 210.0,
            k_jam: 199.9,
        };
        let v = validate_params(&bad, 0.0);
        assert!(matches!(v[..], [Violation::CritNotBelowJam { .. }]));
        let g = FdParams::Greenberg {
            v0: 46.3,
            k_jam: 100.0,
        };
        let v = validate_params(&g, 150.0);
        assert_eq!(v.len(), 1);
        assert!((v[0].magnitude() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn density_at_speed_inverts() {
        let k = SMULDERS.density_at_speed(40.0).unwrap();
        assert!((SMULDERS.speed(k).unwrap() - 40.0).abs() < 1e-9);
        assert!(SMULDERS.density_at_speed(100.0).is_none());
    }

    #[test]
    fn params_json_shape() {
        let json = serde_json::to_value(SMULDERS).unwrap();
        assert_eq!(json["model"], "smulders");
        assert_eq!(json["params"]["k_crit"], 65.0);
        let back: FdParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, SMULDERS);
    }
}
