//! Sample losses. Samples are expected in reporting units (km/h, veh/km).

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::anticipation::{LkvSample, NlkvSample};
use crate::fields::Sign;
use crate::models::{eval_franklin_newell, eval_greenberg, eval_smulders, FdParams, ModelError};

use super::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ece,
    Nll,
    Lse,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ece, LossKind::Nll, LossKind::Lse];

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ece" => Some(LossKind::Ece),
            "nll" => Some(LossKind::Nll),
            "lse" => Some(LossKind::Lse),
            _ => None,
        }
    }

    /// ECE and NLL consume NLKV samples, LSE consumes LKV samples.
    pub fn uses_nlkv(self) -> bool {
        !matches!(self, LossKind::Lse)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ece => "ece",
            LossKind::Nll => "nll",
            LossKind::Lse => "lse",
        })
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus_stable(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise sum of `term(0..n)` with a fixed reduction tree.
pub(crate) fn pairwise_sum(n: usize, term: &impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, term: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut s = 0.0;
            for i in lo..hi {
                s += term(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, term) + go(mid, hi, term)
        }
    }
    go(0, n, term)
}

/// Fraction of accelerating samples (`y = 0`).
pub fn compute_omega(samples: &[NlkvSample]) -> Result<f64, FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    let accelerating = samples.iter().filter(|s| s.y == Sign::Accelerating).count();
    let omega = accelerating as f64 / samples.len() as f64;
    if accelerating == 0 || accelerating == samples.len() {
        return Err(FitError::SingleClass { omega });
    }
    Ok(omega)
}

fn check_densities(ks: impl Iterator<Item = f64>) -> Result<(), FitError> {
    for k in ks {
        if !(k > 0.0) || !k.is_finite() {
            return Err(FitError::Model(ModelError::NonPositiveDensity(k)));
        }
    }
    Ok(())
}

/// Calls `$body` with `$f` bound to the model curve of `$params` as a
/// concrete closure, so the per-sample loop is specialized per model.
macro_rules! with_curve {
    ($params:expr, |$f:ident| $body:expr) => {
        match *$params {
            FdParams::Greenberg { v0, k_jam } => {
                let $f = |k: f64| eval_greenberg(v0, k_jam, k).unwrap_or(f64::NAN);
                $body
            }
            FdParams::Smulders { v0, k_crit, k_jam } => {
                let $f = |k: f64| eval_smulders(v0, k_crit, k_jam, k).unwrap_or(f64::NAN);
                $body
            }
            FdParams::FranklinNewell { v0, lambda, k_jam } => {
                let $f = |k: f64| eval_franklin_newell(v0, lambda, k_jam, k).unwrap_or(f64::NAN);
                $body
            }
        }
    };
}

/// Read access to a labelled sample; lets the optimizer use a packed copy.
pub(crate) trait Labelled {
    fn k_a(&self) -> f64;
    fn v(&self) -> f64;
    fn decelerating(&self) -> bool;
}

impl Labelled for NlkvSample {
    #[inline]
    fn k_a(&self) -> f64 {
        self.k_a
    }
    #[inline]
    fn v(&self) -> f64 {
        self.v
    }
    #[inline]
    fn decelerating(&self) -> bool {
        self.y == Sign::Decelerating
    }
}

/// NLKV sample without provenance, for cache-friendly loss loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Packed {
    k_a: f64,
    v: f64,
    decelerating: bool,
}

impl From<&NlkvSample> for Packed {
    fn from(s: &NlkvSample) -> Self {
        Packed {
            k_a: s.k_a,
            v: s.v,
            decelerating: s.y == Sign::Decelerating,
        }
    }
}

impl Labelled for Packed {
    #[inline]
    fn k_a(&self) -> f64 {
        self.k_a
    }
    #[inline]
    fn v(&self) -> f64 {
        self.v
    }
    #[inline]
    fn decelerating(&self) -> bool {
        self.decelerating
    }
}

fn ece_sum<S: Labelled>(f: impl Fn(f64) -> f64, samples: &[S], omega: f64, scale: f64) -> f64 {
    pairwise_sum(samples.len(), &|i| {
        let s = &samples[i];
        let z = (s.v() - f(s.k_a())) / scale;
        if s.decelerating() {
            omega * softplus_stable(-z)
        } else {
            (1.0 - omega) * softplus_stable(z)
        }
    })
}

fn nll_sum<S: Labelled>(f: impl Fn(f64) -> f64, samples: &[S], scale: f64) -> f64 {
    pairwise_sum(samples.len(), &|i| {
        let s = &samples[i];
        let z = (s.v() - f(s.k_a())) / scale;
        if s.decelerating() {
            softplus_stable(-z)
        } else {
            z + softplus_stable(-z)
        }
    })
}

fn lse_sum(f: impl Fn(f64) -> f64, samples: &[LkvSample]) -> f64 {
    pairwise_sum(samples.len(), &|i| {
        let r = samples[i].v - f(samples[i].k);
        r * r
    })
}

/// ECE on samples whose densities were already checked.
pub(crate) fn ece_prechecked<S: Labelled>(params: &FdParams, samples: &[S], omega: f64, scale: f64) -> f64 {
    with_curve!(params, |f| ece_sum(f, samples, omega, scale)) / samples.len() as f64
}

pub(crate) fn nll_prechecked<S: Labelled>(params: &FdParams, samples: &[S], scale: f64) -> f64 {
    with_curve!(params, |f| nll_sum(f, samples, scale))
}

pub(crate) fn lse_prechecked(params: &FdParams, samples: &[LkvSample]) -> f64 {
    with_curve!(params, |f| lse_sum(f, samples)) / samples.len() as f64
}

pub(crate) fn check_scale(scale: f64) -> Result<(), FitError> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(FitError::Model(ModelError::NonPositiveScale(scale)))
    }
}

pub(crate) fn check_nlkv(samples: &[NlkvSample]) -> Result<(), FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    check_densities(samples.iter().map(|s| s.k_a))
}

pub(crate) fn check_lkv(samples: &[LkvSample]) -> Result<(), FitError> {
    if samples.is_empty() {
        return Err(FitError::NoSamples);
    }
    check_densities(samples.iter().map(|s| s.k))
}

/// Class-rate weighted cross entropy, averaged over samples. `scale` divides
/// the speed residual before the logistic; 1.0 gives the plain model.
pub fn ece_loss_scaled(
    params: &FdParams,
    samples: &[NlkvSample],
    omega: f64,
    scale: f64,
) -> Result<f64, FitError> {
    check_nlkv(samples)?;
    if !(omega > 0.0 && omega < 1.0) {
        return Err(FitError::SingleClass { omega });
    }
    check_scale(scale)?;
    Ok(ece_prechecked(params, samples, omega, scale))
}

pub fn ece_loss(params: &FdParams, samples: &[NlkvSample], omega: f64) -> Result<f64, FitError> {
    ece_loss_scaled(params, samples, omega, 1.0)
}

/// Unweighted, unnormalized negative log-likelihood of the logistic model.
pub fn nll_loss_scaled(params: &FdParams, samples: &[NlkvSample], scale: f64) -> Result<f64, FitError> {
    check_nlkv(samples)?;
    check_scale(scale)?;
    Ok(nll_prechecked(params, samples, scale))
}

pub fn nll_loss(params: &FdParams, samples: &[NlkvSample]) -> Result<f64, FitError> {
    nll_loss_scaled(params, samples, 1.0)
}

/// Mean squared speed residual.
pub fn lse_loss(params: &FdParams, samples: &[LkvSample]) -> Result<f64, FitError> {
    check_lkv(samples)?;
    Ok(lse_prechecked(params, samples))
}
