//! Parameter estimation for the fundamental-diagram models.
//!
//! Fits run in reporting units (km/h, veh/km); convert SI samples with
//! [`NlkvSample::to_reporting_units`] and [`LkvSample::to_reporting_units`]
//! first. The optimizer is a multi-start Nelder–Mead: start points are drawn
//! uniformly from the parameter box with a seeded ChaCha8 stream, infeasible
//! trial points score `best_feasible_loss + 1e3 * violation`, and the winner
//! is the lowest loss with ties broken lexicographically on the parameters.

pub mod loss;
pub mod simplex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anticipation::{LkvSample, NlkvSample};
use crate::models::{validate_params, FdParams, ModelError, ModelKind};

pub use loss::{
    compute_omega, ece_loss, ece_loss_scaled, lse_loss, nll_loss, nll_loss_scaled, softplus_stable,
    LossKind,
};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};

pub const PENALTY_WEIGHT: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no samples to fit")]
    NoSamples,
    #[error("single-class sample (omega = {omega}); ECE degenerate")]
    SingleClass { omega: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{loss} loss needs {expected} samples")]
    WrongSamples { loss: LossKind, expected: &'static str },
    #[error("invalid fit configuration: {0}")]
    Config(String),
}

/// Box limits used to build per-model bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub v0: [f64; 2],
    /// Lower jam-density bound as a multiple of the largest observed density.
    pub k_jam_margin: f64,
    pub k_jam_max: f64,
    pub k_crit_min: f64,
    pub lambda: [f64; 2],
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            v0: [1.0, 200.0],
            k_jam_margin: 1.01,
            k_jam_max: 1000.0,
            k_crit_min: 1.0,
            lambda: [1.0, 1e4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Per-parameter box, in [`ModelKind::param_names`] order. Smulders' k_crit
/// is additionally kept below k_jam by the feasibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds(pub Vec<ParamBound>);

impl Bounds {
    pub fn for_model(kind: ModelKind, cfg: &BoundsConfig, k_max_observed: f64) -> Self {
        let k_jam = [cfg.k_jam_margin * k_max_observed, cfg.k_jam_max];
        let raw: Vec<[f64; 2]> = match kind {
            ModelKind::Greenberg => vec![cfg.v0, k_jam],
            ModelKind::Smulders => vec![cfg.v0, [cfg.k_crit_min, cfg.k_jam_max], k_jam],
            ModelKind::FranklinNewell => vec![cfg.v0, cfg.lambda, k_jam],
        };
        Bounds(
            kind.param_names()
                .iter()
                .zip(raw)
                .map(|(name, [lo, hi])| ParamBound {
                    name: (*name).to_string(),
                    lo,
                    hi,
                })
                .collect(),
        )
    }

    fn check(&self) -> Result<(), FitError> {
        for b in &self.0 {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo > 0.0 && b.lo < b.hi) {
                return Err(FitError::Config(format!(
                    "bad bounds for {}: [{}, {}]",
                    b.name, b.lo, b.hi
                )));
            }
        }
        Ok(())
    }

    /// Total distance outside the box.
    fn excess(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(b, &v)| (b.lo - v).max(0.0) + (v - b.hi).max(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub loss: LossKind,
    pub starts: usize,
    pub max_iter: usize,
    /// Relative tolerance on the loss spread across the simplex.
    pub tol: f64,
    /// Relative tolerance on the simplex size.
    pub xtol: f64,
    /// Nelder–Mead restarts from each local optimum.
    pub polish_rounds: usize,
    pub seed: u64,
    /// Speed scale of the logistic, km/h.
    pub scale: f64,
    pub bounds: BoundsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss: LossKind::Ece,
            starts: 16,
            max_iter: 2000,
            tol: 1e-12,
            xtol: 1e-9,
            polish_rounds: 3,
            seed: 0,
            scale: 1.0,
            bounds: BoundsConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn with_loss(loss: LossKind) -> Self {
        FitConfig {
            loss,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.starts == 0 {
            return Err(FitError::Config("starts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.xtol > 0.0) {
            return Err(FitError::Config("tolerances must be positive".into()));
        }
        if !(self.scale > 0.0) {
            return Err(FitError::Config("scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FdParams,
    pub loss: LossKind,
    pub loss_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub m: usize,
    /// Nelder–Mead iterations of the winning start, polishing included.
    pub iterations: usize,
    /// Objective evaluations over all starts.
    pub evaluations: usize,
    pub converged: bool,
    pub starts: usize,
    pub seed: u64,
    pub bounds: Bounds,
}

/// Samples for one fit, in reporting units.
#[derive(Debug, Clone, Copy)]
pub enum FitData<'a> {
    Nlkv(&'a [NlkvSample]),
    Lkv(&'a [LkvSample]),
}

impl FitData<'_> {
    fn len(&self) -> usize {
        match self {
            FitData::Nlkv(s) => s.len(),
            FitData::Lkv(s) => s.len(),
        }
    }

    fn k_max(&self) -> f64 {
        match self {
            FitData::Nlkv(s) => s.iter().map(|s| s.k_a).fold(0.0, f64::max),
            FitData::Lkv(s) => s.iter().map(|s| s.k).fold(0.0, f64::max),
        }
    }
}

struct Objective<'a> {
    kind: ModelKind,
    loss: LossKind,
    data: FitData<'a>,
    packed: Vec<loss::Packed>,
    omega: f64,
    scale: f64,
    k_max: f64,
    bounds: &'a Bounds,
}

impl Objective<'_> {
    fn violation(&self, x: &[f64]) -> f64 {
        let mut v = self.bounds.excess(x);
        if let Ok(p) = FdParams::from_slice(self.kind, x) {
            for viol in validate_params(&p, self.k_max) {
                // equality cases have zero magnitude but are still infeasible
                v += viol.magnitude().max(1e-12);
            }
        }
        v
    }

    /// Loss on samples validated up front by [`fit_fd`].
    fn loss(&self, x: &[f64]) -> f64 {
        let Ok(p) = FdParams::from_slice(self.kind, x) else {
            return f64::INFINITY;
        };
        let l = match (self.loss, self.data) {
            (LossKind::Ece, FitData::Nlkv(_)) => {
                loss::ece_prechecked(&p, &self.packed, self.omega, self.scale)
            }
            (LossKind::Nll, FitData::Nlkv(_)) => loss::nll_prechecked(&p, &self.packed, self.scale),
            (LossKind::Lse, FitData::Lkv(s)) => loss::lse_prechecked(&p, s),
            _ => f64::INFINITY,
        };
        if l.is_nan() {
            f64::INFINITY
        } else {
            l
        }
    }
}

struct StartOutcome {
    x: Vec<f64>,
    fx: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

fn sample_start(rng: &mut ChaCha8Rng, kind: ModelKind, bounds: &Bounds) -> Vec<f64> {
    let mut x: Vec<f64> = bounds.0.iter().map(|b| rng.random_range(b.lo..b.hi)).collect();
    if kind == ModelKind::Smulders {
        let crit = &bounds.0[1];
        let hi = crit.hi.min(x[2]);
        x[1] = if hi > crit.lo { crit.lo + (x[1] - crit.lo) / (crit.hi - crit.lo) * (hi - crit.lo) } else { crit.lo };
    }
    x
}

/// Initial simplex offsets: `frac` of each box width, pointing inward.
fn inward_step(x: &[f64], bounds: &Bounds, frac: f64) -> Vec<f64> {
    x.iter()
        .zip(&bounds.0)
        .map(|(&v, b)| {
            let s = frac * (b.hi - b.lo);
            if v + s <= b.hi {
                s
            } else {
                -s
            }
        })
        .collect()
}

fn run_start(obj: &Objective<'_>, x0: Vec<f64>, cfg: &FitConfig) -> StartOutcome {
    let opts = SimplexOptions {
        max_iter: cfg.max_iter,
        ftol: cfg.tol,
        xtol: cfg.xtol,
    };
    let mut best_x = x0;
    let mut best_f = obj.loss(&best_x);
    let mut iterations = 0;
    let mut evaluations = 1;
    let mut converged = false;

    for round in 0..=cfg.polish_rounds {
        let frac = if round == 0 { 0.1 } else { 0.02 };
        let step = inward_step(&best_x, obj.bounds, frac);
        let mut feasible_best = best_f;
        let mut feasible_x = best_x.clone();
        let r = nelder_mead(
            |x| {
                let viol = obj.violation(x);
                if viol > 0.0 {
                    return feasible_best + PENALTY_WEIGHT * viol;
                }
                let l = obj.loss(x);
                if l < feasible_best {
                    feasible_best = l;
                    feasible_x.copy_from_slice(x);
                }
                l
            },
            &best_x,
            &step,
            &opts,
        );
        iterations += r.iterations;
        evaluations += r.evaluations;
        converged = r.converged;
        let improved = feasible_best < best_f;
        let gain = best_f - feasible_best;
        if improved {
            best_f = feasible_best;
            best_x = feasible_x;
        }
        if round > 0 && (!improved || gain <= cfg.tol * (1.0 + best_f.abs())) {
            break;
        }
    }
    StartOutcome {
        x: best_x,
        fx: best_f,
        iterations,
        evaluations,
        converged,
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Fits `kind` to `data` under `cfg.loss`. Deterministic given the seed and
/// sample order.
pub fn fit_fd(kind: ModelKind, data: FitData<'_>, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    match (cfg.loss.uses_nlkv(), data) {
        (true, FitData::Nlkv(_)) | (false, FitData::Lkv(_)) => {}
        (true, _) => {
            return Err(FitError::WrongSamples {
                loss: cfg.loss,
                expected: "NLKV",
            })
        }
        (false, _) => {
            return Err(FitError::WrongSamples {
                loss: cfg.loss,
                expected: "LKV",
            })
        }
    }
    if data.len() == 0 {
        return Err(FitError::NoSamples);
    }
    let omega = match (cfg.loss, data) {
        (LossKind::Ece, FitData::Nlkv(s)) => compute_omega(s)?,
        _ => 0.5,
    };
    let k_max = data.k_max();
    let bounds = Bounds::for_model(kind, &cfg.bounds, k_max);
    bounds.check()?;
    let packed = match data {
        FitData::Nlkv(s) => s.iter().map(loss::Packed::from).collect(),
        FitData::Lkv(_) => Vec::new(),
    };
    let obj = Objective {
        kind,
        loss: cfg.loss,
        data,
        packed,
        omega,
        scale: cfg.scale,
        k_max,
        bounds: &bounds,
    };
    match data {
        FitData::Nlkv(s) => loss::check_nlkv(s)?,
        FitData::Lkv(s) => loss::check_lkv(s)?,
    }
    loss::check_scale(cfg.scale)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<StartOutcome> = None;
    let mut evaluations = 0;
    for s in 0..cfg.starts {
        let x0 = sample_start(&mut rng, kind, &bounds);
        let out = run_start(&obj, x0, cfg);
        log::debug!(
            "{kind}/{} start {s}: loss {} at {:?} ({} iterations)",
            cfg.loss,
            out.fx,
            out.x,
            out.iterations
        );
        evaluations += out.evaluations;
        let better = match &best {
            None => true,
            Some(b) => out
                .fx
                .total_cmp(&b.fx)
                .then_with(|| lexicographic(&out.x, &b.x))
                .is_lt(),
        };
        if better {
            best = Some(out);
        }
    }
    let best = best.ok_or(FitError::NoSamples)?;
    if !best.converged {
        log::warn!("{kind}/{} fit did not converge", cfg.loss);
    }
    Ok(FitResult {
        params: FdParams::from_slice(kind, &best.x)?,
        loss: cfg.loss,
        loss_value: best.fx,
        omega: (cfg.loss == LossKind::Ece).then_some(omega),
        m: data.len(),
        iterations: best.iterations,
        evaluations,
        converged: best.converged,
        starts: cfg.starts,
        seed: cfg.seed,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn greenberg_lkv() -> Vec<LkvSample> {
        let p = FdParams::Greenberg {
            v0: 46.3,
            k_jam: 189.9,
        };
        (0..200)
            .map(|i| {
                let k = 5.0 + i as f64 * 0.9;
                LkvSample {
                    k,
                    v: p.speed(k).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn greenberg_inversion() {
        let s = greenberg_lkv();
        let r = fit_fd(
            ModelKind::Greenberg,
            FitData::Lkv(&s),
            &FitConfig::with_loss(LossKind::Lse),
        )
        .unwrap();
        let p = r.params.to_vec();
        assert!((p[0] / 46.3 - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p[1] / 189.9 - 1.0).abs() < 1e-3, "{p:?}");
        assert!(r.loss_value < 1e-6);
        assert!(r.omega.is_none());
    }

    #[test]
    fn deterministic_given_seed() {
        let s = greenberg_lkv();
        let cfg = FitConfig {
            starts: 4,
            ..FitConfig::with_loss(LossKind::Lse)
        };
        let a = fit_fd(ModelKind::Smulders, FitData::Lkv(&s), &cfg).unwrap();
        let b = fit_fd(ModelKind::Smulders, FitData::Lkv(&s), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn result_is_feasible() {
        let s = greenberg_lkv();
        for kind in ModelKind::ALL {
            let r = fit_fd(kind, FitData::Lkv(&s), &FitConfig::with_loss(LossKind::Lse)).unwrap();
            let k_max = s.iter().map(|s| s.k).fold(0.0, f64::max);
            assert!(validate_params(&r.params, k_max).is_empty(), "{kind}: {}", r.params);
            for (b, v) in r.bounds.0.iter().zip(r.params.to_vec()) {
                assert!(v >= b.lo && v <= b.hi);
            }
        }
    }

    #[test]
    fn loss_and_sample_kind_must_match() {
        let s = greenberg_lkv();
        let e = fit_fd(ModelKind::Greenberg, FitData::Lkv(&s), &FitConfig::default()).unwrap_err();
        assert!(matches!(e, FitError::WrongSamples { .. }));
    }

    #[test]
    fn single_class_is_an_error() {
        use crate::fields::Sign;
        let s: Vec<NlkvSample> = (1..10)
            .map(|i| NlkvSample::new(i as f64 * 10.0, 50.0, Sign::Decelerating))
            .collect();
        let e = fit_fd(ModelKind::Greenberg, FitData::Nlkv(&s), &FitConfig::default()).unwrap_err();
        assert!(matches!(e, FitError::SingleClass { .. }));
    }

    #[test]
    fn rejects_bad_config() {
        let s = greenberg_lkv();
        let cfg = FitConfig {
            starts: 0,
            ..FitConfig::with_loss(LossKind::Lse)
        };
        assert!(matches!(
            fit_fd(ModelKind::Greenberg, FitData::Lkv(&s), &cfg),
            Err(FitError::Config(_))
        ));
    }

    #[test]
    fn smulders_start_respects_ordering() {
        let b = Bounds::for_model(ModelKind::Smulders, &BoundsConfig::default(), 150.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = sample_start(&mut rng, ModelKind::Smulders, &b);
            assert!(x[1] < x[2] && x[1] >= 1.0);
        }
    }
}
