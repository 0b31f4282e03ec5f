//! Periodic solutions: Poincaré iteration for the contraction form, the outer
//! fixed point on the frozen forcing `h`, direct iteration of the full
//! time-`T` map, and continuation in the regularization weight `ε`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cauchy::{self, Form, SampledSource, SchemeConfig, Source, Trajectory, ZeroSource};
use crate::error::{CglError, Result};
use crate::field::{self, apply_i, dphi, dpsi, CField, Grid};
use crate::params::Params;

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: String,
    pub eps: f64,
    pub outer: usize,
    pub iteration: usize,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub maxit: usize,
    /// Record wall-clock time in the iteration log (breaks byte-for-byte reproducibility).
    pub timings: bool,
}

impl PicardOptions {
    pub fn new(tol: f64, maxit: usize) -> Self {
        PicardOptions { tol, maxit, timings: false }
    }

    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.maxit == 0 {
            return Err(CglError::Config(format!(
                "tolerance must be positive and maxit at least 1 (tol = {}, maxit = {})",
                self.tol, self.maxit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicResult {
    pub u0: CField,
    pub trajectory: Trajectory,
    pub periodicity_residual: f64,
    pub pde_residual: f64,
    pub history: Vec<IterationRecord>,
    pub eps_used: f64,
    pub converged: bool,
    /// Final `h` of the outer iteration, sampled at the time nodes.
    pub forcing_h: Option<Vec<CField>>,
    /// Final outer residual, when an outer loop ran.
    pub h_residual: Option<f64>,
}

impl PeriodicResult {
    pub fn history_jsonl(&self) -> String {
        history_jsonl(&self.history)
    }
}

pub fn history_jsonl(history: &[IterationRecord]) -> String {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r).expect("iteration records serialize"));
        s.push('\n');
    }
    s
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Clock { start: Instant::now(), enabled }
    }

    fn stamp(&self) -> Option<f64> {
        self.enabled.then(|| self.start.elapsed().as_secs_f64() * 1e3)
    }
}

fn require_form(cfg: &SchemeConfig, want: Form, what: &str) -> Result<SchemeConfig> {
    match (cfg.form, want) {
        (Form::Ivp, Form::Ivp) | (Form::IvpMu(_), Form::Ivp) | (Form::Full, Form::Full) => Ok(*cfg),
        _ => Err(CglError::Config(format!("{what} needs the {want:?} form, got {:?}", cfg.form))),
    }
}

/// Picard iteration of the contraction-form time-`T` map `U₀ ↦ U(T)`.
pub fn poincare_fixed_point(
    p: &Params,
    f: &dyn Source,
    h: &dyn Source,
    cfg: &SchemeConfig,
    opts: &PicardOptions,
    start: &CField,
) -> Result<PeriodicResult> {
    opts.check()?;
    let cfg = require_form(cfg, Form::Ivp, "poincare_fixed_point")?;
    if !(p.eps > 0.0) {
        return Err(CglError::InvalidParams("poincare_fixed_point needs eps > 0".into()));
    }
    let clock = Clock::new(opts.timings);
    let mut history = Vec::new();
    let mut u = start.clone();
    let mut last: Option<(Trajectory, f64)> = None;
    for it in 1..=opts.maxit {
        let traj = cauchy::solve_cauchy(&u, p.period, p, &cfg, f, h)?;
        let res = field::norm2(&(traj.last() - &u));
        history.push(IterationRecord {
            stage: "poincare".into(),
            eps: p.eps,
            outer: 0,
            iteration: it,
            residual: res,
            elapsed_ms: clock.stamp(),
        });
        if res <= opts.tol {
            last = Some((traj, res));
            break;
        }
        u = traj.last().clone();
        last = Some((traj, res));
    }
    let (traj, res) = last.expect("at least one iteration ran");
    let converged = res <= opts.tol;
    let pde = cauchy::pde_residual(&traj, p, cfg.form, f, h)?;
    Ok(PeriodicResult {
        u0: traj.initial().clone(),
        trajectory: traj,
        periodicity_residual: res,
        pde_residual: pde,
        history,
        eps_used: p.eps,
        converged,
        forcing_h: None,
        h_residual: None,
    })
}

/// `𝓕*(U) = (γ + 1)U − βI∂ψ_q(U)`, the frozen forcing that turns the
/// contraction form into the full equation.
pub fn outer_map(u: &CField, p: &Params) -> CField {
    u.scale(p.gamma + 1.0).axpy(-p.beta, &apply_i(&dpsi(u, p.q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterOptions {
    pub theta: f64,
    pub outer: PicardOptions,
    pub poincare: PicardOptions,
}

impl OuterOptions {
    pub fn new(theta: f64, outer_tol: f64, outer_maxit: usize, poincare_tol: f64, poincare_maxit: usize) -> Self {
        OuterOptions {
            theta,
            outer: PicardOptions::new(outer_tol, outer_maxit),
            poincare: PicardOptions::new(poincare_tol, poincare_maxit),
        }
    }
}

/// Discrete `𝓗ᵀ` distance `√(Σ τ‖a_n − b_n‖²)`.
fn time_l2(a: &[CField], b: &[CField], tau: f64) -> f64 {
    let s = field::kahan_sum(a.iter().zip(b).map(|(x, y)| field::norm2(&(x - y)).powi(2)));
    (tau * s).sqrt()
}

/// Warm-start data for [`outer_fixed_point`].
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub u0: Option<CField>,
    pub h: Option<Vec<CField>>,
}

/// Damped Picard iteration `h ← (1−θ)h + θ𝓕*(U_h)` with `U_h` the periodic
/// solution of the contraction form.
pub fn outer_fixed_point(
    p: &Params,
    f: &dyn Source,
    grid: &Arc<Grid>,
    cfg: &SchemeConfig,
    opts: &OuterOptions,
    warm: &WarmStart,
) -> Result<PeriodicResult> {
    opts.outer.check()?;
    opts.poincare.check()?;
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(CglError::Config(format!("theta must lie in (0, 1], got {}", opts.theta)));
    }
    let inner_cfg = cfg.with_form(Form::Ivp);
    let n = inner_cfg.steps_for(p.period)?;
    let clock = Clock::new(opts.outer.timings);
    let mut u0 = warm.u0.clone().unwrap_or_else(|| CField::zeros(grid.clone()));
    let mut h: Vec<CField> = match &warm.h {
        Some(h) if h.len() == n => h.clone(),
        _ => vec![CField::zeros(grid.clone()); n],
    };
    let mut history = Vec::new();
    let mut best: Option<(PeriodicResult, f64)> = None;
    for outer in 1..=opts.outer.maxit {
        let hs = SampledSource::new(p.period, h.clone())?;
        let mut inner = poincare_fixed_point(p, f, &hs, &inner_cfg, &opts.poincare, &u0)?;
        for mut r in inner.history.drain(..) {
            r.outer = outer;
            r.elapsed_ms = clock.stamp();
            history.push(r);
        }
        let g: Vec<CField> = inner.trajectory.states[..n].iter().map(|u| outer_map(u, p)).collect();
        let res = time_l2(&h, &g, inner_cfg.tau);
        history.push(IterationRecord {
            stage: "outer".into(),
            eps: p.eps,
            outer,
            iteration: outer,
            residual: res,
            elapsed_ms: clock.stamp(),
        });
        u0 = inner.u0.clone();
        let done = res <= opts.outer.tol && inner.converged;
        let keep_h = h.clone();
        if !done {
            for (hk, gk) in h.iter_mut().zip(&g) {
                *hk = hk.scale(1.0 - opts.theta).axpy(opts.theta, gk);
            }
        }
        inner.forcing_h = Some(keep_h);
        inner.h_residual = Some(res);
        inner.converged = done;
        if best.as_ref().is_none_or(|(_, r)| res < *r) || done {
            best = Some((inner, res));
        }
        if done {
            break;
        }
    }
    let (mut result, _) = best.expect("at least one outer iteration ran");
    result.pde_residual = cauchy::pde_residual(&result.trajectory, p, Form::Full, f, &ZeroSource)?;
    result.history = history;
    Ok(result)
}

/// Picard iteration of the full-equation time-`T` map.
pub fn direct_poincare(
    p: &Params,
    f: &dyn Source,
    cfg: &SchemeConfig,
    opts: &PicardOptions,
    start: &CField,
) -> Result<PeriodicResult> {
    opts.check()?;
    let cfg = require_form(cfg, Form::Full, "direct_poincare")?;
    let clock = Clock::new(opts.timings);
    let initial_norm = field::norm2(start).max(f64::MIN_POSITIVE);
    let mut history = Vec::new();
    let mut u = start.clone();
    let mut last: Option<(Trajectory, f64)> = None;
    let mut diverged = false;
    for it in 1..=opts.maxit {
        let traj = cauchy::solve_cauchy(&u, p.period, p, &cfg, f, &ZeroSource)?;
        let res = field::norm2(&(traj.last() - &u));
        history.push(IterationRecord {
            stage: "direct".into(),
            eps: p.eps,
            outer: 0,
            iteration: it,
            residual: res,
            elapsed_ms: clock.stamp(),
        });
        let next = traj.last().clone();
        last = Some((traj, res));
        if res <= opts.tol {
            break;
        }
        if field::norm2(&next) > 1e6 * initial_norm.max(1.0) {
            diverged = true;
            break;
        }
        u = next;
    }
    let (traj, res) = last.expect("at least one iteration ran");
    let pde = cauchy::pde_residual(&traj, p, Form::Full, f, &ZeroSource)?;
    Ok(PeriodicResult {
        u0: traj.initial().clone(),
        trajectory: traj,
        periodicity_residual: res,
        pde_residual: pde,
        history,
        eps_used: p.eps,
        converged: !diverged && res <= opts.tol,
        forcing_h: None,
        h_residual: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodicMethod {
    Outer,
    Direct,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub schedule: Vec<f64>,
    pub stages: Vec<PeriodicResult>,
    /// `sup_t ‖U_{ε_k} − U_{ε_{k+1}}‖₂` for consecutive stages.
    pub cauchy_differences: Vec<f64>,
    /// `v(ε) = sup_t ‖ε|U_ε|^{r−2}U_ε‖_{L^{r/(r−1)}}`.
    pub vanishing: Vec<f64>,
    /// Quantities expected to stay bounded uniformly in `ε`, per stage.
    pub uniform: Vec<BTreeMap<String, f64>>,
    /// Residual of the unregularized equation at the last stage.
    pub final_residual: f64,
    pub converged: bool,
}

impl ContinuationResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schedule": self.schedule,
            "cauchy_differences": self.cauchy_differences,
            "vanishing": self.vanishing,
            "uniform": self.uniform,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "stages": self.stages.iter().map(|s| serde_json::json!({
                "eps": s.eps_used,
                "converged": s.converged,
                "periodicity_residual": s.periodicity_residual,
                "pde_residual": s.pde_residual,
                "h_residual": s.h_residual,
            })).collect::<Vec<_>>(),
        })
    }
}

/// ε-uniform quantities along a stored orbit.
pub fn uniform_diagnostics(traj: &Trajectory, p: &Params) -> BTreeMap<String, f64> {
    let tau = traj.tau * traj.stride as f64;
    let mut m = BTreeMap::new();
    let mut sup = |k: &str, v: f64| {
        let e = m.entry(k.to_string()).or_insert(0.0f64);
        *e = e.max(v);
    };
    for u in &traj.states {
        sup("sup_norm2_sq", field::norm2(u).powi(2));
        sup("sup_phi", field::phi(u));
        sup("sup_psi_q", field::psi(u, p.q));
        sup("sup_eps_psi_r", p.eps * field::psi(u, p.r));
    }
    let integral = |g: &dyn Fn(&CField) -> f64| -> f64 {
        tau * field::kahan_sum(traj.states[1..].iter().map(g))
    };
    m.insert("int_phi".into(), integral(&|u| field::phi(u)));
    m.insert("int_psi_q".into(), integral(&|u| field::psi(u, p.q)));
    m.insert("int_eps_psi_r".into(), integral(&|u| p.eps * field::psi(u, p.r)));
    m.insert("int_dphi_sq".into(), integral(&|u| field::norm2(&dphi(u)).powi(2)));
    m.insert("int_dpsi_q_sq".into(), integral(&|u| field::norm2(&dpsi(u, p.q)).powi(2)));
    m.insert("int_eps2_dpsi_r_sq".into(), integral(&|u| p.eps * p.eps * field::norm2(&dpsi(u, p.r)).powi(2)));
    let dudt = field::kahan_sum(
        traj.states
            .windows(2)
            .map(|w| field::norm2(&(&w[1] - &w[0])).powi(2) / tau),
    );
    m.insert("int_dudt_sq".into(), dudt);
    m
}

/// `sup_t ε‖U(t)‖_r^{r−1}`, the dual-norm size of the regularizing term.
pub fn vanishing_norm(traj: &Trajectory, eps: f64, r: f64) -> f64 {
    traj.states
        .iter()
        .map(|u| eps * field::lp_norm(u, r).expect("r >= 1").powf(r - 1.0))
        .fold(0.0, f64::max)
}

/// Solves the regularized periodic problem along a decreasing `ε` schedule
/// with warm starts.
pub fn epsilon_continuation(
    p: &Params,
    f: &dyn Source,
    grid: &Arc<Grid>,
    schedule: &[f64],
    cfg: &SchemeConfig,
    method: PeriodicMethod,
    opts: &OuterOptions,
) -> Result<ContinuationResult> {
    if schedule.is_empty() || schedule.iter().any(|e| !(*e > 0.0)) {
        return Err(CglError::Config("continuation schedule must be non-empty and positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CglError::Config("continuation schedule must be strictly decreasing".into()));
    }
    let mut stages: Vec<PeriodicResult> = Vec::new();
    let mut warm = WarmStart::default();
    for &eps in schedule {
        let pe = p.with_eps(eps);
        let res = match method {
            PeriodicMethod::Outer => outer_fixed_point(&pe, f, grid, cfg, opts, &warm)?,
            PeriodicMethod::Direct => {
                let start = warm.u0.clone().unwrap_or_else(|| CField::zeros(grid.clone()));
                let c = cfg.with_form(Form::Full);
                let mut r = direct_poincare(&pe, f, &c, &opts.outer, &start)?;
                for rec in &mut r.history {
                    rec.stage = "continuation".into();
                }
                r
            }
        };
        warm = WarmStart { u0: Some(res.u0.clone()), h: res.forcing_h.clone() };
        let ok = res.converged;
        stages.push(res);
        if !ok {
            break;
        }
    }
    let cauchy_differences = stages
        .windows(2)
        .map(|w| w[0].trajectory.sup_distance(&w[1].trajectory))
        .collect::<Result<Vec<_>>>()?;
    let vanishing = stages.iter().map(|s| vanishing_norm(&s.trajectory, s.eps_used, p.r)).collect();
    let uniform = stages.iter().map(|s| uniform_diagnostics(&s.trajectory, &p.with_eps(s.eps_used))).collect();
    let last = stages.last().expect("at least one stage ran");
    let final_residual = cauchy::pde_residual(&last.trajectory, &p.with_eps(0.0), Form::Full, f, &ZeroSource)?;
    let converged = stages.len() == schedule.len() && stages.iter().all(|s| s.converged);
    Ok(ContinuationResult {
        schedule: schedule.to_vec(),
        stages,
        cauchy_differences,
        vanishing,
        uniform,
        final_residual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::{EigenmodeSource, Order};
    use crate::field::{inner, norm2};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(n, 1.0).unwrap())
    }

    #[test]
    fn zero_data_gives_zero_orbit_in_one_check() {
        let g = line(15);
        let p = Params::default();
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let z = CField::zeros(g.clone());
        let r = poincare_fixed_point(&p, &ZeroSource, &ZeroSource, &cfg, &PicardOptions::new(1e-12, 5), &z).unwrap();
        assert!(r.converged);
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.u0, z);

        let opts = OuterOptions::new(0.5, 1e-10, 5, 1e-12, 50);
        let r = outer_fixed_point(&p, &ZeroSource, &g, &cfg, &opts, &WarmStart::default()).unwrap();
        assert!(r.converged && norm2(&r.u0) == 0.0);

        let c = epsilon_continuation(&p, &ZeroSource, &g, &[1e-1, 1e-2], &cfg, PeriodicMethod::Outer, &opts).unwrap();
        assert!(c.converged);
        assert!(c.vanishing.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trivial_outer_map_converges_in_one_iteration() {
        let g = line(15);
        let p = Params { beta: 0.0, gamma: -1.0, ..Params::default() };
        let u = CField::from_real_profile(g.clone(), &g.sine_mode(&[1]), 1.0, 0.2);
        assert_eq!(norm2(&outer_map(&u, &p)), 0.0);
        let f = EigenmodeSource::constant(vec![1], 5.0);
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let opts = OuterOptions::new(0.5, 1e-10, 5, 1e-12, 200);
        let r = outer_fixed_point(&p, &f, &g, &cfg, &opts, &WarmStart::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.history.iter().filter(|h| h.stage == "outer").count(), 1);
    }

    #[test]
    fn outer_map_norm_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = line(31);
        let p = Params { gamma: 0.7, beta: -1.3, ..Params::default() };
        let u = CField::random(g, 1.5, &mut rng);
        let lhs = norm2(&outer_map(&u, &p)).powi(2);
        let rhs = p.beta.powi(2) * norm2(&dpsi(&u, p.q)).powi(2) + (p.gamma + 1.0).powi(2) * norm2(&u).powi(2);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        assert!(inner(&apply_i(&dpsi(&u, p.q)), &u).unwrap().abs() < 1e-13);
    }

    #[test]
    fn poincare_matches_contraction_oracle_and_rate() {
        let g = line(31);
        let p = Params { kappa: 0.0, eps: 1e-300, beta: 0.0, alpha: 1.0, lambda: 1.0, ..Params::default() };
        let omega = 2.0 * std::f64::consts::PI;
        let f = EigenmodeSource { mode: vec![1], amplitude: 1.0, omega, phase: 0.0 };
        let tau = 1e-3;
        let cfg = SchemeConfig::new(tau, Order::Lie, Form::Ivp);
        let r = poincare_fixed_point(&p, &f, &ZeroSource, &cfg, &PicardOptions::new(1e-11, 100), &CField::zeros(g.clone()))
            .unwrap();
        assert!(r.converged);
        let mu1 = g.eigenvalue(&[1]);
        let c = Complex64::new(1.0, 0.0) / Complex64::new(p.lambda * mu1 + 1.0, omega + p.alpha * mu1);
        let e = CField::from_real_profile(g.clone(), &g.sine_mode(&[1]), 1.0, 0.0);
        let d = Complex64::new(inner(&r.u0, &e).unwrap(), inner(&r.u0, &apply_i(&e)).unwrap()) / norm2(&e).powi(2);
        assert!((d - c).norm() / c.norm() <= 10.0 * tau);
        let res: Vec<f64> = r.history.iter().map(|h| h.residual).collect();
        let bound = (1.0 + tau).powf(-1.0 / tau) + 1e-3;
        for w in res.windows(2) {
            if w[1] > 1e-9 {
                assert!(w[1] / w[0] <= bound, "ratio {}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn direct_dissipative_case_goes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = line(15);
        let p = Params { gamma: -1.0, ..Params::default() };
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Full);
        let start = CField::random(g, 1.0, &mut rng);
        let r = direct_poincare(&p, &ZeroSource, &cfg, &PicardOptions::new(1e-10, 100), &start).unwrap();
        assert!(r.converged);
        assert!(norm2(&r.u0) < 1e-9);
    }

    #[test]
    fn forced_nonconvergence_is_reported() {
        let g = line(15);
        let p = Params::default();
        let f = EigenmodeSource::constant(vec![1], 10.0);
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let opts = OuterOptions::new(0.5, 1e-12, 1, 1e-12, 200);
        let r = outer_fixed_point(&p, &f, &g, &cfg, &opts, &WarmStart::default()).unwrap();
        assert!(!r.converged);
        assert!(r.h_residual.unwrap() > 1e-12);
        assert!(!r.history_jsonl().contains("elapsed_ms"));
    }

    #[test]
    fn schedule_validation() {
        let g = line(7);
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let opts = OuterOptions::new(0.5, 1e-8, 5, 1e-10, 50);
        let p = Params::default();
        assert!(epsilon_continuation(&p, &ZeroSource, &g, &[1e-2, 1e-1], &cfg, PeriodicMethod::Outer, &opts).is_err());
        assert!(epsilon_continuation(&p, &ZeroSource, &g, &[], &cfg, PeriodicMethod::Outer, &opts).is_err());
    }
}
