//! Time stepping for the frozen-forcing and full evolution equations.
//!
//! All three forms share the splitting `source → pointwise → linear →
//! identity`, with the stiff pieces taken implicitly through resolvents.
//! Sources are sampled at the end of each Lie step; on linear problems this
//! makes the Lie scheme coincide with backward Euler. The Strang scheme runs
//! the explicit half steps, a trapezoidal source step and the implicit half
//! steps in reverse order, which is Crank–Nicolson on linear problems.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CglError, Result};
use crate::field::{self, apply_i, dphi, dpsi, CField, Grid};
use crate::params::Params;
use crate::proximal::{self, PowerTerm, ResolventConfig, RotatedPower, YosidaOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Lie,
    Strang,
}

/// Which evolution equation is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Frozen forcing `h`, identity damping, skew diffusion replaced by its Yosida approximation.
    IvpMu(f64),
    /// Frozen forcing `h` with identity damping (the contraction form).
    Ivp,
    /// The regularized equation with `(κ + βI)∂ψ_q` and `−γU`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub tau: f64,
    pub order: Order,
    pub form: Form,
    pub linear_tol: f64,
    pub max_linear_iter: usize,
}

impl SchemeConfig {
    pub fn new(tau: f64, order: Order, form: Form) -> Self {
        SchemeConfig {
            tau,
            order,
            form,
            linear_tol: proximal::DEFAULT_LINEAR_TOL,
            max_linear_iter: proximal::DEFAULT_MAX_ITER,
        }
    }

    pub fn with_form(mut self, form: Form) -> Self {
        self.form = form;
        self
    }

    /// Number of steps covering `[0, period]`; `tau` must divide `period`.
    pub fn steps_for(&self, period: f64) -> Result<usize> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(CglError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if period == 0.0 {
            return Ok(0);
        }
        let n = (period / self.tau).round();
        if n < 1.0 || (n * self.tau - period).abs() > 1e-12 * period.max(1.0) {
            return Err(CglError::Config(format!("tau = {} does not divide T = {period}", self.tau)));
        }
        Ok(n as usize)
    }

    fn check(&self, p: &Params) -> Result<()> {
        self.steps_for(self.tau)?;
        if let Form::IvpMu(mu) = self.form {
            if !(mu > 0.0) {
                return Err(CglError::Config(format!("Yosida parameter must be positive, got {mu}")));
            }
        }
        if self.form == Form::Full && self.tau * p.gamma >= 1.0 {
            return Err(CglError::Config(format!(
                "tau*gamma = {} must be below 1 for the implicit growth step",
                self.tau * p.gamma
            )));
        }
        if !(p.lambda > 0.0) {
            return Err(CglError::InvalidParams(format!("lambda must be positive, got {}", p.lambda)));
        }
        Ok(())
    }
}

/// A time-dependent source term sampled on a grid.
pub trait Source: Send + Sync {
    fn sample(&self, t: f64, grid: &Arc<Grid>) -> Result<CField>;

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSource;

impl Source for ZeroSource {
    fn sample(&self, _t: f64, grid: &Arc<Grid>) -> Result<CField> {
        Ok(CField::zeros(grid.clone()))
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `amplitude · e_k(x) · (cos(ωt + phase), sin(ωt + phase))` with `e_k` the discrete sine mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenmodeSource {
    pub mode: Vec<usize>,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl EigenmodeSource {
    pub fn constant(mode: Vec<usize>, amplitude: f64) -> Self {
        EigenmodeSource { mode, amplitude, omega: 0.0, phase: 0.0 }
    }
}

impl Source for EigenmodeSource {
    fn sample(&self, t: f64, grid: &Arc<Grid>) -> Result<CField> {
        if self.mode.len() != grid.dim() || self.mode.contains(&0) {
            return Err(CglError::Config(format!(
                "eigenmode {:?} does not fit a {}-D grid",
                self.mode,
                grid.dim()
            )));
        }
        let profile = grid.sine_mode(&self.mode);
        Ok(CField::from_real_profile(grid.clone(), &profile, self.amplitude, self.omega * t + self.phase))
    }

    fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }
}

/// Periodic piecewise-linear interpolation of fields given at `t_k = k·period/N`, `k < N`.
#[derive(Debug, Clone)]
pub struct SampledSource {
    period: f64,
    fields: Vec<CField>,
}

impl SampledSource {
    pub fn new(period: f64, fields: Vec<CField>) -> Result<Self> {
        if fields.is_empty() || !(period > 0.0) {
            return Err(CglError::Domain("sampled source needs a positive period and at least one field".into()));
        }
        for f in &fields[1..] {
            fields[0].check_grid(f)?;
        }
        Ok(SampledSource { period, fields })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn fields(&self) -> &[CField] {
        &self.fields
    }
}

impl Source for SampledSource {
    fn sample(&self, t: f64, grid: &Arc<Grid>) -> Result<CField> {
        let n = self.fields.len();
        if **self.fields[0].grid_arc() != **grid {
            return Err(CglError::GridMismatch("sampled source lives on a different grid".into()));
        }
        let x = (t / self.period).rem_euclid(1.0) * n as f64;
        let mut k = x.floor() as usize;
        let mut w = x - k as f64;
        // snap onto nodes so that node times reproduce stored fields exactly
        if w < 1e-9 {
            w = 0.0;
        } else if w > 1.0 - 1e-9 {
            w = 0.0;
            k += 1;
        }
        let a = &self.fields[k % n];
        if w == 0.0 {
            return Ok(a.clone());
        }
        let b = &self.fields[(k + 1) % n];
        Ok(a.scale(1.0 - w).axpy(w, b))
    }

    fn is_zero(&self) -> bool {
        self.fields.iter().all(|f| f.data().iter().all(|&v| v == 0.0))
    }
}

/// Source given by a closure of time.
pub struct FnSource<F: Fn(f64, &Arc<Grid>) -> CField + Send + Sync>(pub F);

impl<F: Fn(f64, &Arc<Grid>) -> CField + Send + Sync> Source for FnSource<F> {
    fn sample(&self, t: f64, grid: &Arc<Grid>) -> Result<CField> {
        Ok((self.0)(t, grid))
    }
}

fn as_step_error(e: CglError, tau: f64) -> CglError {
    match e {
        CglError::LinearSolver { iterations, residual } => CglError::StepSize {
            tau,
            reason: format!("linear resolvent stalled after {iterations} iterations (residual {residual:.3e})"),
        },
        other => other,
    }
}

struct Substeps<'a> {
    p: &'a Params,
    cfg: &'a SchemeConfig,
}

impl Substeps<'_> {
    fn source(&self, u: &CField, dt: f64, t: f64, f: &dyn Source, h: &dyn Source) -> Result<CField> {
        let g = u.grid_arc();
        let mut out = u.clone();
        if !f.is_zero() {
            out.add_scaled_in_place(dt, &f.sample(t, g)?);
        }
        if self.cfg.form != Form::Full && !h.is_zero() {
            out.add_scaled_in_place(dt, &h.sample(t, g)?);
        }
        if let Form::IvpMu(mu) = self.cfg.form {
            if self.p.alpha != 0.0 {
                let rc = ResolventConfig::with_tolerance(mu, self.cfg.linear_tol, self.cfg.max_linear_iter)?;
                let y = proximal::yosida(u, &YosidaOperator::Phi, &rc).map_err(|e| as_step_error(e, self.cfg.tau))?;
                out.add_scaled_in_place(-dt * self.p.alpha, &apply_i(&y));
            }
        }
        Ok(out)
    }

    /// Source step with the trapezoidal average of the samples at `t` and `t + dt`.
    fn source_average(&self, u: &CField, dt: f64, t: f64, f: &dyn Source, h: &dyn Source) -> Result<CField> {
        let v = self.source(u, 0.5 * dt, t, f, h)?;
        let w = self.source(u, 0.5 * dt, t + dt, f, h)?;
        Ok(v.axpy(1.0, &w).axpy(-1.0, u))
    }

    fn pointwise_implicit(&self, u: &CField, dt: f64) -> Result<CField> {
        let p = self.p;
        match self.cfg.form {
            Form::Full => {
                let op = RotatedPower { tau: dt, kappa: p.kappa, beta: p.beta, q: p.q, eps: p.eps, r: p.r };
                proximal::resolvent_rotated_power(u, &op)
            }
            _ => proximal::resolvent_power_sum(u, dt, &self.power_terms()),
        }
    }

    fn pointwise_explicit(&self, u: &CField, dt: f64) -> CField {
        let p = self.p;
        let dq = dpsi(u, p.q);
        let mut out = u.axpy(-dt * p.kappa, &dq);
        if p.eps != 0.0 {
            out.add_scaled_in_place(-dt * p.eps, &dpsi(u, p.r));
        }
        if self.cfg.form == Form::Full && p.beta != 0.0 {
            out.add_scaled_in_place(-dt * p.beta, &apply_i(&dq));
        }
        out
    }

    fn power_terms(&self) -> Vec<PowerTerm> {
        let mut terms = vec![PowerTerm::new(self.p.kappa, self.p.q)];
        if self.p.eps != 0.0 {
            terms.push(PowerTerm::new(self.p.eps, self.p.r));
        }
        terms
    }

    fn skew(&self) -> f64 {
        match self.cfg.form {
            Form::IvpMu(_) => 0.0,
            _ => self.p.alpha / self.p.lambda,
        }
    }

    fn linear_implicit(&self, u: &CField, dt: f64) -> Result<CField> {
        let rc = ResolventConfig::with_tolerance(dt * self.p.lambda, self.cfg.linear_tol, self.cfg.max_linear_iter)?;
        proximal::resolvent_phi(u, self.skew(), &rc).map_err(|e| as_step_error(e, self.cfg.tau))
    }

    fn linear_explicit(&self, u: &CField, dt: f64) -> CField {
        let d = dphi(u);
        let mut out = u.axpy(-dt * self.p.lambda, &d);
        let s = self.skew();
        if s != 0.0 {
            out.add_scaled_in_place(-dt * self.p.lambda * s, &apply_i(&d));
        }
        out
    }

    /// Coefficient `c` of the identity term `c·U` on the left-hand side.
    fn identity_coeff(&self) -> f64 {
        match self.cfg.form {
            Form::Full => -self.p.gamma,
            _ => 1.0,
        }
    }
}

/// Advances `u` from `t` to `t + τ`.
pub fn step(u: &CField, t: f64, p: &Params, cfg: &SchemeConfig, f: &dyn Source, h: &dyn Source) -> Result<CField> {
    cfg.check(p)?;
    step_unchecked(u, t, p, cfg, f, h)
}

fn step_unchecked(u: &CField, t: f64, p: &Params, cfg: &SchemeConfig, f: &dyn Source, h: &dyn Source) -> Result<CField> {
    let s = Substeps { p, cfg };
    let tau = cfg.tau;
    let c = s.identity_coeff();
    match cfg.order {
        Order::Lie => {
            let v = s.source(u, tau, t + tau, f, h)?;
            let v = s.pointwise_implicit(&v, tau)?;
            let v = s.linear_implicit(&v, tau)?;
            Ok(v.scale(1.0 / (1.0 + tau * c)))
        }
        Order::Strang => {
            // explicit halves, trapezoidal source, then the adjoint implicit halves
            let half = 0.5 * tau;
            let v = s.pointwise_explicit(u, half);
            let v = v.scale(1.0 - half * c);
            let v = s.linear_explicit(&v, half);
            let v = s.source_average(&v, tau, t, f, h)?;
            let v = s.linear_implicit(&v, half)?;
            let v = v.scale(1.0 / (1.0 + half * c));
            s.pointwise_implicit(&v, half)
        }
    }
}

/// Diagnostics recorded after each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub norm2: f64,
    pub phi: f64,
    pub psi_q: f64,
    pub psi_r: f64,
    /// Midpoint residual of the step ending at `t` (0 for the initial record).
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CField>,
    pub stride: usize,
    pub tau: f64,
    pub diagnostics: Vec<StepRecord>,
}

impl Trajectory {
    pub fn initial(&self) -> &CField {
        &self.states[0]
    }

    pub fn last(&self) -> &CField {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// `sup_t ‖U(t) − V(t)‖₂` over common stored states.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.states.len() != other.states.len() {
            return Err(CglError::Domain("trajectories have different lengths".into()));
        }
        let mut m = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            a.check_grid(b)?;
            m = m.max(field::norm2(&(a - b)));
        }
        Ok(m)
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("t,norm2,phi,psi_q,psi_r,residual\n");
        for d in &self.diagnostics {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                d.t, d.norm2, d.phi, d.psi_q, d.psi_r, d.residual
            ));
        }
        s
    }
}

/// Equation residual `dU/dt + N(U) − F` with `N` the operator of the chosen form.
pub fn equation_operator(u: &CField, t: f64, p: &Params, form: Form, f: &dyn Source, h: &dyn Source) -> Result<CField> {
    let g = u.grid_arc();
    let d = dphi(u);
    let dq = dpsi(u, p.q);
    let mut out = d.scale(p.lambda);
    match form {
        Form::IvpMu(mu) => {
            let rc = ResolventConfig::new(mu)?;
            let y = proximal::yosida(u, &YosidaOperator::Phi, &rc)?;
            out.add_scaled_in_place(p.alpha, &apply_i(&y));
        }
        _ => out.add_scaled_in_place(p.alpha, &apply_i(&d)),
    }
    if p.eps != 0.0 {
        out.add_scaled_in_place(p.eps, &dpsi(u, p.r));
    }
    out.add_scaled_in_place(p.kappa, &dq);
    match form {
        Form::Full => {
            out.add_scaled_in_place(p.beta, &apply_i(&dq));
            out.add_scaled_in_place(-p.gamma, u);
        }
        _ => {
            out.add_scaled_in_place(1.0, u);
            if !h.is_zero() {
                out.add_scaled_in_place(-1.0, &h.sample(t, g)?);
            }
        }
    }
    if !f.is_zero() {
        out.add_scaled_in_place(-1.0, &f.sample(t, g)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn step_residual(
    a: &CField,
    b: &CField,
    t0: f64,
    tau: f64,
    p: &Params,
    form: Form,
    f: &dyn Source,
    h: &dyn Source,
) -> Result<f64> {
    let mid = a.scale(0.5).axpy(0.5, b);
    let n = equation_operator(&mid, t0 + 0.5 * tau, p, form, f, h)?;
    let r = (b - a).scale(1.0 / tau).axpy(1.0, &n);
    Ok(field::norm2(&r))
}

fn record(u: &CField, t: f64, p: &Params, residual: f64) -> StepRecord {
    StepRecord {
        t,
        norm2: field::norm2(u),
        phi: field::phi(u),
        psi_q: field::psi(u, p.q),
        psi_r: field::psi(u, p.r),
        residual,
    }
}

/// Runs `T/τ` steps from `u0`, storing every state.
pub fn solve_cauchy(
    u0: &CField,
    period: f64,
    p: &Params,
    cfg: &SchemeConfig,
    f: &dyn Source,
    h: &dyn Source,
) -> Result<Trajectory> {
    solve_cauchy_strided(u0, period, p, cfg, f, h, 1)
}

/// Like [`solve_cauchy`] but keeps only every `stride`-th state (and the last).
pub fn solve_cauchy_strided(
    u0: &CField,
    period: f64,
    p: &Params,
    cfg: &SchemeConfig,
    f: &dyn Source,
    h: &dyn Source,
    stride: usize,
) -> Result<Trajectory> {
    cfg.check(p)?;
    let n = cfg.steps_for(period)?;
    let stride = stride.max(1);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![u0.clone()],
        stride,
        tau: cfg.tau,
        diagnostics: vec![record(u0, 0.0, p, 0.0)],
    };
    let mut u = u0.clone();
    for k in 0..n {
        let t = k as f64 * cfg.tau;
        let next = step_unchecked(&u, t, p, cfg, f, h)?;
        if !next.is_finite() {
            return Err(CglError::StepSize { tau: cfg.tau, reason: format!("non-finite state after step {}", k + 1) });
        }
        let res = step_residual(&u, &next, t, cfg.tau, p, cfg.form, f, h)?;
        let t1 = (k + 1) as f64 * cfg.tau;
        traj.diagnostics.push(record(&next, t1, p, res));
        if (k + 1) % stride == 0 || k + 1 == n {
            traj.times.push(t1);
            traj.states.push(next.clone());
        }
        u = next;
    }
    Ok(traj)
}

/// Time-`T` map only, without recording.
pub fn time_map(u0: &CField, period: f64, p: &Params, cfg: &SchemeConfig, f: &dyn Source, h: &dyn Source) -> Result<CField> {
    cfg.check(p)?;
    let n = cfg.steps_for(period)?;
    let mut u = u0.clone();
    for k in 0..n {
        u = step_unchecked(&u, k as f64 * cfg.tau, p, cfg, f, h)?;
        if !u.is_finite() {
            return Err(CglError::StepSize { tau: cfg.tau, reason: format!("non-finite state after step {}", k + 1) });
        }
    }
    Ok(u)
}

/// Largest midpoint residual over the steps of a stride-1 trajectory.
pub fn pde_residual(traj: &Trajectory, p: &Params, form: Form, f: &dyn Source, h: &dyn Source) -> Result<f64> {
    if traj.stride != 1 {
        return Err(CglError::Domain("pde_residual needs a trajectory stored with stride 1".into()));
    }
    let mut m = 0.0f64;
    for k in 0..traj.states.len().saturating_sub(1) {
        let tau = traj.times[k + 1] - traj.times[k];
        let r = step_residual(&traj.states[k], &traj.states[k + 1], traj.times[k], tau, p, form, f, h)?;
        m = m.max(r);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::norm2;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(n, 1.0).unwrap())
    }

    fn linear_params() -> Params {
        Params { lambda: 1.0, kappa: 0.0, alpha: 1.0, beta: 0.0, gamma: 0.0, eps: 0.0, ..Params::default() }
    }

    #[test]
    fn zero_is_fixed_for_every_form() {
        let g = line(15);
        let z = CField::zeros(g.clone());
        let p = Params::default();
        for form in [Form::Ivp, Form::IvpMu(0.1), Form::Full] {
            for order in [Order::Lie, Order::Strang] {
                let cfg = SchemeConfig::new(0.01, order, form);
                assert_eq!(step(&z, 0.0, &p, &cfg, &ZeroSource, &ZeroSource).unwrap(), z);
            }
        }
    }

    #[test]
    fn one_linear_lie_step_matches_complex_division() {
        let g = line(31);
        let lam = g.eigenvalue(&[1]);
        let e = CField::from_real_profile(g.clone(), &g.sine_mode(&[1]), 1.0, 0.3);
        let p = linear_params();
        let tau = 0.01;
        for (form, damp) in [(Form::Full, 0.0), (Form::Ivp, 1.0)] {
            let cfg = SchemeConfig::new(tau, Order::Lie, form);
            let v = step(&e, 0.0, &p, &cfg, &ZeroSource, &ZeroSource).unwrap();
            let factor = Complex64::new(1.0, 0.0) / (Complex64::new(1.0 + tau * p.lambda * lam, tau * p.alpha * lam) * (1.0 + tau * damp));
            let expect = e.map_nodes(|x| {
                let z = factor * Complex64::new(x[0], x[1]);
                [z.re, z.im]
            });
            assert!(norm2(&(&v - &expect)) < 1e-10 * norm2(&e));
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let g = line(7);
        let u = CField::from_real_profile(g.clone(), &g.sine_mode(&[1]), 1.0, 0.0);
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let tr = solve_cauchy(&u, 0.0, &Params::default(), &cfg, &ZeroSource, &ZeroSource).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.states[0], u);
    }

    #[test]
    fn rejects_bad_configs() {
        let g = line(7);
        let u = CField::zeros(g);
        let p = Params { gamma: 200.0, ..Params::default() };
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Full);
        assert!(matches!(step(&u, 0.0, &p, &cfg, &ZeroSource, &ZeroSource), Err(CglError::Config(_))));
        let cfg = SchemeConfig::new(0.3, Order::Lie, Form::Ivp);
        assert!(solve_cauchy(&u, 1.0, &Params::default(), &cfg, &ZeroSource, &ZeroSource).is_err());
    }

    #[test]
    fn steady_state_oracle() {
        let g = line(31);
        let p = Params { lambda: 1.0, kappa: 0.0, alpha: 0.0, beta: 0.0, gamma: 0.0, eps: 0.0, ..Params::default() };
        let f = EigenmodeSource::constant(vec![1], 1.0);
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Full);
        let u0 = CField::zeros(g.clone());
        let tr = solve_cauchy_strided(&u0, 20.0, &p, &cfg, &f, &ZeroSource, 2000).unwrap();
        let lam = g.eigenvalue(&[1]);
        let expect = CField::from_real_profile(g.clone(), &g.sine_mode(&[1]), 1.0 / lam, 0.0);
        assert!(norm2(&(tr.last() - &expect)) <= 1e-8);
    }

    #[test]
    fn residual_controls() {
        let g = line(15);
        let p = Params::default();
        let z = CField::zeros(g.clone());
        let cfg = SchemeConfig::new(0.1, Order::Lie, Form::Full);
        let tr = solve_cauchy(&z, 1.0, &p, &cfg, &ZeroSource, &ZeroSource).unwrap();
        assert_eq!(pde_residual(&tr, &p, Form::Full, &ZeroSource, &ZeroSource).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states: Vec<CField> = (0..5).map(|_| CField::random(g.clone(), 1.0, &mut rng)).collect();
        let fake = Trajectory {
            times: (0..5).map(|k| k as f64 * 0.1).collect(),
            states,
            stride: 1,
            tau: 0.1,
            diagnostics: vec![],
        };
        assert!(pde_residual(&fake, &p, Form::Full, &ZeroSource, &ZeroSource).unwrap() > 1.0);
    }

    #[test]
    fn lie_residual_is_first_order_on_exact_mode() {
        // exact solution e·exp(−(λ+iα)μ₁ t) sampled analytically
        let g = line(31);
        let p = linear_params();
        let lam = g.eigenvalue(&[1]);
        let prof = g.sine_mode(&[1]);
        let rate = Complex64::new(p.lambda * lam, p.alpha * lam);
        let residual = |tau: f64| {
            let n = (0.05 / tau).round() as usize;
            let times: Vec<f64> = (0..=n).map(|k| k as f64 * tau).collect();
            let states = times
                .iter()
                .map(|&t| {
                    let z = (-rate * t).exp();
                    CField::from_real_profile(g.clone(), &prof, z.norm(), z.arg())
                })
                .collect();
            let tr = Trajectory { times, states, stride: 1, tau, diagnostics: vec![] };
            pde_residual(&tr, &p, Form::Full, &ZeroSource, &ZeroSource).unwrap()
        };
        let (a, b) = (residual(1e-3), residual(5e-4));
        assert!(a > 0.0 && b > 0.0);
        // midpoint evaluation is second order on the exact solution
        assert!(a / b > 1.9, "ratio {}", a / b);
    }

    #[test]
    fn sampled_source_interpolates() {
        let g = line(3);
        let a = CField::from_data(g.clone(), vec![1.0; 6]).unwrap();
        let b = CField::from_data(g.clone(), vec![3.0; 6]).unwrap();
        let s = SampledSource::new(1.0, vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(s.sample(0.0, &g).unwrap(), a);
        assert_eq!(s.sample(0.5, &g).unwrap(), b);
        assert_eq!(s.sample(1.0, &g).unwrap(), a);
        assert!((s.sample(0.25, &g).unwrap().data()[0] - 2.0).abs() < 1e-15);
        assert!((s.sample(0.75, &g).unwrap().data()[0] - 2.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn contraction_form_step_contracts(seed in any::<u64>(), order_lie in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = line(31);
            let p = Params::default();
            let tau = 0.01;
            let order = if order_lie { Order::Lie } else { Order::Strang };
            let cfg = SchemeConfig::new(tau, order, Form::Ivp);
            let u = CField::random_smooth(g.clone(), 3, 1.0, &mut rng);
            let v = CField::random_smooth(g.clone(), 3, 1.0, &mut rng);
            let f = EigenmodeSource { mode: vec![2], amplitude: 3.0, omega: 1.0, phase: 0.0 };
            let su = step(&u, 0.0, &p, &cfg, &f, &ZeroSource).unwrap();
            let sv = step(&v, 0.0, &p, &cfg, &f, &ZeroSource).unwrap();
            let bound = norm2(&(&u - &v)) / (1.0 + tau);
            if order_lie {
                prop_assert!(norm2(&(&su - &sv)) <= bound + 1e-12);
            } else {
                // the explicit halves are not contractive on stiff data, only on smooth fields
                prop_assert!(norm2(&(&su - &sv)) <= norm2(&(&u - &v)) + 1e-12);
            }
        }

        #[test]
        fn zero_forcing_decays(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = line(15);
            let tau = 0.05;
            let cfg = SchemeConfig::new(tau, Order::Lie, Form::Ivp);
            let u = CField::random(g, 1.0, &mut rng);
            let tr = solve_cauchy(&u, 1.0, &Params::default(), &cfg, &ZeroSource, &ZeroSource).unwrap();
            prop_assert!(norm2(tr.last()) <= (1.0 + tau).powi(-20) * norm2(&u) + 1e-14);
        }
    }
}
