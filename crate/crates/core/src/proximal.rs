//! Resolvents `(1 + μA)⁻¹` and Yosida approximations of the operators in the
//! evolution equation.
//!
//! The linear resolvent of `(Id + skew·I)(−Δ_h)` is a complex tridiagonal
//! solve in 1-D and a Krylov solve in 2-D (CG when `skew = 0`, BiCGStab
//! otherwise, both Jacobi preconditioned). The pointwise resolvents reduce to
//! a scalar magnitude equation per node.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CglError, Result};
use crate::field::{self, neg_laplacian_into, CField, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventConfig {
    pub mu: f64,
    pub linear_tol: f64,
    pub max_iter: usize,
}

pub const DEFAULT_LINEAR_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 20_000;

impl ResolventConfig {
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_tolerance(mu, DEFAULT_LINEAR_TOL, DEFAULT_MAX_ITER)
    }

    pub fn with_tolerance(mu: f64, linear_tol: f64, max_iter: usize) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(CglError::Domain(format!("resolvent parameter mu must be positive, got {mu}")));
        }
        if !(linear_tol > 0.0 && linear_tol <= 1e-6) {
            return Err(CglError::Domain(format!("linear_tol must lie in (0, 1e-6], got {linear_tol}")));
        }
        if max_iter == 0 {
            return Err(CglError::Domain("max_iter must be positive".into()));
        }
        Ok(ResolventConfig { mu, linear_tol, max_iter })
    }
}

/// Solves `(Id + μ(Id + skew·I)(−Δ_h)) V = U`.
pub fn resolvent_phi(u: &CField, skew: f64, cfg: &ResolventConfig) -> Result<CField> {
    let g = u.grid();
    if g.dim() == 1 {
        return Ok(thomas_complex(u, cfg.mu, skew));
    }
    let rhs = u.data();
    let bnorm = euclid(rhs);
    if bnorm == 0.0 {
        return Ok(CField::zeros(u.grid_arc().clone()));
    }
    let op = LinearOp { grid: g, mu: cfg.mu, skew };
    let x = if skew == 0.0 {
        pcg(&op, rhs, cfg.linear_tol * bnorm, cfg.max_iter)?
    } else {
        bicgstab(&op, rhs, cfg.linear_tol * bnorm, cfg.max_iter)?
    };
    CField::from_data(u.grid_arc().clone(), x)
}

fn euclid(v: &[f64]) -> f64 {
    field::kahan_sum(v.iter().map(|x| x * x)).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    field::kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Tridiagonal system in complex form; strictly diagonally dominant because
/// `Re(μ(1 + i·skew)) > 0`, so no pivoting is needed.
fn thomas_complex(u: &CField, mu: f64, skew: f64) -> CField {
    let g = u.grid();
    let n = g.n()[0];
    let h = g.spacing(0);
    let c = Complex64::new(mu, mu * skew) / (h * h);
    let diag = Complex64::new(1.0, 0.0) + c * 2.0;
    let off = -c;
    let mut cp = vec![Complex64::new(0.0, 0.0); n];
    let mut dp = vec![Complex64::new(0.0, 0.0); n];
    let rhs = |i: usize| Complex64::new(u.data()[2 * i], u.data()[2 * i + 1]);
    cp[0] = off / diag;
    dp[0] = rhs(0) / diag;
    for i in 1..n {
        let m = diag - off * cp[i - 1];
        cp[i] = off / m;
        dp[i] = (rhs(i) - off * dp[i - 1]) / m;
    }
    let mut out = vec![0.0; 2 * n];
    let mut next = dp[n - 1];
    out[2 * (n - 1)] = next.re;
    out[2 * (n - 1) + 1] = next.im;
    for i in (0..n - 1).rev() {
        next = dp[i] - cp[i] * next;
        out[2 * i] = next.re;
        out[2 * i + 1] = next.im;
    }
    CField::from_data(u.grid_arc().clone(), out).expect("thomas output has grid shape")
}

struct LinearOp<'a> {
    grid: &'a Grid,
    mu: f64,
    skew: f64,
}

impl LinearOp<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        neg_laplacian_into(x, self.grid, out);
        for k in 0..out.len() / 2 {
            let (a, b) = (out[2 * k], out[2 * k + 1]);
            // (Id + skew·I) applied to −Δx
            let (ra, rb) = (a - self.skew * b, b + self.skew * a);
            out[2 * k] = x[2 * k] + self.mu * ra;
            out[2 * k + 1] = x[2 * k + 1] + self.mu * rb;
        }
    }

    fn jacobi(&self) -> f64 {
        let d: f64 = (0..self.grid.dim())
            .map(|a| 2.0 / (self.grid.spacing(a) * self.grid.spacing(a)))
            .sum();
        1.0 / (1.0 + self.mu * d)
    }
}

fn pcg(op: &LinearOp, b: &[f64], atol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let minv = op.jacobi();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().map(|v| v * minv).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let rn = euclid(&r);
        if rn <= atol {
            return Ok(x);
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * minv;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if it + 1 == max_iter {
            break;
        }
    }
    let rn = euclid(&r);
    if rn <= atol {
        return Ok(x);
    }
    Err(CglError::LinearSolver { iterations: max_iter, residual: rn / euclid(b) })
}

fn bicgstab(op: &LinearOp, b: &[f64], atol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let minv = op.jacobi();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..max_iter {
        if euclid(&r) <= atol {
            return Ok(x);
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * minv;
        }
        op.apply(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if euclid(&s) <= atol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            zz[i] = s[i] * minv;
        }
        op.apply(&zz, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            break;
        }
    }
    let rn = euclid(&r);
    if rn <= atol {
        return Ok(x);
    }
    Err(CglError::LinearSolver { iterations: max_iter, residual: rn / euclid(b) })
}

/// A term `coeff · |V|^{exponent−2} V` of a pointwise monotone operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub exponent: f64,
}

impl PowerTerm {
    pub fn new(coeff: f64, exponent: f64) -> Self {
        PowerTerm { coeff, exponent }
    }
}

/// Root `s ∈ [0, a]` of `s + μ Σ c_k s^{e_k − 1} = a` by Newton with a
/// bisection fallback.
pub fn solve_power_magnitude(a: f64, mu: f64, terms: &[PowerTerm]) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let f = |s: f64| {
        let mut v = s - a;
        let mut d = 1.0;
        for t in terms {
            v += mu * t.coeff * s.powf(t.exponent - 1.0);
            d += mu * t.coeff * (t.exponent - 1.0) * s.powf(t.exponent - 2.0);
        }
        (v, d)
    };
    safeguarded_newton(f, 0.0, a, a, 1e-14 * a.max(1.0))
}

/// Newton iteration kept inside a shrinking bracket `[lo, hi]` with
/// `f(lo) ≤ 0 ≤ f(hi)`.
fn safeguarded_newton(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, start: f64, atol: f64) -> f64 {
    let mut s = start;
    for _ in 0..200 {
        let (v, d) = f(s);
        if v == 0.0 {
            return s;
        }
        if v > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let mut next = s - v / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= atol || hi - lo <= atol {
            return next;
        }
        s = next;
    }
    s
}

/// Pointwise resolvent of `Σ c_k ∂ψ_{e_k}`: each node is shrunk along its own
/// direction to the magnitude solving `s + μ Σ c_k s^{e_k−1} = |U(x)|`.
pub fn resolvent_power_sum(u: &CField, mu: f64, terms: &[PowerTerm]) -> Result<CField> {
    if !(mu > 0.0) {
        return Err(CglError::Domain(format!("mu must be positive, got {mu}")));
    }
    if terms.iter().any(|t| !(t.coeff >= 0.0) || !(t.exponent >= 2.0)) {
        return Err(CglError::Domain("power terms need coeff >= 0 and exponent >= 2".into()));
    }
    Ok(u.map_nodes(|v| {
        let a = v[0].hypot(v[1]);
        if a == 0.0 {
            return [0.0, 0.0];
        }
        let s = solve_power_magnitude(a, mu, terms);
        let k = s / a;
        [k * v[0], k * v[1]]
    }))
}

/// Coefficients of `V + τ(κ + βI)|V|^{q−2}V + τε|V|^{r−2}V = W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedPower {
    pub tau: f64,
    pub kappa: f64,
    pub beta: f64,
    pub q: f64,
    pub eps: f64,
    pub r: f64,
}

impl RotatedPower {
    /// Diagonal and rotation coefficients of `M(s) = a(s)·Id + b(s)·I`.
    fn coefficients(&self, s: f64) -> (f64, f64) {
        let sq = if s == 0.0 { 0.0 } else { s.powf(self.q - 2.0) };
        let sr = if s == 0.0 { 0.0 } else { s.powf(self.r - 2.0) };
        (1.0 + self.tau * (self.kappa * sq + self.eps * sr), self.tau * self.beta * sq)
    }

    /// `s·|M(s)| − a` and its derivative.
    fn magnitude_eq(&self, s: f64, a: f64) -> (f64, f64) {
        let (am, bm) = self.coefficients(s);
        let norm = am.hypot(bm);
        let sq = if s == 0.0 { 0.0 } else { s.powf(self.q - 2.0) };
        let sr = if s == 0.0 { 0.0 } else { s.powf(self.r - 2.0) };
        // s·a'(s) and s·b'(s)
        let sda = self.tau * (self.kappa * (self.q - 2.0) * sq + self.eps * (self.r - 2.0) * sr);
        let sdb = self.tau * self.beta * (self.q - 2.0) * sq;
        let v = s * norm - a;
        let d = norm + (am * sda + bm * sdb) / norm;
        (v, d)
    }

    /// The magnitude map is strictly increasing when both dissipative
    /// coefficients are non-negative; otherwise roots are counted on a scan.
    fn monotone(&self) -> bool {
        self.kappa >= 0.0 && self.eps >= 0.0
    }
}

const ROOT_SCAN_INTERVALS: usize = 64;

/// Implicit substep for the full nonlinearity `(κ + βI)∂ψ_q + ε∂ψ_r`.
pub fn resolvent_rotated_power(w: &CField, op: &RotatedPower) -> Result<CField> {
    if !(op.tau > 0.0) {
        return Err(CglError::Domain(format!("tau must be positive, got {}", op.tau)));
    }
    let mut out = CField::zeros(w.grid_arc().clone());
    for i in 0..w.nodes() {
        let [w1, w2] = w.node(i);
        let a = w1.hypot(w2);
        if a == 0.0 {
            continue;
        }
        let (lo, hi) = if op.monotone() {
            (0.0, a)
        } else {
            // with negative dissipation the root may exceed |W|; scan [0, 2|W|]
            let top = 2.0 * a;
            let mut changes = 0;
            let mut bracket = (0.0, top);
            let mut prev = op.magnitude_eq(0.0, a).0;
            for k in 1..=ROOT_SCAN_INTERVALS {
                let s0 = top * (k - 1) as f64 / ROOT_SCAN_INTERVALS as f64;
                let s1 = top * k as f64 / ROOT_SCAN_INTERVALS as f64;
                let v = op.magnitude_eq(s1, a).0;
                if (prev <= 0.0) != (v <= 0.0) {
                    changes += 1;
                    bracket = (s0, s1);
                }
                prev = v;
            }
            if changes != 1 {
                return Err(CglError::StepSize {
                    tau: op.tau,
                    reason: format!("magnitude equation has {changes} roots on [0, 2|W|] at node {i}"),
                });
            }
            bracket
        };
        let s = safeguarded_newton(|s| op.magnitude_eq(s, a), lo, hi, hi, 1e-14 * a.max(1.0));
        let (am, bm) = op.coefficients(s);
        let v = Complex64::new(w1, w2) / Complex64::new(am, bm);
        out.data_mut()[2 * i] = v.re;
        out.data_mut()[2 * i + 1] = v.im;
    }
    Ok(out)
}

/// Residual `s²(a(s)² + b(s)²) − |W|²` of the magnitude equation at the computed `|V|`.
pub fn rotated_power_magnitude_residual(w: &CField, v: &CField, op: &RotatedPower) -> f64 {
    (0..w.nodes())
        .map(|i| {
            let [w1, w2] = w.node(i);
            let [v1, v2] = v.node(i);
            let s = v1.hypot(v2);
            let (am, bm) = op.coefficients(s);
            (s * s * (am * am + bm * bm) - (w1 * w1 + w2 * w2)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum YosidaOperator {
    Phi,
    Psi(f64),
    PowerSum(Vec<PowerTerm>),
}

pub fn resolvent(u: &CField, which: &YosidaOperator, cfg: &ResolventConfig) -> Result<CField> {
    match which {
        YosidaOperator::Phi => resolvent_phi(u, 0.0, cfg),
        YosidaOperator::Psi(p) => resolvent_power_sum(u, cfg.mu, &[PowerTerm::new(1.0, *p)]),
        YosidaOperator::PowerSum(terms) => resolvent_power_sum(u, cfg.mu, terms),
    }
}

/// `(U − J_μ U) / μ`.
pub fn yosida(u: &CField, which: &YosidaOperator, cfg: &ResolventConfig) -> Result<CField> {
    let j = resolvent(u, which, cfg)?;
    Ok((u - &j).scale(1.0 / cfg.mu))
}

/// Moreau envelope `(μ/2)‖∂ψ_{p,μ}(U)‖² + ψ_p(J_μ U)`.
pub fn moreau_psi(u: &CField, mu: f64, p: f64) -> Result<f64> {
    let j = resolvent_power_sum(u, mu, &[PowerTerm::new(1.0, p)])?;
    let y = (u - &j).scale(1.0 / mu);
    Ok(0.5 * mu * field::norm2(&y).powi(2) + field::psi(&j, p))
}
