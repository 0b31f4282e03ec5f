//! Numerical checks of the structural identities, inequalities and explicit
//! constants behind the existence argument.
//!
//! Every function here reports and never aborts. Margins are signed so that a
//! positive value means the inequality holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cauchy::{Source, Trajectory};
use crate::error::{CglError, Result};
use crate::field::{self, apply_i, dphi, dpsi, inner, norm2, CField};
use crate::params::{self, AdmissiblePair, Params};
use crate::proximal::{self, PowerTerm, ResolventConfig, YosidaOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    /// `measured ≤ bound` up to a relative slack.
    pub fn new(measured: f64, bound: f64, rel_slack: f64) -> Self {
        let pass = measured <= bound + rel_slack * (measured.abs() + bound.abs());
        BoundCheck { measured, bound, pass }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub identity_residuals: BTreeMap<String, f64>,
    pub inequality_margins: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub bound_checks: BTreeMap<String, BoundCheck>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn all_bounds_pass(&self) -> bool {
        self.bound_checks.values().all(|b| b.pass)
    }
}

fn relative(value: f64, a: f64, b: f64) -> f64 {
    let s = a * b;
    if s == 0.0 {
        value.abs()
    } else {
        value.abs() / s
    }
}

/// Orthogonality residuals `|(A, IB)| / (‖A‖‖B‖)` of the angle conditions.
pub fn check_identities(u: &CField, q: f64, r: f64, mu: f64) -> Result<BTreeMap<String, f64>> {
    let cfg = ResolventConfig::new(mu)?;
    let iu = apply_i(u);
    let dp = dphi(u);
    let dq = dpsi(u, q);
    let dr = dpsi(u, r);
    let yp = proximal::yosida(u, &YosidaOperator::Phi, &cfg)?;
    let yq = proximal::yosida(u, &YosidaOperator::Psi(q), &cfg)?;
    let yr = proximal::yosida(u, &YosidaOperator::Psi(r), &cfg)?;
    let mut m = BTreeMap::new();
    let mut put = |name: &str, a: &CField, b: &CField| {
        let v = field::inner_unchecked(a, b);
        m.insert(name.to_string(), relative(v, norm2(a), norm2(b)));
    };
    put("dphi_iu", &dp, &iu);
    put("dpsi_q_iu", &dq, &iu);
    put("yosida_phi_iu", &yp, &iu);
    put("yosida_psi_q_iu", &yq, &iu);
    put("dpsi_q_i_dpsi_r", &dq, &apply_i(&dr));
    put("dpsi_q_i_yosida_psi_r", &dq, &apply_i(&yr));
    put("i_dpsi_q_u", &apply_i(&dq), u);
    if u.data().chunks_exact(2).all(|c| c[1] == 0.0) {
        put("real_dphi_i_dpsi_q", &dp, &apply_i(&dq));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyInequality {
    /// `G = (∂φ(U), ∂ψ_q(U))`.
    pub g: f64,
    /// `B = (∂φ(U), I∂ψ_q(U))`.
    pub b: f64,
    /// `c_q·G − |B|`.
    pub margin: f64,
    /// `max(0, |B| − c_q·G)`.
    pub violation: f64,
}

pub fn check_key_inequality(u: &CField, q: f64) -> Result<KeyInequality> {
    let cq = params::strength_exponent(q)?;
    let dp = dphi(u);
    let dq = dpsi(u, q);
    let g = field::inner_unchecked(&dp, &dq);
    let b = field::inner_unchecked(&dp, &apply_i(&dq));
    let margin = cq * g - b.abs();
    Ok(KeyInequality { g, b, margin, violation: (-margin).max(0.0) })
}

/// `C₁ = (1 − 1/r)(rε|Ω|^{1−r/2}/4)^{−1/(r−1)}`.
pub fn c1(p: &Params, measure: f64) -> f64 {
    let r = p.r;
    (1.0 - 1.0 / r) * (r * p.eps * measure.powf(1.0 - r / 2.0) / 4.0).powf(-1.0 / (r - 1.0))
}

/// `C̃₁ = √2·C₁^{1/2}·T^{(r−2)/(r−1)}`.
pub fn c1_tilde(p: &Params, measure: f64) -> f64 {
    std::f64::consts::SQRT_2 * c1(p, measure).sqrt() * p.period.powf((p.r - 2.0) / (p.r - 1.0))
}

/// `C₂ = (2C₁/(ε|Ω|^{1−r/2}))^{1/r} / T^{1/(2(r−1))}`.
pub fn c2(p: &Params, measure: f64) -> f64 {
    let r = p.r;
    (2.0 * c1(p, measure) / (p.eps * measure.powf(1.0 - r / 2.0))).powf(1.0 / r) / p.period.powf(1.0 / (2.0 * (r - 1.0)))
}

/// `C₃ = max_{s ≥ 0} γs² − (κ/4)|Ω|^{1−q/2}s^q`.
pub fn c3(p: &Params, measure: f64) -> f64 {
    if p.gamma <= 0.0 {
        return 0.0;
    }
    let k = p.kappa / 4.0 * measure.powf(1.0 - p.q / 2.0);
    let s = (2.0 * p.gamma / (p.q * k)).powf(1.0 / (p.q - 2.0));
    p.gamma * (1.0 - 2.0 / p.q) * s * s
}

/// Young constant `(1 − 1/q)(qκ|Ω|^{1−q/2}/8)^{−1/(q−1)}` of the ε-free first energy estimate.
pub fn l2_energy_constant(p: &Params, measure: f64) -> f64 {
    let q = p.q;
    (1.0 - 1.0 / q) * (q * p.kappa * measure.powf(1.0 - q / 2.0) / 8.0).powf(-1.0 / (q - 1.0))
}

/// Explicit instance of the generic constant `C` in the second frozen-forcing estimate:
/// the sum of the coefficients of `‖F‖² + ‖h‖²` in the three bounds, times `max(1, ‖F‖²)`.
pub fn second_estimate_constant(p: &Params, norm_f: f64) -> f64 {
    let (l, a, e) = (p.lambda, p.alpha, p.eps);
    let k = (1.0 + 1.0 / (2.0 * p.period)) / l + 2.0 / (l * l) + 4.0 / (e * e) * (1.0 + 2.0 * a * a / (l * l));
    k * (norm_f * norm_f).max(1.0)
}

/// `η = ½|β|⁻²C⁻¹`; infinite when `β = 0`.
pub fn eta(p: &Params, norm_f: f64) -> f64 {
    if p.beta == 0.0 {
        return f64::INFINITY;
    }
    0.5 / (p.beta * p.beta * second_estimate_constant(p, norm_f))
}

/// Young constant with `ab ≤ η a^s + C_η b^{s'}`, `s = (r−2)/(q−2)`, `s' = (r−2)/(r−q)`.
pub fn c_eta(q: f64, r: f64, eta: f64) -> f64 {
    let s = (r - 2.0) / (q - 2.0);
    let sp = (r - 2.0) / (r - q);
    (s * eta).powf(-sp / s) / sp
}

/// Every closed-form constant, keyed by name. ε-dependent entries are
/// omitted when `ε = 0`.
pub fn constants_report(p: &Params, norm_f: f64, measure: f64) -> Result<BTreeMap<String, f64>> {
    let report = params::validate_params(p)?;
    let mut m = BTreeMap::new();
    m.insert("c_q".into(), report.c_q);
    m.insert("c_q_inv".into(), report.c_q_inv);
    m.insert("discriminant_quarter".into(), report.discriminant_quarter);
    m.insert("C3".into(), c3(p, measure));
    m.insert("l2_energy_constant".into(), l2_energy_constant(p, measure));
    m.insert("gamma_plus".into(), p.gamma.max(0.0));
    if p.eps > 0.0 {
        m.insert("C1".into(), c1(p, measure));
        m.insert("C1_tilde".into(), c1_tilde(p, measure));
        m.insert("C2".into(), c2(p, measure));
        m.insert("C_second_estimate".into(), second_estimate_constant(p, norm_f));
        let e = eta(p, norm_f);
        if e.is_finite() {
            m.insert("eta".into(), e);
            m.insert("C_eta".into(), c_eta(p.q, p.r, e));
        }
    }
    if let Some(pair) = params::find_admissible_pair(p)? {
        m.insert("delta".into(), pair.delta);
        m.insert("eps_bal".into(), pair.eps_bal);
        m.insert("J".into(), pair.j_value);
    }
    Ok(m)
}

/// Moreau–Yosida margins for `ψ_p` (positive = holds).
pub fn check_moreau(u: &CField, mu: f64, p: f64) -> Result<BTreeMap<String, f64>> {
    let cfg = ResolventConfig::new(mu)?;
    let j = proximal::resolvent_power_sum(u, mu, &[PowerTerm::new(1.0, p)])?;
    let y = proximal::yosida(u, &YosidaOperator::Psi(p), &cfg)?;
    let env = proximal::moreau_psi(u, mu, p)?;
    let psi_u = field::psi(u, p);
    let pairing = inner(&y, u)?;
    let mut m = BTreeMap::new();
    m.insert("sandwich_lower".into(), env - field::psi(&j, p));
    m.insert("sandwich_upper".into(), psi_u - env);
    m.insert("yosida_norm_bound".into(), norm2(&dpsi(u, p)) - norm2(&y));
    // the reversed bound (Y, U) ≤ ψ(U); negative on generic fields
    m.insert("pairing_upper_reversed".into(), psi_u - pairing);
    m.insert("pairing_lower_envelope".into(), pairing - env);
    Ok(m)
}

/// Interpolation margins for `‖∂ψ_q‖²` against `‖∂ψ_r‖²` and `‖U‖²`.
pub fn check_interpolation(u: &CField, q: f64, r: f64, eta: f64) -> Result<BTreeMap<String, f64>> {
    if !(r > q && q > 2.0) {
        return Err(CglError::Domain(format!("need r > q > 2, got q = {q}, r = {r}")));
    }
    if !(eta > 0.0) {
        return Err(CglError::Domain(format!("eta must be positive, got {eta}")));
    }
    let th = (q - 2.0) / (r - 2.0);
    let a = norm2(&dpsi(u, r)).powi(2);
    let b = norm2(u).powi(2);
    let lhs = norm2(&dpsi(u, q)).powi(2);
    let product = a.powf(th) * b.powf(1.0 - th);
    let mut m = BTreeMap::new();
    m.insert("product_form".into(), product - lhs);
    m.insert("young_form".into(), eta * a + c_eta(q, r, eta) * b - lhs);
    Ok(m)
}

/// Least-squares slope of `log v` against `log ε`.
pub fn vanish_rate(eps: &[f64], v: &[f64]) -> Result<f64> {
    if eps.len() != v.len() || eps.len() < 2 {
        return Err(CglError::Domain("vanish_rate needs at least two matching points".into()));
    }
    if eps.iter().chain(v).any(|x| !(*x > 0.0)) {
        return Err(CglError::Domain("vanish_rate needs positive values".into()));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = v.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(CglError::Domain("vanish_rate needs distinct eps values".into()));
    }
    Ok(sxy / sxx)
}

/// Names of the per-step inequalities, in CSV column order.
pub const FROZEN_FORCING_INEQUALITIES: [&str; 3] = ["frozen_l2_energy", "frozen_phi_energy", "frozen_psi_r_energy"];
pub const FULL_EQUATION_INEQUALITIES: [&str; 5] = ["l2_energy", "coupled_energy", "psi_r_energy", "phi_energy", "psi_q_energy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub tau: f64,
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    /// Per-step normalized margins `(RHS − LHS)/scale`, one row per step.
    pub margins: Vec<Vec<f64>>,
    /// Largest normalized violation `max(0, LHS − RHS)/scale` per inequality.
    pub max_slack: BTreeMap<String, f64>,
    /// Whether `max_slack ≤ slack_factor·τ`.
    pub pass: BTreeMap<String, bool>,
    pub slack_factor: f64,
    pub bound_checks: BTreeMap<String, BoundCheck>,
    pub extremes: BTreeMap<String, f64>,
    pub integrals: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
}

impl EnergyReport {
    pub fn all_pass(&self) -> bool {
        self.pass.values().all(|&b| b) && self.bound_checks.values().all(|b| b.pass)
    }

    pub fn margins_csv(&self) -> String {
        let mut s = String::from("t");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (t, row) in self.times.iter().zip(&self.margins) {
            s.push_str(&format!("{t:.17e}"));
            for v in row {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "tau": self.tau,
            "slack_factor": self.slack_factor,
            "max_slack": self.max_slack,
            "pass": self.pass,
            "bound_checks": self.bound_checks,
            "extremes": self.extremes,
            "integrals": self.integrals,
            "constants": self.constants,
        });
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Ingredients of the monitor.
pub struct MonitorInputs<'a> {
    pub params: &'a Params,
    pub forcing: &'a dyn Source,
    /// Frozen forcing of the contraction form, if the trajectory solves it.
    pub frozen: Option<&'a dyn Source>,
    /// Pair `(δ, ϵ)` for the second energy estimate; found automatically when `None`.
    pub pair: Option<AdmissiblePair>,
    pub slack_factor: f64,
}

struct Row {
    lhs: f64,
    rhs: f64,
    scale: f64,
}

impl Row {
    fn new(lhs_terms: &[f64], rhs_terms: &[f64]) -> Row {
        let lhs: f64 = lhs_terms.iter().sum();
        let rhs: f64 = rhs_terms.iter().sum();
        let scale: f64 = lhs_terms.iter().chain(rhs_terms).map(|x| x.abs()).sum();
        Row { lhs, rhs, scale }
    }

    fn margin(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            (self.rhs - self.lhs) / self.scale
        }
    }
}

/// Per-step discrete energy inequalities along a stride-1 trajectory plus
/// the min/max relations with the explicit constants.
///
/// Derivatives are forward differences; every other term is evaluated at the
/// end of the step, with the sources sampled at the end time.
pub fn energy_monitor(traj: &Trajectory, inputs: &MonitorInputs) -> Result<EnergyReport> {
    if traj.stride != 1 {
        return Err(CglError::Domain("energy_monitor needs a trajectory stored with stride 1".into()));
    }
    let p = inputs.params;
    let grid = traj.states[0].grid_arc().clone();
    let measure = grid.measure();
    let tau = traj.tau;
    let (q, r, eps) = (p.q, p.r, p.eps);
    let gp = p.gamma.max(0.0);
    let pair = match inputs.pair {
        Some(pr) => Some(pr),
        None => params::find_admissible_pair(p).ok().flatten(),
    };

    let mut columns: Vec<String> = Vec::new();
    if inputs.frozen.is_some() && eps > 0.0 {
        columns.extend(FROZEN_FORCING_INEQUALITIES.iter().map(|s| s.to_string()));
    }
    for name in FULL_EQUATION_INEQUALITIES {
        if name == "coupled_energy" && pair.is_none_or(|pr| pr.eps_bal <= 0.0) {
            continue;
        }
        columns.push(name.to_string());
    }

    struct Snap {
        n2: f64,
        phi: f64,
        psi_q: f64,
        psi_r: f64,
        dphi2: f64,
        dpsi_q2: f64,
        dpsi_r2: f64,
        b: f64,
    }
    let snap = |u: &CField| {
        let dp = dphi(u);
        let dq = dpsi(u, q);
        Snap {
            n2: norm2(u),
            phi: field::phi(u),
            psi_q: field::psi(u, q),
            psi_r: field::psi(u, r),
            dphi2: norm2(&dp).powi(2),
            dpsi_q2: norm2(&dq).powi(2),
            dpsi_r2: norm2(&dpsi(u, r)).powi(2),
            b: field::inner_unchecked(&dp, &apply_i(&dq)),
        }
    };

    let c1v = if eps > 0.0 { c1(p, measure) } else { f64::NAN };
    let wc = l2_energy_constant(p, measure);
    let c3v = c3(p, measure);
    let wq = measure.powf(1.0 - q / 2.0);
    let wr = measure.powf(1.0 - r / 2.0);

    let mut times = Vec::new();
    let mut margins = Vec::new();
    let mut f_sq_sum = 0.0;
    let mut h_sq_sum = 0.0;
    let mut prev = snap(&traj.states[0]);
    let mut norms = vec![prev.n2];
    let mut phis = vec![prev.phi];
    for k in 1..traj.states.len() {
        let t = traj.times[k];
        let cur = snap(&traj.states[k]);
        let fnorm = norm2(&inputs.forcing.sample(t, &grid)?);
        let hnorm = match inputs.frozen {
            Some(h) => norm2(&h.sample(t, &grid)?),
            None => 0.0,
        };
        f_sq_sum += fnorm * fnorm;
        h_sq_sum += hnorm * hnorm;
        let dn2 = 0.5 * (cur.n2 * cur.n2 - prev.n2 * prev.n2) / tau;
        let dphi_t = (cur.phi - prev.phi) / tau;
        let dpsi_q_t = (cur.psi_q - prev.psi_q) / tau;
        let dpsi_r_t = (cur.psi_r - prev.psi_r) / tau;
        let f2 = fnorm * fnorm;
        let h2 = hnorm * hnorm;
        let mut row = Vec::new();
        for c in &columns {
            let rw = match c.as_str() {
                "frozen_l2_energy" => {
                    let e = r / (r - 1.0);
                    Row::new(&[dn2, 0.5 * eps * wr * cur.n2.powf(r)], &[c1v * (fnorm.powf(e) + hnorm.powf(e))])
                }
                "frozen_phi_energy" => Row::new(
                    &[dphi_t, 0.5 * p.lambda * cur.dphi2, 2.0 * cur.phi],
                    &[(f2 + h2) / p.lambda],
                ),
                "frozen_psi_r_energy" => Row::new(
                    &[dpsi_r_t, 0.25 * eps * cur.dpsi_r2],
                    &[(p.alpha * p.alpha * cur.dphi2 + f2 + h2) / eps],
                ),
                "l2_energy" => Row::new(
                    &[
                        dn2,
                        p.kappa * wq / 8.0 * cur.n2.powf(q),
                        2.0 * p.lambda * cur.phi,
                        r * eps * cur.psi_r,
                        0.5 * q * p.kappa * cur.psi_q,
                    ],
                    &[wc * fnorm.powf(q / (q - 1.0)), c3v],
                ),
                "coupled_energy" => {
                    let pr = pair.expect("column present only with a pair");
                    let d2 = pr.delta * pr.delta;
                    let j = params::j_value(p, pr.delta, pr.eps_bal)?;
                    Row::new(
                        &[
                            d2 * dphi_t,
                            dpsi_q_t,
                            0.5 * pr.eps_bal * (d2 * cur.dphi2 + cur.dpsi_q2),
                            j * cur.b.abs(),
                        ],
                        &[gp * (2.0 * d2 * cur.phi + q * cur.psi_q), (1.0 + d2) / (2.0 * pr.eps_bal) * f2],
                    )
                }
                "psi_r_energy" => Row::new(
                    &[eps * dpsi_r_t, 0.5 * eps * eps * cur.dpsi_r2],
                    &[r * gp * eps * cur.psi_r, p.alpha * p.alpha * cur.dphi2, f2],
                ),
                "phi_energy" => Row::new(
                    &[dphi_t, 0.5 * p.lambda * cur.dphi2, cur.phi],
                    &[(2.0 * gp + 1.0) * cur.phi, f2 / p.lambda, p.beta * p.beta / p.lambda * cur.dpsi_q2],
                ),
                "psi_q_energy" => Row::new(
                    &[dpsi_q_t, 0.5 * p.kappa * cur.dpsi_q2, cur.psi_q],
                    &[(q * gp + 1.0) * cur.psi_q, f2 / p.kappa, p.alpha * p.alpha / p.kappa * cur.dphi2],
                ),
                _ => unreachable!("unknown inequality column"),
            };
            row.push(rw.margin());
        }
        times.push(t);
        margins.push(row);
        norms.push(cur.n2);
        phis.push(cur.phi);
        prev = cur;
    }

    let mut max_slack = BTreeMap::new();
    let mut pass = BTreeMap::new();
    for (i, c) in columns.iter().enumerate() {
        let s = margins.iter().map(|row| (-row[i]).max(0.0)).fold(0.0, f64::max);
        max_slack.insert(c.clone(), s);
        pass.insert(c.clone(), s <= inputs.slack_factor * tau);
    }

    // norms over one period: the initial state is the periodic repeat of the last
    let period_norms = &norms[1..];
    let period_phis = &phis[1..];
    let big_m = period_norms.iter().cloned().fold(f64::MIN, f64::max);
    let small_m = period_norms.iter().cloned().fold(f64::MAX, f64::min);
    let big_m1 = period_phis.iter().cloned().fold(f64::MIN, f64::max);
    let small_m1 = period_phis.iter().cloned().fold(f64::MAX, f64::min);
    let nf = (tau * f_sq_sum).sqrt();
    let nh = (tau * h_sq_sum).sqrt();
    let big_t = traj.times.last().copied().unwrap_or(0.0) - traj.times[0];
    let mut extremes = BTreeMap::new();
    extremes.insert("M".into(), big_m);
    extremes.insert("m".into(), small_m);
    extremes.insert("M1".into(), big_m1);
    extremes.insert("m1".into(), small_m1);
    extremes.insert("norm_F_H".into(), nf);
    extremes.insert("norm_h_H".into(), nh);

    let rel = inputs.slack_factor * tau;
    let mut bound_checks = BTreeMap::new();
    let pt = Params { period: big_t, ..*p };
    if inputs.frozen.is_some() && eps > 0.0 {
        let e1 = r / (2.0 * (r - 1.0));
        bound_checks.insert(
            "frozen_max_norm".into(),
            BoundCheck::new(big_m, small_m + c1_tilde(&pt, measure) * (nf.powf(e1) + nh.powf(e1)), rel),
        );
        let e2 = 1.0 / (r - 1.0);
        bound_checks.insert("frozen_min_norm".into(), BoundCheck::new(small_m, c2(&pt, measure) * (nf.powf(e2) + nh.powf(e2)), rel));
        bound_checks.insert(
            "frozen_max_phi".into(),
            BoundCheck::new(big_m1, (1.0 + 1.0 / (2.0 * big_t)) / p.lambda * (nf * nf + nh * nh), rel),
        );
    }
    let kq = p.kappa * wq;
    let max_norm_gap = std::f64::consts::SQRT_2
        * (1.0 - 1.0 / q).sqrt()
        * (q * kq / 8.0).powf(-1.0 / (2.0 * (q - 1.0)))
        * big_t.powf((q - 2.0) / (4.0 * (q - 1.0)))
        * nf.powf(q / (2.0 * (q - 1.0)))
        + (2.0 * c3v * big_t).sqrt();
    bound_checks.insert("max_norm".into(), BoundCheck::new(big_m, small_m + max_norm_gap, rel));
    let min_norm_bound = (8.0 / (big_t * kq)
        * ((q * kq / 8.0).powf(-1.0 / (q - 1.0)) * big_t.powf((q - 2.0) / (2.0 * (q - 1.0))) * nf.powf(q / (q - 1.0))
            + c3v * big_t))
        .powf(1.0 / q);
    bound_checks.insert("min_norm".into(), BoundCheck::new(small_m, min_norm_bound, rel));

    let mut integrals = crate::periodic::uniform_diagnostics(traj, p);
    integrals.retain(|k, _| k.starts_with("int_"));
    let mut constants = constants_report(&pt, nf, measure)?;
    if let Some(pr) = pair {
        constants.insert("delta".into(), pr.delta);
        constants.insert("eps_bal".into(), pr.eps_bal);
        constants.insert("J".into(), pr.j_value);
    }

    Ok(EnergyReport {
        tau,
        columns,
        times,
        margins,
        max_slack,
        pass,
        slack_factor: inputs.slack_factor,
        bound_checks,
        extremes,
        integrals,
        constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::{solve_cauchy, EigenmodeSource, Form, Order, SchemeConfig, ZeroSource};
    use crate::field::Grid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn line(n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(n, 1.0).unwrap())
    }

    #[test]
    fn zero_field_reports_zero() {
        let z = CField::zeros(line(31));
        assert!(check_identities(&z, 4.0, 6.0, 0.1).unwrap().values().all(|&v| v == 0.0));
        let k = check_key_inequality(&z, 4.0).unwrap();
        assert_eq!((k.g, k.b, k.margin), (0.0, 0.0, 0.0));
        assert!(check_moreau(&z, 0.5, 4.0).unwrap().values().all(|&v| v == 0.0));
        assert!(check_interpolation(&z, 4.0, 6.0, 0.3).unwrap().values().all(|&v| v == 0.0));
    }

    #[test]
    fn identities_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in [line(31), Arc::new(Grid::rect(9, 8, 1.0, 2.0).unwrap())] {
            let u = CField::random(g, 1.0, &mut rng);
            for (k, v) in check_identities(&u, 4.0, 6.0, 0.05).unwrap() {
                assert!(v <= 1e-10, "{k} = {v}");
            }
        }
    }

    #[test]
    fn real_field_has_exact_orthogonality() {
        let g = line(31);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = CField::random(g, 1.0, &mut rng).map_nodes(|v| [v[0], 0.0]);
        let m = check_identities(&u, 3.0, 5.0, 0.1).unwrap();
        assert_eq!(m["real_dphi_i_dpsi_q"], 0.0);
        let k = check_key_inequality(&u, 3.0).unwrap();
        assert_eq!(k.b, 0.0);
        assert!(k.margin >= 0.0);
    }

    #[test]
    fn constants_examples() {
        let p = Params { r: 4.0, eps: 1.0, q: 3.0, ..Params::default() };
        assert!((c1(&p, 1.0) - 0.75).abs() < 1e-15);
        for t in [0.5, 1.0, 3.0] {
            let pt = Params { period: t, ..p };
            let lhs = c1_tilde(&pt, 1.0).powi(2);
            let rhs = 2.0 * c1(&pt, 1.0) * t.powf(2.0 * (p.r - 2.0) / (p.r - 1.0));
            assert!((lhs - rhs).abs() < 1e-13 * rhs);
        }
        assert_eq!(c3(&Params { gamma: -0.5, ..p }, 1.0), 0.0);
        assert_eq!(c3(&Params { gamma: 0.0, ..p }, 1.0), 0.0);
        // C₃ is the maximum of γs² − (κ/4)|Ω|^{1−q/2}s^q
        let pg = Params { gamma: 2.0, kappa: 1.5, q: 4.0, ..Params::default() };
        let k = pg.kappa / 4.0 * 2f64.powf(1.0 - pg.q / 2.0);
        let best = (0..200_000).map(|i| i as f64 * 1e-4).map(|s| pg.gamma * s * s - k * s.powf(pg.q)).fold(f64::MIN, f64::max);
        assert!((c3(&pg, 2.0) - best).abs() < 1e-6);

        let m = constants_report(&Params::default(), 1.0, 1.0).unwrap();
        for key in ["c_q", "C1", "C1_tilde", "C2", "C3", "eta", "C_eta", "J", "discriminant_quarter"] {
            assert!(m.contains_key(key), "{key}");
        }
        let m0 = constants_report(&Params::default().with_eps(0.0), 1.0, 1.0).unwrap();
        assert!(!m0.contains_key("C1") && !m0.contains_key("eta"));
    }

    #[test]
    fn c_eta_is_the_young_constant() {
        // max over a of a^θ b^{1−θ} − η a equals C_η b
        let (q, r, eta): (f64, f64, f64) = (4.0, 6.0, 0.3);
        let th = (q - 2.0) / (r - 2.0);
        let b: f64 = 2.0;
        let best = (1..400_000).map(|i| i as f64 * 1e-4).map(|a: f64| a.powf(th) * b.powf(1.0 - th) - eta * a).fold(f64::MIN, f64::max);
        assert!((best - c_eta(q, r, eta) * b).abs() < 1e-6);
    }

    #[test]
    fn vanish_rate_on_power_law() {
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let v: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powf(0.2)).collect();
        assert!((vanish_rate(&eps, &v).unwrap() - 0.2).abs() < 1e-6);
        assert!(vanish_rate(&eps[..1], &v[..1]).is_err());
        assert!(vanish_rate(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn monitor_on_zero_trajectory() {
        let g = line(15);
        let p = Params::default();
        let cfg = SchemeConfig::new(0.01, Order::Lie, Form::Ivp);
        let tr = solve_cauchy(&CField::zeros(g), 1.0, &p, &cfg, &ZeroSource, &ZeroSource).unwrap();
        let rep = energy_monitor(
            &tr,
            &MonitorInputs { params: &p, forcing: &ZeroSource, frozen: Some(&ZeroSource), pair: None, slack_factor: 10.0 },
        )
        .unwrap();
        assert!(rep.max_slack.values().all(|&s| s == 0.0));
        assert!(rep.pass.values().all(|&b| b));
        assert_eq!(rep.margins_csv().lines().count(), 101);
    }

    #[test]
    fn monitor_holds_on_forced_transient() {
        let g = line(31);
        let p = Params::default();
        let f = EigenmodeSource::constant(vec![1], 5.0);
        let cfg = SchemeConfig::new(1e-3, Order::Lie, Form::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u0 = CField::random_smooth(g, 3, 0.5, &mut rng);
        let tr = solve_cauchy(&u0, 0.2, &p, &cfg, &f, &ZeroSource).unwrap();
        let rep = energy_monitor(
            &tr,
            &MonitorInputs { params: &p, forcing: &f, frozen: None, pair: None, slack_factor: 10.0 },
        )
        .unwrap();
        for (k, s) in &rep.max_slack {
            assert!(*s <= 10.0 * 1e-3, "{k}: {s}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn key_inequality_holds_exactly(seed in any::<u64>(), q in 2.0f64..8.0, two_d in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = if two_d { Arc::new(Grid::rect(8, 7, 1.0, 1.3).unwrap()) } else { line(33) };
            let u = CField::random(g, 2.0, &mut rng);
            let k = check_key_inequality(&u, q).unwrap();
            prop_assert!(k.margin >= -1e-12 * (k.g.abs() + k.b.abs()));
        }

        #[test]
        fn interpolation_and_moreau(seed in any::<u64>(), mu in 1e-3f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = CField::random(line(21), 2.0, &mut rng);
            let m = check_interpolation(&u, 4.0, 6.0, 0.2).unwrap();
            let scale = norm2(&dpsi(&u, 4.0)).powi(2);
            prop_assert!(m["product_form"] >= -1e-12 * scale);
            prop_assert!(m["young_form"] >= -1e-12 * scale);
            let mm = check_moreau(&u, mu, 4.0).unwrap();
            for k in ["sandwich_lower", "sandwich_upper", "yosida_norm_bound", "pairing_lower_envelope"] {
                prop_assert!(mm[k] >= -1e-10, "{} = {}", k, mm[k]);
            }
        }
    }
}
