//! Model parameters, the CGL admissibility region and the (δ, ϵ) balance
//! pair used by the ε-uniform energy estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CglError, Result};

/// Scalar coefficients of
/// `dU/dt + (λ + αI)(−Δ)U + ε|U|^{r−2}U + (κ + βI)|U|^{q−2}U − γU = F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: f64,
    pub r: f64,
    pub eps: f64,
    /// Yosida parameter for the `ivp_mu` scheme; 0 disables the regularization.
    pub mu: f64,
    pub period: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            lambda: 1.0,
            kappa: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
            q: 4.0,
            r: 6.0,
            eps: 1e-2,
            mu: 0.0,
            period: 1.0,
        }
    }
}

impl Params {
    /// Point `(α/λ, β/κ)` tested against `CGL(c_q⁻¹)`.
    pub fn region_point(&self) -> (f64, f64) {
        (self.alpha / self.lambda, self.beta / self.kappa)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// `c_q = (q − 2) / (2√(q − 1))`.
pub fn strength_exponent(q: f64) -> Result<f64> {
    if !(q >= 2.0) || !q.is_finite() {
        return Err(CglError::Domain(format!("strength exponent needs q >= 2, got {q}")));
    }
    Ok((q - 2.0) / (2.0 * (q - 1.0).sqrt()))
}

/// Reciprocal `c_q⁻¹`; infinite at `q = 2`.
pub fn strength_exponent_inv(q: f64) -> Result<f64> {
    let c = strength_exponent(q)?;
    Ok(if c == 0.0 { f64::INFINITY } else { 1.0 / c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RegionClassification {
    pub inside: bool,
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
    pub s4: bool,
}

impl RegionClassification {
    pub fn in_union(&self) -> bool {
        self.s1 || self.s2 || self.s3 || self.s4
    }
}

/// Membership of `(x, y)` in `CGL(r)` (inequality definition) and in each of
/// the four covering sets, each evaluated from its own definition.
pub fn classify_region_point(x: f64, y: f64, r: f64) -> RegionClassification {
    let xy = x * y;
    let inside = xy >= 0.0 || (xy.abs() - 1.0) / (x.abs() + y.abs()) < r;
    RegionClassification {
        inside,
        s1: x.abs() <= r,
        s2: y.abs() <= r,
        s3: xy > 0.0,
        s4: (1.0 + xy).abs() < r * (x - y).abs(),
    }
}

/// True when `(x, y)` lies within `margin` of a boundary of any defining clause.
pub fn near_region_boundary(x: f64, y: f64, r: f64, margin: f64) -> bool {
    let xy = x * y;
    let frac = (xy.abs() - 1.0) / (x.abs() + y.abs());
    xy.abs() < margin
        || (frac - r).abs() < margin
        || (x.abs() - r).abs() < margin
        || (y.abs() - r).abs() < margin
        || ((1.0 + xy).abs() - r * (x - y).abs()).abs() < margin
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsReport {
    pub c_q: f64,
    pub c_q_inv: f64,
    pub region_point: (f64, f64),
    pub region: RegionClassification,
    pub in_region: bool,
    /// `D/4 = (1+c_q⁻²)λκ − (c_q⁻¹κ − |β|)(c_q⁻¹λ − |α|)`.
    pub discriminant_quarter: f64,
    pub warnings: Vec<String>,
}

/// Positivity and ordering checks are hard errors; leaving the admissible
/// region is only a warning.
pub fn validate_params(p: &Params) -> Result<ParamsReport> {
    let mut errors = Vec::new();
    let fields = [
        ("lambda", p.lambda),
        ("kappa", p.kappa),
        ("alpha", p.alpha),
        ("beta", p.beta),
        ("gamma", p.gamma),
        ("q", p.q),
        ("r", p.r),
        ("eps", p.eps),
        ("mu", p.mu),
        ("period", p.period),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            errors.push(format!("{name} must be finite"));
        }
    }
    if !(p.lambda > 0.0) {
        errors.push("lambda must be positive".into());
    }
    if !(p.kappa > 0.0) {
        errors.push("kappa must be positive".into());
    }
    if !(p.q > 2.0) {
        errors.push("q must exceed 2".into());
    }
    if !(p.r > p.q) {
        errors.push("r must exceed q".into());
    }
    if !(p.period > 0.0) {
        errors.push("period must be positive".into());
    }
    if !(p.eps >= 0.0) {
        errors.push("eps must be non-negative".into());
    }
    if !(p.mu >= 0.0) {
        errors.push("mu must be non-negative".into());
    }
    if !errors.is_empty() {
        return Err(CglError::InvalidParams(errors.join("; ")));
    }

    let c_q = strength_exponent(p.q)?;
    let c_inv = 1.0 / c_q;
    let (x, y) = p.region_point();
    let region = classify_region_point(x, y, c_inv);
    let mut warnings = Vec::new();
    if !region.inside {
        warnings.push(format!(
            "(alpha/lambda, beta/kappa) = ({x}, {y}) lies outside CGL(1/c_q) with 1/c_q = {c_inv}; \
             the uniform estimates do not apply"
        ));
    }
    Ok(ParamsReport {
        c_q,
        c_q_inv: c_inv,
        region_point: (x, y),
        region,
        in_region: region.inside,
        discriminant_quarter: discriminant_quarter(p, c_inv),
        warnings,
    })
}

fn discriminant_quarter(p: &Params, c_inv: f64) -> f64 {
    (1.0 + c_inv * c_inv) * p.lambda * p.kappa
        - (c_inv * p.kappa - p.beta.abs()) * (c_inv * p.lambda - p.alpha.abs())
}

/// `J(δ, ϵ) = 2δ√((1+c_q⁻²)(λ−ϵ)(κ−ϵ)) + c_q⁻¹(δ²κ + λ) − |δ²β − α|`.
pub fn j_value(p: &Params, delta: f64, eps_bal: f64) -> Result<f64> {
    let m = p.lambda.min(p.kappa);
    if !(eps_bal >= 0.0 && eps_bal < m) {
        return Err(CglError::Domain(format!(
            "balance parameter must lie in [0, min(lambda, kappa)) = [0, {m}), got {eps_bal}"
        )));
    }
    let c_inv = strength_exponent_inv(p.q)?;
    let d2 = delta * delta;
    Ok(2.0 * delta * ((1.0 + c_inv * c_inv) * (p.lambda - eps_bal) * (p.kappa - eps_bal)).sqrt()
        + c_inv * (d2 * p.kappa + p.lambda)
        - (d2 * p.beta - p.alpha).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissiblePair {
    pub delta: f64,
    pub eps_bal: f64,
    pub j_value: f64,
}

/// Number of log-spaced δ samples in the fallback search over `[1e-3, 1e3]`.
pub const DELTA_GRID_POINTS: usize = 241;

/// Chooses δ by the case analysis on the signs of α, β and the discriminant,
/// then the largest ϵ ∈ (0, min(λ,κ)/2] with `J(δ, ϵ) ≥ 0` by bisection.
pub fn find_admissible_pair(p: &Params) -> Result<Option<AdmissiblePair>> {
    validate_params(p)?;
    let c_inv = strength_exponent_inv(p.q)?;
    let j0 = |d: f64| j_value(p, d, 0.0);

    let analytic = if p.alpha == 0.0 && p.beta == 0.0 {
        Some(1.0)
    } else if p.alpha * p.beta > 0.0 {
        Some((p.alpha / p.beta).sqrt())
    } else {
        let a = c_inv * p.kappa - p.beta.abs();
        if a < 0.0 {
            // vertex of the concave quadratic J(·, 0)
            Some(((1.0 + c_inv * c_inv) * p.lambda * p.kappa).sqrt() / (-a))
        } else {
            let mut d = 1.0;
            let mut found = None;
            for _ in 0..64 {
                if j0(d)? > 0.0 {
                    found = Some(d);
                    break;
                }
                d *= 2.0;
            }
            found
        }
    };

    let mut delta = None;
    if let Some(d) = analytic {
        if j0(d)? > 0.0 {
            delta = Some(d);
        }
    }
    if delta.is_none() {
        let (lo, hi) = (1e-3f64.ln(), 1e3f64.ln());
        let mut best: Option<(f64, f64)> = None;
        for i in 0..DELTA_GRID_POINTS {
            let d = (lo + (hi - lo) * i as f64 / (DELTA_GRID_POINTS - 1) as f64).exp();
            let j = j0(d)?;
            if j > 0.0 && best.is_none_or(|(_, bj)| j > bj) {
                best = Some((d, j));
            }
        }
        delta = best.map(|(d, _)| d);
    }
    let Some(delta) = delta else {
        return Ok(None);
    };

    let m = p.lambda.min(p.kappa);
    let mut hi = 0.5 * m;
    let eps_bal = if j_value(p, delta, hi)? >= 0.0 {
        hi
    } else {
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if j_value(p, delta, mid)? >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * m {
                break;
            }
        }
        lo
    };
    if eps_bal <= 0.0 {
        return Ok(None);
    }
    Ok(Some(AdmissiblePair { delta, eps_bal, j_value: j_value(p, delta, eps_bal)? }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionRaster {
    pub bounds: RegionBounds,
    pub nx: usize,
    pub ny: usize,
    pub r: f64,
    /// Row-major, row 0 at `ymax`.
    pub cells: Vec<RegionClassification>,
    /// Samples where the inequality definition and the union definition agree.
    pub agreement: usize,
    /// `(x, y, inside, in_union)` for every disagreeing sample.
    pub disagreements: Vec<(f64, f64, bool, bool)>,
}

impl RegionRaster {
    pub fn sample_point(&self, row: usize, col: usize) -> (f64, f64) {
        raster_coord(&self.bounds, self.nx, self.ny, row, col)
    }

    /// Binary PGM, 255 = inside.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        out.extend(self.cells.iter().map(|c| if c.inside { 255u8 } else { 0u8 }));
        out
    }

    pub fn disagreement_csv(&self) -> String {
        let mut s = String::from("x,y,inside,in_union\n");
        for (x, y, a, b) in &self.disagreements {
            s.push_str(&format!("{x},{y},{},{}\n", *a as u8, *b as u8));
        }
        s
    }
}

fn raster_coord(b: &RegionBounds, nx: usize, ny: usize, row: usize, col: usize) -> (f64, f64) {
    let x = b.xmin + (b.xmax - b.xmin) * col as f64 / (nx - 1) as f64;
    let y = b.ymax - (b.ymax - b.ymin) * row as f64 / (ny - 1) as f64;
    (x, y)
}

/// Samples the region on an `nx × ny` lattice including the bounds.
pub fn raster_region(bounds: RegionBounds, nx: usize, ny: usize, r: f64) -> Result<RegionRaster> {
    if nx < 2 || ny < 2 {
        return Err(CglError::Domain("raster resolution must be at least 2 per axis".into()));
    }
    let ok = [bounds.xmin, bounds.xmax, bounds.ymin, bounds.ymax].iter().all(|v| v.is_finite());
    if !ok || !(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin) {
        return Err(CglError::Domain(format!("degenerate raster bounds {bounds:?}")));
    }
    let rows: Vec<Vec<RegionClassification>> = (0..ny)
        .into_par_iter()
        .map(|row| {
            (0..nx)
                .map(|col| {
                    let (x, y) = raster_coord(&bounds, nx, ny, row, col);
                    classify_region_point(x, y, r)
                })
                .collect()
        })
        .collect();
    let cells: Vec<RegionClassification> = rows.into_iter().flatten().collect();
    let mut agreement = 0;
    let mut disagreements = Vec::new();
    for (k, c) in cells.iter().enumerate() {
        if c.inside == c.in_union() {
            agreement += 1;
        } else {
            let (x, y) = raster_coord(&bounds, nx, ny, k / nx, k % nx);
            disagreements.push((x, y, c.inside, c.in_union()));
        }
    }
    Ok(RegionRaster { bounds, nx, ny, r, cells, agreement, disagreements })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub samples: usize,
    pub agree: usize,
    pub rejected_near_boundary: usize,
}

impl AgreementStats {
    pub fn fraction(&self) -> f64 {
        self.agree as f64 / self.samples as f64
    }
}

/// Uniform samples in `[−half_width, half_width]²` kept only if they are at
/// least `margin` away from every clause boundary.
pub fn sample_region_agreement(
    r: f64,
    samples: usize,
    half_width: f64,
    margin: f64,
    seed: u64,
) -> AgreementStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    let mut kept = 0;
    let mut rejected = 0;
    while kept < samples {
        let x = rng.random_range(-half_width..half_width);
        let y = rng.random_range(-half_width..half_width);
        if near_region_boundary(x, y, r, margin) {
            rejected += 1;
            continue;
        }
        kept += 1;
        let c = classify_region_point(x, y, r);
        if c.inside == c.in_union() {
            agree += 1;
        }
    }
    AgreementStats { samples, agree, rejected_near_boundary: rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lambda: f64, kappa: f64, alpha: f64, beta: f64) -> Params {
        Params { lambda, kappa, alpha, beta, gamma: 1.0, q: 4.0, r: 6.0, ..Params::default() }
    }

    #[test]
    fn strength_exponent_values() {
        assert_eq!(strength_exponent(2.0).unwrap(), 0.0);
        assert!((strength_exponent(4.0).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((strength_exponent(4.0).unwrap() - 0.5773503).abs() < 1e-7);
        assert!((strength_exponent(6.0).unwrap() - 2.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!((strength_exponent(6.0).unwrap() - 0.8944272).abs() < 1e-7);
        assert!(strength_exponent(1.5).is_err());
    }

    #[test]
    fn hand_classified_points() {
        let c = classify_region_point(1.0, 1.0, 0.5);
        assert!(c.inside && c.s3);
        assert!(classify_region_point(2.0, -2.0, 1.0).inside);
        let c = classify_region_point(3.0, -3.0, 1.0);
        assert!(!c.inside);
        assert!(!c.s1 && !c.s2 && !c.s3 && !c.s4);
        assert!(classify_region_point(0.0, 0.0, 0.0).inside);
    }

    #[test]
    fn union_misses_small_set_below_r_one() {
        let c = classify_region_point(0.6, -0.6, 0.5);
        assert!(c.inside);
        assert!(!c.in_union());
    }

    #[test]
    fn validate_examples() {
        let rep = validate_params(&p(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!(rep.in_region && rep.region.s3);
        let rep = validate_params(&p(1.0, 1.0, 2.0, -2.0)).unwrap();
        assert!(rep.in_region);
        assert!(rep.warnings.is_empty());
        let err = validate_params(&p(1.0, -1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, CglError::InvalidParams(_)));
        let mut bad = Params::default();
        bad.r = bad.q;
        assert!(validate_params(&bad).is_err());
        let rep = validate_params(&p(1.0, 1.0, 4.0, -4.0)).unwrap();
        assert!(!rep.in_region);
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn j_value_examples() {
        let pp = p(1.0, 1.0, 1.0, 1.0);
        let c_inv = 3f64.sqrt();
        let expect = 2.0 * ((1.0 + c_inv * c_inv) * 1.0f64).sqrt() + c_inv * 2.0;
        assert!((j_value(&pp, 1.0, 0.0).unwrap() - expect).abs() < 1e-14);
        let pp = p(2.0, 3.0, 0.7, -0.4);
        assert!((j_value(&pp, 0.0, 0.0).unwrap() - (c_inv * 2.0 - 0.7)).abs() < 1e-14);
        let pp = p(1.0, 1.0, 2.0, -2.0);
        assert!((j_value(&pp, 1.0, 0.0).unwrap() - 2.0 * c_inv).abs() < 1e-14);
        assert!(j_value(&pp, 1.0, 1.0).is_err());
    }

    #[test]
    fn admissible_pair_cases() {
        let pp = p(1.0, 1.0, 2.0, 0.5);
        let pair = find_admissible_pair(&pp).unwrap().unwrap();
        assert!((pair.delta - 2.0).abs() < 1e-15);
        assert!(pair.j_value > 0.0);

        let pp = p(1.5, 0.8, 0.0, 0.0);
        let pair = find_admissible_pair(&pp).unwrap().unwrap();
        assert_eq!(pair.delta, 1.0);
        assert!(pair.j_value > 0.0);
        assert_eq!(pair.eps_bal, 0.4);

        // outside CGL(√3): (16 − 1)/8 ≥ √3
        assert!(find_admissible_pair(&p(1.0, 1.0, 4.0, -4.0)).unwrap().is_none());
        // inside despite the large skew: (9 − 1)/6 < √3
        let pair = find_admissible_pair(&p(1.0, 1.0, 3.0, -3.0)).unwrap().unwrap();
        assert!(pair.j_value >= 0.0 && pair.eps_bal > 0.0);

        assert!(find_admissible_pair(&p(-1.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn raster_examples() {
        let b = RegionBounds { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0 };
        let ras = raster_region(b, 3, 3, 10.0).unwrap();
        assert!(ras.cells.iter().all(|c| c.inside));
        assert_eq!(ras.agreement, 9);

        let b = RegionBounds { xmin: 0.1, xmax: 5.0, ymin: 0.2, ymax: 3.0 };
        let ras = raster_region(b, 7, 5, 0.3).unwrap();
        assert!(ras.cells.iter().all(|c| c.inside && c.s3));

        let b = RegionBounds { xmin: 2.5, xmax: 3.5, ymin: -3.5, ymax: -2.5 };
        let ras = raster_region(b, 11, 11, 1.0).unwrap();
        for row in 0..11 {
            for col in 0..11 {
                let (x, y) = ras.sample_point(row, col);
                assert!((x * y).abs() - 1.0 >= x.abs() + y.abs());
            }
        }
        assert!(ras.cells.iter().all(|c| !c.inside));

        assert!(raster_region(b, 1, 4, 1.0).is_err());
        let flat = RegionBounds { xmin: 1.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 };
        assert!(raster_region(flat, 4, 4, 1.0).is_err());
    }

    #[test]
    fn pgm_layout() {
        let b = RegionBounds { xmin: -5.0, xmax: 5.0, ymin: -5.0, ymax: 5.0 };
        let ras = raster_region(b, 8, 4, 3f64.sqrt()).unwrap();
        let pgm = ras.to_pgm();
        let header = b"P5\n8 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len() - header.len(), 32);
    }

    #[test]
    fn j_continuous_in_balance_parameter() {
        let pp = p(1.0, 2.0, 0.5, -1.0);
        let j0 = j_value(&pp, 0.8, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let e = 10f64.powi(-k);
            let d = (j_value(&pp, 0.8, e).unwrap() - j0).abs();
            assert!(d <= prev);
            prev = d;
        }
        assert!(prev < 1e-8);
    }

    proptest! {
        #[test]
        fn strength_exponent_monotone(a in 2.0f64..50.0, b in 2.0f64..50.0) {
            prop_assume!(a < b);
            prop_assert!(strength_exponent(a).unwrap() < strength_exponent(b).unwrap());
        }

        #[test]
        fn region_symmetry(x in -20.0f64..20.0, y in -20.0f64..20.0, r in 0.0f64..5.0) {
            let c = classify_region_point(x, y, r).inside;
            prop_assert_eq!(c, classify_region_point(y, x, r).inside);
            prop_assert_eq!(c, classify_region_point(-x, -y, r).inside);
        }

        #[test]
        fn inside_implies_admissible_pair(
            lambda in 0.1f64..3.0, kappa in 0.1f64..3.0,
            alpha in -6.0f64..6.0, beta in -6.0f64..6.0, q in 2.2f64..8.0,
        ) {
            let pp = Params { lambda, kappa, alpha, beta, q, r: q + 1.0, ..Params::default() };
            let rep = validate_params(&pp).unwrap();
            if rep.in_region {
                let pair = find_admissible_pair(&pp).unwrap();
                prop_assert!(pair.is_some());
                prop_assert!(pair.unwrap().j_value >= 0.0);
            }
        }
    }
}
