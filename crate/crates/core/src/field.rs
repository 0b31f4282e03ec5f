//! Grids on intervals and rectangles with homogeneous Dirichlet data, and
//! complex fields stored as `(u₁, u₂)` pairs per interior node.
//!
//! Node-based quadrature is used for `ψ_p` and the `L^p` norms, edge-based
//! quadrature for `φ`. With this pairing `dphi` and `dpsi` are the exact
//! gradients of `phi` and `psi` in the weighted inner product, and summation
//! by parts holds to rounding.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CglError, Result};

/// Fixed-order compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut k = KahanSum::new();
    for x in it {
        k.add(x);
    }
    k.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: Vec<usize>,
    lengths: Vec<f64>,
}

impl Grid {
    pub fn new(n: &[usize], lengths: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 2 || n.len() != lengths.len() {
            return Err(CglError::InvalidGrid(format!(
                "need 1 or 2 axes with matching lengths, got n = {n:?}, lengths = {lengths:?}"
            )));
        }
        if n.contains(&0) {
            return Err(CglError::InvalidGrid("every axis needs at least one interior node".into()));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(CglError::InvalidGrid(format!("axis lengths must be positive, got {lengths:?}")));
        }
        Ok(Grid { n: n.to_vec(), lengths: lengths.to_vec() })
    }

    pub fn line(n: usize, length: f64) -> Result<Self> {
        Self::new(&[n], &[length])
    }

    pub fn rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(&[nx, ny], &[lx, ly])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / (self.n[axis] + 1) as f64
    }

    pub fn nodes(&self) -> usize {
        self.n.iter().product()
    }

    /// |Ω|.
    pub fn measure(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight of one node; also the weight of one edge.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Physical coordinates of the interior node with row-major index `node`.
    pub fn coords(&self, node: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![(node + 1) as f64 * self.spacing(0)],
            _ => {
                let ny = self.n[1];
                let (i, j) = (node / ny, node % ny);
                vec![(i + 1) as f64 * self.spacing(0), (j + 1) as f64 * self.spacing(1)]
            }
        }
    }

    /// Eigenvalue of `−Δ_h` for the discrete sine mode with wave numbers `k` (1-based).
    pub fn eigenvalue(&self, k: &[usize]) -> f64 {
        (0..self.dim())
            .map(|a| {
                let h = self.spacing(a);
                let s = (k[a] as f64 * std::f64::consts::PI * h / (2.0 * self.lengths[a])).sin();
                4.0 / (h * h) * s * s
            })
            .sum()
    }

    /// Values of the discrete sine mode `Π sin(k_a π x_a / L_a)` at interior nodes.
    pub fn sine_mode(&self, k: &[usize]) -> Vec<f64> {
        (0..self.nodes())
            .map(|node| {
                let x = self.coords(node);
                (0..self.dim())
                    .map(|a| (k[a] as f64 * std::f64::consts::PI * x[a] / self.lengths[a]).sin())
                    .product()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CField {
    grid: Arc<Grid>,
    data: Vec<f64>,
}

impl PartialEq for CField {
    fn eq(&self, other: &Self) -> bool {
        *self.grid == *other.grid && self.data == other.data
    }
}

impl CField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let len = 2 * grid.nodes();
        CField { grid, data: vec![0.0; len] }
    }

    pub fn from_data(grid: Arc<Grid>, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * grid.nodes() {
            return Err(CglError::GridMismatch(format!(
                "field data has {} values, grid needs {}",
                data.len(),
                2 * grid.nodes()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CglError::Domain("field values must be finite".into()));
        }
        Ok(CField { grid, data })
    }

    /// Field `amp · mode(x) · (cos θ, sin θ)`.
    pub fn from_real_profile(grid: Arc<Grid>, profile: &[f64], amp: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let mut data = Vec::with_capacity(2 * profile.len());
        for &v in profile {
            data.push(amp * v * c);
            data.push(amp * v * s);
        }
        CField { grid, data }
    }

    /// Uniform random values in `[−amp, amp]` at each node.
    pub fn random<R: Rng>(grid: Arc<Grid>, amp: f64, rng: &mut R) -> Self {
        let len = 2 * grid.nodes();
        let data = (0..len).map(|_| rng.random_range(-amp..=amp)).collect();
        CField { grid, data }
    }

    /// Random combination of the sine modes with wave numbers up to `kmax` per axis.
    pub fn random_smooth<R: Rng>(grid: Arc<Grid>, kmax: usize, amp: f64, rng: &mut R) -> Self {
        let mut f = CField::zeros(grid.clone());
        let modes: Vec<Vec<usize>> = match grid.dim() {
            1 => (1..=kmax).map(|k| vec![k]).collect(),
            _ => (1..=kmax).flat_map(|i| (1..=kmax).map(move |j| vec![i, j])).collect(),
        };
        for k in modes {
            let prof = grid.sine_mode(&k);
            let a = rng.random_range(-amp..=amp);
            let b = rng.random_range(-amp..=amp);
            for (node, v) in prof.iter().enumerate() {
                f.data[2 * node] += a * v;
                f.data[2 * node + 1] += b * v;
            }
        }
        f
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / 2
    }

    #[inline]
    pub fn node(&self, i: usize) -> [f64; 2] {
        [self.data[2 * i], self.data[2 * i + 1]]
    }

    pub fn same_grid(&self, other: &CField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn check_grid(&self, other: &CField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(CglError::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    pub fn map_nodes(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> CField {
        let mut data = Vec::with_capacity(self.data.len());
        for c in self.data.chunks_exact(2) {
            let v = f([c[0], c[1]]);
            data.push(v[0]);
            data.push(v[1]);
        }
        CField { grid: self.grid.clone(), data }
    }

    pub fn scale(&self, s: f64) -> CField {
        CField { grid: self.grid.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &CField) -> CField {
        debug_assert!(self.same_grid(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect();
        CField { grid: self.grid.clone(), data }
    }

    pub fn add_scaled_in_place(&mut self, s: f64, other: &CField) {
        debug_assert!(self.same_grid(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Add for &CField {
    type Output = CField;
    fn add(self, rhs: &CField) -> CField {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &CField {
    type Output = CField;
    fn sub(self, rhs: &CField) -> CField {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<f64> for &CField {
    type Output = CField;
    fn mul(self, rhs: f64) -> CField {
        self.scale(rhs)
    }
}

/// `IU = (−u₂, u₁)`.
pub fn apply_i(u: &CField) -> CField {
    u.map_nodes(|[a, b]| [-b, a])
}

/// `(U, V)` with node quadrature.
pub fn inner(u: &CField, v: &CField) -> Result<f64> {
    u.check_grid(v)?;
    Ok(inner_unchecked(u, v))
}

pub(crate) fn inner_unchecked(u: &CField, v: &CField) -> f64 {
    kahan_sum(u.data.iter().zip(&v.data).map(|(a, b)| a * b)) * u.grid.cell_volume()
}

pub fn norm2(u: &CField) -> f64 {
    inner_unchecked(u, u).sqrt()
}

/// `(Σ |U|^p · cellVolume)^{1/p}`.
pub fn lp_norm(u: &CField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(CglError::Domain(format!("lp_norm needs p >= 1, got {p}")));
    }
    let s = kahan_sum(u.data.chunks_exact(2).map(|c| c[0].hypot(c[1]).powf(p)));
    Ok((s * u.grid.cell_volume()).powf(1.0 / p))
}

/// Edge differences `(U(x + h e_a) − U(x)) / h_a` including the boundary edges
/// against the zero ghost values.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    /// One vector per axis, two reals per edge.
    pub axes: Vec<Vec<f64>>,
    pub edge_volume: f64,
}

impl EdgeField {
    pub fn inner(&self, other: &EdgeField) -> f64 {
        let mut k = KahanSum::new();
        for (a, b) in self.axes.iter().zip(&other.axes) {
            for (x, y) in a.iter().zip(b) {
                k.add(x * y);
            }
        }
        k.value() * self.edge_volume
    }
}

pub fn grad_h(u: &CField) -> EdgeField {
    let g = u.grid();
    let vol = g.cell_volume();
    match g.dim() {
        1 => {
            let n = g.n[0];
            let h = g.spacing(0);
            let mut e = Vec::with_capacity(2 * (n + 1));
            for i in 0..=n {
                for c in 0..2 {
                    let right = if i < n { u.data[2 * i + c] } else { 0.0 };
                    let left = if i > 0 { u.data[2 * (i - 1) + c] } else { 0.0 };
                    e.push((right - left) / h);
                }
            }
            EdgeField { axes: vec![e], edge_volume: vol }
        }
        _ => {
            let (nx, ny) = (g.n[0], g.n[1]);
            let (hx, hy) = (g.spacing(0), g.spacing(1));
            let at = |i: isize, j: isize, c: usize| -> f64 {
                if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                    0.0
                } else {
                    u.data[2 * (i as usize * ny + j as usize) + c]
                }
            };
            let mut ex = Vec::with_capacity(2 * (nx + 1) * ny);
            for i in 0..=nx as isize {
                for j in 0..ny as isize {
                    for c in 0..2 {
                        ex.push((at(i, j, c) - at(i - 1, j, c)) / hx);
                    }
                }
            }
            let mut ey = Vec::with_capacity(2 * nx * (ny + 1));
            for i in 0..nx as isize {
                for j in 0..=ny as isize {
                    for c in 0..2 {
                        ey.push((at(i, j, c) - at(i, j - 1, c)) / hy);
                    }
                }
            }
            EdgeField { axes: vec![ex, ey], edge_volume: vol }
        }
    }
}

/// 3-point (1-D) or 5-point (2-D) Laplacian with zero Dirichlet ghosts.
pub fn laplacian_h(u: &CField) -> CField {
    let mut out = CField::zeros(u.grid.clone());
    neg_laplacian_into(u.data(), u.grid(), &mut out.data);
    for v in out.data.iter_mut() {
        *v = -*v;
    }
    out
}

/// Writes `−Δ_h u` into `out` for a raw 2-per-node buffer.
pub(crate) fn neg_laplacian_into(u: &[f64], g: &Grid, out: &mut [f64]) {
    match g.dim() {
        1 => {
            let n = g.n[0];
            let ih2 = 1.0 / (g.spacing(0) * g.spacing(0));
            for i in 0..n {
                for c in 0..2 {
                    let mid = u[2 * i + c];
                    let l = if i > 0 { u[2 * (i - 1) + c] } else { 0.0 };
                    let r = if i + 1 < n { u[2 * (i + 1) + c] } else { 0.0 };
                    out[2 * i + c] = (2.0 * mid - l - r) * ih2;
                }
            }
        }
        _ => {
            let (nx, ny) = (g.n[0], g.n[1]);
            let ihx2 = 1.0 / (g.spacing(0) * g.spacing(0));
            let ihy2 = 1.0 / (g.spacing(1) * g.spacing(1));
            for i in 0..nx {
                for j in 0..ny {
                    let k = i * ny + j;
                    for c in 0..2 {
                        let mid = u[2 * k + c];
                        let w = if i > 0 { u[2 * (k - ny) + c] } else { 0.0 };
                        let e = if i + 1 < nx { u[2 * (k + ny) + c] } else { 0.0 };
                        let s = if j > 0 { u[2 * (k - 1) + c] } else { 0.0 };
                        let nn = if j + 1 < ny { u[2 * (k + 1) + c] } else { 0.0 };
                        out[2 * k + c] = (2.0 * mid - w - e) * ihx2 + (2.0 * mid - s - nn) * ihy2;
                    }
                }
            }
        }
    }
}

/// `φ(U) = ½ Σ_edges |∇_h U|² · edgeVolume`.
pub fn phi(u: &CField) -> f64 {
    let g = grad_h(u);
    0.5 * g.inner(&g)
}

/// `ψ_p(U) = (1/p) Σ |U|^p · cellVolume`.
pub fn psi(u: &CField, p: f64) -> f64 {
    let s = kahan_sum(u.data.chunks_exact(2).map(|c| c[0].hypot(c[1]).powf(p)));
    s * u.grid.cell_volume() / p
}

/// `∂φ(U) = −Δ_h U`.
pub fn dphi(u: &CField) -> CField {
    let mut out = CField::zeros(u.grid.clone());
    neg_laplacian_into(u.data(), u.grid(), &mut out.data);
    out
}

/// Pointwise `|V|^{p−2} V`, zero at `V = 0`.
#[inline]
pub fn power_map(v: [f64; 2], p: f64) -> [f64; 2] {
    let a = v[0].hypot(v[1]);
    if a == 0.0 {
        return [0.0, 0.0];
    }
    let s = a.powf(p - 2.0);
    [s * v[0], s * v[1]]
}

/// `∂ψ_p(U) = |U|^{p−2} U`.
pub fn dpsi(u: &CField, p: f64) -> CField {
    u.map_nodes(|v| power_map(v, p))
}
