//! Principal-value evaluation of linear and bilinear singular integrals on
//! sampled data, and the dual pairings built on them.
//!
//! Linear operators in one dimension use a far-field midpoint sum over
//! cells farther than `eps` from the target plus a near-field correction:
//! on the excised cells the density is replaced by its five-point Lagrange
//! interpolant and integrated against the kernel with Gauss nodes paired by
//! reflection about the target, so odd singularities cancel node by node.
//! Bilinear operators in one dimension, evaluated at a grid point, get the
//! analogous correction on the excised cells: a polar principal value on the
//! target's own cell and tensor Gauss rules on the others. Two-dimensional
//! operators use plain symmetric excision.

use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::gauss::{gauss_legendre, gl16};
use crate::grid::{Grid, SampledFunction};
use crate::kernels::{Arity, KernelModel};
use crate::summation::{ComplexSum, NeumaierSum};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const EDGE_SLACK: f64 = 1e-9;
/// Chebyshev radius, in cells, of the bilinear midpoint-error correction.
const LATTICE_REACH: i64 = 8;

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Excision and convergence-check policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvPolicy {
    /// Excision radius in units of the grid spacing.
    pub c_eps: f64,
    pub check: bool,
    pub tol_pv: f64,
}

impl Default for PvPolicy {
    fn default() -> Self {
        Self { c_eps: 2.0, check: true, tol_pv: 1e-2 }
    }
}

impl PvPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_eps >= 1.0) {
            return Err(LabError::Invalid(format!("excision radius {} h is below one cell", self.c_eps)));
        }
        if !(self.tol_pv > 0.0) {
            return Err(LabError::Invalid(format!("tol_pv must be positive, got {}", self.tol_pv)));
        }
        Ok(())
    }

    pub fn eps(&self, g: &Grid) -> f64 {
        self.c_eps * g.spacing()
    }
}

/// A principal value with its half-radius companion estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvValue {
    pub value: Complex64,
    pub refined: Option<Complex64>,
    pub converged: bool,
}

impl PvValue {
    fn new(value: Complex64, refined: Option<Complex64>, tol: f64) -> Self {
        let converged = refined.is_none_or(|r| (r - value).norm() <= tol * (1.0 + value.norm()));
        Self { value, refined, converged }
    }
}

/// Convergence diagnostics of a field evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PvDiagnostics {
    pub points: usize,
    pub flagged: usize,
    pub max_change: f64,
}

impl PvDiagnostics {
    fn absorb(&mut self, v: &PvValue) {
        self.points += 1;
        if let Some(r) = v.refined {
            self.max_change = self.max_change.max((r - v.value).norm() / (1.0 + v.value.norm()));
        }
        if !v.converged {
            self.flagged += 1;
        }
    }

    pub fn merge(&mut self, other: &PvDiagnostics) {
        self.points += other.points;
        self.flagged += other.flagged;
        self.max_change = self.max_change.max(other.max_change);
    }
}

/// Nonzero samples with their positions in cell units.
struct Support {
    dense: Vec<Complex64>,
    idx: Vec<usize>,
    cells: Vec<[f64; 2]>,
    pts: Vec<[f64; 2]>,
    vals: Vec<Complex64>,
}

impl Support {
    fn of(f: &SampledFunction) -> Self {
        let g = f.grid();
        let mut s = Support {
            dense: f.values().to_vec(),
            idx: Vec::new(),
            cells: Vec::new(),
            pts: Vec::new(),
            vals: Vec::new(),
        };
        for (i, v) in f.values().iter().enumerate() {
            if *v != ZERO {
                let m = g.multi_index(i);
                s.idx.push(i);
                s.cells.push([m[0] as f64 + 0.5, m[1] as f64 + 0.5]);
                s.pts.push(g.point(i));
                s.vals.push(*v);
            }
        }
        s
    }
}

fn cell_position(g: &Grid, x: &[f64]) -> [f64; 2] {
    let mut u = [0.0; 2];
    for (a, slot) in u.iter_mut().enumerate().take(g.dim()) {
        *slot = g.cell_coordinate(a, x[a]);
    }
    u
}

fn cell_distance(d: usize, u: &[f64; 2], c: &[f64; 2]) -> f64 {
    if d == 1 {
        (u[0] - c[0]).abs()
    } else {
        ((u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2)).sqrt()
    }
}

/// Far sum outside radius `r` and the annulus `r/2 < dist <= r`, both in
/// cell units and before multiplication by the cell volume.
fn linear_far(k: &KernelModel, g: &Grid, s: &Support, x: &[f64], r: f64) -> (Complex64, Complex64) {
    let d = g.dim();
    let u = cell_position(g, x);
    let mut far = ComplexSum::new();
    let mut ring = ComplexSum::new();
    for j in 0..s.idx.len() {
        let dc = cell_distance(d, &u, &s.cells[j]);
        if dc > r + EDGE_SLACK {
            far.add(k.eval2(x, &s.pts[j][..d]) * s.vals[j]);
        } else if dc > 0.5 * r + EDGE_SLACK {
            ring.add(k.eval2(x, &s.pts[j][..d]) * s.vals[j]);
        }
    }
    (far.value(), ring.value())
}

fn lagrange5(xi: f64) -> [f64; 5] {
    let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut out = [1.0; 5];
    for (m, o) in out.iter_mut().enumerate() {
        for (q, nq) in nodes.iter().enumerate() {
            if q != m {
                *o *= (xi - nq) / (nodes[m] - nq);
            }
        }
    }
    out
}

/// Five-point interpolant of the samples around a target in one dimension.
struct Stencil {
    lower: f64,
    h: f64,
    center: usize,
    samples: [Complex64; 5],
}

impl Stencil {
    fn around(g: &Grid, vals: &[Complex64], u: f64) -> Option<Self> {
        let n = g.n();
        let i0 = ((u - 0.5).round().max(2.0) as usize).min(n - 3);
        let mut samples = [ZERO; 5];
        for (m, s) in samples.iter_mut().enumerate() {
            *s = vals[i0 - 2 + m];
        }
        if samples.iter().all(|v| *v == ZERO) {
            return None;
        }
        Some(Self { lower: g.bbox().lower(0), h: g.spacing(), center: i0, samples })
    }

    fn eval(&self, y: f64) -> Complex64 {
        let xi = (y - self.lower) / self.h - (self.center as f64 + 0.5);
        let w = lagrange5(xi);
        let mut acc = ZERO;
        for (s, wm) in self.samples.iter().zip(w) {
            acc += s * wm;
        }
        acc
    }
}

fn gauss_segment<F: FnMut(f64) -> Complex64>(mut f: F, a: f64, b: f64, panels: usize, acc: &mut ComplexSum) {
    if b <= a {
        return;
    }
    let (xs, ws) = gl16();
    let width = (b - a) / panels as f64;
    for p in 0..panels {
        let mid = a + width * (p as f64 + 0.5);
        for (t, w) in xs.iter().zip(ws) {
            acc.add(f(mid + 0.5 * width * t) * (0.5 * width * w));
        }
    }
}

/// Near-field integral over the excised cells within radius `r` cells.
fn near_1d(k: &KernelModel, g: &Grid, st: &Stencil, x: f64, r: f64) -> Complex64 {
    let n = g.n() as f64;
    let u = g.cell_coordinate(0, x);
    let j_lo = (u - 0.5 - r - EDGE_SLACK).ceil().max(0.0);
    let j_hi = (u - 0.5 + r + EDGE_SLACK).floor().min(n - 1.0);
    if j_hi < j_lo {
        return ZERO;
    }
    let h = g.spacing();
    let a = st.lower + j_lo * h;
    let b = st.lower + (j_hi + 1.0) * h;
    let mut acc = ComplexSum::new();
    if x > a && x < b {
        let rho = (x - a).min(b - x);
        let fx = st.eval(x);
        let pair = |t: f64| k.eval2(&[x], &[x + t]) + k.eval2(&[x], &[x - t]);
        // S(t) = K(x, x+t) + K(x, x-t) may blow up like L/t; that piece is
        // excised at radius r cells, the rest is integrated to the origin
        let t0 = 1e-6 * rho;
        let log_coef = pair(t0) * t0;
        let eps = (r * h).min(rho);
        gauss_segment(
            |t| {
                k.eval2(&[x], &[x + t]) * (st.eval(x + t) - fx)
                    + k.eval2(&[x], &[x - t]) * (st.eval(x - t) - fx)
                    + fx * (pair(t) - log_coef / t)
            },
            0.0,
            rho,
            2,
            &mut acc,
        );
        acc.add(fx * log_coef * (rho / eps).ln());
        gauss_segment(|y| k.eval2(&[x], &[y]) * st.eval(y), x + rho, b, 2, &mut acc);
        gauss_segment(|y| k.eval2(&[x], &[y]) * st.eval(y), a, x - rho, 2, &mut acc);
    } else {
        gauss_segment(|y| k.eval2(&[x], &[y]) * st.eval(y), a, b, 4, &mut acc);
    }
    acc.value()
}

fn linear_at(k: &KernelModel, f: &SampledFunction, s: &Support, x: &[f64], policy: &PvPolicy) -> PvValue {
    let g = f.grid();
    let vol = g.cell_volume();
    let r = policy.c_eps;
    let (far, ring) = linear_far(k, g, s, x, r);
    if g.dim() == 1 {
        let st = Stencil::around(g, f.values(), g.cell_coordinate(0, x[0]));
        let near = |rad: f64| st.as_ref().map_or(ZERO, |st| near_1d(k, g, st, x[0], rad));
        let value = far * vol + near(r);
        let refined = policy.check.then(|| (far + ring) * vol + near(0.5 * r));
        PvValue::new(value, refined, policy.tol_pv)
    } else {
        let value = far * vol;
        let refined = policy.check.then(|| (far + ring) * vol);
        PvValue::new(value, refined, policy.tol_pv)
    }
}

/// Principal value of `int K(x, y) f(y) dy` at any point `x`.
pub fn apply_linear(k: &KernelModel, f: &SampledFunction, x: &[f64], policy: &PvPolicy) -> Result<PvValue> {
    k.require(Arity::Linear)?;
    policy.validate()?;
    check_dims(k, f.grid(), x)?;
    Ok(linear_at(k, f, &Support::of(f), x, policy))
}

fn check_dims(k: &KernelModel, g: &Grid, x: &[f64]) -> Result<()> {
    if k.dim() != g.dim() || x.len() != g.dim() {
        return Err(LabError::GridMismatch(format!(
            "kernel dimension {}, grid dimension {}, point dimension {}",
            k.dim(),
            g.dim(),
            x.len()
        )));
    }
    Ok(())
}

/// `T f` at every grid point.
pub fn apply_linear_field(k: &KernelModel, f: &SampledFunction, policy: &PvPolicy) -> Result<SampledFunction> {
    Ok(apply_linear_field_checked(k, f, policy)?.0)
}

pub fn apply_linear_field_checked(
    k: &KernelModel,
    f: &SampledFunction,
    policy: &PvPolicy,
) -> Result<(SampledFunction, PvDiagnostics)> {
    k.require(Arity::Linear)?;
    policy.validate()?;
    let g = f.grid();
    check_dims(k, g, &vec![0.0; g.dim()])?;
    let s = Support::of(f);
    let d = g.dim();
    let out: Vec<PvValue> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let p = g.point(i);
            if s.idx.is_empty() {
                PvValue::new(ZERO, policy.check.then_some(ZERO), policy.tol_pv)
            } else {
                linear_at(k, f, &s, &p[..d], policy)
            }
        })
        .collect();
    let mut diag = PvDiagnostics::default();
    out.iter().for_each(|v| diag.absorb(v));
    let field = SampledFunction::from_values(g, out.iter().map(|v| v.value).collect())?;
    Ok((field, diag))
}

fn tail_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(48))
}

/// Nodes and weights for `int_{b}^{inf} g(x) dx` through `x = b + L(1/s - 1)`.
fn tail_nodes(edge: f64, length: f64, outward: f64) -> Vec<(f64, f64)> {
    let (xs, ws) = tail_rule();
    xs.iter()
        .zip(ws)
        .map(|(t, w)| {
            let s = 0.5 * (t + 1.0);
            (edge + outward * length * (1.0 / s - 1.0), 0.5 * w * length / (s * s))
        })
        .collect()
}

/// An L^2 norm split into the grid part and the exterior tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub norm: f64,
    pub grid_part: f64,
    pub tail_part: f64,
    pub diagnostics: PvDiagnostics,
}

fn combine_norm(field: &SampledFunction, tail_sq: f64, diagnostics: PvDiagnostics) -> NormEstimate {
    let mut acc = NeumaierSum::new();
    for v in field.values() {
        acc.add(v.norm_sqr());
    }
    let grid_sq = acc.value() * field.grid().cell_volume();
    NormEstimate { norm: (grid_sq + tail_sq).sqrt(), grid_part: grid_sq.sqrt(), tail_part: tail_sq.sqrt(), diagnostics }
}

fn tail_square<F: Fn(f64) -> Complex64 + Sync>(g: &Grid, eval: F) -> f64 {
    let side = g.bbox().side();
    let mut nodes = tail_nodes(g.bbox().lower(0), side, -1.0);
    nodes.extend(tail_nodes(g.bbox().upper(0), side, 1.0));
    let terms: Vec<f64> = nodes.par_iter().map(|(x, w)| w * eval(*x).norm_sqr()).collect();
    let mut acc = NeumaierSum::new();
    terms.iter().for_each(|t| acc.add(*t));
    acc.value()
}

/// `||T f||_{L^2}`: over the whole line in one dimension (grid part plus
/// a mapped Gauss tail outside the box), over the grid box in two.
pub fn linear_l2_norm(k: &KernelModel, f: &SampledFunction, policy: &PvPolicy) -> Result<NormEstimate> {
    let (field, diag) = apply_linear_field_checked(k, f, policy)?;
    let g = f.grid();
    let tail = if g.dim() == 1 {
        let s = Support::of(f);
        let quiet = PvPolicy { check: false, ..*policy };
        tail_square(g, |x| linear_at(k, f, &s, &[x], &quiet).value)
    } else {
        0.0
    };
    Ok(combine_norm(&field, tail, diag))
}

fn bilinear_at(k: &KernelModel, g: &Grid, sf: &Support, sg: &Support, x: &[f64], policy: &PvPolicy) -> PvValue {
    let d = g.dim();
    let u = cell_position(g, x);
    let r = policy.c_eps;
    let dz: Vec<f64> = sg.cells.iter().map(|c| cell_distance(d, &u, c)).collect();
    let mut far = ComplexSum::new();
    let mut ring = ComplexSum::new();
    for j in 0..sf.idx.len() {
        let dy = cell_distance(d, &u, &sf.cells[j]);
        let y = &sf.pts[j][..d];
        let fy = sf.vals[j];
        for (m, dzm) in dz.iter().enumerate() {
            let s = dy + dzm;
            if s > r + EDGE_SLACK {
                far.add(k.eval3(x, y, &sg.pts[m][..d]) * (fy * sg.vals[m]));
            } else if s > 0.5 * r + EDGE_SLACK {
                ring.add(k.eval3(x, y, &sg.pts[m][..d]) * (fy * sg.vals[m]));
            }
        }
    }
    let vol2 = g.cell_volume() * g.cell_volume();
    let near = |rad: f64| bilinear_near(k, g, sf, sg, x, rad);
    let value = far.value() * vol2 + near(r);
    let refined = policy.check.then(|| (far.value() + ring.value()) * vol2 + near(0.5 * r));
    PvValue::new(value, refined, policy.tol_pv)
}

/// Near field of a one-dimensional bilinear operator at a grid point: the
/// excised cells `|i| + |j| <= r` around `(x, x)`, plus the midpoint error of
/// the far sum on the cells just outside them.
fn bilinear_near(k: &KernelModel, g: &Grid, sf: &Support, sg: &Support, x: &[f64], r: f64) -> Complex64 {
    if g.dim() != 1 {
        return ZERO;
    }
    let u = g.cell_coordinate(0, x[0]);
    let c = (u - 0.5).round();
    if (u - 0.5 - c).abs() > EDGE_SLACK || c < 0.0 || c >= g.n() as f64 {
        return ZERO;
    }
    let (Some(fs), Some(gs)) = (Stencil::around(g, &sf.dense, u), Stencil::around(g, &sg.dense, u)) else {
        return ZERO;
    };
    let x = x[0];
    let h = g.spacing();
    let n = g.n() as i64;
    let ci = c as i64;
    let reach = (r + EDGE_SLACK).floor() as i64;
    let (xs, ws) = gl16();
    let mut acc = ComplexSum::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            if (i == 0 && j == 0) || (i.abs() + j.abs()) as f64 > r + EDGE_SLACK {
                continue;
            }
            if !(0..n).contains(&(ci + i)) || !(0..n).contains(&(ci + j)) {
                continue;
            }
            let (y0, z0) = (x + (i as f64 - 0.5) * h, x + (j as f64 - 0.5) * h);
            for py in 0..2 {
                for pz in 0..2 {
                    let ym = y0 + (py as f64 + 0.5) * 0.5 * h;
                    let zm = z0 + (pz as f64 + 0.5) * 0.5 * h;
                    for (ty, wy) in xs.iter().zip(ws) {
                        let y = ym + 0.25 * h * ty;
                        let fy = fs.eval(y);
                        for (tz, wz) in xs.iter().zip(ws) {
                            let z = zm + 0.25 * h * tz;
                            let w = 0.0625 * h * h * wy * wz;
                            acc.add(k.eval3(&[x], &[y], &[z]) * (fy * gs.eval(z) * w));
                        }
                    }
                }
            }
        }
    }
    // midpoint error of the far sum on nearby cells, weighted by the samples
    let (gx, gw) = gl8();
    for i in -LATTICE_REACH..=LATTICE_REACH {
        for j in -LATTICE_REACH..=LATTICE_REACH {
            if (i.abs() + j.abs()) as f64 <= r + EDGE_SLACK {
                continue;
            }
            let (a, b) = (ci + i, ci + j);
            if !(0..n).contains(&a) || !(0..n).contains(&b) {
                continue;
            }
            let w = sf.dense[a as usize] * sg.dense[b as usize];
            if w == ZERO {
                continue;
            }
            let (yc, zc) = (x + i as f64 * h, x + j as f64 * h);
            let mut exact = ZERO;
            for (ty, wy) in gx.iter().zip(gw) {
                for (tz, wz) in gx.iter().zip(gw) {
                    exact += k.eval3(&[x], &[yc + 0.5 * h * ty], &[zc + 0.5 * h * tz]) * (0.25 * wy * wz);
                }
            }
            acc.add((exact - k.eval3(&[x], &[yc], &[zc])) * (w * h * h));
        }
    }
    // own cell in polar coordinates about (x, x); the L(theta)/t part is
    // excised on diamonds |y - x| + |z - x| > delta, whose log(1/delta)
    // terms cancel in the angular integral
    let f0 = fs.eval(x) * gs.eval(x);
    let t0 = 1e-6 * h;
    let quarter = std::f64::consts::FRAC_PI_2;
    for sector in 0..4 {
        let lo = -0.5 * quarter + sector as f64 * quarter;
        for pa in 0..2 {
            let am = lo + (pa as f64 + 0.5) * 0.5 * quarter;
            for (ta, wa) in xs.iter().zip(ws) {
                let th = am + 0.25 * quarter * ta;
                let wth = 0.25 * quarter * wa;
                let (sn, cs) = th.sin_cos();
                let rho = 0.5 * h / cs.abs().max(sn.abs());
                let rho_d = 1.0 / (cs.abs() + sn.abs());
                let lim = k.eval3(&[x], &[x + t0 * cs], &[x + t0 * sn]) * (t0 * t0);
                let mut radial = ComplexSum::new();
                gauss_segment(
                    |t| {
                        let (y, z) = (x + t * cs, x + t * sn);
                        k.eval3(&[x], &[y], &[z]) * (fs.eval(y) * gs.eval(z) * t) - lim * f0 / t
                    },
                    0.0,
                    rho,
                    2,
                    &mut radial,
                );
                radial.add(lim * f0 * (rho / rho_d).ln());
                acc.add(radial.value() * wth);
            }
        }
    }
    acc.value()
}

fn same_grid(a: &SampledFunction, b: &SampledFunction) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(LabError::GridMismatch("operands live on different grids".into()));
    }
    Ok(())
}

/// Principal value of `int int K(x, y, z) f(y) g(z) dy dz`, excising
/// `|x - y| + |x - z| <= eps`.
pub fn apply_bilinear(
    k: &KernelModel,
    f: &SampledFunction,
    g: &SampledFunction,
    x: &[f64],
    policy: &PvPolicy,
) -> Result<PvValue> {
    k.require(Arity::Bilinear)?;
    policy.validate()?;
    same_grid(f, g)?;
    check_dims(k, f.grid(), x)?;
    Ok(bilinear_at(k, f.grid(), &Support::of(f), &Support::of(g), x, policy))
}

pub fn apply_bilinear_field(
    k: &KernelModel,
    f: &SampledFunction,
    g: &SampledFunction,
    policy: &PvPolicy,
) -> Result<SampledFunction> {
    Ok(apply_bilinear_field_checked(k, f, g, policy)?.0)
}

pub fn apply_bilinear_field_checked(
    k: &KernelModel,
    f: &SampledFunction,
    g: &SampledFunction,
    policy: &PvPolicy,
) -> Result<(SampledFunction, PvDiagnostics)> {
    k.require(Arity::Bilinear)?;
    policy.validate()?;
    same_grid(f, g)?;
    let grid = f.grid();
    let d = grid.dim();
    check_dims(k, grid, &vec![0.0; d])?;
    let (sf, sg) = (Support::of(f), Support::of(g));
    let out: Vec<PvValue> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            bilinear_at(k, grid, &sf, &sg, &p[..d], policy)
        })
        .collect();
    let mut diag = PvDiagnostics::default();
    out.iter().for_each(|v| diag.absorb(v));
    let field = SampledFunction::from_values(grid, out.iter().map(|v| v.value).collect())?;
    Ok((field, diag))
}

/// `||T(f, g)||_{L^2}`, with the exterior tail in one dimension.
pub fn bilinear_l2_norm(
    k: &KernelModel,
    f: &SampledFunction,
    g: &SampledFunction,
    policy: &PvPolicy,
) -> Result<NormEstimate> {
    let (field, diag) = apply_bilinear_field_checked(k, f, g, policy)?;
    let grid = f.grid();
    let tail = if grid.dim() == 1 {
        let (sf, sg) = (Support::of(f), Support::of(g));
        let quiet = PvPolicy { check: false, ..*policy };
        tail_square(grid, |x| bilinear_at(k, grid, &sf, &sg, &[x], &quiet).value)
    } else {
        0.0
    };
    Ok(combine_norm(&field, tail, diag))
}

/// `int u v` without conjugation.
pub fn pairing(u: &SampledFunction, v: &SampledFunction) -> Result<Complex64> {
    same_grid(u, v)?;
    let mut acc = ComplexSum::new();
    for (a, b) in u.values().iter().zip(v.values()) {
        acc.add(a * b);
    }
    Ok(acc.value() * u.grid().cell_volume())
}

/// `int K(x,y,z) b0 f0(x) b1 f1(y) b2 f2(z)` with the bilinear excision.
#[allow(clippy::too_many_arguments)]
pub fn triple_pairing(
    k: &KernelModel,
    f0: &SampledFunction,
    f1: &SampledFunction,
    f2: &SampledFunction,
    b0: &SampledFunction,
    b1: &SampledFunction,
    b2: &SampledFunction,
    policy: &PvPolicy,
) -> Result<Complex64> {
    let inner = apply_bilinear_field(k, &b1.mul(f1)?, &b2.mul(f2)?, policy)?;
    pairing(&b0.mul(f0)?, &inner)
}
