//! Normalized bump functions of order M and their translates/dilates.
//!
//! The profile is `c_norm * exp(-1/(1-|x|^2))` on the open unit ball, with
//! `c_norm` chosen so that every partial derivative up to order M has sup
//! at most one. The sups are taken from exact derivatives (Taylor jets),
//! located by dense sampling and then polished locally.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::gauss::mollifier_profile;
use crate::grid::{sample, ClosedForm, Cube, Grid, SampledFunction};
use crate::jet::Jet;

/// Highest supported order.
pub const MAX_ORDER: usize = 6;
/// Finite-difference tolerance used by [`verify_bump`].
pub const TOL_FD: f64 = 1e-2;
/// Minimum grid resolution, in points per unit length.
pub const MIN_POINTS_PER_UNIT: f64 = 64.0;

pub const PROFILE: &str = "standard-mollifier";

#[derive(Debug, Clone, PartialEq)]
pub struct BumpSpec {
    pub dim: usize,
    pub order: usize,
    pub profile: String,
    pub c_norm: f64,
}

#[derive(Debug, Clone)]
pub struct BumpCertificate {
    pub order: usize,
    /// Measured sup of each finite-difference partial, keyed by multi-index.
    pub sups: Vec<([usize; 2], f64)>,
    pub worst: f64,
    pub worst_index: [usize; 2],
    pub support_radius: f64,
    pub passed: bool,
}

fn multi_indices(d: usize, m: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for total in 0..=m {
        if d == 1 {
            out.push([total, 0]);
        } else {
            for i in (0..=total).rev() {
                out.push([i, total - i]);
            }
        }
    }
    out
}

fn profile_jet(order: usize, p: [f64; 2]) -> Jet {
    let x = Jet::variable(order, 0, p[0]);
    let y = Jet::variable(order, 1, p[1]);
    let u = Jet::constant(order, 1.0).add(&x.mul(&x).scale(-1.0)).add(&y.mul(&y).scale(-1.0));
    u.recip().scale(-1.0).exp()
}

fn abs_derivative(order: usize, alpha: [usize; 2], p: [f64; 2]) -> f64 {
    if p[0] * p[0] + p[1] * p[1] >= 1.0 {
        return 0.0;
    }
    profile_jet(order, p).derivative(alpha[0], alpha[1]).abs()
}

/// Maximize `|d^alpha g|` by a shrinking compass search around `start`.
fn polish(order: usize, alpha: [usize; 2], d: usize, start: [f64; 2], step: f64) -> f64 {
    let mut best = abs_derivative(order, alpha, start);
    let mut p = start;
    let mut s = step;
    while s > 1e-12 {
        let mut moved = false;
        let dirs: &[[f64; 2]] =
            if d == 1 { &[[1.0, 0.0], [-1.0, 0.0]] } else { &[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] };
        for dir in dirs {
            let q = [p[0] + s * dir[0], p[1] + s * dir[1]];
            let v = abs_derivative(order, alpha, q);
            if v > best {
                best = v;
                p = q;
                moved = true;
            }
        }
        if !moved {
            s *= 0.5;
        }
    }
    best
}

fn compute_sup(d: usize, m: usize) -> f64 {
    let alphas = multi_indices(d, m);
    let pts: Vec<[f64; 2]> = if d == 1 {
        let k = 4000;
        (0..k).map(|i| [i as f64 / k as f64, 0.0]).collect()
    } else {
        let k = 200;
        let mut v = Vec::new();
        for i in 0..k {
            for j in 0..k {
                let p = [i as f64 / k as f64, j as f64 / k as f64];
                if p[0] * p[0] + p[1] * p[1] < 1.0 {
                    v.push(p);
                }
            }
        }
        v
    };
    let step = if d == 1 { 1.0 / 4000.0 } else { 1.0 / 200.0 };
    let per_point: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|p| {
            let jet = profile_jet(m, *p);
            alphas.iter().map(|a| jet.derivative(a[0], a[1]).abs()).collect()
        })
        .collect();
    let mut overall = 0.0_f64;
    for (ai, alpha) in alphas.iter().enumerate() {
        let (mut best_i, mut best_v) = (0, -1.0);
        for (i, row) in per_point.iter().enumerate() {
            if row[ai] > best_v {
                best_v = row[ai];
                best_i = i;
            }
        }
        let polished = polish(m, *alpha, d, pts[best_i], step);
        overall = overall.max(polished.max(best_v));
    }
    overall
}

/// Normalization constant for the order-M bump in dimension d (cached).
pub fn bump_constant(d: usize, m: usize) -> Result<f64> {
    if d != 1 && d != 2 {
        return Err(LabError::Dimension(d));
    }
    if m > MAX_ORDER {
        return Err(LabError::Bump(format!("order {m} exceeds the supported maximum {MAX_ORDER}")));
    }
    if m == 0 {
        return Ok(std::f64::consts::E);
    }
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("bump cache poisoned").get(&(d, m)) {
        return Ok(*v);
    }
    let c = 1.0 / compute_sup(d, m);
    cache.lock().expect("bump cache poisoned").insert((d, m), c);
    Ok(c)
}

/// Closed form and spec of the order-M normalized bump.
pub fn bump_form(d: usize, m: usize) -> Result<(ClosedForm, BumpSpec)> {
    let c = bump_constant(d, m)?;
    let form = ClosedForm::real(format!("bump{m}"), move |p| {
        let r2: f64 = p.iter().map(|x| x * x).sum();
        c * mollifier_profile(r2)
    });
    Ok((form, BumpSpec { dim: d, order: m, profile: PROFILE.to_string(), c_norm: c }))
}

/// The order-M bump sampled on `g`.
pub fn standard_bump(m: usize, g: &Grid) -> Result<(SampledFunction, BumpSpec)> {
    let d = g.dim();
    let unit = Cube::new(vec![0.0; d], 2.0)?;
    if !g.bbox().contains_cube(&unit) {
        return Err(LabError::SupportEscape { point: vec![1.0; d] });
    }
    if 1.0 / g.spacing() < MIN_POINTS_PER_UNIT - 1e-9 {
        return Err(LabError::TooCoarse(format!(
            "{} points per unit length, need {MIN_POINTS_PER_UNIT}",
            1.0 / g.spacing()
        )));
    }
    let (form, spec) = bump_form(d, m)?;
    Ok((sample(&form, g)?, spec))
}

/// `p -> form((p - x0) / r)`.
pub fn dilate_form(form: &ClosedForm, x0: &[f64], r: f64) -> ClosedForm {
    let inner = form.clone();
    let c = x0.to_vec();
    ClosedForm::new(format!("{}@({};{r})", form.name(), crate::grid::format_point(x0)), move |p| {
        let mut q = [0.0; 2];
        for (a, slot) in q.iter_mut().enumerate().take(c.len()) {
            *slot = (p[a] - c[a]) / r;
        }
        inner.eval(&q[..c.len()])
    })
}

/// `phi((x - x0)/r)` re-sampled from the closed form on phi's own grid.
pub fn translate_dilate(phi: &SampledFunction, x0: &[f64], r: f64) -> Result<SampledFunction> {
    translate_dilate_on(phi, x0, r, phi.grid())
}

/// As [`translate_dilate`], onto another grid.
pub fn translate_dilate_on(phi: &SampledFunction, x0: &[f64], r: f64, grid: &Grid) -> Result<SampledFunction> {
    if !(r.is_finite() && r > 0.0) {
        return Err(LabError::Invalid(format!("scale must be positive, got {r}")));
    }
    if x0.len() != grid.dim() {
        return Err(LabError::GridMismatch("center dimension differs from grid".into()));
    }
    let form = phi.form().ok_or_else(|| LabError::Bump("translate_dilate needs a closed-form profile".into()))?;
    let ball = Cube::new(x0.to_vec(), 2.0 * r)?;
    if !grid.bbox().contains_cube(&ball) {
        let point = (0..grid.dim())
            .map(|a| if ball.lower(a) < grid.bbox().lower(a) { ball.lower(a) } else { ball.upper(a) })
            .collect();
        return Err(LabError::SupportEscape { point });
    }
    sample(&dilate_form(form, x0, r), grid)
}

fn binomial(m: usize, j: usize) -> f64 {
    crate::jet::factorial(m) / (crate::jet::factorial(j) * crate::jet::factorial(m - j))
}

/// Central difference weights for offsets `-w..=w`; odd orders average the
/// two half-shifted stencils.
fn fd_weights(m: usize) -> Vec<f64> {
    let w = m.div_ceil(2);
    let mut out = vec![0.0; 2 * w + 1];
    for j in 0..=m {
        let s = if j % 2 == 0 { 1.0 } else { -1.0 } * binomial(m, j);
        if m.is_multiple_of(2) {
            let off = m as i64 / 2 - j as i64;
            out[(off + w as i64) as usize] += s;
        } else {
            let hi = (m as i64 + 1) / 2 - j as i64;
            out[(hi + w as i64) as usize] += 0.5 * s;
            out[(hi - 1 + w as i64) as usize] += 0.5 * s;
        }
    }
    out
}

fn apply_stencil(g: &Grid, vals: &[Complex64], axis: usize, m: usize) -> Vec<Complex64> {
    if m == 0 {
        return vals.to_vec();
    }
    let wts = fd_weights(m);
    let w = (wts.len() / 2) as i64;
    let scale = g.spacing().powi(m as i32);
    let n = g.n() as i64;
    (0..g.len())
        .map(|i| {
            let idx = g.multi_index(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, wt) in wts.iter().enumerate() {
                if *wt == 0.0 {
                    continue;
                }
                let pos = idx[axis] as i64 + k as i64 - w;
                if pos < 0 || pos >= n {
                    continue;
                }
                let mut jdx = idx;
                jdx[axis] = pos as usize;
                acc += vals[g.flat_index(jdx)] * *wt;
            }
            acc / scale
        })
        .collect()
}

/// Finite-difference certificate that all partials up to order M are
/// bounded by `1 + TOL_FD`.
pub fn verify_bump(phi: &SampledFunction, m: usize) -> Result<BumpCertificate> {
    if m > MAX_ORDER {
        return Err(LabError::Bump(format!("order {m} exceeds the supported maximum {MAX_ORDER}")));
    }
    let g = phi.grid();
    let d = g.dim();
    let layer = m.div_ceil(2).max(1);
    let n = g.n();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (i, v) in phi.values().iter().enumerate() {
        if *v == Complex64::new(0.0, 0.0) {
            continue;
        }
        let idx = g.multi_index(i);
        let p = g.point(i);
        if (0..d).any(|a| idx[a] < layer || idx[a] + layer >= n) {
            return Err(LabError::SupportEscape { point: p[..d].to_vec() });
        }
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut support_radius = 0.0_f64;
    if lo[0].is_finite() {
        let mid: Vec<f64> = (0..d).map(|a| 0.5 * (lo[a] + hi[a])).collect();
        for (i, v) in phi.values().iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                let p = g.point(i);
                let r2: f64 = (0..d).map(|a| (p[a] - mid[a]).powi(2)).sum();
                support_radius = support_radius.max(r2.sqrt());
            }
        }
    }

    let mut sups = Vec::new();
    for alpha in multi_indices(d, m) {
        let along_x = apply_stencil(g, phi.values(), 0, alpha[0]);
        let field = if d == 2 { apply_stencil(g, &along_x, 1, alpha[1]) } else { along_x };
        let sup = field.iter().fold(0.0_f64, |a, v| a.max(v.norm()));
        sups.push((alpha, sup));
    }
    let (worst_index, worst) =
        sups.iter().fold(([0, 0], f64::NEG_INFINITY), |acc, (a, s)| if *s > acc.1 { (*a, *s) } else { acc });
    Ok(BumpCertificate { order: m, passed: worst <= 1.0 + TOL_FD, sups, worst, worst_index, support_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lp_norm, make_grid};

    fn line(side: f64, n: usize) -> Grid {
        make_grid(1, Cube::new(vec![0.0], side).unwrap(), n).unwrap()
    }

    #[test]
    fn order_zero_constant_is_e() {
        assert_eq!(bump_constant(1, 0).unwrap(), std::f64::consts::E);
        let (phi, _) = standard_bump(0, &line(4.0, 256)).unwrap();
        let peak = phi.sup_norm();
        // grid has no point at 0; the closest sample sits h/2 away
        assert!(peak <= 1.0 && peak > 0.999);
    }

    #[test]
    fn support_is_exact() {
        let g = line(4.0, 256);
        let (phi, _) = standard_bump(2, &g).unwrap();
        for i in 0..g.len() {
            if g.point(i)[0].abs() >= 1.0 {
                assert_eq!(phi.values()[i], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(standard_bump(2, &line(4.0, 128)), Err(LabError::TooCoarse(_))));
    }

    #[test]
    fn order_two_constant_matches_dense_sampling() {
        // brute force over first and second derivatives by central differences
        let c = bump_constant(1, 2).unwrap();
        let h = 1e-4;
        let g = |x: f64| mollifier_profile(x * x);
        let mut best = 0.0_f64;
        let mut x = -0.9999;
        while x < 0.9999 {
            let d1 = (g(x + h) - g(x - h)) / (2.0 * h);
            let d2 = (g(x + h) - 2.0 * g(x) + g(x - h)) / (h * h);
            best = best.max(g(x)).max(d1.abs()).max(d2.abs());
            x += 1e-4;
        }
        assert!((c * best - 1.0).abs() < 1e-5, "c={c} best={best}");
    }

    #[test]
    fn standard_bumps_certify() {
        let g = line(4.0, 256);
        for m in 0..=4 {
            let (phi, _) = standard_bump(m, &g).unwrap();
            let cert = verify_bump(&phi, m).unwrap();
            assert!(cert.passed, "order {m}: worst {} at {:?}", cert.worst, cert.worst_index);
            assert!(cert.support_radius <= 1.0);
        }
    }

    #[test]
    fn doubled_bump_fails() {
        let (phi, _) = standard_bump(0, &line(4.0, 256)).unwrap();
        let cert = verify_bump(&phi.scale(Complex64::new(2.0, 0.0)), 0).unwrap();
        assert!(!cert.passed);
    }

    #[test]
    fn support_violation_names_point() {
        let (phi, _) = standard_bump(0, &line(2.0, 128)).unwrap();
        assert!(matches!(verify_bump(&phi, 2), Err(LabError::SupportEscape { .. })));
    }

    #[test]
    fn dilation_scales_derivatives() {
        let g = line(16.0, 1024);
        let (phi, _) = standard_bump(2, &g).unwrap();
        let base = verify_bump(&phi, 2).unwrap();
        let wide = verify_bump(&translate_dilate(&phi, &[0.5], 4.0).unwrap(), 2).unwrap();
        for ((a, s0), (_, s1)) in base.sups.iter().zip(&wide.sups) {
            let expect = s0 / 4f64.powi(a[0] as i32);
            assert!((s1 - expect).abs() < 2e-2 * s0, "{a:?}: {s1} vs {expect}");
        }
    }

    #[test]
    fn l2_norm_scales_with_dilation() {
        let g = line(16.0, 2048);
        let (phi, _) = standard_bump(1, &g).unwrap();
        let base = lp_norm(&phi, 2.0).unwrap();
        for r in [0.25, 0.5, 2.0, 4.0] {
            let v = lp_norm(&translate_dilate(&phi, &[0.0], r).unwrap(), 2.0).unwrap();
            assert!((v / (r.sqrt() * base) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn translate_dilate_identity_and_escape() {
        let g = line(4.0, 256);
        let (phi, _) = standard_bump(1, &g).unwrap();
        let same = translate_dilate(&phi, &[0.0], 1.0).unwrap();
        assert_eq!(same.values(), phi.values());
        assert!(matches!(translate_dilate(&phi, &[1.5], 1.0), Err(LabError::SupportEscape { .. })));
    }

    #[test]
    fn two_dimensional_bump_certifies() {
        let g = make_grid(2, Cube::new(vec![0.0, 0.0], 2.5).unwrap(), 160).unwrap();
        let (phi, spec) = standard_bump(2, &g).unwrap();
        assert_eq!(spec.dim, 2);
        let cert = verify_bump(&phi, 2).unwrap();
        assert!(cert.passed, "worst {} at {:?}", cert.worst, cert.worst_index);
        assert_eq!(cert.sups.len(), 6);
    }
}
