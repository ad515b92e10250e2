//! Scaling experiments: testing conditions, weak boundedness, direct
//! bounds, BMO sweeps, far-field constancy and the bilinear splitting.

use std::fmt;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bmo::bmo_seminorm;
use crate::bumps::{bump_form, dilate_form, verify_bump};
use crate::error::{LabError, Result};
use crate::grid::{dyadic_family, format_point, lp_norm, make_grid, sample, ClosedForm, Cube, Grid, SampledFunction};
use crate::kernels::{Arity, KernelModel};
use crate::quadrature::{
    apply_bilinear, apply_bilinear_field, apply_linear, apply_linear_field, bilinear_l2_norm, linear_l2_norm, pairing,
    PvPolicy,
};

pub const CSV_HEADER: &str = "experiment,kernel,b0,b1,b2,M,x0,R,value,target_exp,fitted_slope,constant,verdict";
pub const MIN_FIT_ROWS: usize = 5;
pub const DIRECT_TOL: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub slope_tol: f64,
    pub uniformity_factor: f64,
    /// Rows with value <= zero_floor * R^target count as zero.
    pub zero_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { slope_tol: 0.07, uniformity_factor: 2.0, zero_floor: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    PassDegenerate,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }

    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Pass, _) | (_, Verdict::Pass) => Verdict::Pass,
            _ => Verdict::PassDegenerate,
        }
    }

    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::PassDegenerate => "PASS-degenerate",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// max value / R^target over the nonzero rows.
    pub constant: f64,
    /// max/min of value / R^target over the nonzero rows.
    pub spread: f64,
    pub zero_rows: usize,
    pub verdict: Verdict,
}

/// Least squares on (log2 R, log2 value) with the uniformity verdict.
pub fn exponent_fit(rows: &[(f64, f64)], target: f64, cfg: &FitConfig) -> Result<Fit> {
    if rows.len() < MIN_FIT_ROWS {
        return Err(LabError::TooFewRows { need: MIN_FIT_ROWS, got: rows.len() });
    }
    if let Some(&(r, v)) = rows.iter().find(|(r, v)| !(r.is_finite() && *r > 0.0 && v.is_finite() && *v >= 0.0)) {
        return Err(LabError::Invalid(format!("fit row (R = {r}, value = {v}) is not admissible")));
    }
    let live: Vec<(f64, f64)> = rows.iter().copied().filter(|&(r, v)| v > cfg.zero_floor * r.powf(target)).collect();
    let zero_rows = rows.len() - live.len();
    if live.is_empty() {
        return Ok(Fit {
            slope: None,
            intercept: None,
            constant: 0.0,
            spread: 1.0,
            zero_rows,
            verdict: Verdict::PassDegenerate,
        });
    }
    let ratios: Vec<f64> = live.iter().map(|&(r, v)| v / r.powf(target)).collect();
    let constant = ratios.iter().copied().fold(0.0, f64::max);
    let spread = constant / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = live.iter().map(|(r, _)| r.log2()).collect();
    let ys: Vec<f64> = live.iter().map(|(_, v)| v.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let (slope, intercept) = if sxx > 0.0 {
        let s = sxy / sxx;
        (Some(s), Some(my - s * mx))
    } else {
        (None, None)
    };
    let slope_ok = slope.is_some_and(|s| (s - target).abs() <= cfg.slope_tol);
    Ok(Fit {
        slope,
        intercept,
        constant,
        spread,
        zero_rows,
        verdict: Verdict::from_bool(slope_ok && spread <= cfg.uniformity_factor),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x0: String,
    pub r: f64,
    pub value: f64,
    /// PV refinement disagreed, or the support met the outer margin.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub experiment: String,
    pub kernel: String,
    pub b: [String; 3],
    pub order: usize,
    pub target: f64,
    pub rows: Vec<Row>,
    pub fit: Fit,
}

impl ScalingReport {
    fn build(
        experiment: &str,
        kernel: &str,
        b: [String; 3],
        setup: &Setup,
        target: f64,
        rows: Vec<Row>,
    ) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.r, r.value)).collect();
        let fit = exponent_fit(&pairs, target, &setup.fit)?;
        Ok(Self { experiment: experiment.into(), kernel: kernel.into(), b, order: setup.order, target, rows, fit })
    }

    pub fn verdict(&self) -> Verdict {
        self.fit.verdict
    }

    /// value / R^target per row.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value / r.r.powf(self.target)).collect()
    }

    pub fn csv_rows(&self) -> String {
        let slope = self.fit.slope.map_or_else(|| "NA".to_string(), |s| format!("{s:.17e}"));
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.17e},{:.17e},{},{},{:.17e},{}",
                self.experiment,
                self.kernel,
                self.b[0],
                self.b[1],
                self.b[2],
                self.order,
                r.x0,
                r.r,
                r.value,
                self.target,
                slope,
                self.fit.constant,
                self.fit.verdict
            );
        }
        s
    }

    pub fn to_csv_string(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

/// A named weight function b.
#[derive(Debug, Clone)]
pub struct Weight {
    pub name: String,
    pub values: SampledFunction,
}

impl Weight {
    pub fn new(name: impl Into<String>, values: SampledFunction) -> Self {
        Self { name: name.into(), values }
    }

    pub fn one(grid: &Grid) -> Result<Self> {
        Ok(Self::new("one", sample(&ClosedForm::constant("one", Complex64::new(1.0, 0.0)), grid)?))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(format!("{c}*{}", self.name), self.values.scale(Complex64::new(c, 0.0)))
    }
}

/// Shared experiment context.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub order: usize,
    pub policy: PvPolicy,
    pub fit: FitConfig,
}

impl Setup {
    pub fn new(grid: Grid, order: usize) -> Self {
        Self { grid, order, policy: PvPolicy::default(), fit: FitConfig::default() }
    }

    fn d(&self) -> usize {
        self.grid.dim()
    }

    /// phi^{x0,R} sampled from its closed form; the support must stay in
    /// the box. The flag marks supports reaching the outer 10% margin.
    pub fn bump_at(&self, x0: &[f64], r: f64) -> Result<(SampledFunction, bool)> {
        self.cutoff(self.order, x0, r)
    }

    fn cutoff(&self, order: usize, x0: &[f64], r: f64) -> Result<(SampledFunction, bool)> {
        let d = self.d();
        if x0.len() != d {
            return Err(LabError::GridMismatch(format!("center ({}) in dimension {d}", format_point(x0))));
        }
        let bbox = self.grid.bbox();
        let support = Cube::new(x0.to_vec(), 2.0 * r)?;
        if !bbox.contains_cube(&support) {
            let mut p = x0.to_vec();
            p[0] += r;
            return Err(LabError::SupportEscape { point: p });
        }
        let inner = Cube::new(bbox.center().to_vec(), 0.8 * bbox.side())?;
        let (form, _) = bump_form(d, order)?;
        let phi = sample(&dilate_form(&form, x0, r), &self.grid)?;
        Ok((phi, !inner.contains_cube(&support)))
    }

    fn cutoff_form(&self, x0: &[f64], r: f64) -> Result<ClosedForm> {
        let (form, _) = bump_form(self.d(), 0)?;
        Ok(dilate_form(&form, x0, r))
    }
}

fn name_of(k: &KernelModel) -> String {
    k.name().to_string()
}

fn dash() -> String {
    "-".to_string()
}

/// Sum of ||T phi|| and ||T* phi|| over the line, fitted to d/2.
pub fn stein_t1_test(setup: &Setup, k: &KernelModel, centers: &[Vec<f64>], scales: &[f64]) -> Result<ScalingReport> {
    k.require(Arity::Linear)?;
    let kt = k.transpose(1)?;
    let mut rows = Vec::new();
    for c in centers {
        for &r in scales {
            let (phi, margin) = setup.bump_at(c, r)?;
            let a = linear_l2_norm(k, &phi, &setup.policy)?;
            let b = linear_l2_norm(&kt, &phi, &setup.policy)?;
            rows.push(Row {
                x0: format_point(c),
                r,
                value: a.norm + b.norm,
                flagged: margin || a.diagnostics.flagged + b.diagnostics.flagged > 0,
            });
        }
    }
    ScalingReport::build("stein_t1", &name_of(k), [dash(), dash(), dash()], setup, setup.d() as f64 / 2.0, rows)
}

fn linear_rows(setup: &Setup, k: &KernelModel, b: &Weight, centers: &[Vec<f64>], scales: &[f64]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for c in centers {
        for &r in scales {
            let (phi, margin) = setup.bump_at(c, r)?;
            let est = linear_l2_norm(k, &b.values.mul(&phi)?, &setup.policy)?;
            rows.push(Row { x0: format_point(c), r, value: est.norm, flagged: margin || est.diagnostics.flagged > 0 });
        }
    }
    Ok(rows)
}

/// ||T(b1 phi)|| and ||T*(b0 phi)||, each fitted to d/2.
pub fn stein_tb_test(
    setup: &Setup,
    k: &KernelModel,
    b0: &Weight,
    b1: &Weight,
    centers: &[Vec<f64>],
    scales: &[f64],
) -> Result<[ScalingReport; 2]> {
    k.require(Arity::Linear)?;
    let kt = k.transpose(1)?;
    let target = setup.d() as f64 / 2.0;
    let names = [b0.name.clone(), b1.name.clone(), dash()];
    let s1 = ScalingReport::build(
        "stein_tb_s1",
        &name_of(k),
        names.clone(),
        setup,
        target,
        linear_rows(setup, k, b1, centers, scales)?,
    )?;
    let s2 = ScalingReport::build(
        "stein_tb_s2",
        &name_of(k),
        names,
        setup,
        target,
        linear_rows(setup, &kt, b0, centers, scales)?,
    )?;
    Ok([s1, s2])
}

/// The three bilinear testing conditions. Each center c is used twice:
/// both bumps at c, and bumps at c - R/2 and c + R/2.
pub fn stein_bilinear_tb_test(
    setup: &Setup,
    k: &KernelModel,
    b: [&Weight; 3],
    centers: &[Vec<f64>],
    scales: &[f64],
) -> Result<[ScalingReport; 3]> {
    k.require(Arity::Bilinear)?;
    let ops = [k.clone(), k.transpose(1)?, k.transpose(2)?];
    // weights entering the two slots of each operator
    let slots = [(1, 2), (0, 2), (1, 0)];
    let ids = ["stein_bilinear_s1", "stein_bilinear_s2", "stein_bilinear_s3"];
    let names = [b[0].name.clone(), b[1].name.clone(), b[2].name.clone()];
    let target = setup.d() as f64 / 2.0;
    let mut out = Vec::with_capacity(3);
    for (op, ((s_a, s_b), id)) in ops.iter().zip(slots.iter().zip(ids)) {
        let mut rows = Vec::new();
        for c in centers {
            for &r in scales {
                for offset in [false, true] {
                    let (xa, xb) = if offset {
                        let mut xa = c.clone();
                        let mut xb = c.clone();
                        xa[0] -= 0.5 * r;
                        xb[0] += 0.5 * r;
                        (xa, xb)
                    } else {
                        (c.clone(), c.clone())
                    };
                    let (pa, ma) = setup.bump_at(&xa, r)?;
                    let (pb, mb) = setup.bump_at(&xb, r)?;
                    let est =
                        bilinear_l2_norm(op, &b[*s_a].values.mul(&pa)?, &b[*s_b].values.mul(&pb)?, &setup.policy)?;
                    rows.push(Row {
                        x0: format!("{}|{}", format_point(&xa), format_point(&xb)),
                        r,
                        value: est.norm,
                        flagged: ma || mb || est.diagnostics.flagged > 0,
                    });
                }
            }
        }
        out.push(ScalingReport::build(id, &name_of(k), names.clone(), setup, target, rows)?);
    }
    Ok(out.try_into().expect("three reports"))
}

pub const DEFAULT_OFFSETS: [f64; 3] = [0.0, 1.0, 4.0];

/// |<b0 T(b1 phi^{c,R} [, b2 phi^{c+oR,R}]), phi^{.,R}>| fitted to d, one
/// report per offset o (in units of R). Linear operators pair against the
/// bump at c + oR; bilinear operators place the second input there and
/// pair against b0 phi^{c,R}.
pub fn weak_boundedness_test(
    setup: &Setup,
    k: &KernelModel,
    b: [&Weight; 3],
    centers: &[Vec<f64>],
    scales: &[f64],
    offsets: &[f64],
) -> Result<Vec<ScalingReport>> {
    let target = setup.d() as f64;
    let names = match k.arity() {
        Arity::Linear => [b[0].name.clone(), b[1].name.clone(), dash()],
        Arity::Bilinear => [b[0].name.clone(), b[1].name.clone(), b[2].name.clone()],
    };
    let mut out = Vec::new();
    for &o in offsets {
        let mut rows = Vec::new();
        for c in centers {
            for &r in scales {
                let mut shifted = c.clone();
                shifted[0] += o * r;
                let (p1, m1) = setup.bump_at(c, r)?;
                let (p2, m2) = setup.bump_at(&shifted, r)?;
                let (value, flagged) = match k.arity() {
                    Arity::Linear => {
                        let t = apply_linear_field(k, &b[1].values.mul(&p1)?, &setup.policy)?;
                        (pairing(&b[0].values.mul(&t)?, &p2)?.norm(), m1 || m2)
                    }
                    Arity::Bilinear => {
                        let t = apply_bilinear_field(k, &b[1].values.mul(&p1)?, &b[2].values.mul(&p2)?, &setup.policy)?;
                        (pairing(&b[0].values.mul(&p1)?, &t)?.norm(), m1 || m2)
                    }
                };
                rows.push(Row { x0: format!("{}|{}", format_point(c), format_point(&shifted)), r, value, flagged });
            }
        }
        let id = format!("wbp_offset_{o}");
        out.push(ScalingReport::build(&id, &name_of(k), names.clone(), setup, target, rows)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BoundRow {
    pub x0: String,
    pub r: f64,
    pub measured: f64,
    pub bound: f64,
}

impl BoundRow {
    pub fn ok(&self) -> bool {
        self.measured <= self.bound * (1.0 + DIRECT_TOL)
    }
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub kernel: String,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::from_bool(self.rows.iter().all(BoundRow::ok))
    }

    pub fn witness(&self) -> Option<&BoundRow> {
        self.rows.iter().find(|r| !r.ok())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("kernel,x0,R,measured,bound,ok\n");
        for r in &self.rows {
            let _ =
                writeln!(s, "{},{},{:.17e},{:.17e},{:.17e},{}", self.kernel, r.x0, r.r, r.measured, r.bound, r.ok());
        }
        s
    }
}

/// ||T(b1 phi)||_2 against norm * |b1|_inf * ||phi||_2; for bilinear
/// operators the bound is norm * |b1|_inf |phi^{x1}|_4 |b2|_inf |phi^{x2}|_4
/// with both bumps at the same center.
pub fn direct_bound_check(
    setup: &Setup,
    k: &KernelModel,
    norm: Option<f64>,
    b1: &Weight,
    b2: Option<&Weight>,
    centers: &[Vec<f64>],
    scales: &[f64],
) -> Result<BoundReport> {
    let norm = norm.ok_or_else(|| LabError::MissingNorm(k.name().to_string()))?;
    let mut rows = Vec::new();
    for c in centers {
        for &r in scales {
            let (phi, _) = setup.bump_at(c, r)?;
            let (measured, bound) = match k.arity() {
                Arity::Linear => {
                    let m = linear_l2_norm(k, &b1.values.mul(&phi)?, &setup.policy)?.norm;
                    (m, norm * b1.values.sup_norm() * lp_norm(&phi, 2.0)?)
                }
                Arity::Bilinear => {
                    let b2 = b2.ok_or_else(|| LabError::Arity("bilinear bound needs b2".into()))?;
                    let m = bilinear_l2_norm(k, &b1.values.mul(&phi)?, &b2.values.mul(&phi)?, &setup.policy)?.norm;
                    let l4 = lp_norm(&phi, 4.0)?;
                    (m, norm * b1.values.sup_norm() * l4 * b2.values.sup_norm() * l4)
                }
            };
            rows.push(BoundRow { x0: format_point(c), r, measured, bound });
        }
    }
    Ok(BoundReport { kernel: name_of(k), rows })
}

/// Values indexed by R with a max/min uniformity verdict.
#[derive(Debug, Clone)]
pub struct UniformityReport {
    pub experiment: String,
    pub kernel: String,
    pub rows: Vec<(f64, f64)>,
    pub factor: f64,
}

impl UniformityReport {
    pub fn spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let min = self.rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            1.0
        } else {
            max / min
        }
    }

    pub fn max(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn verdict(&self) -> Verdict {
        if self.max() == 0.0 {
            Verdict::PassDegenerate
        } else {
            Verdict::from_bool(self.spread() <= self.factor)
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("experiment,kernel,R,value,spread,verdict\n");
        for (r, v) in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.17e},{:.17e},{:.17e},{}",
                self.experiment,
                self.kernel,
                r,
                v,
                self.spread(),
                self.verdict()
            );
        }
        s
    }
}

/// BMO depth used by the sweep below the box root.
pub const SWEEP_DEPTH: usize = 5;

/// ||T(b1 phi_R)||_BMO over R, with phi_R = phi(./R) at the box center and
/// the shifted dyadic family of the grid box.
pub fn uniform_bmo_sweep(
    setup: &Setup,
    k: &KernelModel,
    b1: &Weight,
    scales: &[f64],
    depth: usize,
) -> Result<UniformityReport> {
    k.require(Arity::Linear)?;
    let center = setup.grid.bbox().center().to_vec();
    let family = dyadic_family(setup.grid.bbox(), 0, depth)?;
    let mut rows = Vec::new();
    for &r in scales {
        let (phi, _) = setup.cutoff(0, &center, r)?;
        let t = apply_linear_field(k, &b1.values.mul(&phi)?, &setup.policy)?;
        rows.push((r, bmo_seminorm(&t, &family)?.sup_mean));
    }
    Ok(UniformityReport {
        experiment: "uniform_bmo".into(),
        kernel: name_of(k),
        rows,
        factor: setup.fit.uniformity_factor,
    })
}

/// Cutoff radius r = 6 diam(Q) around a cube.
pub fn cube_cutoff_radius(q: &Cube) -> f64 {
    6.0 * q.diam()
}

fn cube_points(g: &Grid, q: &Cube) -> Vec<Vec<f64>> {
    g.flat_indices(&g.cells_within(q)).into_iter().map(|i| g.point(i)[..g.dim()].to_vec()).collect()
}

fn sup_deviation(values: &[Complex64], c: Complex64) -> f64 {
    values.iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct FarFieldReport {
    pub uniformity: UniformityReport,
    /// Deviation at the cube center, zero by construction.
    pub center_deviation: Vec<f64>,
    pub constants: Vec<Complex64>,
}

/// sup over x in Q of |T(b1 (1 - phi_Q) phi_R)(x) - c_{Q,R}|, where c_{Q,R}
/// is the same far-field piece at the center of Q.
pub fn far_field_constancy(
    setup: &Setup,
    k: &KernelModel,
    b1: &Weight,
    q: &Cube,
    scales: &[f64],
) -> Result<FarFieldReport> {
    k.require(Arity::Linear)?;
    let x0 = q.center().to_vec();
    let origin = vec![0.0; setup.d()];
    let phi_q = setup.cutoff_form(&x0, cube_cutoff_radius(q))?;
    let points = cube_points(&setup.grid, q);
    let mut rows = Vec::new();
    let mut center_deviation = Vec::new();
    let mut constants = Vec::new();
    for &r in scales {
        setup.cutoff(0, &origin, r)?;
        let form = phi_q.complement().product(&setup.cutoff_form(&origin, r)?);
        let f = b1.values.mul(&sample(&form, &setup.grid)?)?;
        let c = apply_linear(k, &f, &x0, &setup.policy)?.value;
        let values = points
            .par_iter()
            .map(|x| apply_linear(k, &f, x, &setup.policy).map(|v| v.value))
            .collect::<Result<Vec<_>>>()?;
        rows.push((r, sup_deviation(&values, c)));
        center_deviation.push((apply_linear(k, &f, &x0, &setup.policy)?.value - c).norm());
        constants.push(c);
    }
    Ok(FarFieldReport {
        uniformity: UniformityReport {
            experiment: "far_field".into(),
            kernel: name_of(k),
            rows,
            factor: setup.fit.uniformity_factor,
        },
        center_deviation,
        constants,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SplitCheck {
    pub max_defect: f64,
    pub scale: f64,
    pub tol: f64,
}

impl SplitCheck {
    pub fn ok(&self) -> bool {
        self.max_defect <= self.tol * (1.0 + self.scale)
    }
}

/// T(b1 phi_R) against T(b1 phi_Q phi_R) + T(b1 (1 - phi_Q) phi_R) at
/// every grid point.
pub fn splitting_check(setup: &Setup, k: &KernelModel, b1: &Weight, q: &Cube, r: f64) -> Result<SplitCheck> {
    let origin = vec![0.0; setup.d()];
    let phi_r = setup.cutoff_form(&origin, r)?;
    let phi_q = setup.cutoff_form(q.center(), cube_cutoff_radius(q))?;
    let field = |form: &ClosedForm| -> Result<SampledFunction> {
        apply_linear_field(k, &b1.values.mul(&sample(form, &setup.grid)?)?, &setup.policy)
    };
    let whole = field(&phi_r)?;
    let near = field(&phi_q.product(&phi_r))?;
    let far = field(&phi_q.complement().product(&phi_r))?;
    let defect = whole.sub(&near.add(&far)?)?;
    Ok(SplitCheck { max_defect: defect.sup_norm(), scale: whole.sup_norm(), tol: setup.policy.tol_pv })
}

#[derive(Debug, Clone)]
pub struct LocalPiece {
    pub r: f64,
    /// (1/|Q|) int_Q |T(b1 phi_Q phi_R)|.
    pub value: f64,
    /// sup of |phi_Q phi_R - composite| on the grid.
    pub rewrite_defect: f64,
    /// The auxiliary product passes the order-0 bump check at unit scale.
    pub composite_is_bump: bool,
}

/// The local piece and its rescaled-bump rewrite: phi_Q phi_R equals
/// [psi1 phi]^{0,R} with psi1 = phi_Q(R .) when R <= r, and
/// [phi psi2]^{x0,r} with psi2 = phi_R(x0 + r .) when R > r.
pub fn local_piece_check(setup: &Setup, k: &KernelModel, b1: &Weight, q: &Cube, r: f64) -> Result<LocalPiece> {
    k.require(Arity::Linear)?;
    let d = setup.d();
    let origin = vec![0.0; d];
    let rq = cube_cutoff_radius(q);
    let x0 = q.center().to_vec();
    let phi_q = setup.cutoff_form(&x0, rq)?;
    let phi_r = setup.cutoff_form(&origin, r)?;
    let (base, _) = bump_form(d, 0)?;
    let unit = if r <= rq {
        let center: Vec<f64> = x0.iter().map(|c| c / r).collect();
        base.product(&dilate_form(&base, &center, rq / r))
    } else {
        let center: Vec<f64> = x0.iter().map(|c| -c / rq).collect();
        base.product(&dilate_form(&base, &center, r / rq))
    };
    let composite = if r <= rq { dilate_form(&unit, &origin, r) } else { dilate_form(&unit, &x0, rq) };
    let product = sample(&phi_q.product(&phi_r), &setup.grid)?;
    let rewrite_defect = product.sub(&sample(&composite, &setup.grid)?)?.sup_norm();
    let unit_grid = make_grid(d, Cube::new(vec![0.0; d], 4.0)?, 256)?;
    let composite_is_bump = verify_bump(&sample(&unit, &unit_grid)?, 0)?.passed;
    let t = apply_linear_field(k, &b1.values.mul(&product)?, &setup.policy)?;
    let g = &setup.grid;
    let cells = g.flat_indices(&g.cells_within(q));
    let value = crate::summation::sum_f64(cells.iter().map(|&i| t.values()[i].norm())) / cells.len() as f64;
    Ok(LocalPiece { r, value, rewrite_defect, composite_is_bump })
}

#[derive(Debug, Clone)]
pub struct DecompositionRow {
    pub r: f64,
    /// sup over the grid of |I + II + III + IV - T(b1 phi_R, b2 phi_R)|.
    pub sum_defect: f64,
    pub sum_scale: f64,
    /// (1/|Q|) int_Q |I|.
    pub local: f64,
    /// sup over Q of |II - c2|, |III - c3|, |IV - c4|.
    pub deviations: [f64; 3],
    pub constants: [Complex64; 3],
}

#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub kernel: String,
    pub rows: Vec<DecompositionRow>,
    pub tol: f64,
    pub factor: f64,
}

impl DecompositionReport {
    pub fn sum_ok(&self) -> bool {
        self.rows.iter().all(|r| r.sum_defect <= self.tol * (1.0 + r.sum_scale))
    }

    fn spread(values: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = values.collect();
        let max = v.iter().copied().fold(0.0, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            1.0
        } else {
            max / min
        }
    }

    /// Spreads over R of the local average and the three deviations.
    pub fn spreads(&self) -> [f64; 4] {
        [
            Self::spread(self.rows.iter().map(|r| r.local)),
            Self::spread(self.rows.iter().map(|r| r.deviations[0])),
            Self::spread(self.rows.iter().map(|r| r.deviations[1])),
            Self::spread(self.rows.iter().map(|r| r.deviations[2])),
        ]
    }

    pub fn verdict(&self) -> Verdict {
        Verdict::from_bool(self.sum_ok() && self.spreads().iter().all(|s| *s <= self.factor))
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("kernel,R,sum_defect,sum_scale,tol,local_I,dev_II,dev_III,dev_IV\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.kernel,
                r.r,
                r.sum_defect,
                r.sum_scale,
                self.tol,
                r.local,
                r.deviations[0],
                r.deviations[1],
                r.deviations[2]
            );
        }
        s
    }
}

/// The four-term split of T(b1 phi_R, b2 phi_R) by phi_Q and 1 - phi_Q.
pub fn bilinear_decomposition_check(
    setup: &Setup,
    k: &KernelModel,
    b1: &Weight,
    b2: &Weight,
    q: &Cube,
    scales: &[f64],
) -> Result<DecompositionReport> {
    k.require(Arity::Bilinear)?;
    let d = setup.d();
    let origin = vec![0.0; d];
    let x0 = q.center().to_vec();
    let phi_q = setup.cutoff_form(&x0, cube_cutoff_radius(q))?;
    let g = &setup.grid;
    let cells = g.flat_indices(&g.cells_within(q));
    let mut rows = Vec::new();
    for &r in scales {
        let phi_r = setup.cutoff_form(&origin, r)?;
        let near = sample(&phi_q.product(&phi_r), g)?;
        let far = sample(&phi_q.complement().product(&phi_r), g)?;
        let whole = sample(&phi_r, g)?;
        let (n1, f1) = (b1.values.mul(&near)?, b1.values.mul(&far)?);
        let (n2, f2) = (b2.values.mul(&near)?, b2.values.mul(&far)?);
        let pol = &setup.policy;
        let i = apply_bilinear_field(k, &n1, &n2, pol)?;
        let ii = apply_bilinear_field(k, &f1, &n2, pol)?;
        let iii = apply_bilinear_field(k, &n1, &f2, pol)?;
        let iv = apply_bilinear_field(k, &f1, &f2, pol)?;
        let full = apply_bilinear_field(k, &b1.values.mul(&whole)?, &b2.values.mul(&whole)?, pol)?;
        let sum = i.add(&ii)?.add(&iii)?.add(&iv)?;
        let sum_defect = sum.sub(&full)?.sup_norm();
        let local = crate::summation::sum_f64(cells.iter().map(|&j| i.values()[j].norm())) / cells.len() as f64;
        let pieces = [(&f1, &n2, &ii), (&n1, &f2, &iii), (&f1, &f2, &iv)];
        let mut deviations = [0.0; 3];
        let mut constants = [Complex64::new(0.0, 0.0); 3];
        for (slot, (a, b, field)) in pieces.iter().enumerate() {
            let c = apply_bilinear(k, a, b, &x0, pol)?.value;
            let on_q: Vec<Complex64> = cells.iter().map(|&j| field.values()[j]).collect();
            deviations[slot] = sup_deviation(&on_q, c);
            constants[slot] = c;
        }
        rows.push(DecompositionRow { r, sum_defect, sum_scale: full.sup_norm(), local, deviations, constants });
    }
    Ok(DecompositionReport { kernel: name_of(k), rows, tol: setup.policy.tol_pv, factor: setup.fit.uniformity_factor })
}

pub const BUILTINS: &[&str] = &["one", "accretive-lipschitz(lambda)", "exp-ix", "sign-sin"];

/// Closed form of a builtin weight: `one`, `accretive-lipschitz(lambda)`
/// (1 + i A' for the Cauchy curve), `exp-ix`, `sign-sin`.
pub fn builtin_form(spec: &str) -> Result<ClosedForm> {
    let spec = spec.trim();
    match spec {
        "one" => return Ok(ClosedForm::constant("one", Complex64::new(1.0, 0.0))),
        "exp-ix" => return Ok(ClosedForm::new("exp-ix", |p| Complex64::new(0.0, p[0]).exp())),
        "sign-sin" => return Ok(ClosedForm::real("sign-sin", |p| if p[0].sin() >= 0.0 { 1.0 } else { -1.0 })),
        _ => {}
    }
    let lambda = if spec == "accretive-lipschitz" {
        crate::kernels::DEFAULT_LAMBDA
    } else if let Some(arg) = spec.strip_prefix("accretive-lipschitz(").and_then(|r| r.strip_suffix(')')) {
        arg.trim().parse::<f64>().map_err(|_| LabError::Invalid(format!("bad lambda in `{spec}`")))?
    } else {
        return Err(LabError::Invalid(format!("unknown builtin weight `{spec}`; known: {}", BUILTINS.join(", "))));
    };
    Ok(ClosedForm::new(format!("accretive-lipschitz({lambda})"), move |p| {
        Complex64::new(1.0, crate::kernels::cauchy_slope(lambda, p[0]))
    }))
}

impl Weight {
    pub fn builtin(spec: &str, grid: &Grid) -> Result<Self> {
        let form = builtin_form(spec)?;
        Ok(Self::new(form.name().to_string(), sample(&form, grid)?))
    }
}

/// Dyadic scales 2^lo ..= 2^hi.
pub fn dyadic_scales(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|j| 2f64.powi(j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gallery, KernelParams};

    fn line(side: f64, n: usize) -> Grid {
        make_grid(1, Cube::interval(-0.5 * side, 0.5 * side).unwrap(), n).unwrap()
    }

    #[test]
    fn exact_power_laws_fit() {
        let cfg = FitConfig::default();
        let rows: Vec<(f64, f64)> = dyadic_scales(-3, 3).into_iter().map(|r| (r, 3.0 * r.sqrt())).collect();
        let f = exponent_fit(&rows, 0.5, &cfg).unwrap();
        assert!((f.slope.unwrap() - 0.5).abs() < 1e-12);
        assert!((f.constant - 3.0).abs() < 1e-12);
        assert_eq!(f.verdict, Verdict::Pass);
        let rows: Vec<(f64, f64)> = dyadic_scales(-2, 2).into_iter().map(|r| (r, r)).collect();
        assert!((exponent_fit(&rows, 1.0, &cfg).unwrap().slope.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_edge_cases() {
        let cfg = FitConfig::default();
        assert!(matches!(exponent_fit(&[(1.0, 1.0); 4], 0.5, &cfg), Err(LabError::TooFewRows { .. })));
        let zeros: Vec<(f64, f64)> = dyadic_scales(0, 4).into_iter().map(|r| (r, 0.0)).collect();
        let f = exponent_fit(&zeros, 0.5, &cfg).unwrap();
        assert_eq!(f.verdict, Verdict::PassDegenerate);
        assert_eq!(f.zero_rows, 5);
        let growing: Vec<(f64, f64)> = dyadic_scales(0, 4).into_iter().map(|r| (r, r)).collect();
        assert_eq!(exponent_fit(&growing, 0.5, &cfg).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn longer_sweeps_never_improve_uniformity() {
        let cfg = FitConfig::default();
        let rows: Vec<(f64, f64)> =
            dyadic_scales(-3, 3).into_iter().map(|r| (r, r.sqrt() * (1.0 + 0.1 * r.log2()))).collect();
        let short = exponent_fit(&rows[..5], 0.5, &cfg).unwrap();
        let long = exponent_fit(&rows, 0.5, &cfg).unwrap();
        assert!(long.spread >= short.spread);
    }

    #[test]
    fn builtins_parse() {
        let g = line(8.0, 64);
        let b = Weight::builtin("accretive-lipschitz(0.3)", &g).unwrap();
        assert_eq!(b.name, "accretive-lipschitz(0.3)");
        assert!(b.values.values().iter().all(|z| z.re == 1.0 && z.im.abs() < 0.3));
        assert_eq!(Weight::builtin("one", &g).unwrap().values.inf_modulus(), 1.0);
        assert!(Weight::builtin("sign-sin", &g).unwrap().values.values().iter().all(|z| z.norm() == 1.0));
        assert!(builtin_form("two").is_err());
        assert!(builtin_form("accretive-lipschitz(x)").is_err());
    }

    #[test]
    fn zero_kernel_is_degenerate() {
        let setup = Setup::new(line(16.0, 256), 1);
        let k = KernelModel::zero(Arity::Linear, 1).unwrap();
        let r = stein_t1_test(&setup, &k, &[vec![0.0]], &dyadic_scales(-2, 2)).unwrap();
        assert!(r.rows.iter().all(|row| row.value == 0.0));
        assert_eq!(r.verdict(), Verdict::PassDegenerate);
        assert_eq!(r.fit.constant, 0.0);
    }

    #[test]
    fn hilbert_stein_ratio_is_twice_the_bump_norm() {
        let g = line(16.0, 512);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let report = stein_t1_test(&setup, &k, &[vec![0.0]], &dyadic_scales(-2, 2)).unwrap();
        let (phi, _) = setup.bump_at(&[0.0], 1.0).unwrap();
        let unit = lp_norm(&phi, 2.0).unwrap();
        for ratio in report.ratios() {
            assert!((ratio / (2.0 * unit) - 1.0).abs() < 0.03, "{ratio} vs {}", 2.0 * unit);
        }
        assert_eq!(report.verdict(), Verdict::Pass);
        let kt = k.transpose(1).unwrap();
        let other = stein_t1_test(&setup, &kt, &[vec![0.0]], &dyadic_scales(-2, 2)).unwrap();
        for (a, b) in report.rows.iter().zip(&other.rows) {
            assert!((a.value - b.value).abs() <= 1e-12 * a.value);
        }
    }

    #[test]
    fn doubling_b_doubles_every_norm() {
        let g = line(16.0, 256);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let two = one.scaled(2.0);
        let scales = dyadic_scales(-1, 3);
        let [a, _] = stein_tb_test(&setup, &k, &one, &one, &[vec![0.0]], &scales).unwrap();
        let [b, _] = stein_tb_test(&setup, &k, &one, &two, &[vec![0.0]], &scales).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((y.value - 2.0 * x.value).abs() <= 1e-12 * y.value);
        }
    }

    #[test]
    fn equal_center_hilbert_pairing_vanishes() {
        let g = line(16.0, 256);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let reports =
            weak_boundedness_test(&setup, &k, [&one, &one, &one], &[vec![0.0]], &dyadic_scales(-2, 2), &[0.0]).unwrap();
        assert_eq!(reports[0].verdict(), Verdict::PassDegenerate);
    }

    #[test]
    fn direct_bound_needs_a_norm_and_halves_with_b() {
        let g = line(16.0, 256);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let scales = dyadic_scales(-1, 2);
        assert!(matches!(
            direct_bound_check(&setup, &k, None, &one, None, &[vec![0.0]], &scales),
            Err(LabError::MissingNorm(_))
        ));
        let full = direct_bound_check(&setup, &k, Some(1.0), &one, None, &[vec![0.0]], &scales).unwrap();
        assert_eq!(full.verdict(), Verdict::Pass);
        for row in &full.rows {
            assert!((row.measured / row.bound - 1.0).abs() < 0.03);
        }
        let half = direct_bound_check(&setup, &k, Some(1.0), &one.scaled(0.5), None, &[vec![0.0]], &scales).unwrap();
        for (a, b) in full.rows.iter().zip(&half.rows) {
            assert!((b.measured - 0.5 * a.measured).abs() <= 1e-12 * a.measured);
        }
        let tight = direct_bound_check(&setup, &k, Some(0.5), &one, None, &[vec![0.0]], &scales).unwrap();
        assert_eq!(tight.verdict(), Verdict::Fail);
        assert!(tight.witness().is_some());
    }

    #[test]
    fn support_escape_is_an_error() {
        let setup = Setup::new(line(4.0, 64), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        assert!(matches!(
            stein_t1_test(&setup, &k, &[vec![0.0]], &dyadic_scales(-2, 2)),
            Err(LabError::SupportEscape { .. })
        ));
    }

    #[test]
    fn local_rewrite_is_exact_on_both_sides() {
        let g = line(64.0, 512);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let q = Cube::interval(-0.5, 0.5).unwrap();
        for r in [3.0, 12.0] {
            let p = local_piece_check(&setup, &k, &one, &q, r).unwrap();
            assert!(p.rewrite_defect < 1e-12, "{}", p.rewrite_defect);
            assert!(p.composite_is_bump);
        }
    }

    #[test]
    fn splitting_identity_and_center_deviation() {
        let g = line(64.0, 512);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("hilbert", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let q = Cube::interval(-0.5, 0.5).unwrap();
        assert!(splitting_check(&setup, &k, &one, &q, 8.0).unwrap().ok());
        let ff = far_field_constancy(&setup, &k, &one, &q, &[4.0, 8.0]).unwrap();
        assert!(ff.center_deviation.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn zero_weight_kills_the_bilinear_pieces() {
        let g = line(16.0, 64);
        let setup = Setup::new(g.clone(), 1);
        let k = gallery("bilinear-homog", &KernelParams::new()).unwrap();
        let one = Weight::one(&g).unwrap();
        let zero = Weight::new("zero", SampledFunction::zeros(&g));
        let q = Cube::interval(-0.5, 0.5).unwrap();
        let rep = bilinear_decomposition_check(&setup, &k, &zero, &one, &q, &[2.0]).unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.local, 0.0);
        assert_eq!(row.deviations, [0.0; 3]);
        assert!(rep.sum_ok());
    }
}
