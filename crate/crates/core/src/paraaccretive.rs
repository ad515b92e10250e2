//! Para-accretivity certificates, the same-size-neighbour condition, and the
//! u_k construction with its checks.
//!
//! Every subcube search runs over grid-aligned windows: for a cube holding
//! `m` cells per axis, the candidates are all windows of `m >> j` cells per
//! axis, `j = 0..=J`, at every offset inside the cube. Window sums come from
//! a summed-area table, so each candidate costs O(2^d).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::gauss::{gl16, integrate, mollifier_profile};
use crate::grid::{format_point, Cube, DyadicFamily, Grid, Point, SampledFunction};
use crate::summation::{sum_complex, NeumaierSum};

pub const DEFAULT_DEPTH: usize = 3;
pub const TIE_TOL: f64 = 1e-12;
pub const PAIRING_TOL: f64 = 1e-3;
pub const CSV_HEADER: &str = "cube_center,cube_side,witness_center,witness_side,ratio";

/// Summed-area table of a sampled function.
struct PrefixTable {
    d: usize,
    n: usize,
    s: Vec<Complex64>,
}

impl PrefixTable {
    fn new(b: &SampledFunction) -> Self {
        let g = b.grid();
        let (d, n) = (g.dim(), g.n());
        let v = b.values();
        let zero = Complex64::new(0.0, 0.0);
        if d == 1 {
            let mut s = vec![zero; n + 1];
            for i in 0..n {
                s[i + 1] = s[i] + v[i];
            }
            return Self { d, n, s };
        }
        let w = n + 1;
        let mut s = vec![zero; w * w];
        for i in 0..n {
            let mut row = zero;
            for j in 0..n {
                row += v[i * n + j];
                s[(i + 1) * w + j + 1] = s[i * w + j + 1] + row;
            }
        }
        Self { d, n, s }
    }

    fn sum(&self, r: &[Range<usize>; 2]) -> Complex64 {
        if self.d == 1 {
            return self.s[r[0].end] - self.s[r[0].start];
        }
        let w = self.n + 1;
        let at = |i: usize, j: usize| self.s[i * w + j];
        at(r[0].end, r[1].end) - at(r[0].start, r[1].end) - at(r[0].end, r[1].start) + at(r[0].start, r[1].start)
    }
}

fn cells_of(g: &Grid, r: &[Range<usize>; 2]) -> usize {
    (0..g.dim()).map(|a| r[a].len()).product()
}

fn ranges_cube(g: &Grid, r: &[Range<usize>; 2]) -> Cube {
    let h = g.spacing();
    let d = g.dim();
    let center: Vec<f64> = (0..d).map(|a| g.bbox().lower(a) + h * 0.5 * (r[a].start + r[a].end) as f64).collect();
    Cube::new(center, h * r[0].len() as f64).expect("non-empty window")
}

/// Best window inside `outer` (cell ranges); the ratio is |window sum| over
/// the cell count of `outer`.
fn best_window(t: &PrefixTable, g: &Grid, outer: &[Range<usize>; 2], depth: usize) -> ([Range<usize>; 2], f64) {
    let d = g.dim();
    let m = outer[0].len().min(if d == 2 { outer[1].len() } else { usize::MAX });
    let total = cells_of(g, outer) as f64;
    let mut best = (outer.clone(), -1.0);
    for j in 0..=depth {
        let w = m >> j;
        if w == 0 {
            break;
        }
        let starts = |a: usize| outer[a].start..=(outer[a].end - w);
        let mut consider = |r: [Range<usize>; 2]| {
            let ratio = t.sum(&r).norm() / total;
            if ratio > best.1 + TIE_TOL {
                best = (r, ratio);
            }
        };
        if d == 1 {
            for i in starts(0) {
                consider([i..i + w, 0..1]);
            }
        } else {
            for i in starts(0) {
                for k in starts(1) {
                    consider([i..i + w, k..k + w]);
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct AccretivityEntry {
    pub cube: Cube,
    pub witness: Cube,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ParaAccretivityCertificate {
    pub c0: f64,
    pub depth: usize,
    pub b_sup: f64,
    pub b_inf: f64,
    pub c1: f64,
    pub entries: Vec<AccretivityEntry>,
}

impl ParaAccretivityCertificate {
    pub fn summary_line(&self) -> String {
        format!("c0={:.17e},J={},b_sup={:.17e},c1={:.17e}", self.c0, self.depth, self.b_sup, self.c1)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{:.17e},{},{:.17e},{:.17e}",
                format_point(e.cube.center()),
                e.cube.side(),
                format_point(e.witness.center()),
                e.witness.side(),
                e.ratio
            );
        }
        s
    }

    /// Every witness lies in its cube and carries volume at least c0/|b|_inf.
    pub fn invariants_hold(&self) -> bool {
        self.entries.iter().all(|e| {
            let vol = e.witness.volume() / e.cube.volume();
            e.ratio >= self.c0 - TIE_TOL && e.cube.contains_cube(&e.witness) && vol >= self.c0 / self.b_sup - 1e-9
        })
    }
}

fn c1_of(c0: f64, b_sup: f64, d: usize) -> f64 {
    if b_sup > 0.0 {
        (c0 / b_sup).powf(1.0 / d as f64)
    } else {
        0.0
    }
}

pub fn check_para_accretive(
    b: &SampledFunction,
    family: &DyadicFamily,
    depth: usize,
) -> Result<ParaAccretivityCertificate> {
    if family.is_empty() {
        return Err(LabError::Invalid("empty cube family".into()));
    }
    if depth == 0 {
        return Err(LabError::Invalid("subcube search depth must be at least 1".into()));
    }
    let g = b.grid();
    if family.root().dim() != g.dim() {
        return Err(LabError::GridMismatch("family dimension differs from grid".into()));
    }
    let table = PrefixTable::new(b);
    let cubes: Vec<&Cube> = family.iter().map(|(_, q)| q).collect();
    let entries: Vec<Result<AccretivityEntry>> = cubes
        .par_iter()
        .map(|q| {
            let outer = g.cells_inside(q);
            if cells_of(g, &outer) == 0 {
                return Err(LabError::CubeTooSmall { cells: 0, min: 1 });
            }
            let (r, ratio) = best_window(&table, g, &outer, depth);
            Ok(AccretivityEntry { cube: (*q).clone(), witness: ranges_cube(g, &r), ratio })
        })
        .collect();
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let c0 = entries.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let b_sup = b.sup_norm();
    Ok(ParaAccretivityCertificate { c0, depth, b_sup, b_inf: b.inf_modulus(), c1: c1_of(c0, b_sup, g.dim()), entries })
}

#[derive(Debug, Clone)]
pub struct ConditionBEntry {
    pub generation: usize,
    pub cube: Cube,
    pub witness: Option<Cube>,
    pub average: f64,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionBCertificate {
    pub eps: f64,
    pub radius: f64,
    pub passed: bool,
    /// Smallest best-neighbour average over all tested cubes.
    pub achieved: f64,
    pub family: DyadicFamily,
    pub entries: Vec<ConditionBEntry>,
    pub first_failure: Option<(usize, Cube)>,
}

impl ConditionBCertificate {
    pub fn witness_for(&self, k: usize, q: &Cube) -> Option<&ConditionBEntry> {
        self.entries.iter().find(|e| e.generation == k && e.cube.center() == q.center())
    }
}

pub fn check_condition_b(
    b: &SampledFunction,
    family: &DyadicFamily,
    radius: f64,
    eps: f64,
) -> Result<ConditionBCertificate> {
    if radius < 10.0 {
        return Err(LabError::Invalid(format!("search radius N must be at least 10, got {radius}")));
    }
    let g = b.grid();
    let table = PrefixTable::new(b);
    let mut entries = Vec::new();
    for k in family.k_min()..=family.k_max() {
        let gen = family.generation(k).unwrap_or(&[]);
        let reach = radius * family.side(k);
        let averages: Vec<f64> = gen
            .iter()
            .map(|q| {
                let r = g.cells_inside(q);
                let c = cells_of(g, &r);
                if c == 0 {
                    0.0
                } else {
                    table.sum(&r).norm() / c as f64
                }
            })
            .collect();
        let rows: Vec<ConditionBEntry> = gen
            .par_iter()
            .map(|q| {
                // the cube itself is the first candidate, so ties keep it
                let own = gen.iter().position(|c| std::ptr::eq(c, q)).expect("cube from this generation");
                let mut best: Option<(usize, f64, f64)> = None;
                let order = std::iter::once(own).chain((0..gen.len()).filter(|&i| i != own));
                for i in order {
                    let other = &gen[i];
                    let dist = q.distance(other);
                    if dist > reach * (1.0 + 1e-12) {
                        continue;
                    }
                    let avg = averages[i];
                    if best.is_none_or(|(_, a, _)| avg > a + TIE_TOL) {
                        best = Some((i, avg, dist));
                    }
                }
                let (i, average, distance) = best.expect("a cube is within reach of itself");
                ConditionBEntry {
                    generation: k,
                    cube: q.clone(),
                    witness: (average >= eps).then(|| gen[i].clone()),
                    average,
                    distance,
                }
            })
            .collect();
        entries.extend(rows);
    }
    let first_failure = entries.iter().find(|e| e.witness.is_none()).map(|e| (e.generation, e.cube.clone()));
    let achieved = entries.iter().map(|e| e.average).fold(f64::INFINITY, f64::min);
    Ok(ConditionBCertificate {
        eps,
        radius,
        passed: first_failure.is_none(),
        achieved,
        family: family.clone(),
        entries,
        first_failure,
    })
}

#[derive(Debug, Clone)]
pub struct Def3Bound {
    pub bound: f64,
    pub generation: usize,
    pub q1: Cube,
    pub witness: Cube,
    pub contained: bool,
}

/// Converts a neighbour certificate into a lower bound for the subcube
/// average of `q`, using the generation whose side s satisfies
/// 10 N s <= side(q) <= 20 N s.
pub fn b_to_def3_constant(cert: &ConditionBCertificate, q: &Cube) -> Result<Def3Bound> {
    let fam = &cert.family;
    let n = cert.radius;
    let ell = q.side();
    let k = (fam.k_min()..=fam.k_max())
        .find(|&k| {
            let s = fam.side(k);
            10.0 * n * s <= ell * (1.0 + 1e-12) && ell <= 20.0 * n * s * (1.0 + 1e-12)
        })
        .ok_or_else(|| {
            let s0 = fam.root().side();
            let k_needed = (20.0 * n * s0 / ell).log2().floor() as i64;
            LabError::GenerationRange { k: k_needed, lo: fam.k_min() as i64, hi: fam.k_max() as i64 }
        })?;
    let gen = fam.generation(k).unwrap_or(&[]);
    let q1 = gen
        .iter()
        .find(|c| c.contains_point(q.center()))
        .ok_or_else(|| LabError::Cube(format!("{q} has its center outside the certified family")))?;
    let entry = cert.witness_for(k, q1).ok_or_else(|| LabError::Invalid(format!("no certificate entry for {q1}")))?;
    let witness = entry.witness.clone().ok_or_else(|| LabError::Invalid(format!("certificate fails at {q1}")))?;
    Ok(Def3Bound {
        bound: cert.eps / (20.0 * n).powi(q.dim() as i32),
        generation: k,
        q1: q1.clone(),
        contained: q.contains_cube(&witness),
        witness,
    })
}

/// Where u_k(x, .) is evaluated.
#[derive(Debug, Clone)]
pub enum Lattice {
    /// Centers of the dyadic cubes of side 2^-k lying inside the grid box.
    DyadicCenters,
    Points(Vec<Point>),
}

#[derive(Debug, Clone)]
pub struct UkRow {
    pub x: Point,
    pub cube: Cube,
    pub witness: Cube,
    pub ell: f64,
    /// 2^{kd} |integral of b over the witness|.
    pub ratio: f64,
    /// The mollified witness reaches outside the grid box.
    pub truncated: bool,
    pub u: SampledFunction,
}

#[derive(Debug, Clone)]
pub struct UkFamily {
    pub k: i32,
    pub dim: usize,
    pub h: f64,
    pub alpha: f64,
    pub c0: f64,
    pub c1: f64,
    pub b_sup: f64,
    pub rows: Vec<UkRow>,
}

impl UkFamily {
    pub fn scale(&self) -> f64 {
        2f64.powi(-self.k)
    }
}

/// Normalization of the mollifier profile: alpha = 1 / integral of phi.
pub fn mollifier_alpha(d: usize) -> Result<f64> {
    let mass = match d {
        1 => integrate(|x| mollifier_profile(x * x), -1.0, 1.0, 8),
        2 => 2.0 * std::f64::consts::PI * integrate(|r| r * mollifier_profile(r * r), 0.0, 1.0, 8),
        _ => return Err(LabError::Dimension(d)),
    };
    Ok(1.0 / mass)
}

/// (1_cube * phi_eps)(y) for the normalized mollifier of radius eps.
fn mollified_indicator(lo: &[f64], hi: &[f64], y: &[f64], eps: f64, alpha: f64) -> f64 {
    let d = lo.len();
    let mut dist_out = 0.0;
    let mut inner = f64::INFINITY;
    for a in 0..d {
        let gap = (lo[a] - y[a]).max(y[a] - hi[a]).max(0.0);
        dist_out += gap * gap;
        inner = inner.min((y[a] - lo[a]).min(hi[a] - y[a]));
    }
    if dist_out >= eps * eps {
        return 0.0;
    }
    if inner >= eps {
        return 1.0;
    }
    let clip: Vec<(f64, f64)> = (0..d).map(|a| (lo[a].max(y[a] - eps), hi[a].min(y[a] + eps))).collect();
    let scale = alpha / eps.powi(d as i32);
    let (xs, ws) = gl16();
    let nodes = |a: usize| -> Vec<(f64, f64)> {
        let (l, h) = clip[a];
        let mut out = Vec::with_capacity(32);
        let width = 0.5 * (h - l);
        for p in 0..2 {
            let pl = l + width * p as f64;
            for (x, w) in xs.iter().zip(ws) {
                out.push((pl + 0.5 * width * (1.0 + x), 0.5 * width * w));
            }
        }
        out
    };
    let mut acc = NeumaierSum::new();
    if d == 1 {
        for (t, w) in nodes(0) {
            let s = (y[0] - t) / eps;
            acc.add(w * mollifier_profile(s * s));
        }
    } else {
        let n1 = nodes(1);
        for (t0, w0) in nodes(0) {
            let s0 = (y[0] - t0) / eps;
            for &(t1, w1) in &n1 {
                let s1 = (y[1] - t1) / eps;
                acc.add(w0 * w1 * mollifier_profile(s0 * s0 + s1 * s1));
            }
        }
    }
    (scale * acc.value()).min(1.0)
}

/// L1 distance between the unit-cube indicator and its mollification at
/// width h.
pub fn mollification_error(d: usize, h: f64) -> Result<f64> {
    let alpha = mollifier_alpha(d)?;
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let mut cuts = vec![-h, 0.0, h, 1.0 - h, 1.0, 1.0 + h];
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let spans: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| b > a).collect();
    let (xs, ws) = gl16();
    let nodes = |(a, b): (f64, f64)| -> Vec<(f64, f64)> {
        xs.iter().zip(ws).map(|(x, w)| (0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w)).collect()
    };
    let ind = |y: &[f64]| if y.iter().all(|&t| (0.0..=1.0).contains(&t)) { 1.0 } else { 0.0 };
    let mut acc = NeumaierSum::new();
    if d == 1 {
        for &s in &spans {
            for (y, w) in nodes(s) {
                acc.add(w * (mollified_indicator(&lo, &hi, &[y], h, alpha) - ind(&[y])).abs());
            }
        }
    } else {
        for &s0 in &spans {
            for &s1 in &spans {
                // the interior block is reproduced exactly
                if s0.0 >= h && s0.1 <= 1.0 - h && s1.0 >= h && s1.1 <= 1.0 - h {
                    continue;
                }
                let n1 = nodes(s1);
                for (y0, w0) in nodes(s0) {
                    for &(y1, w1) in &n1 {
                        let y = [y0, y1];
                        acc.add(w0 * w1 * (mollified_indicator(&lo, &hi, &y, h, alpha) - ind(&y)).abs());
                    }
                }
            }
        }
    }
    Ok(acc.value())
}

fn cached_error(d: usize, halvings: u32) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u32), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("error cache poisoned").get(&(d, halvings)) {
        return Ok(*v);
    }
    let v = mollification_error(d, 0.5f64.powi(halvings as i32))?;
    cache.lock().expect("error cache poisoned").insert((d, halvings), v);
    Ok(v)
}

/// Largest h = 2^-j whose unit-cube mollification error is at most `target`.
pub fn select_h(d: usize, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(LabError::Invalid(format!("mollification target must be positive, got {target}")));
    }
    for j in 0..40 {
        if cached_error(d, j)? <= target {
            return Ok(0.5f64.powi(j as i32));
        }
    }
    Err(LabError::Underflow(format!("no h >= 2^-40 meets the mollification target {target}")))
}

fn lattice_points(g: &Grid, k: i32, lattice: &Lattice) -> Vec<Point> {
    match lattice {
        Lattice::Points(p) => p.clone(),
        Lattice::DyadicCenters => {
            let s = 2f64.powi(-k);
            let d = g.dim();
            let axis: Vec<Vec<f64>> = (0..d)
                .map(|a| {
                    let lo = (g.bbox().lower(a) / s - 1e-9).ceil() as i64;
                    let hi = (g.bbox().upper(a) / s + 1e-9).floor() as i64;
                    (lo..hi).map(|j| (j as f64 + 0.5) * s).collect()
                })
                .collect();
            if d == 1 {
                axis[0].iter().map(|&x| [x, 0.0]).collect()
            } else {
                axis[0].iter().flat_map(|&x| axis[1].iter().map(move |&y| [x, y])).collect()
            }
        }
    }
}

/// Builds u_k(x, .) on the lattice. The certificate supplies c0 and the
/// search depth; the constant actually used is the smaller of the
/// certificate's c0 and the worst selected ratio.
pub fn build_uk(b: &SampledFunction, k: i32, cert: &ParaAccretivityCertificate, lattice: &Lattice) -> Result<UkFamily> {
    let g = b.grid();
    let d = g.dim();
    let side = 2f64.powi(-k);
    let table = PrefixTable::new(b);
    let points = lattice_points(g, k, lattice);
    if points.is_empty() {
        return Err(LabError::Invalid(format!("no lattice points for generation {k}")));
    }
    let vol = side.powi(d as i32);
    let selections: Vec<Result<(Point, Cube, Cube, f64)>> = points
        .par_iter()
        .map(|x| {
            let q = Cube::new(x[..d].to_vec(), side)?;
            let outer = g.cells_inside(&q);
            if cells_of(g, &outer) == 0 || (d == 2 && outer[0].len() != outer[1].len()) {
                return Err(LabError::TooCoarse(format!("cube {q} holds no square block of whole cells")));
            }
            let (r, _) = best_window(&table, g, &outer, cert.depth);
            let ratio = table.sum(&r).norm() * g.cell_volume() / vol;
            Ok((*x, q, ranges_cube(g, &r), ratio))
        })
        .collect();
    let selections = selections.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = selections.iter().map(|s| s.3).fold(f64::INFINITY, f64::min);
    let c0 = cert.c0.min(worst);
    let b_sup = b.sup_norm();
    if !(c0 > 0.0) {
        return Err(LabError::Invalid("para-accretivity constant is zero on this lattice".into()));
    }
    let h = select_h(d, c0 / (2.0 * b_sup))?;
    let alpha = mollifier_alpha(d)?;
    let amp = 2f64.powi(k * d as i32);
    let rows: Vec<Result<UkRow>> = selections
        .into_par_iter()
        .map(|(x, cube, witness, ratio)| {
            let ell = witness.side();
            let eps = h * ell;
            if eps < g.spacing() {
                return Err(LabError::Underflow(format!(
                    "mollifier radius {eps:.3e} at x = ({}) is below the grid spacing {:.3e}; refine the grid",
                    format_point(&x[..d]),
                    g.spacing()
                )));
            }
            let lo: Vec<f64> = (0..d).map(|a| witness.lower(a)).collect();
            let hi: Vec<f64> = (0..d).map(|a| witness.upper(a)).collect();
            let values = (0..g.len())
                .map(|i| {
                    let y = g.point(i);
                    Complex64::new(amp * mollified_indicator(&lo, &hi, &y[..d], eps, alpha), 0.0)
                })
                .collect();
            let truncated = !g.bbox().contains_cube(&Cube::new(witness.center().to_vec(), ell + 2.0 * eps)?);
            Ok(UkRow { x, cube, witness, ell, ratio, truncated, u: SampledFunction::from_values(g, values)? })
        })
        .collect();
    Ok(UkFamily {
        k,
        dim: d,
        h,
        alpha,
        c0,
        c1: c1_of(c0, b_sup, d),
        b_sup,
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

#[derive(Debug, Clone)]
pub struct UkPointCheck {
    pub x: Point,
    pub size: f64,
    pub size_bound: f64,
    pub support: f64,
    pub support_bound: f64,
    pub lipschitz: f64,
    pub lipschitz_bound: f64,
    pub lipschitz_witness: Point,
    pub pairing: f64,
    pub pairing_lo: f64,
    pub pairing_hi: f64,
}

impl UkPointCheck {
    pub fn size_ok(&self) -> bool {
        self.size <= self.size_bound * (1.0 + 1e-12)
    }
    pub fn support_ok(&self) -> bool {
        self.support < self.support_bound
    }
    pub fn lipschitz_ok(&self) -> bool {
        self.lipschitz <= self.lipschitz_bound
    }
    pub fn pairing_ok(&self) -> bool {
        self.pairing >= self.pairing_lo * (1.0 - PAIRING_TOL) && self.pairing <= self.pairing_hi * (1.0 + PAIRING_TOL)
    }
    pub fn passed(&self) -> bool {
        self.size_ok() && self.support_ok() && self.lipschitz_ok() && self.pairing_ok()
    }
}

#[derive(Debug, Clone)]
pub struct UkVerification {
    pub points: Vec<UkPointCheck>,
}

impl UkVerification {
    pub fn passed(&self) -> bool {
        self.points.iter().all(UkPointCheck::passed)
    }
}

fn finite_difference_lipschitz(g: &Grid, values: &[Complex64]) -> (f64, Point) {
    let n = g.n();
    let h = g.spacing();
    let mut best = (0.0, [0.0; 2]);
    for i in 0..g.len() {
        let m = g.multi_index(i);
        for a in 0..g.dim() {
            if m[a] + 1 >= n {
                continue;
            }
            let mut m2 = m;
            m2[a] += 1;
            let q = (values[g.flat_index(m2)] - values[i]).norm() / h;
            if q > best.0 {
                best = (q, g.point(i));
            }
        }
    }
    best
}

pub fn verify_uk(fam: &UkFamily, b: &SampledFunction) -> Result<UkVerification> {
    let g = b.grid();
    let d = fam.dim as i32;
    let two_k = 2f64.powi(fam.k);
    let size_bound = fam.alpha * fam.h.powi(-d) * two_k.powi(d);
    let lip_bound = fam.alpha / fam.c1 * fam.h.powi(-d - 1) * two_k.powi(d + 1);
    let support_bound = (1.0 + (fam.dim as f64).sqrt()) * fam.scale();
    let points = fam
        .rows
        .par_iter()
        .map(|row| {
            if row.u.grid() != g {
                return Err(LabError::GridMismatch("u_k sampled on another grid".into()));
            }
            let v = row.u.values();
            let size = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let support = (0..g.len())
                .filter(|&i| v[i].norm() > 0.0)
                .map(|i| {
                    let y = g.point(i);
                    (0..fam.dim).map(|a| (y[a] - row.x[a]).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max);
            let (lipschitz, lipschitz_witness) = finite_difference_lipschitz(g, v);
            let pairing = (sum_complex(v.iter().zip(b.values()).map(|(u, bb)| u * bb)) * g.cell_volume()).norm();
            Ok(UkPointCheck {
                x: row.x,
                size,
                size_bound,
                support,
                support_bound,
                lipschitz,
                lipschitz_bound: lip_bound,
                lipschitz_witness,
                pairing,
                pairing_lo: 0.5 * fam.c0,
                pairing_hi: fam.b_sup,
            })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(UkVerification { points })
}

/// A two-point function s(x, y) sampled densely on a grid, rows indexed by x.
#[derive(Debug, Clone)]
pub struct TwoPointFamily {
    grid: Grid,
    values: Vec<Complex64>,
}

impl TwoPointFamily {
    pub fn new(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() * grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} values for a {}-point two-point family",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len() * grid.len()] }
    }

    /// Rows of a u_k family built on every grid point, each divided by its
    /// own pairing with b.
    pub fn from_uk(fam: &UkFamily, b: &SampledFunction) -> Result<Self> {
        let g = b.grid();
        let mut values = vec![Complex64::new(0.0, 0.0); g.len() * g.len()];
        for row in &fam.rows {
            let x = g.grid_index_of(&row.x[..g.dim()]).ok_or_else(|| {
                LabError::Invalid(format!("lattice point ({}) is not a grid point", format_point(&row.x[..g.dim()])))
            })?;
            let p = sum_complex(row.u.values().iter().zip(b.values()).map(|(u, bb)| u * bb)) * g.cell_volume();
            for (slot, u) in values[x * g.len()..(x + 1) * g.len()].iter_mut().zip(row.u.values()) {
                *slot = u / p;
            }
        }
        Self::new(g, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at(&self, x: usize, y: usize) -> Complex64 {
        self.values[x * self.grid.len() + y]
    }
}

#[derive(Debug, Clone)]
pub struct SkChecklist {
    /// Smallest C with |s| <= C 2^{kd}.
    pub size_constant: f64,
    /// Smallest C with s(x, y) = 0 for |x - y| >= C 2^{-k}.
    pub support_constant: f64,
    pub symmetry_defect: f64,
    pub symmetric: bool,
    /// Smallest C with |s(x, y) - s(x', y)| <= C 2^{k(d+1)} |x - x'|.
    pub lipschitz_constant: f64,
    pub normalization_defect: f64,
    pub normalized: bool,
    pub admissible_c: f64,
}

pub fn verify_sk_checklist(s: &TwoPointFamily, b: &SampledFunction, k: i32) -> Result<SkChecklist> {
    let g = s.grid();
    if b.grid() != g {
        return Err(LabError::GridMismatch("b and s live on different grids".into()));
    }
    let n = g.len();
    let d = g.dim() as i32;
    let two_k = 2f64.powi(k);
    let dist = |x: usize, y: usize| {
        let (p, q) = (g.point(x), g.point(y));
        (0..g.dim()).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>().sqrt()
    };
    let per_row: Vec<(f64, f64, f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut size: f64 = 0.0;
            let mut support: f64 = 0.0;
            let mut sym: f64 = 0.0;
            let mut lip: f64 = 0.0;
            let m = g.multi_index(x);
            let neighbours: Vec<usize> = (0..g.dim())
                .filter(|&a| m[a] + 1 < g.n())
                .map(|a| {
                    let mut m2 = m;
                    m2[a] += 1;
                    g.flat_index(m2)
                })
                .collect();
            for y in 0..n {
                let v = s.at(x, y);
                size = size.max(v.norm());
                if v.norm() > 0.0 {
                    support = support.max(dist(x, y));
                }
                sym = sym.max((v - s.at(y, x)).norm());
                for &x2 in &neighbours {
                    lip = lip.max((s.at(x2, y) - v).norm() / g.spacing());
                }
            }
            let pairing = sum_complex((0..n).map(|y| s.at(x, y) * b.values()[y])) * g.cell_volume();
            (size, support, sym, lip, (pairing - 1.0).norm())
        })
        .collect();
    let fold = |f: fn(&(f64, f64, f64, f64, f64)) -> f64| per_row.iter().map(f).fold(0.0, f64::max);
    let size = fold(|r| r.0);
    let size_constant = size / two_k.powi(d);
    // a support reaching the last sample still needs one more cell of room
    let support_constant = (fold(|r| r.1) + g.spacing()) * two_k;
    let symmetry_defect = fold(|r| r.2);
    let lipschitz_constant = fold(|r| r.3) / two_k.powi(d + 1);
    let normalization_defect = fold(|r| r.4);
    Ok(SkChecklist {
        size_constant,
        support_constant,
        symmetry_defect,
        symmetric: symmetry_defect <= 1e-9 * size.max(f64::MIN_POSITIVE),
        lipschitz_constant,
        normalization_defect,
        normalized: normalization_defect <= PAIRING_TOL,
        admissible_c: size_constant.max(support_constant).max(lipschitz_constant),
    })
}
