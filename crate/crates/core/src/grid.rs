//! Uniform midpoint grids, sampled functions, cubes and dyadic families.
//!
//! Every other module computes on this substrate. Samples sit at cell
//! centers, so the indicator of a cube whose edges fall on cell edges is
//! represented exactly, and every integral is a midpoint sum taken in the
//! lexicographic point order.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::summation::{ComplexSum, NeumaierSum};

/// A point of R^d stored in a fixed two-slot array; for d = 1 the second
/// slot is ignored.
pub type Point = [f64; 2];

/// Default cap on the number of generations in a [`DyadicFamily`].
pub const DEFAULT_GENERATION_CAP: usize = 24;

/// Minimum points per axis.
pub const MIN_POINTS: usize = 8;

fn check_dim(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(LabError::Dimension(d))
    }
}

/// Axis-aligned cube with center and side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    center: Vec<f64>,
    side: f64,
}

impl Cube {
    pub fn new(center: impl Into<Vec<f64>>, side: f64) -> Result<Self> {
        let center = center.into();
        check_dim(center.len())?;
        if !(side.is_finite() && side > 0.0) {
            return Err(LabError::Cube(format!("side must be positive, got {side}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(LabError::Cube(format!("non-finite center {center:?}")));
        }
        Ok(Self { center, side })
    }

    /// The interval [lo, hi] as a one-dimensional cube.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![0.5 * (lo + hi)], hi - lo)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn diam(&self) -> f64 {
        (self.dim() as f64).sqrt() * self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - 0.5 * self.side
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.center[axis] + 0.5 * self.side
    }

    /// Closed containment of a point.
    pub fn contains_point(&self, p: &[f64]) -> bool {
        (0..self.dim()).all(|a| p[a] >= self.lower(a) && p[a] <= self.upper(a))
    }

    /// Containment of another cube, with a relative slack of 1e-12.
    pub fn contains_cube(&self, other: &Cube) -> bool {
        let slack = 1e-12 * self.side.max(other.side);
        (0..self.dim()).all(|a| other.lower(a) >= self.lower(a) - slack && other.upper(a) <= self.upper(a) + slack)
    }

    /// The 2^d children in lexicographic order.
    pub fn children(&self) -> Vec<Cube> {
        let q = 0.25 * self.side;
        let half = 0.5 * self.side;
        match self.dim() {
            1 => vec![
                Cube { center: vec![self.center[0] - q], side: half },
                Cube { center: vec![self.center[0] + q], side: half },
            ],
            _ => {
                let mut out = Vec::with_capacity(4);
                for sx in [-q, q] {
                    for sy in [-q, q] {
                        out.push(Cube { center: vec![self.center[0] + sx, self.center[1] + sy], side: half });
                    }
                }
                out
            }
        }
    }

    pub fn translated(&self, offset: &[f64]) -> Cube {
        Cube { center: self.center.iter().zip(offset).map(|(c, o)| c + o).collect(), side: self.side }
    }

    /// Same center, side multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Cube {
        Cube { center: self.center.clone(), side: self.side * factor }
    }

    /// Euclidean distance between the two closed cubes as sets.
    pub fn distance(&self, other: &Cube) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.dim() {
            let gap = (other.lower(a) - self.upper(a)).max(self.lower(a) - other.upper(a)).max(0.0);
            acc += gap * gap;
        }
        acc.sqrt()
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cube(center={}, side={})", format_point(&self.center), self.side)
    }
}

/// Coordinates joined by `;` so they fit in one CSV field.
pub fn format_point(p: &[f64]) -> String {
    p.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(";")
}

/// Uniform midpoint grid over a root box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    bbox: Cube,
    n: usize,
    spacing: f64,
}

/// Build the midpoint grid with `n` points per axis covering `bbox`.
pub fn make_grid(d: usize, bbox: Cube, n: usize) -> Result<Grid> {
    check_dim(d)?;
    if bbox.dim() != d {
        return Err(LabError::Grid(format!("box has dimension {}, grid {d}", bbox.dim())));
    }
    if n < MIN_POINTS {
        return Err(LabError::Grid(format!("need n >= {MIN_POINTS} points per axis, got {n}")));
    }
    let spacing = bbox.side() / n as f64;
    Ok(Grid { dim: d, bbox, n, spacing })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bbox(&self) -> &Cube {
        &self.bbox
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Cell-center coordinate along one axis.
    #[inline]
    pub fn coord(&self, axis: usize, idx: usize) -> f64 {
        self.bbox.lower(axis) + (idx as f64 + 0.5) * self.spacing
    }

    #[inline]
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.n, flat % self.n]
        }
    }

    #[inline]
    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.n + idx[1]
        }
    }

    #[inline]
    pub fn point(&self, flat: usize) -> Point {
        let m = self.multi_index(flat);
        if self.dim == 1 {
            [self.coord(0, m[0]), 0.0]
        } else {
            [self.coord(0, m[0]), self.coord(1, m[1])]
        }
    }

    /// Continuous cell coordinate of `x` along `axis`: cell `i` spans [i, i+1).
    #[inline]
    pub fn cell_coordinate(&self, axis: usize, x: f64) -> f64 {
        (x - self.bbox.lower(axis)) / self.spacing
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.bbox.contains_point(p)
    }

    /// Index of the grid point nearest to `p`, if `p` coincides with one
    /// up to 1e-9 cells.
    pub fn grid_index_of(&self, p: &[f64]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for a in 0..self.dim {
            let c = self.cell_coordinate(a, p[a]) - 0.5;
            let r = c.round();
            if (c - r).abs() > 1e-9 || r < 0.0 || r >= self.n as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(self.flat_index(idx))
    }

    /// Per-axis cell ranges of a cube whose edges lie on cell edges.
    pub fn aligned_cells(&self, cube: &Cube) -> Result<[Range<usize>; 2]> {
        if cube.dim() != self.dim {
            return Err(LabError::GridMismatch("cube dimension differs from grid".into()));
        }
        let mut out = [0..1, 0..1];
        for (a, slot) in out.iter_mut().enumerate().take(self.dim) {
            let lo = self.cell_coordinate(a, cube.lower(a));
            let hi = self.cell_coordinate(a, cube.upper(a));
            let (rl, rh) = (lo.round(), hi.round());
            if (lo - rl).abs() > 1e-8 || (hi - rh).abs() > 1e-8 {
                return Err(LabError::NotAligned(format!("{cube}")));
            }
            if rl < 0.0 || rh > self.n as f64 || rh <= rl {
                return Err(LabError::NotAligned(format!("{cube} leaves the grid box")));
            }
            *slot = rl as usize..rh as usize;
        }
        Ok(out)
    }

    /// Per-axis ranges of the cells whose centers lie in the closed cube.
    pub fn cells_within(&self, cube: &Cube) -> [Range<usize>; 2] {
        let mut out = [0..1, 0..1];
        for (a, slot) in out.iter_mut().enumerate().take(self.dim) {
            let lo = (self.cell_coordinate(a, cube.lower(a)) - 0.5 - 1e-9).ceil().max(0.0);
            let hi = (self.cell_coordinate(a, cube.upper(a)) - 0.5 + 1e-9).floor();
            let hi = hi.min(self.n as f64 - 1.0);
            *slot = if hi < lo { 0..0 } else { lo as usize..hi as usize + 1 };
        }
        out
    }

    /// Per-axis ranges of the cells lying entirely inside the closed cube.
    pub fn cells_inside(&self, cube: &Cube) -> [Range<usize>; 2] {
        let mut out = [0..1, 0..1];
        for (a, slot) in out.iter_mut().enumerate().take(self.dim) {
            let lo = (self.cell_coordinate(a, cube.lower(a)) - 1e-9).ceil().max(0.0);
            let hi = (self.cell_coordinate(a, cube.upper(a)) + 1e-9).floor().min(self.n as f64);
            *slot = if hi <= lo { 0..0 } else { lo as usize..hi as usize };
        }
        out
    }

    /// Flat indices for a product of per-axis ranges, lexicographic order.
    pub fn flat_indices(&self, ranges: &[Range<usize>; 2]) -> Vec<usize> {
        let mut out = Vec::new();
        if self.dim == 1 {
            out.extend(ranges[0].clone());
        } else {
            for i in ranges[0].clone() {
                for j in ranges[1].clone() {
                    out.push(i * self.n + j);
                }
            }
        }
        out
    }
}

type Rule = dyn Fn(&[f64]) -> Complex64 + Send + Sync;

/// A named closed-form rule that can be re-sampled on any grid.
#[derive(Clone)]
pub struct ClosedForm {
    name: Arc<str>,
    rule: Arc<Rule>,
}

impl fmt::Debug for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosedForm({})", self.name)
    }
}

impl ClosedForm {
    pub fn new<F>(name: impl Into<String>, rule: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self { name: Arc::from(name.into()), rule: Arc::new(rule) }
    }

    pub fn real<F>(name: impl Into<String>, rule: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, move |p| Complex64::new(rule(p), 0.0))
    }

    pub fn constant(name: impl Into<String>, value: Complex64) -> Self {
        Self::new(name, move |_| value)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, p: &[f64]) -> Complex64 {
        (self.rule)(p)
    }

    pub fn product(&self, other: &ClosedForm) -> ClosedForm {
        let (a, b) = (self.rule.clone(), other.rule.clone());
        ClosedForm::new(format!("{}*{}", self.name, other.name), move |p| a(p) * b(p))
    }

    pub fn sum(&self, other: &ClosedForm) -> ClosedForm {
        let (a, b) = (self.rule.clone(), other.rule.clone());
        ClosedForm::new(format!("{}+{}", self.name, other.name), move |p| a(p) + b(p))
    }

    pub fn scaled(&self, c: Complex64) -> ClosedForm {
        let a = self.rule.clone();
        ClosedForm::new(format!("({c})*{}", self.name), move |p| c * a(p))
    }

    /// `1 - self`.
    pub fn complement(&self) -> ClosedForm {
        let a = self.rule.clone();
        ClosedForm::new(format!("1-{}", self.name), move |p| Complex64::new(1.0, 0.0) - a(p))
    }
}

/// Complex samples of a function on a grid, with an optional closed form.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    grid: Grid,
    values: Vec<Complex64>,
    form: Option<ClosedForm>,
}

/// Evaluate a closed-form rule at every grid point.
pub fn sample(form: &ClosedForm, grid: &Grid) -> Result<SampledFunction> {
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let p = grid.point(i);
        let v = form.eval(&p[..grid.dim()]);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(LabError::NonFinite { point: p[..grid.dim()].to_vec() });
        }
        values.push(v);
    }
    Ok(SampledFunction { grid: grid.clone(), values, form: Some(form.clone()) })
}

/// Sample a rule, replacing non-finite values by zero and returning the
/// indices of the masked cells.
pub fn sample_masked(form: &ClosedForm, grid: &Grid) -> (SampledFunction, Vec<usize>) {
    let mut masked = Vec::new();
    let values = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let v = form.eval(&p[..grid.dim()]);
            if v.re.is_finite() && v.im.is_finite() {
                v
            } else {
                masked.push(i);
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    (SampledFunction { grid: grid.clone(), values, form: Some(form.clone()) }, masked)
}

impl SampledFunction {
    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!("{} values for a grid of {} points", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(LabError::NonFinite { point: grid.point(i)[..grid.dim()].to_vec() });
        }
        Ok(Self { grid: grid.clone(), values, form: None })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len()], form: None }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn form(&self) -> Option<&ClosedForm> {
        self.form.as_ref()
    }

    pub fn with_form(mut self, form: Option<ClosedForm>) -> Self {
        self.form = form;
        self
    }

    /// Exact re-sampling of the closed form on another grid.
    pub fn resample(&self, grid: &Grid) -> Result<SampledFunction> {
        match &self.form {
            Some(form) => sample(form, grid),
            None if grid == &self.grid => Ok(self.clone()),
            None => Err(LabError::GridMismatch("function has no closed form and cannot be re-sampled".into())),
        }
    }

    fn check_same_grid(&self, other: &SampledFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(LabError::GridMismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.grid.bbox(),
                other.grid.bbox()
            )));
        }
        Ok(())
    }

    /// Pointwise product; the closed form is kept when both factors have one.
    pub fn mul(&self, other: &SampledFunction) -> Result<SampledFunction> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        let form = match (&self.form, &other.form) {
            (Some(a), Some(b)) => Some(a.product(b)),
            _ => None,
        };
        Ok(SampledFunction { grid: self.grid.clone(), values, form })
    }

    pub fn add(&self, other: &SampledFunction) -> Result<SampledFunction> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        let form = match (&self.form, &other.form) {
            (Some(a), Some(b)) => Some(a.sum(b)),
            _ => None,
        };
        Ok(SampledFunction { grid: self.grid.clone(), values, form })
    }

    pub fn sub(&self, other: &SampledFunction) -> Result<SampledFunction> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> SampledFunction {
        SampledFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            form: self.form.as_ref().map(|f| f.scaled(c)),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    pub fn inf_modulus(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.norm()))
    }

    /// Midpoint-rule integral over the grid box.
    pub fn integral(&self) -> Complex64 {
        let mut acc = ComplexSum::new();
        for v in &self.values {
            acc.add(*v);
        }
        acc.value() * self.grid.cell_volume()
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_norm(self, p)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// CSV export: header `x[,y],re,im`, one row per point, lexicographic order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.grid.dim() == 1 {
            writeln!(w, "x,re,im")?;
        } else {
            writeln!(w, "x,y,re,im")?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            if self.grid.dim() == 1 {
                writeln!(w, "{},{},{}", p[0], v.re, v.im)?;
            } else {
                writeln!(w, "{},{},{},{}", p[0], p[1], v.re, v.im)?;
            }
        }
        Ok(())
    }

    /// CSV import onto `grid`; rows must match the grid points in order.
    pub fn read_csv<R: BufRead>(reader: R, grid: &Grid, origin: &Path) -> Result<SampledFunction> {
        let err = |msg: String| LabError::Csv { path: origin.to_path_buf(), msg };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))??;
        let expected = if grid.dim() == 1 { "x,re,im" } else { "x,y,re,im" };
        if header.trim() != expected {
            return Err(err(format!("header `{}`, expected `{expected}`", header.trim())));
        }
        let mut values = Vec::with_capacity(grid.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("row {}: {e}", row + 1)))?;
            if fields.len() != grid.dim() + 2 {
                return Err(err(format!("row {}: {} fields", row + 1, fields.len())));
            }
            if row >= grid.len() {
                return Err(err(format!("more rows than the {} grid points", grid.len())));
            }
            let p = grid.point(row);
            let tol = 1e-9 * grid.spacing();
            if (0..grid.dim()).any(|a| (p[a] - fields[a]).abs() > tol) {
                return Err(LabError::GridMismatch(format!(
                    "row {} at {:?} does not match grid point {:?}",
                    row + 1,
                    &fields[..grid.dim()],
                    &p[..grid.dim()]
                )));
            }
            values.push(Complex64::new(fields[grid.dim()], fields[grid.dim() + 1]));
        }
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!("{} rows for a grid of {} points", values.len(), grid.len())));
        }
        SampledFunction::from_values(grid, values)
    }
}

/// Midpoint approximation of the L^p norm; `p = f64::INFINITY` gives the
/// exact sample maximum.
pub fn lp_norm(f: &SampledFunction, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(LabError::Invalid(format!("L^p exponent must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.sup_norm());
    }
    let mut acc = NeumaierSum::new();
    if p == 2.0 {
        for v in f.values() {
            acc.add(v.norm_sqr());
        }
        Ok((acc.value() * f.grid().cell_volume()).sqrt())
    } else {
        for v in f.values() {
            acc.add(v.norm().powf(p));
        }
        Ok((acc.value() * f.grid().cell_volume()).powf(1.0 / p))
    }
}

/// Dyadic generations k_min..=k_max of a root cube; generation k consists
/// of the cubes of side `root.side() * 2^-k`.
#[derive(Debug, Clone)]
pub struct DyadicFamily {
    root: Cube,
    k_min: usize,
    generations: Vec<Vec<Cube>>,
}

pub fn dyadic_family(root: &Cube, k_min: usize, k_max: usize) -> Result<DyadicFamily> {
    dyadic_family_capped(root, k_min, k_max, DEFAULT_GENERATION_CAP)
}

pub fn dyadic_family_capped(root: &Cube, k_min: usize, k_max: usize, cap: usize) -> Result<DyadicFamily> {
    if k_min > k_max {
        return Err(LabError::Invalid(format!("k_min {k_min} > k_max {k_max}")));
    }
    if k_max >= cap {
        return Err(LabError::GenerationCap { requested: k_max + 1, cap });
    }
    let mut current = vec![root.clone()];
    let mut generations = Vec::new();
    for k in 0..=k_max {
        if k >= k_min {
            generations.push(current.clone());
        }
        if k < k_max {
            current = current.iter().flat_map(|c| c.children()).collect();
            current.sort_by(|a, b| a.center().partial_cmp(b.center()).expect("finite centers"));
        }
    }
    Ok(DyadicFamily { root: root.clone(), k_min, generations })
}

impl DyadicFamily {
    pub fn root(&self) -> &Cube {
        &self.root
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn k_max(&self) -> usize {
        self.k_min + self.generations.len() - 1
    }

    /// Side length of generation `k`.
    pub fn side(&self, k: usize) -> f64 {
        self.root.side() * 0.5_f64.powi(k as i32)
    }

    pub fn generation(&self, k: usize) -> Option<&[Cube]> {
        k.checked_sub(self.k_min).and_then(|i| self.generations.get(i)).map(|g| g.as_slice())
    }

    /// All (generation, cube) pairs, coarse to fine.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Cube)> {
        self.generations.iter().enumerate().flat_map(move |(i, g)| g.iter().map(move |c| (self.k_min + i, c)))
    }

    pub fn len(&self) -> usize {
        self.generations.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
