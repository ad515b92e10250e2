//! Mean oscillation and BMO seminorm estimates over dyadic cube families.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::{format_point, Cube, DyadicFamily, SampledFunction};
use crate::summation::{sum_complex, sum_f64};

/// Fewest cells a cube may hold before its oscillation is meaningful.
pub const MIN_CELLS: usize = 4;

const SANDWICH_SLACK: f64 = 1e-12;
const WEISZFELD_STEPS: usize = 2000;
const WEISZFELD_TOL: f64 = 1e-15;

pub const CSV_HEADER: &str = "cube_center,cube_side,mean_osc,best_const_osc";

#[derive(Debug, Clone)]
pub struct CubeOscillation {
    pub cube: Cube,
    pub mean: f64,
    pub best: f64,
    pub best_constant: Complex64,
}

impl CubeOscillation {
    pub fn sandwich_holds(&self) -> bool {
        let slack = SANDWICH_SLACK * (1.0 + self.mean);
        self.best <= self.mean + slack && self.mean <= 2.0 * self.best + slack
    }
}

#[derive(Debug, Clone)]
pub struct OscillationReport {
    pub cubes: Vec<CubeOscillation>,
    pub sup_mean: f64,
    pub sup_best: f64,
    pub mean_witness: Option<Cube>,
    pub best_witness: Option<Cube>,
    /// Cubes of the family dropped for holding fewer than `MIN_CELLS` cells.
    pub skipped: usize,
}

impl OscillationReport {
    pub fn sandwich_holds(&self) -> bool {
        self.cubes.iter().all(CubeOscillation::sandwich_holds)
    }

    pub fn sandwich_failures(&self) -> Vec<&CubeOscillation> {
        self.cubes.iter().filter(|c| !c.sandwich_holds()).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for c in &self.cubes {
            let _ =
                writeln!(s, "{},{:.17e},{:.17e},{:.17e}", format_point(c.cube.center()), c.cube.side(), c.mean, c.best);
        }
        s
    }
}

fn cube_cells(f: &SampledFunction, q: &Cube, mask: &[usize]) -> Result<Vec<usize>> {
    let g = f.grid();
    if q.dim() != g.dim() {
        return Err(LabError::GridMismatch("cube dimension differs from grid".into()));
    }
    if !g.bbox().contains_cube(q) {
        return Err(LabError::Cube(format!("{q} is not inside the grid box")));
    }
    let mut cells = g.flat_indices(&g.cells_within(q));
    if !mask.is_empty() {
        cells.retain(|i| mask.binary_search(i).is_err());
    }
    if cells.len() < MIN_CELLS {
        return Err(LabError::CubeTooSmall { cells: cells.len(), min: MIN_CELLS });
    }
    Ok(cells)
}

fn average(values: &[Complex64], cells: &[usize]) -> Complex64 {
    sum_complex(cells.iter().map(|&i| values[i])) / cells.len() as f64
}

fn deviation(values: &[Complex64], cells: &[usize], c: Complex64) -> f64 {
    sum_f64(cells.iter().map(|&i| (values[i] - c).norm())) / cells.len() as f64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}

/// One Vardi-Zhang step of the Weiszfeld iteration for the geometric median.
fn weiszfeld_step(v: &[Complex64], cells: &[usize], y: Complex64) -> Complex64 {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    let mut pull = Complex64::new(0.0, 0.0);
    let mut eta = 0.0;
    for &i in cells {
        let d = (v[i] - y).norm();
        if d == 0.0 {
            eta += 1.0;
        } else {
            num += v[i] / d;
            den += 1.0 / d;
            pull += (v[i] - y) / d;
        }
    }
    if den == 0.0 {
        return y;
    }
    let t = num / den;
    let r = pull.norm();
    if eta == 0.0 {
        t
    } else if r <= eta {
        y
    } else {
        t * (1.0 - eta / r) + y * (eta / r)
    }
}

/// Midpoint-rule mean oscillation over the cells of `q`.
pub fn mean_oscillation(f: &SampledFunction, q: &Cube) -> Result<f64> {
    mean_oscillation_masked(f, q, &[])
}

/// As [`mean_oscillation`], ignoring the cells listed (sorted) in `mask`.
pub fn mean_oscillation_masked(f: &SampledFunction, q: &Cube, mask: &[usize]) -> Result<f64> {
    let cells = cube_cells(f, q, mask)?;
    let v = f.values();
    Ok(deviation(v, &cells, average(v, &cells)))
}

/// Infimum over constants of the mean deviation, with the minimizing constant.
pub fn best_constant_oscillation(f: &SampledFunction, q: &Cube) -> Result<(f64, Complex64)> {
    best_constant_oscillation_masked(f, q, &[])
}

pub fn best_constant_oscillation_masked(f: &SampledFunction, q: &Cube, mask: &[usize]) -> Result<(f64, Complex64)> {
    let cells = cube_cells(f, q, mask)?;
    Ok(best_on_cells(f.values(), &cells))
}

fn best_on_cells(v: &[Complex64], cells: &[usize]) -> (f64, Complex64) {
    let re: Vec<f64> = cells.iter().map(|&i| v[i].re).collect();
    let im: Vec<f64> = cells.iter().map(|&i| v[i].im).collect();
    let mut c = Complex64::new(median(re), median(im.clone()));
    if im.iter().any(|&y| y != c.im) {
        let scale = cells.iter().map(|&i| (v[i] - c).norm()).fold(0.0, f64::max);
        for _ in 0..WEISZFELD_STEPS {
            let next = weiszfeld_step(v, cells, c);
            let step = (next - c).norm();
            c = next;
            if step <= WEISZFELD_TOL * scale {
                break;
            }
        }
        // the iteration only creeps towards a median sitting on a sample
        let nearest = cells.iter().map(|&i| v[i]).min_by(|a, b| (a - c).norm().total_cmp(&(b - c).norm()));
        if let Some(p) = nearest.filter(|p| deviation(v, cells, *p) < deviation(v, cells, c)) {
            c = p;
        }
    }
    let mut best = deviation(v, cells, c);
    let avg = average(v, cells);
    let at_avg = deviation(v, cells, avg);
    if at_avg < best {
        best = at_avg;
        c = avg;
    }
    (best, c)
}

/// The dyadic family together with its copies shifted by one and two thirds
/// of the cube side along every axis; only cubes inside the root survive.
pub fn shifted_cubes(family: &DyadicFamily) -> Vec<Cube> {
    let root = family.root();
    let d = root.dim();
    let mut out = Vec::new();
    for shift in [0.0, 1.0 / 3.0, 2.0 / 3.0] {
        for (_, q) in family.iter() {
            let offset = vec![shift * q.side(); d];
            let s = q.translated(&offset);
            if shift == 0.0 || root.contains_cube(&s) {
                out.push(s);
            }
        }
    }
    out
}

/// BMO seminorm estimate over the shifted dyadic family.
pub fn bmo_seminorm(f: &SampledFunction, family: &DyadicFamily) -> Result<OscillationReport> {
    bmo_seminorm_masked(f, family, &[])
}

/// As [`bmo_seminorm`] with singular cells excluded; `mask` must be sorted.
pub fn bmo_seminorm_masked(f: &SampledFunction, family: &DyadicFamily, mask: &[usize]) -> Result<OscillationReport> {
    if family.is_empty() {
        return Err(LabError::Invalid("empty cube family".into()));
    }
    let cubes = shifted_cubes(family);
    bmo_over_cubes(f, &cubes, mask)
}

pub fn bmo_over_cubes(f: &SampledFunction, cubes: &[Cube], mask: &[usize]) -> Result<OscillationReport> {
    let results: Vec<Option<CubeOscillation>> = cubes
        .par_iter()
        .map(|q| {
            let cells = match cube_cells(f, q, mask) {
                Ok(c) => c,
                Err(_) => return None,
            };
            let v = f.values();
            let mean = deviation(v, &cells, average(v, &cells));
            let (best, best_constant) = best_on_cells(v, &cells);
            Some(CubeOscillation { cube: q.clone(), mean, best, best_constant })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let rows: Vec<CubeOscillation> = results.into_iter().flatten().collect();
    let mut report = OscillationReport {
        cubes: Vec::with_capacity(rows.len()),
        sup_mean: 0.0,
        sup_best: 0.0,
        mean_witness: None,
        best_witness: None,
        skipped,
    };
    for r in rows {
        if report.mean_witness.is_none() || r.mean > report.sup_mean {
            report.sup_mean = r.mean;
            report.mean_witness = Some(r.cube.clone());
        }
        if report.best_witness.is_none() || r.best > report.sup_best {
            report.sup_best = r.best;
            report.best_witness = Some(r.cube.clone());
        }
        report.cubes.push(r);
    }
    Ok(report)
}
