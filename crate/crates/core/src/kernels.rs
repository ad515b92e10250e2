//! Kernel models, the operator gallery, transposes and sampled
//! size/regularity certificates.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::gauss::{integrate, smooth_step};

type LinearRule = dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync;
type BilinearRule = dyn Fn(&[f64], &[f64], &[f64]) -> Complex64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Linear,
    Bilinear,
}

#[derive(Clone)]
enum Rule {
    Linear(Arc<LinearRule>),
    Bilinear(Arc<BilinearRule>),
}

/// Off-diagonal evaluation rule of a linear or bilinear kernel.
#[derive(Clone)]
pub struct KernelModel {
    name: String,
    dim: usize,
    delta: f64,
    size_claim: f64,
    rule: Rule,
}

impl fmt::Debug for KernelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelModel")
            .field("name", &self.name)
            .field("arity", &self.arity())
            .field("dim", &self.dim)
            .field("delta", &self.delta)
            .finish()
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(LabError::KernelParam(format!("regularity order must lie in (0, 1], got {delta}")))
    }
}

impl KernelModel {
    pub fn linear<F>(name: impl Into<String>, dim: usize, delta: f64, size_claim: f64, rule: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        check_delta(delta)?;
        if dim != 1 && dim != 2 {
            return Err(LabError::Dimension(dim));
        }
        Ok(Self { name: name.into(), dim, delta, size_claim, rule: Rule::Linear(Arc::new(rule)) })
    }

    pub fn bilinear<F>(name: impl Into<String>, dim: usize, delta: f64, size_claim: f64, rule: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    {
        check_delta(delta)?;
        if dim != 1 && dim != 2 {
            return Err(LabError::Dimension(dim));
        }
        Ok(Self { name: name.into(), dim, delta, size_claim, rule: Rule::Bilinear(Arc::new(rule)) })
    }

    /// The identically zero kernel.
    pub fn zero(arity: Arity, dim: usize) -> Result<Self> {
        let z = Complex64::new(0.0, 0.0);
        match arity {
            Arity::Linear => Self::linear("zero", dim, 1.0, 0.0, move |_, _| z),
            Arity::Bilinear => Self::bilinear("zero", dim, 1.0, 0.0, move |_, _, _| z),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn size_claim(&self) -> f64 {
        self.size_claim
    }

    pub fn arity(&self) -> Arity {
        match self.rule {
            Rule::Linear(_) => Arity::Linear,
            Rule::Bilinear(_) => Arity::Bilinear,
        }
    }

    /// Linear evaluation `K(x, y)`.
    ///
    /// # Panics
    /// Panics on a bilinear kernel; callers check [`KernelModel::arity`].
    #[inline]
    pub fn eval2(&self, x: &[f64], y: &[f64]) -> Complex64 {
        match &self.rule {
            Rule::Linear(f) => f(x, y),
            Rule::Bilinear(_) => panic!("eval2 on bilinear kernel {}", self.name),
        }
    }

    /// Bilinear evaluation `K(x, y, z)`.
    ///
    /// # Panics
    /// Panics on a linear kernel.
    #[inline]
    pub fn eval3(&self, x: &[f64], y: &[f64], z: &[f64]) -> Complex64 {
        match &self.rule {
            Rule::Bilinear(f) => f(x, y, z),
            Rule::Linear(_) => panic!("eval3 on linear kernel {}", self.name),
        }
    }

    pub fn require(&self, arity: Arity) -> Result<()> {
        if self.arity() == arity {
            Ok(())
        } else {
            Err(LabError::Arity(format!("{} is {:?}, expected {:?}", self.name, self.arity(), arity)))
        }
    }

    /// Argument-swapped kernel: `which = 1` for linear; `1` or `2` for bilinear.
    pub fn transpose(&self, which: usize) -> Result<KernelModel> {
        let rule = match (&self.rule, which) {
            (Rule::Linear(f), 1) => {
                let f = f.clone();
                Rule::Linear(Arc::new(move |x: &[f64], y: &[f64]| f(y, x)))
            }
            (Rule::Bilinear(f), 1) => {
                let f = f.clone();
                Rule::Bilinear(Arc::new(move |x: &[f64], y: &[f64], z: &[f64]| f(y, x, z)))
            }
            (Rule::Bilinear(f), 2) => {
                let f = f.clone();
                Rule::Bilinear(Arc::new(move |x: &[f64], y: &[f64], z: &[f64]| f(z, y, x)))
            }
            _ => {
                return Err(LabError::Arity(format!(
                    "transpose {which} is not defined for a {:?} kernel",
                    self.arity()
                )))
            }
        };
        let suffix = if self.arity() == Arity::Linear { "*".to_string() } else { format!("*{which}") };
        Ok(KernelModel {
            name: format!("{}{suffix}", self.name),
            dim: self.dim,
            delta: self.delta,
            size_claim: self.size_claim,
            rule,
        })
    }
}

/// Numeric gallery parameters, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelParams(pub BTreeMap<String, f64>);

impl KernelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.0.insert(key.to_string(), v);
        self
    }

    pub fn get_or(&self, key: &str, default: f64) -> f64 {
        self.0.get(key).copied().unwrap_or(default)
    }

    fn reject_unknown(&self, kernel: &str, allowed: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(LabError::KernelParam(format!("{kernel} has no parameter `{k}`")));
            }
        }
        Ok(())
    }
}

pub const GALLERY: &[&str] = &["hilbert", "cauchy-lipschitz", "commutator", "bilinear-homog", "positive-control"];

/// Default Lipschitz slope of the Cauchy curve.
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// `A(x) = lambda * sqrt(1 + x^2)`, a smoothly clipped `lambda |x|`.
pub fn cauchy_curve(lambda: f64, x: f64) -> f64 {
    lambda * (1.0 + x * x).sqrt()
}

/// `A'(x)`.
pub fn cauchy_slope(lambda: f64, x: f64) -> f64 {
    lambda * x / (1.0 + x * x).sqrt()
}

pub fn gallery(name: &str, params: &KernelParams) -> Result<KernelModel> {
    match name {
        "hilbert" => {
            params.reject_unknown(name, &[])?;
            KernelModel::linear(name, 1, 1.0, 1.0 / PI, |x, y| Complex64::new(1.0 / (PI * (x[0] - y[0])), 0.0))
        }
        "positive-control" => {
            params.reject_unknown(name, &[])?;
            KernelModel::linear(name, 1, 1.0, 1.0, |x, y| Complex64::new(1.0 / (x[0] - y[0]).abs(), 0.0))
        }
        "cauchy-lipschitz" => {
            params.reject_unknown(name, &["lambda", "bound"])?;
            let lambda = params.get_or("lambda", DEFAULT_LAMBDA);
            let bound = params.get_or("bound", 0.5);
            if !(lambda.abs() <= bound) {
                return Err(LabError::KernelParam(format!(
                    "Lipschitz constant {lambda} of A exceeds the bound {bound}"
                )));
            }
            KernelModel::linear(name, 1, 1.0, 1.0, move |x, y| {
                let d = Complex64::new(x[0] - y[0], cauchy_curve(lambda, x[0]) - cauchy_curve(lambda, y[0]));
                d.inv()
            })
        }
        "commutator" => {
            params.reject_unknown(name, &["s", "m_amp", "lip"])?;
            let s = params.get_or("s", 1.0 / 64.0);
            let amp = params.get_or("m_amp", 0.1);
            let lip = params.get_or("lip", 1.0);
            if s <= 0.0 || !(0.0..1.0).contains(&amp) {
                return Err(LabError::KernelParam(format!(
                    "commutator needs s > 0 and 0 <= m_amp < 1, got s={s}, m_amp={amp}"
                )));
            }
            let table = commutator_table();
            KernelModel::linear(name, 1, 1.0, lip * (1.0 + amp) / PI, move |x, y| {
                let a = |t: f64| lip * (t * t + s * s).sqrt();
                let m = 1.0 + amp * x[0].cos();
                Complex64::new((a(y[0]) - a(x[0])) * m * table.kappa(x[0] - y[0]), 0.0)
            })
        }
        "bilinear-homog" => {
            params.reject_unknown(name, &[])?;
            KernelModel::bilinear(name, 1, 1.0, 1.0, |x, y, z| {
                let u = x[0] - y[0];
                let v = x[0] - z[0];
                let q = u * u + v * v;
                Complex64::new(u * v / (q * q), 0.0)
            })
        }
        other => Err(LabError::UnknownKernel(other.to_string())),
    }
}

/// Kernel of the model symbol `m(x) |xi| chi(xi)`, where `chi` switches on
/// smoothly between `xi0` and `2 xi0`:
/// `kappa(t) = -1/(pi t^2) - kappa_low(t)`,
/// `kappa_low(t) = (1/pi) int_0^{2 xi0} xi (1 - chi(xi)) cos(t xi) dxi`.
pub struct CommutatorTable {
    xi0: f64,
    step: f64,
    values: Vec<f64>,
}

pub const COMMUTATOR_XI0: f64 = 1.0 / 4096.0;

fn commutator_table() -> Arc<CommutatorTable> {
    static TABLE: OnceLock<Arc<CommutatorTable>> = OnceLock::new();
    TABLE.get_or_init(|| Arc::new(CommutatorTable::build(COMMUTATOR_XI0))).clone()
}

impl CommutatorTable {
    const TAU_MAX: f64 = 64.0;

    fn build(xi0: f64) -> Self {
        let step = 1.0 / 32.0;
        let count = (Self::TAU_MAX / step) as usize + 3;
        let values = (0..count)
            .into_par_iter()
            .map(|i| {
                let tau = i as f64 * step;
                integrate(|s| s * (1.0 - smooth_step(s - 1.0)) * (tau * s).cos(), 0.0, 2.0, 64)
            })
            .collect();
        Self { xi0, step, values }
    }

    /// `int_0^2 s (1 - chi(s)) cos(tau s) ds` for the unit-scale cutoff.
    fn unit_integral(&self, tau: f64) -> f64 {
        let tau = tau.abs();
        if tau >= Self::TAU_MAX {
            return -1.0 / (tau * tau);
        }
        let u = tau / self.step;
        let i = (u.floor() as usize).clamp(1, self.values.len() - 3);
        let f = u - i as f64;
        let (p0, p1, p2, p3) = (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        // cubic Lagrange on nodes -1, 0, 1, 2
        -p0 * f * (f - 1.0) * (f - 2.0) / 6.0 + p1 * (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
            - p2 * (f + 1.0) * f * (f - 2.0) / 2.0
            + p3 * (f + 1.0) * f * (f - 1.0) / 6.0
    }

    pub fn kappa_low(&self, t: f64) -> f64 {
        self.xi0 * self.xi0 / PI * self.unit_integral(self.xi0 * t)
    }

    pub fn kappa(&self, t: f64) -> f64 {
        -1.0 / (PI * t * t) - self.kappa_low(t)
    }
}

/// Seeded log-uniform sampler of admissible point configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub seed: u64,
    pub samples: usize,
    /// Separations range over `10^min_log10 .. 10^max_log10`.
    pub min_log10: f64,
    pub max_log10: f64,
    /// Base points are uniform in `[-spread, spread]^d`.
    pub spread: f64,
}

pub const DEFAULT_SEED: u64 = 20_240_611;

impl Default for Sampler {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, samples: 10_000, min_log10: -3.0, max_log10: 2.0, spread: 4.0 }
    }
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> [f64; 2] {
    if d == 1 {
        [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0]
    } else {
        let th = rng.random::<f64>() * 2.0 * PI;
        [th.cos(), th.sin()]
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

impl Sampler {
    fn check(&self) -> Result<()> {
        if self.max_log10 - self.min_log10 < 4.0 {
            return Err(LabError::Invalid(format!(
                "sampler spans {} decades, need at least 4",
                self.max_log10 - self.min_log10
            )));
        }
        if self.samples == 0 {
            return Err(LabError::Invalid("sampler needs at least one sample".into()));
        }
        Ok(())
    }

    fn separation(&self, rng: &mut ChaCha8Rng) -> f64 {
        10f64.powf(self.min_log10 + (self.max_log10 - self.min_log10) * rng.random::<f64>())
    }

    fn base(&self, rng: &mut ChaCha8Rng, d: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        for c in p.iter_mut().take(d) {
            *c = self.spread * (2.0 * rng.random::<f64>() - 1.0);
        }
        p
    }

    fn offset(p: [f64; 2], dir: [f64; 2], r: f64) -> [f64; 2] {
        [p[0] + r * dir[0], p[1] + r * dir[1]]
    }

    /// Linear configurations `(x, x', y)` with `|x - x'| < |x - y| / 2`.
    fn linear_configs(&self, d: usize) -> Vec<[[f64; 2]; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                let x = self.base(&mut rng, d);
                let r = self.separation(&mut rng);
                let y = Self::offset(x, random_direction(&mut rng, d), r);
                let rho = 10f64.powf(-4.0 * rng.random::<f64>()) * (1.0 - 1e-9);
                let xp = Self::offset(x, random_direction(&mut rng, d), 0.5 * rho * r);
                [x, xp, y]
            })
            .collect()
    }

    /// Bilinear configurations `(x, x', y, z)` with
    /// `|x - x'| < max(|x - y|, |x - z|) / 2`.
    fn bilinear_configs(&self, d: usize) -> Vec<[[f64; 2]; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                let x = self.base(&mut rng, d);
                let ru = self.separation(&mut rng);
                let rv = self.separation(&mut rng);
                let y = Self::offset(x, random_direction(&mut rng, d), ru);
                let z = Self::offset(x, random_direction(&mut rng, d), rv);
                let rho = 10f64.powf(-4.0 * rng.random::<f64>()) * (1.0 - 1e-9);
                let xp = Self::offset(x, random_direction(&mut rng, d), 0.5 * rho * ru.max(rv));
                [x, xp, y, z]
            })
            .collect()
    }
}

/// A measured sup bound with its witness configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Measured {
    pub constant: f64,
    pub witness: Vec<Vec<f64>>,
    pub samples: usize,
    /// Samples dropped because the kernel was not finite there.
    pub rejected: usize,
}

fn sup_with_witness(quotients: Vec<Option<f64>>, configs: Vec<Vec<Vec<f64>>>) -> Measured {
    let mut best = 0.0_f64;
    let mut witness = Vec::new();
    let mut rejected = 0;
    let mut used = 0;
    for (q, c) in quotients.into_iter().zip(configs) {
        match q {
            Some(v) => {
                used += 1;
                if v > best || witness.is_empty() {
                    best = best.max(v);
                    witness = c;
                }
            }
            None => rejected += 1,
        }
    }
    Measured { constant: best, witness, samples: used, rejected }
}

fn finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Sampled size constant: `sup |K| |x-y|^d` or `sup |K| (|x-y|+|x-z|)^{2d}`.
pub fn check_size(k: &KernelModel, sampler: &Sampler) -> Result<Measured> {
    sampler.check()?;
    let d = k.dim();
    match k.arity() {
        Arity::Linear => {
            let cfg = sampler.linear_configs(d);
            let q: Vec<Option<f64>> = cfg
                .par_iter()
                .map(|[x, _, y]| {
                    let v = k.eval2(&x[..d], &y[..d]);
                    finite(v).then(|| v.norm() * dist(&x[..d], &y[..d]).powi(d as i32))
                })
                .collect();
            let w = cfg.iter().map(|[x, _, y]| vec![x[..d].to_vec(), y[..d].to_vec()]).collect();
            Ok(sup_with_witness(q, w))
        }
        Arity::Bilinear => {
            let cfg = sampler.bilinear_configs(d);
            let q: Vec<Option<f64>> = cfg
                .par_iter()
                .map(|[x, _, y, z]| {
                    let v = k.eval3(&x[..d], &y[..d], &z[..d]);
                    let s = dist(&x[..d], &y[..d]) + dist(&x[..d], &z[..d]);
                    finite(v).then(|| v.norm() * s.powi(2 * d as i32))
                })
                .collect();
            let w = cfg.iter().map(|[x, _, y, z]| vec![x[..d].to_vec(), y[..d].to_vec(), z[..d].to_vec()]).collect();
            Ok(sup_with_witness(q, w))
        }
    }
}

/// Sampled regularity constant at order `delta`. Linear kernels use the
/// two-sided difference in both arguments; bilinear kernels take the
/// maximum over K and its two transposes.
pub fn check_regularity(k: &KernelModel, delta: f64, sampler: &Sampler) -> Result<Measured> {
    sampler.check()?;
    check_delta(delta)?;
    let d = k.dim();
    match k.arity() {
        Arity::Linear => {
            let cfg = sampler.linear_configs(d);
            let q: Vec<Option<f64>> = cfg
                .par_iter()
                .map(|[x, xp, y]| {
                    let (x, xp, y) = (&x[..d], &xp[..d], &y[..d]);
                    let r = dist(x, y);
                    let s = dist(x, xp);
                    if s >= 0.5 * r || s == 0.0 {
                        return None;
                    }
                    let a = k.eval2(x, y) - k.eval2(xp, y);
                    let b = k.eval2(y, x) - k.eval2(y, xp);
                    (finite(a) && finite(b)).then(|| (a.norm() + b.norm()) * r.powf(d as f64 + delta) / s.powf(delta))
                })
                .collect();
            let w = cfg.iter().map(|c| c.iter().map(|p| p[..d].to_vec()).collect()).collect();
            Ok(sup_with_witness(q, w))
        }
        Arity::Bilinear => {
            let kernels = [k.clone(), k.transpose(1)?, k.transpose(2)?];
            let cfg = sampler.bilinear_configs(d);
            let q: Vec<Option<f64>> = cfg
                .par_iter()
                .map(|[x, xp, y, z]| {
                    let (x, xp, y, z) = (&x[..d], &xp[..d], &y[..d], &z[..d]);
                    let s = dist(x, xp);
                    if s >= 0.5 * dist(x, y).max(dist(x, z)) || s == 0.0 {
                        return None;
                    }
                    let scale = (dist(x, y) + dist(x, z)).powf(2.0 * d as f64 + delta) / s.powf(delta);
                    let mut best = 0.0_f64;
                    for kk in &kernels {
                        let diff = kk.eval3(x, y, z) - kk.eval3(xp, y, z);
                        if !finite(diff) {
                            return None;
                        }
                        best = best.max(diff.norm() * scale);
                    }
                    Some(best)
                })
                .collect();
            let w = cfg.iter().map(|c| c.iter().map(|p| p[..d].to_vec()).collect()).collect();
            Ok(sup_with_witness(q, w))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCertificate {
    pub kernel: String,
    pub delta: f64,
    pub size: Measured,
    pub regularity: Measured,
    pub seed: u64,
}

pub fn certify(k: &KernelModel, delta: f64, sampler: &Sampler) -> Result<KernelCertificate> {
    Ok(KernelCertificate {
        kernel: k.name().to_string(),
        delta,
        size: check_size(k, sampler)?,
        regularity: check_regularity(k, delta, sampler)?,
        seed: sampler.seed,
    })
}

impl KernelCertificate {
    pub const CSV_HEADER: &'static str = "kernel,condition,delta,constant,samples,seed";

    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},size,{},{},{},{}", self.kernel, self.delta, self.size.constant, self.size.samples, self.seed)?;
        writeln!(
            w,
            "{},regularity,{},{},{},{}",
            self.kernel, self.delta, self.regularity.constant, self.regularity.samples, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(name: &str) -> KernelModel {
        gallery(name, &KernelParams::new()).unwrap()
    }

    fn small() -> Sampler {
        Sampler { samples: 2000, ..Sampler::default() }
    }

    #[test]
    fn gallery_point_values() {
        assert!((k("hilbert").eval2(&[1.0], &[0.0]).re - 1.0 / PI).abs() < 1e-16);
        assert_eq!(k("bilinear-homog").eval3(&[1.0], &[0.0], &[0.0]).re, 0.25);
        let flat = gallery("cauchy-lipschitz", &KernelParams::new().with("lambda", 0.0)).unwrap();
        let h = k("hilbert");
        for (x, y) in [(0.3, -1.2), (4.0, 2.5)] {
            let a = flat.eval2(&[x], &[y]);
            assert!((a - h.eval2(&[x], &[y]) * PI).norm() < 1e-14);
        }
    }

    #[test]
    fn gallery_errors() {
        assert!(matches!(gallery("riesz", &KernelParams::new()), Err(LabError::UnknownKernel(_))));
        let steep = KernelParams::new().with("lambda", 0.8);
        assert!(matches!(gallery("cauchy-lipschitz", &steep), Err(LabError::KernelParam(_))));
        assert!(gallery("hilbert", &KernelParams::new().with("lambda", 1.0)).is_err());
    }

    #[test]
    fn transposes() {
        let h = k("hilbert");
        let hs = h.transpose(1).unwrap();
        assert_eq!(hs.eval2(&[0.7], &[-0.2]), -h.eval2(&[0.7], &[-0.2]));
        let b = k("bilinear-homog");
        let b11 = b.transpose(1).unwrap().transpose(1).unwrap();
        let p = ([0.3], [1.1], [-0.4]);
        assert_eq!(b11.eval3(&p.0, &p.1, &p.2), b.eval3(&p.0, &p.1, &p.2));
        assert_eq!(b.transpose(2).unwrap().eval3(&p.0, &p.1, &p.2), b.eval3(&p.2, &p.1, &p.0));
        assert!(h.transpose(2).is_err());
    }

    #[test]
    fn hilbert_size_is_one_over_pi() {
        let m = check_size(&k("hilbert"), &small()).unwrap();
        assert!((m.constant - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn cauchy_size_at_most_one() {
        let m = check_size(&k("cauchy-lipschitz"), &small()).unwrap();
        assert!(m.constant <= 1.0 + 1e-12);
    }

    #[test]
    fn bilinear_size_sum_and_euclidean_normalization() {
        let b = k("bilinear-homog");
        let m = check_size(&b, &small()).unwrap();
        // |uv| (|u|+|v|)^2 / (u^2+v^2)^2 peaks at 1 when |u| = |v|
        assert!(m.constant <= 1.0 + 1e-12 && m.constant > 0.9);
        for (u, v) in [(1.0, 1.0), (0.3, 2.0), (-5.0, 0.01)] {
            let q = b.eval3(&[0.0], &[-u], &[-v]).norm() * (u * u + v * v);
            assert!(q <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn hilbert_regularity_bounded() {
        let m = check_regularity(&k("hilbert"), 1.0, &small()).unwrap();
        assert!(m.constant <= 4.0 / PI + 1e-9);
        assert!(m.constant > 2.0 / PI);
        let p = check_regularity(&k("positive-control"), 1.0, &small()).unwrap();
        assert!(p.constant.is_finite() && p.constant <= 4.0 + 1e-9);
    }

    #[test]
    fn bilinear_regularity_finite() {
        let m = check_regularity(&k("bilinear-homog"), 1.0, &small()).unwrap();
        assert!(m.constant.is_finite() && m.constant > 0.0);
    }

    #[test]
    fn constants_monotone_in_sample_count() {
        let h = k("cauchy-lipschitz");
        let a = check_regularity(&h, 1.0, &Sampler { samples: 500, ..Sampler::default() }).unwrap();
        let b = check_regularity(&h, 1.0, &Sampler { samples: 5000, ..Sampler::default() }).unwrap();
        assert!(b.constant >= a.constant);
    }

    #[test]
    fn certificate_is_deterministic() {
        let a = certify(&k("commutator"), 1.0, &small()).unwrap();
        let b = certify(&k("commutator"), 1.0, &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn commutator_kernel_near_homogeneous() {
        let t = commutator_table();
        assert!(t.kappa_low(0.0).abs() < 1e-7);
        for s in [0.01, 1.0, 30.0] {
            let rel = (t.kappa(s) * PI * s * s + 1.0).abs();
            assert!(rel < 2.0 * s * s * COMMUTATOR_XI0 * COMMUTATOR_XI0, "{s}: {rel}");
        }
        // far beyond 1/xi0 the low-frequency part cancels the leading term
        assert!(t.kappa(1e7).abs() < 1e-3 / (PI * 1e14));
    }

    #[test]
    fn narrow_sampler_rejected() {
        let s = Sampler { min_log10: 0.0, max_log10: 2.0, ..Sampler::default() };
        assert!(check_size(&k("hilbert"), &s).is_err());
    }
}
