//! Flat `key = value` experiment configuration.
//!
//! One experiment per file, `#` starts a comment, keys may not repeat and
//! unknown keys are rejected. Lists are comma separated; a point's
//! coordinates are joined by `;` (the CSV convention), so `centers = 0;0, 1;1`
//! lists two points in the plane. Scales are either explicit numbers or
//! `dyadic(lo, hi)` for 2^lo ..= 2^hi.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{LabError, Result};
use crate::harness::{dyadic_scales, FitConfig, DEFAULT_OFFSETS, SWEEP_DEPTH};
use crate::kernels::{KernelParams, DEFAULT_SEED};
use crate::paraaccretive::DEFAULT_DEPTH;
use crate::quadrature::PvPolicy;

pub const KNOWN_KEYS: &[&str] = &[
    "dimension",
    "grid.n",
    "grid.box_side",
    "grid.box_center",
    "bump.M",
    "kernel.name",
    "kernel.delta",
    "kernel.norm",
    "b0",
    "b1",
    "b2",
    "scales",
    "centers",
    "policy.c_eps",
    "policy.tol_pv",
    "fit.slope_tol",
    "fit.uniformity_factor",
    "seed",
    "samples",
    "output.dir",
    "family.k_min",
    "family.k_max",
    "search.depth",
    "condb.radius",
    "condb.eps",
    "uk.k",
    "cube.center",
    "cube.side",
    "wbp.offsets",
    "bmo.depth",
];

pub const PARAM_PREFIX: &str = "kernel.params.";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub grid_n: usize,
    pub box_side: f64,
    pub box_center: Option<Vec<f64>>,
    pub bump_m: usize,
    pub kernel: String,
    pub kernel_params: KernelParams,
    /// Regularity order for `check-kernel`; the kernel's own claim if unset.
    pub kernel_delta: Option<f64>,
    /// Operator norm for the direct bound in `stein`.
    pub kernel_norm: Option<f64>,
    /// Weights b0, b1, b2 as given: builtin names or CSV paths.
    pub b: [Option<String>; 3],
    pub scales: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub policy: PvPolicy,
    pub fit: FitConfig,
    pub seed: u64,
    pub samples: usize,
    pub output_dir: PathBuf,
    pub k_min: usize,
    pub k_max: usize,
    pub search_depth: usize,
    pub condb_radius: Option<f64>,
    pub condb_eps: Option<f64>,
    pub uk_k: Vec<i32>,
    pub cube_center: Option<Vec<f64>>,
    pub cube_side: f64,
    pub wbp_offsets: Vec<f64>,
    pub bmo_depth: usize,
    /// Directory of the config file; relative paths resolve against it.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dimension: 1,
            grid_n: 512,
            box_side: 16.0,
            box_center: None,
            bump_m: 2,
            kernel: "hilbert".into(),
            kernel_params: KernelParams::new(),
            kernel_delta: None,
            kernel_norm: None,
            b: [None, None, None],
            scales: dyadic_scales(-3, 3),
            centers: vec![vec![0.0]],
            policy: PvPolicy::default(),
            fit: FitConfig::default(),
            seed: DEFAULT_SEED,
            samples: 10_000,
            output_dir: PathBuf::from("tblab-out"),
            k_min: 0,
            k_max: 4,
            search_depth: DEFAULT_DEPTH,
            condb_radius: None,
            condb_eps: None,
            uk_k: vec![0, 1, 2],
            cube_center: None,
            cube_side: 1.0,
            wbp_offsets: DEFAULT_OFFSETS.to_vec(),
            bmo_depth: SWEEP_DEPTH,
            base_dir: PathBuf::from("."),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> LabError {
    LabError::Config(format!("`{key} = {value}`: {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| bad(key, value, "not a valid number"))
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value)?;
    if !(v.is_finite() && v > 0.0) {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|s| num(key, s)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

fn point(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(';').map(|s| num::<f64>(key, s)).collect()
}

fn points(key: &str, value: &str) -> Result<Vec<Vec<f64>>> {
    value.split(',').map(|p| point(key, p)).collect()
}

fn scales(key: &str, value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let out = if let Some(args) = v.strip_prefix("dyadic(").and_then(|r| r.strip_suffix(')')) {
        let ends: Vec<i32> = list(key, args)?;
        if ends.len() != 2 || ends[0] > ends[1] {
            return Err(bad(key, value, "expected dyadic(lo, hi) with lo <= hi"));
        }
        dyadic_scales(ends[0], ends[1])
    } else {
        list::<f64>(key, v)?
    };
    if out.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(bad(key, value, "scales must be positive"));
    }
    Ok(out)
}

/// Raw key/value pairs, in file order, with duplicates rejected.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(LabError::Config(format!("line {}: empty key or value", no + 1)));
        }
        if !KNOWN_KEYS.contains(&k) && !(k.starts_with(PARAM_PREFIX) && k.len() > PARAM_PREFIX.len()) {
            return Err(LabError::Config(format!("line {}: unknown key `{k}`", no + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(LabError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_pairs(text)? {
            let (k, v) = (k.as_str(), v.as_str());
            if let Some(name) = k.strip_prefix(PARAM_PREFIX) {
                c.kernel_params.0.insert(name.to_string(), num(k, v)?);
                continue;
            }
            match k {
                "dimension" => c.dimension = num(k, v)?,
                "grid.n" => c.grid_n = num(k, v)?,
                "grid.box_side" => c.box_side = positive(k, v)?,
                "grid.box_center" => c.box_center = Some(point(k, v)?),
                "bump.M" => c.bump_m = num(k, v)?,
                "kernel.name" => c.kernel = v.to_string(),
                "kernel.delta" => c.kernel_delta = Some(positive(k, v)?),
                "kernel.norm" => c.kernel_norm = Some(positive(k, v)?),
                "b0" => c.b[0] = Some(v.to_string()),
                "b1" => c.b[1] = Some(v.to_string()),
                "b2" => c.b[2] = Some(v.to_string()),
                "scales" => c.scales = scales(k, v)?,
                "centers" => c.centers = points(k, v)?,
                "policy.c_eps" => c.policy.c_eps = num(k, v)?,
                "policy.tol_pv" => c.policy.tol_pv = num(k, v)?,
                "fit.slope_tol" => c.fit.slope_tol = positive(k, v)?,
                "fit.uniformity_factor" => c.fit.uniformity_factor = positive(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "samples" => c.samples = num(k, v)?,
                "output.dir" => c.output_dir = PathBuf::from(v),
                "family.k_min" => c.k_min = num(k, v)?,
                "family.k_max" => c.k_max = num(k, v)?,
                "search.depth" => c.search_depth = num(k, v)?,
                "condb.radius" => c.condb_radius = Some(positive(k, v)?),
                "condb.eps" => c.condb_eps = Some(positive(k, v)?),
                "uk.k" => c.uk_k = list(k, v)?,
                "cube.center" => c.cube_center = Some(point(k, v)?),
                "cube.side" => c.cube_side = positive(k, v)?,
                "wbp.offsets" => c.wbp_offsets = list(k, v)?,
                "bmo.depth" => c.bmo_depth = num(k, v)?,
                _ => unreachable!("key list and match arms disagree on `{k}`"),
            }
        }
        c.check()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        let d = self.dimension;
        if d != 1 && d != 2 {
            return Err(LabError::Config(format!("dimension must be 1 or 2, got {d}")));
        }
        let dims = |name: &str, p: &[f64]| {
            if p.len() == d {
                Ok(())
            } else {
                Err(LabError::Config(format!("{name} has {} coordinates in dimension {d}", p.len())))
            }
        };
        if let Some(p) = &self.box_center {
            dims("grid.box_center", p)?;
        }
        if let Some(p) = &self.cube_center {
            dims("cube.center", p)?;
        }
        for p in &self.centers {
            dims("centers", p)?;
        }
        if self.k_min > self.k_max {
            return Err(LabError::Config(format!("family.k_min {} exceeds family.k_max {}", self.k_min, self.k_max)));
        }
        if self.samples == 0 {
            return Err(LabError::Config("samples must be positive".into()));
        }
        self.policy.validate().map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn box_center(&self) -> Vec<f64> {
        self.box_center.clone().unwrap_or_else(|| vec![0.0; self.dimension])
    }

    /// Output directory, relative paths taken from the config's location.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = ExperimentConfig::parse(
            "kernel.name = commutator\nkernel.params.s = 0.02 # comment\n\nscales = dyadic(-2, 2)\n",
        )
        .unwrap();
        assert_eq!(c.kernel, "commutator");
        assert_eq!(c.kernel_params.get_or("s", 0.0), 0.02);
        assert_eq!(c.scales, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
        assert_eq!(c.grid_n, 512);
    }

    #[test]
    fn points_use_semicolons() {
        let c = ExperimentConfig::parse("dimension = 2\ncenters = 0;0, 1;-1\ncube.center = 0.5;0.5").unwrap();
        assert_eq!(c.centers, vec![vec![0.0, 0.0], vec![1.0, -1.0]]);
        assert!(ExperimentConfig::parse("dimension = 2\ncenters = 0").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "grid.m = 3",
            "grid.n = 3\ngrid.n = 4",
            "grid.n = many",
            "no equals sign",
            "scales = dyadic(3, 1)",
            "scales = 1, -2",
            "policy.c_eps = 0.5",
            "dimension = 3",
            "kernel.params. = 1",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(LabError::Config(_))), "{text}");
        }
    }
}
