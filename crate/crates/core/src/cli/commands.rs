use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::config::ExperimentConfig;
use super::Command;
use crate::bmo::bmo_seminorm;
use crate::error::{LabError, Result};
use crate::grid::{dyadic_family, format_point, make_grid, Cube, Grid, SampledFunction};
use crate::harness::{
    bilinear_decomposition_check, builtin_form, direct_bound_check, far_field_constancy, splitting_check,
    stein_bilinear_tb_test, stein_t1_test, stein_tb_test, uniform_bmo_sweep, weak_boundedness_test, ScalingReport,
    Setup, Verdict, Weight, CSV_HEADER,
};
use crate::kernels::{certify, gallery, Arity, KernelCertificate, KernelModel, Sampler};
use crate::paraaccretive::{build_uk, check_condition_b, check_para_accretive, verify_uk, Lattice};

/// One verdict line of `summary.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

/// Everything a run produces, held in memory until the run succeeds.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
    pub outcomes: Vec<Outcome>,
}

impl Artifacts {
    fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn outcome(&mut self, name: impl Into<String>, verdict: Verdict, detail: String) {
        self.outcomes.push(Outcome { name: name.into(), verdict, detail });
    }

    pub fn failed(&self) -> bool {
        self.outcomes.iter().any(|o| o.verdict == Verdict::Fail)
    }

    fn scaling(&mut self, file: &str, reports: &[ScalingReport]) {
        let mut body = format!("{CSV_HEADER}\n");
        for r in reports {
            body.push_str(&r.csv_rows());
            let slope = r.fit.slope.map_or_else(|| "NA".into(), |s| format!("{s:.4}"));
            let name = format!("{} {}", r.experiment, r.kernel);
            self.outcome(name, r.verdict(), format!("slope {slope}, target {}, spread {:.3}", r.target, r.fit.spread));
        }
        self.file(file, body);
    }
}

/// Builtin weight name or a grid CSV, placed on the experiment grid.
pub fn ingest_b(spec: &str, grid: &Grid, base: &Path) -> Result<Weight> {
    match builtin_form(spec) {
        Ok(_) => Weight::builtin(spec, grid),
        Err(e) if !spec.ends_with(".csv") => Err(e),
        Err(_) => {
            let path = if Path::new(spec).is_absolute() { Path::new(spec).to_path_buf() } else { base.join(spec) };
            let file = File::open(&path).map_err(|e| LabError::Csv { path: path.clone(), msg: e.to_string() })?;
            let values = SampledFunction::read_csv(BufReader::new(file), grid, &path)?;
            Ok(Weight::new(spec, values.resample(grid)?))
        }
    }
}

/// Grid, kernel and weights, all validated before any experiment runs.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub setup: Setup,
    pub kernel: KernelModel,
    pub b: [Weight; 3],
    /// Which weights the config names explicitly.
    pub given: [bool; 3],
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let bbox = Cube::new(cfg.box_center(), cfg.box_side)?;
        let grid = make_grid(cfg.dimension, bbox, cfg.grid_n)?;
        let kernel = gallery(&cfg.kernel, &cfg.kernel_params)?;
        let weight = |i: usize| match &cfg.b[i] {
            Some(s) => ingest_b(s, &grid, &cfg.base_dir),
            None => Weight::one(&grid),
        };
        let b = [weight(0)?, weight(1)?, weight(2)?];
        let given = [cfg.b[0].is_some(), cfg.b[1].is_some(), cfg.b[2].is_some()];
        if cfg.condb_radius.is_some() != cfg.condb_eps.is_some() {
            return Err(LabError::Config("condb.radius and condb.eps must be given together".into()));
        }
        let mut setup = Setup::new(grid, cfg.bump_m);
        setup.policy = cfg.policy;
        setup.fit = cfg.fit;
        Ok(Self { cfg, setup, kernel, b, given })
    }

    fn grid(&self) -> &Grid {
        &self.setup.grid
    }

    fn cube(&self) -> Result<Cube> {
        let c = self.cfg.cube_center.clone().unwrap_or_else(|| vec![0.0; self.cfg.dimension]);
        Cube::new(c, self.cfg.cube_side)
    }

    fn weights(&self) -> [&Weight; 3] {
        [&self.b[0], &self.b[1], &self.b[2]]
    }
}

pub fn execute(command: Command, ctx: &Context) -> Result<Artifacts> {
    let mut out = Artifacts::default();
    match command {
        Command::CheckKernel => check_kernel(ctx, &mut out)?,
        Command::Bmo => bmo(ctx, &mut out)?,
        Command::ParaAccretive => para_accretive(ctx, &mut out)?,
        Command::UkBuild => uk_build(ctx, &mut out)?,
        Command::Stein => stein(ctx, &mut out)?,
        Command::Wbp => {
            let reports = weak_boundedness_test(
                &ctx.setup,
                &ctx.kernel,
                ctx.weights(),
                &ctx.cfg.centers,
                &ctx.cfg.scales,
                &ctx.cfg.wbp_offsets,
            )?;
            out.scaling("wbp.csv", &reports);
        }
        Command::SweepBmo => {
            let r = uniform_bmo_sweep(&ctx.setup, &ctx.kernel, &ctx.b[1], &ctx.cfg.scales, ctx.cfg.bmo_depth)?;
            out.outcome("uniform_bmo", r.verdict(), format!("spread {:.3}, max {:.4}", r.spread(), r.max()));
            out.file("sweep_bmo.csv", r.to_csv_string());
        }
        Command::FarField => far_field(ctx, &mut out)?,
        Command::BilinearDecomp => {
            let q = ctx.cube()?;
            let r = bilinear_decomposition_check(&ctx.setup, &ctx.kernel, &ctx.b[1], &ctx.b[2], &q, &ctx.cfg.scales)?;
            let worst = r.rows.iter().map(|row| row.sum_defect).fold(0.0, f64::max);
            out.outcome("four-term sum", Verdict::from_bool(r.sum_ok()), format!("max defect {worst:.3e}"));
            let s = r.spreads();
            out.outcome(
                "local and far pieces uniform",
                Verdict::from_bool(s.iter().all(|x| *x <= r.factor)),
                format!("spreads I {:.3}, II {:.3}, III {:.3}, IV {:.3}", s[0], s[1], s[2], s[3]),
            );
            out.file("decomposition.csv", r.to_csv_string());
        }
        Command::Report => return Err(LabError::Invalid("report does not run experiments".into())),
    }
    Ok(out)
}

fn check_kernel(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let k = &ctx.kernel;
    let delta = ctx.cfg.kernel_delta.unwrap_or(k.delta());
    let sampler = Sampler { seed: ctx.cfg.seed, samples: ctx.cfg.samples, ..Sampler::default() };
    let cert = certify(k, delta, &sampler)?;
    let size_ok = cert.size.constant <= k.size_claim() * (1.0 + 1e-9);
    out.outcome(
        "size",
        Verdict::from_bool(size_ok),
        format!("constant {:.6}, claim {:.6}, samples {}", cert.size.constant, k.size_claim(), cert.size.samples),
    );
    out.outcome(
        "regularity",
        Verdict::from_bool(cert.regularity.constant.is_finite() && cert.regularity.samples > 0),
        format!("constant {:.6} at delta {delta}, samples {}", cert.regularity.constant, cert.regularity.samples),
    );
    let mut body = format!("{}\n", KernelCertificate::CSV_HEADER).into_bytes();
    cert.write_csv_rows(&mut body)?;
    out.file("kernel_certificate.csv", String::from_utf8(body).expect("ascii csv"));
    Ok(())
}

fn bmo(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let family = dyadic_family(ctx.grid().bbox(), ctx.cfg.k_min, ctx.cfg.k_max)?;
    let r = bmo_seminorm(&ctx.b[1].values, &family)?;
    out.outcome(
        "sandwich on every cube",
        Verdict::from_bool(r.sandwich_holds()),
        format!(
            "sup mean {:.6}, sup best {:.6}, cubes {}, skipped {}",
            r.sup_mean,
            r.sup_best,
            r.cubes.len(),
            r.skipped
        ),
    );
    out.file("bmo.csv", r.to_csv_string());
    Ok(())
}

fn para_accretive(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let b = &ctx.b[1].values;
    let family = dyadic_family(ctx.grid().bbox(), ctx.cfg.k_min, ctx.cfg.k_max)?;
    let cert = check_para_accretive(b, &family, ctx.cfg.search_depth)?;
    out.outcome("para-accretive", Verdict::from_bool(cert.c0 > 0.0 && cert.invariants_hold()), cert.summary_line());
    out.file("para_accretive.csv", cert.to_csv_string());
    if let (Some(n), Some(eps)) = (ctx.cfg.condb_radius, ctx.cfg.condb_eps) {
        let cb = check_condition_b(b, &family, n, eps)?;
        let detail = match &cb.first_failure {
            None => format!("N {n}, eps {eps}, achieved {:.6}", cb.achieved),
            Some((k, q)) => format!("N {n}, eps {eps}, first failure at generation {k}, {q}"),
        };
        out.outcome("condition B", Verdict::from_bool(cb.passed), detail);
        let mut body = String::from("generation,cube_center,cube_side,witness_center,witness_side,average,distance\n");
        for e in &cb.entries {
            let (wc, ws) = e.witness.as_ref().map_or(("NA".to_string(), "NA".to_string()), |w| {
                (format_point(w.center()), format!("{:.17e}", w.side()))
            });
            let _ = writeln!(
                body,
                "{},{},{:.17e},{wc},{ws},{:.17e},{:.17e}",
                e.generation,
                format_point(e.cube.center()),
                e.cube.side(),
                e.average,
                e.distance
            );
        }
        out.file("condition_b.csv", body);
    }
    Ok(())
}

fn uk_build(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let b = &ctx.b[1].values;
    let family = dyadic_family(ctx.grid().bbox(), ctx.cfg.k_min, ctx.cfg.k_max)?;
    let cert = check_para_accretive(b, &family, ctx.cfg.search_depth)?;
    let mut body = String::from(
        "k,x,size,size_bound,support,support_bound,lipschitz,lipschitz_bound,pairing,pairing_lo,pairing_hi,passed\n",
    );
    for &k in &ctx.cfg.uk_k {
        let fam = build_uk(b, k, &cert, &Lattice::DyadicCenters)?;
        let v = verify_uk(&fam, b)?;
        for p in &v.points {
            let _ = writeln!(
                body,
                "{k},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                format_point(&p.x[..fam.dim]),
                p.size,
                p.size_bound,
                p.support,
                p.support_bound,
                p.lipschitz,
                p.lipschitz_bound,
                p.pairing,
                p.pairing_lo,
                p.pairing_hi,
                p.passed()
            );
        }
        out.outcome(
            format!("u_k family k={k}"),
            Verdict::from_bool(v.passed()),
            format!("h {}, c0 {:.6}, points {}", fam.h, fam.c0, v.points.len()),
        );
    }
    out.file("uk.csv", body);
    Ok(())
}

fn stein(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let (k, c) = (&ctx.kernel, &ctx.cfg);
    let reports: Vec<ScalingReport> = match k.arity() {
        Arity::Linear if !ctx.given[0] && !ctx.given[1] => vec![stein_t1_test(&ctx.setup, k, &c.centers, &c.scales)?],
        Arity::Linear => stein_tb_test(&ctx.setup, k, &ctx.b[0], &ctx.b[1], &c.centers, &c.scales)?.into(),
        Arity::Bilinear => stein_bilinear_tb_test(&ctx.setup, k, ctx.weights(), &c.centers, &c.scales)?.into(),
    };
    out.scaling("stein.csv", &reports);
    if c.kernel_norm.is_some() {
        let b2 = (k.arity() == Arity::Bilinear).then_some(&ctx.b[2]);
        let r = direct_bound_check(&ctx.setup, k, c.kernel_norm, &ctx.b[1], b2, &c.centers, &c.scales)?;
        let detail = match r.witness() {
            None => format!("{} rows within the bound", r.rows.len()),
            Some(w) => format!("violated at x0 {}, R {}: {:.6} > {:.6}", w.x0, w.r, w.measured, w.bound),
        };
        out.outcome("direct bound", r.verdict(), detail);
        out.file("direct_bound.csv", r.to_csv_string());
    }
    Ok(())
}

fn far_field(ctx: &Context, out: &mut Artifacts) -> Result<()> {
    let q = ctx.cube()?;
    let r = far_field_constancy(&ctx.setup, &ctx.kernel, &ctx.b[1], &q, &ctx.cfg.scales)?;
    let u = &r.uniformity;
    out.outcome("far-field deviation uniform", u.verdict(), format!("spread {:.3}, max {:.4}", u.spread(), u.max()));
    out.file("far_field.csv", u.to_csv_string());
    let mut body = String::from("R,max_defect,scale,tol,ok\n");
    let mut all = true;
    for &s in &ctx.cfg.scales {
        let sc = splitting_check(&ctx.setup, &ctx.kernel, &ctx.b[1], &q, s)?;
        all &= sc.ok();
        let _ = writeln!(body, "{:.17e},{:.17e},{:.17e},{:.17e},{}", s, sc.max_defect, sc.scale, sc.tol, sc.ok());
    }
    out.outcome("splitting identity", Verdict::from_bool(all), format!("{} scales", ctx.cfg.scales.len()));
    out.file("splitting.csv", body);
    Ok(())
}
