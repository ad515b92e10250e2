//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use tblab::bmo::{bmo_seminorm, bmo_seminorm_masked, OscillationReport};
use tblab::bumps::bump_constant;
use tblab::gauss::{integrate, mollifier_profile};
use tblab::grid::{dyadic_family, make_grid, sample, sample_masked, ClosedForm, Cube, Grid};
use tblab::harness::{
    bilinear_decomposition_check, cube_cutoff_radius, dyadic_scales, far_field_constancy, local_piece_check,
    splitting_check, stein_bilinear_tb_test, stein_t1_test, stein_tb_test, uniform_bmo_sweep, weak_boundedness_test,
    FitConfig, ScalingReport, Setup, Verdict, Weight, SWEEP_DEPTH,
};
use tblab::kernels::{gallery, KernelParams};
use tblab::paraaccretive::{b_to_def3_constant, build_uk, check_condition_b, check_para_accretive, verify_uk, Lattice};

/// One checked claim inside a criterion.
struct Check {
    label: String,
    ok: bool,
    detail: String,
}

struct Outcome {
    checks: Vec<Check>,
    csv: String,
}

impl Outcome {
    fn new() -> Self {
        Self { checks: Vec::new(), csv: String::new() }
    }

    fn check(&mut self, label: &str, ok: bool, detail: String) {
        self.checks.push(Check { label: label.to_string(), ok, detail });
    }

    fn report(&mut self, r: &ScalingReport) {
        self.csv.push_str(&r.to_csv_string());
    }
}

type Criterion = fn() -> tblab::Result<Outcome>;

fn line(lo: f64, hi: f64, n: usize) -> Grid {
    make_grid(1, Cube::interval(lo, hi).unwrap(), n).unwrap()
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn slope_of(r: &ScalingReport) -> f64 {
    r.fit.slope.unwrap_or(f64::NAN)
}

/// Unit-scale bump L2 norm by direct quadrature of the closed profile.
fn unit_bump_l2(order: usize) -> f64 {
    let c = bump_constant(1, order).unwrap();
    integrate(|x| (c * mollifier_profile(x * x)).powi(2), -1.0, 1.0, 64).sqrt()
}

fn tight_fit() -> FitConfig {
    FitConfig { slope_tol: 0.05, ..FitConfig::default() }
}

fn ac1() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-8.0, 8.0, 512);
    let mut setup = Setup::new(g, 1);
    setup.fit = tight_fit();
    let k = gallery("hilbert", &KernelParams::new())?;
    let r = stein_t1_test(&setup, &k, &[vec![0.0]], &dyadic_scales(-3, 3))?;
    let target = 2.0 * unit_bump_l2(1);
    let rel: Vec<f64> = r.ratios().iter().map(|x| x / target - 1.0).collect();
    let worst = rel.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    out.check("ratio = 2|phi|_2 within 3%", worst <= 0.03, format!("relative errors [{}]", fmt_list(&rel)));
    let s = slope_of(&r);
    out.check("slope 0.5 +- 0.05", (s - 0.5).abs() <= 0.05, format!("slope {s:.4}"));
    out.report(&r);
    Ok(out)
}

fn tb_criterion(kernel: &str, b: &str) -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-8.0, 8.0, 512);
    let mut setup = Setup::new(g.clone(), 1);
    setup.fit = tight_fit();
    let k = gallery(kernel, &KernelParams::new())?;
    let w = Weight::builtin(b, &g)?;
    let reports = stein_tb_test(&setup, &k, &w, &w, &[vec![0.0]], &dyadic_scales(-3, 3))?;
    for (name, r) in ["TbS1", "TbS2"].iter().zip(&reports) {
        out.check(
            &format!("{name} verdict"),
            r.verdict() == Verdict::Pass,
            format!("slope {:.4}, spread {:.3}, ratios [{}]", slope_of(r), r.fit.spread, fmt_list(&r.ratios())),
        );
        out.report(r);
    }
    Ok(out)
}

fn ac2() -> tblab::Result<Outcome> {
    tb_criterion("cauchy-lipschitz", "accretive-lipschitz(0.3)")
}

fn ac3() -> tblab::Result<Outcome> {
    tb_criterion("commutator", "one")
}

fn ac4() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let setup = Setup::new(line(-8.0, 8.0, 512), 1);
    let k = gallery("positive-control", &KernelParams::new())?;
    let r = stein_t1_test(&setup, &k, &[vec![0.0]], &dyadic_scales(-3, 3))?;
    let ratios = r.ratios();
    let monotone = ratios.windows(2).all(|w| w[1] > w[0]);
    let growth = ratios[ratios.len() - 1] / ratios[0];
    out.check("verdict FAIL", r.verdict() == Verdict::Fail, format!("verdict {}", r.verdict()));
    out.check("ratios increase monotonically", monotone, format!("ratios [{}]", fmt_list(&ratios)));
    out.check("total growth >= 2", growth >= 2.0, format!("growth {growth:.3}"));
    out.report(&r);
    Ok(out)
}

fn ac5() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-8.0, 8.0, 512);
    let fam = dyadic_family(g.bbox(), 0, 4)?;
    let one = Weight::builtin("one", &g)?;
    let c = check_para_accretive(&one.values, &fam, 3)?;
    let full = c.entries.iter().all(|e| e.witness.center() == e.cube.center() && e.witness.side() == e.cube.side());
    out.check("b = 1: c0 = 1, witness = Q", c.c0 == 1.0 && full, format!("c0 {}", c.c0));
    out.csv.push_str(&c.to_csv_string());
    let acc = Weight::builtin("accretive-lipschitz(0.3)", &g)?;
    let c = check_para_accretive(&acc.values, &fam, 3)?;
    out.check("b = 1 + 0.3iA': c0 = 1", (c.c0 - 1.0).abs() < 1e-12, format!("c0 {:.15}", c.c0));
    out.csv.push_str(&c.to_csv_string());
    let mut prev = f64::INFINITY;
    let mut decreasing = true;
    let mut all_below = true;
    let mut found = Vec::new();
    for side in [16.0, 32.0, 64.0] {
        let g = line(0.0, side, (32.0 * side) as usize);
        let b = Weight::builtin("exp-ix", &g)?;
        let c = check_para_accretive(&b.values, &dyadic_family(g.bbox(), 0, 0)?, 3)?;
        all_below &= c.c0 <= 2.0 / side;
        decreasing &= c.c0 < prev;
        prev = c.c0;
        found.push(c.c0);
        out.csv.push_str(&c.to_csv_string());
    }
    out.check("exp-ix: c0 <= 2/L", all_below, format!("c0 [{}]", fmt_list(&found)));
    out.check("exp-ix: c0 decreasing in L", decreasing, String::new());
    Ok(out)
}

fn ac6() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-8.0, 8.0, 1024);
    let fam = dyadic_family(g.bbox(), 0, 4)?;
    for b in ["one", "accretive-lipschitz(0.3)"] {
        let w = Weight::builtin(b, &g)?;
        let cert = check_para_accretive(&w.values, &fam, 3)?;
        for k in 0..=2 {
            let uk = build_uk(&w.values, k, &cert, &Lattice::DyadicCenters)?;
            let v = verify_uk(&uk, &w.values)?;
            let names = ["size", "support", "lipschitz", "pairing"];
            let tallies = [
                v.points.iter().all(|p| p.size_ok()),
                v.points.iter().all(|p| p.support_ok()),
                v.points.iter().all(|p| p.lipschitz_ok()),
                v.points.iter().all(|p| p.pairing_ok()),
            ];
            let worst_pair = v.points.iter().map(|p| p.pairing).fold(f64::INFINITY, f64::min);
            for (name, ok) in names.iter().zip(tallies) {
                out.check(
                    &format!("{b} k={k} {name}"),
                    ok,
                    format!("h {}, c0 {:.4}, points {}, min pairing {worst_pair:.4}", uk.h, uk.c0, v.points.len()),
                );
            }
            for p in &v.points {
                out.csv.push_str(&format!(
                    "{b},{k},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    p.x[0], p.size, p.support, p.lipschitz, p.pairing
                ));
            }
        }
    }
    Ok(out)
}

fn ac7() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(0.0, 256.0, 4096);
    // only the generations with 10 N s <= side(Q) <= 20 N s are needed
    let cond_family = dyadic_family(g.bbox(), 8, 9)?;
    let tested = dyadic_family(g.bbox(), 1, 2)?;
    for (b, eps) in [("one", 1.0), ("sign-sin", 0.5)] {
        let w = Weight::builtin(b, &g)?;
        let cert = check_condition_b(&w.values, &cond_family, 10.0, eps)?;
        let direct = check_para_accretive(&w.values, &tested, 3)?;
        let mut ok = true;
        let mut contained = true;
        let mut worst: f64 = f64::INFINITY;
        let mut bound = 0.0;
        for e in &direct.entries {
            let conv = b_to_def3_constant(&cert, &e.cube)?;
            ok &= conv.bound <= e.ratio;
            contained &= conv.contained;
            worst = worst.min(e.ratio);
            bound = conv.bound;
            out.csv.push_str(&format!("{b},{},{:.17e},{:.17e}\n", e.cube, conv.bound, e.ratio));
        }
        out.check(&format!("{b}: condition B holds"), cert.passed, format!("achieved eps {:.4}", cert.achieved));
        out.check(
            &format!("{b}: converted <= direct"),
            ok,
            format!("bound {bound:.5}, smallest direct ratio {worst:.5}, cubes {}", direct.entries.len()),
        );
        out.check(&format!("{b}: witness inside Q"), contained, String::new());
    }
    Ok(out)
}

fn sandwich(r: &OscillationReport) -> bool {
    r.sandwich_holds()
}

fn ac8() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-1.0, 1.0, 256);
    let fam = dyadic_family(g.bbox(), 0, 4)?;
    let c = sample(&ClosedForm::constant("c", Complex64::new(-3.25, 1.5)), &g)?;
    let rc = bmo_seminorm(&c, &fam)?;
    out.check("constant -> 0 exactly", rc.sup_mean == 0.0 && rc.sup_best == 0.0, String::new());
    let s = sample(&ClosedForm::real("sign", |p| p[0].signum()), &g)?;
    let rs = bmo_seminorm(&s, &fam)?;
    out.check("sign -> 1 +- 0.02", (rs.sup_mean - 1.0).abs() <= 0.02, format!("sup {:.6}", rs.sup_mean));
    let log = ClosedForm::real("log", |p| p[0].abs().ln());
    let mut values = Vec::new();
    let mut ok_sandwich = sandwich(&rc) && sandwich(&rs);
    for n in [257, 514] {
        let g = line(-1.0, 1.0, n);
        let (f, mask) = sample_masked(&log, &g);
        let r = bmo_seminorm_masked(&f, &dyadic_family(g.bbox(), 0, 4)?, &mask)?;
        ok_sandwich &= sandwich(&r);
        values.push(r.sup_mean);
        out.csv.push_str(&r.to_csv_string());
    }
    let change = (values[1] / values[0] - 1.0).abs();
    out.check("log|x| stable within 10% under n -> 2n", change <= 0.10, format!("values [{}]", fmt_list(&values)));
    out.check("sandwich on every cube", ok_sandwich, String::new());
    out.csv.push_str(&rs.to_csv_string());
    Ok(out)
}

fn ac9() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-64.0, 64.0, 2048);
    let setup = Setup::new(g.clone(), 1);
    let k = gallery("hilbert", &KernelParams::new())?;
    let one = Weight::one(&g)?;
    let q = Cube::interval(-0.5, 0.5)?;
    let r = cube_cutoff_radius(&q);
    let mut split_ok = true;
    let mut split_worst: f64 = 0.0;
    for big_r in [4.0, 8.0, 16.0] {
        let s = splitting_check(&setup, &k, &one, &q, big_r)?;
        split_ok &= s.ok();
        split_worst = split_worst.max(s.max_defect);
    }
    out.check("(L8) splitting identity within tol_pv", split_ok, format!("max defect {split_worst:.3e}"));
    let mut local = Vec::new();
    for big_r in [r / 4.0, r, 4.0 * r] {
        let p = local_piece_check(&setup, &k, &one, &q, big_r)?;
        local.push(p.value);
        out.csv.push_str(&format!("local,{big_r:.17e},{:.17e},{:.3e}\n", p.value, p.rewrite_defect));
    }
    let spread = |v: &[f64]| v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min);
    out.check(
        "(L9) local averages within factor 2",
        spread(&local) <= 2.0,
        format!("values [{}], spread {:.3}", fmt_list(&local), spread(&local)),
    );
    let ff = far_field_constancy(&setup, &k, &one, &q, &[4.0, 8.0, 16.0])?;
    let devs: Vec<f64> = ff.uniformity.rows.iter().map(|r| r.1).collect();
    out.check(
        "(L11) far-field deviations within factor 2",
        ff.uniformity.verdict().passed(),
        format!("deviations [{}], spread {:.3}", fmt_list(&devs), ff.uniformity.spread()),
    );
    out.csv.push_str(&ff.uniformity.to_csv_string());
    let sweep = uniform_bmo_sweep(&setup, &k, &one, &[1.0, 2.0, 4.0, 8.0], SWEEP_DEPTH)?;
    let vals: Vec<f64> = sweep.rows.iter().map(|r| r.1).collect();
    out.check(
        "(L6) BMO sweep within factor 2",
        sweep.verdict().passed(),
        format!("values [{}], spread {:.3}", fmt_list(&vals), sweep.spread()),
    );
    out.csv.push_str(&sweep.to_csv_string());
    Ok(out)
}

fn ac10() -> tblab::Result<Outcome> {
    let mut out = Outcome::new();
    let g = line(-6.0, 6.0, 128);
    let setup = Setup::new(g.clone(), 1);
    let k = gallery("bilinear-homog", &KernelParams::new())?;
    let one = Weight::one(&g)?;
    let reports = stein_bilinear_tb_test(&setup, &k, [&one, &one, &one], &[vec![0.0]], &dyadic_scales(-2, 2))?;
    for (name, r) in ["BTbS1", "BTbS2", "BTbS3"].iter().zip(&reports) {
        let s = slope_of(r);
        out.check(
            &format!("{name} slope 0.5 +- 0.07"),
            r.verdict() == Verdict::Pass,
            format!("slope {s:.4}, spread {:.3}, ratios [{}]", r.fit.spread, fmt_list(&r.ratios())),
        );
        out.report(r);
    }
    // supports span [c - R, c + 2R]; c = -2 keeps R = 4 on the grid
    let wbp = weak_boundedness_test(&setup, &k, [&one, &one, &one], &[vec![-2.0]], &dyadic_scales(-2, 2), &[1.0])?;
    for r in &wbp {
        out.check(
            "bilinear WBP offset slope 1.0 +- 0.07",
            (slope_of(r) - 1.0).abs() <= 0.07,
            format!("slope {:.4}, ratios [{}]", slope_of(r), fmt_list(&r.ratios())),
        );
        out.report(r);
    }
    let gd = line(-32.0, 32.0, 128);
    let sd = Setup::new(gd.clone(), 1);
    let oned = Weight::one(&gd)?;
    let q = Cube::interval(-0.5, 0.5)?;
    let r = cube_cutoff_radius(&q);
    let dec = bilinear_decomposition_check(&sd, &k, &oned, &oned, &q, &[r / 4.0, r, 4.0 * r])?;
    let worst = dec.rows.iter().map(|r| r.sum_defect).fold(0.0, f64::max);
    out.check("(B5) four-term sum identity", dec.sum_ok(), format!("max defect {worst:.3e}"));
    out.csv.push_str(&dec.to_csv_string());
    Ok(out)
}

const CRITERIA: [(&str, Criterion); 10] = [
    ("AC1", ac1),
    ("AC2", ac2),
    ("AC3", ac3),
    ("AC4", ac4),
    ("AC5", ac5),
    ("AC6", ac6),
    ("AC7", ac7),
    ("AC8", ac8),
    ("AC9", ac9),
    ("AC10", ac10),
];

fn run_in(threads: usize, f: Criterion) -> tblab::Result<Outcome> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let mut identical = Vec::new();
    for (name, f) in CRITERIA {
        let start = Instant::now();
        let four = run_in(4, f);
        let elapsed = start.elapsed().as_secs_f64();
        let one = run_in(1, f);
        match (four, one) {
            (Ok(a), Ok(b)) => {
                identical.push((name, a.csv == b.csv));
                let ok = a.checks.iter().all(|c| c.ok);
                all_ok &= ok;
                println!("{name} {} ({elapsed:.2}s)", if ok { "PASS" } else { "FAIL" });
                for c in &a.checks {
                    println!("    [{}] {}  {}", if c.ok { "ok" } else { "FAIL" }, c.label, c.detail);
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                all_ok = false;
                identical.push((name, false));
                println!("{name} FAIL (error: {e})");
            }
        }
    }
    let det = identical.iter().all(|(_, same)| *same);
    all_ok &= det;
    println!("AC11 {}", if det { "PASS" } else { "FAIL" });
    for (name, same) in &identical {
        println!("    [{}] {name} CSV identical under 1 and 4 threads", if *same { "ok" } else { "FAIL" });
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
