//! Subcommand implementations. Each returns the files it wrote; a `Failure` carries
//! the module that raised it and whether it was a precondition (exit 2) or numeric
//! (exit 1) failure.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use smoothlin_core::cohomology::{solve_stable_frame, FrameConfig};
use smoothlin_core::foliation::{invariance_residual, leaf_chart, solve_lp, LpConfig, Side};
use smoothlin_core::linearize::{full_conjugacy, Conjugacy, ConjugacyReport};
use smoothlin_core::normalform::{apply_normal_form, fd_mixed, homological_coeffs, HatSystem, NormalForm};
use smoothlin_core::sampling::{halton_ball, uniform_ball};
use smoothlin_core::spectrum::{lyapunov_exponents, resonance_report};
use smoothlin_core::{catalog, Cocycle, ConstantsBudget, Error, Matrix, RandomMapSystem, Spectrum, SystemFile, Vector};

use crate::report::{num, vec_cell, Header, Reporter};
use crate::svg::{leaf_plot, Series};
use crate::{Command, Options};

#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub message: String,
    pub precondition: bool,
    pub written: Vec<PathBuf>,
}

impl Failure {
    fn numeric(module: &'static str, message: impl Into<String>) -> Self {
        Self { module, message: message.into(), precondition: false, written: Vec::new() }
    }

    fn precondition(module: &'static str, message: impl Into<String>) -> Self {
        Self { module, message: message.into(), precondition: true, written: Vec::new() }
    }
}

type Res<T> = std::result::Result<T, Failure>;

trait Tag<T> {
    fn tag(self, module: &'static str) -> Res<T>;
}

impl<T> Tag<T> for smoothlin_core::Result<T> {
    fn tag(self, module: &'static str) -> Res<T> {
        self.map_err(|e| Failure { module, message: e.to_string(), precondition: e.is_precondition(), written: Vec::new() })
    }
}

impl<T> Tag<T> for std::io::Result<T> {
    fn tag(self, module: &'static str) -> Res<T> {
        self.map_err(|e| Failure::numeric(module, format!("i/o: {e}")))
    }
}

/// A path to a system file, or the name of a catalog system.
pub fn load_system(arg: &str) -> Res<SystemFile> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).tag("system")?;
        return SystemFile::from_json(&text).tag("system");
    }
    catalog::all()
        .into_iter()
        .find(|(name, _)| *name == arg)
        .map(|(_, s)| s.to_file())
        .ok_or_else(|| Failure::precondition("system", format!("`{arg}` is neither a file nor a catalog system")))
}

struct Ctx {
    opts: Options,
    sys: RandomMapSystem,
    out: Reporter,
    rng: ChaCha8Rng,
}

impl Ctx {
    fn spectrum(&self) -> Res<Spectrum> {
        lyapunov_exponents(&self.sys, self.opts.steps as usize, 0).tag("spectrum")
    }

    fn lp(&self, side: Side) -> LpConfig {
        let mut cfg = LpConfig::new(side);
        cfg.horizon = self.opts.horizon.map(|h| h as usize);
        cfg
    }

    fn points(&self, default: usize) -> usize {
        self.opts.points.map_or(default, |p| p as usize)
    }

    /// Turns a failed check into an exit-1 failure that still lists the written files.
    fn finish(self, failed: Option<(&'static str, String)>) -> Res<Vec<PathBuf>> {
        let written = self.out.written().to_vec();
        match failed {
            None => Ok(written),
            Some((module, message)) => Err(Failure { module, message, precondition: false, written }),
        }
    }
}

pub fn run(cmd: Command, opts: &Options) -> Res<Vec<PathBuf>> {
    let file = load_system(&opts.system)?;
    let sys = RandomMapSystem::from_file(&file).tag("system")?.extend();
    // Output location and worker count do not change results, so they stay out of the hash.
    let config = json!({
        "subcommand": cmd.name(),
        "system": file,
        "seed": opts.seed,
        "radius": opts.radius,
        "horizon": opts.horizon,
        "tol": opts.tol,
        "points": opts.points,
        "steps": opts.steps,
        "strict_radius": opts.strict_radius,
    });
    let out = Reporter::new(&opts.out, Header::new(&config, opts.seed)).tag("cli")?;
    let ctx = Ctx { opts: opts.clone(), sys, out, rng: ChaCha8Rng::seed_from_u64(opts.seed) };
    match cmd {
        Command::Spectrum => spectrum(ctx),
        Command::Check => check(ctx),
        Command::Foliate => foliate(ctx),
        Command::Normalform => normalform(ctx),
        Command::Frame => frame(ctx),
        Command::Linearize => linearize(ctx),
        Command::Verify => verify(ctx),
    }
}

fn spectrum(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let rows: Vec<Vec<String>> = spec
        .exponents
        .iter()
        .zip(&spec.multiplicities)
        .enumerate()
        .map(|(b, (l, m))| vec![num(*l), m.to_string(), (b + 1).to_string()])
        .collect();
    ctx.out.csv("spectrum.csv", &["exponent", "multiplicity", "block"], &rows).tag("cli")?;
    ctx.finish(None)
}

fn check(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let rep = resonance_report(&spec, ctx.sys.alpha());
    ctx.out.json("check.json", &rep).tag("cli")?;
    if !rep.bunching_ok {
        eprintln!("smoothlin [spectrum]: warning: spectral bunching condition fails");
    }
    let written = ctx.out.written().to_vec();
    if !rep.belitskii_ok {
        let mut f = Failure::precondition("spectrum", format!("resonant triples (1-based): {:?}", rep.violating_triples));
        f.written = written;
        return Err(f);
    }
    Ok(written)
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Stable => "stable",
        Side::Unstable => "unstable",
        _ => "intermediate",
    }
}

/// Offsets in graph coordinates: an evenly spaced segment in 1-D, Halton points otherwise.
fn leaf_offsets(g: usize, r: f64, n: usize) -> Vec<Vector> {
    if g == 1 {
        (0..n).map(|k| Vector::from_element(1, -r + 2.0 * r * k as f64 / (n - 1).max(1) as f64)).collect()
    } else {
        halton_ball(n, g, r)
    }
}

fn foliate(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let budget = ConstantsBudget::gaps_only(&spec, ctx.sys.alpha());
    let d = ctx.sys.dim();
    let r = ctx.opts.radius.unwrap_or(0.1);
    let bases: Vec<Vector> = (0..ctx.points(4)).map(|_| uniform_ball(&mut ctx.rng, d, r)).collect();
    let mut rows = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    let mut worst = 0.0f64;
    for side in [Side::Stable, Side::Unstable] {
        if (side == Side::Stable && spec.tau == spec.p()) || (side == Side::Unstable && spec.tau == 0) {
            continue;
        }
        let cfg = ctx.lp(side);
        let per_base: Vec<Res<Vec<(Vector, Vector, f64)>>> = bases
            .par_iter()
            .map(|x| {
                let leaf = leaf_chart(&ctx.sys, &spec, &budget, 0, x, &cfg).tag("foliation")?;
                leaf_offsets(leaf.graph_coords().len(), r / 2.0, 9)
                    .into_iter()
                    .map(|off| {
                        let y = leaf.base_coordinate() + &off;
                        let z = leaf.point(&y).tag("foliation")?;
                        let res = invariance_residual(&ctx.sys, &spec, &budget, &leaf, &[off]).tag("foliation")?;
                        Ok((y, z, res))
                    })
                    .collect()
            })
            .collect();
        let mut pts = Vec::new();
        for (b, leaf) in per_base.into_iter().enumerate() {
            for (y, z, res) in leaf? {
                worst = worst.max(res);
                rows.push(vec![(b + 1).to_string(), side_name(side).into(), vec_cell(&y), vec_cell(&z), num(res)]);
                pts.push(z);
            }
        }
        let colour = if side == Side::Stable { "#1f5fa8" } else { "#b8341b" };
        series.push(Series { label: side_name(side).into(), colour, points: pts });
    }
    ctx.out.csv("foliate.csv", &["base", "side", "y", "point", "residual"], &rows).tag("cli")?;
    if (2..=3).contains(&d) {
        let title = format!("{}: leaves through {} base points", ctx.sys.name(), bases.len());
        ctx.out.text("foliate.svg", &leaf_plot(&title, d, &series)).tag("cli")?;
    }
    let tol = ctx.opts.tol;
    let failed = (worst > tol).then(|| ("foliation", format!("invariance residual {worst:.3e} exceeds {tol:.1e}")));
    ctx.finish(failed)
}

#[derive(Serialize)]
struct MixedDerivative {
    unstable_coord: usize,
    stable_coord: usize,
    before: f64,
    after: f64,
}

const FD_STEP: f64 = 1e-4;

/// ∂²/∂x_a∂x_b at 0 before and after the transformation, for a unstable and b stable.
fn mixed_derivatives<C: Cocycle + ?Sized>(
    hat: &HatSystem<'_, C>,
    nf: &NormalForm<'_, HatSystem<'_, C>>,
    spec: &Spectrum,
) -> Res<Vec<MixedDerivative>> {
    let d = spec.dim();
    let mut out = Vec::new();
    for a in spec.unstable_coords() {
        for b in spec.stable_coords() {
            let before = fd_mixed(|x| Ok(hat.map(0, x)), d, a, b, FD_STEP).tag("normalform")?.amax();
            let after = nf.mixed_derivative_fd(0, a, b, FD_STEP).tag("normalform")?.amax();
            out.push(MixedDerivative { unstable_coord: a + 1, stable_coord: b + 1, before, after });
        }
    }
    Ok(out)
}

fn normalform(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let hat = HatSystem::at_fixed_point(&ctx.sys, 0);
    let co = homological_coeffs(&hat, &spec, None).tag("normalform")?;
    let values = co.at(0).tag("normalform")?;
    let residuals = co.residuals(0).tag("normalform")?;
    let mut rows = Vec::new();
    for ((tr, v), res) in co.triples.iter().zip(values.iter()).zip(&residuals) {
        rows.push(vec![
            (tr.i + 1).to_string(),
            (tr.k + 1).to_string(),
            (tr.j + 1).to_string(),
            format!("{:?}", tr.branch).to_lowercase(),
            v.kstar.to_string(),
            num(v.tensor.norm()),
            num(*res),
        ]);
    }
    let worst_res = residuals.iter().copied().fold(0.0, f64::max);
    let nf = apply_normal_form(co, &[0], 0.25, ctx.sys.rho()).tag("normalform")?;
    let mixed = mixed_derivatives(&hat, &nf, &spec)?;
    let worst_after = mixed.iter().map(|m| m.after).fold(0.0, f64::max);
    ctx.out.csv("normalform.csv", &["i", "kappa", "j", "branch", "kstar", "norm", "residual"], &rows).tag("cli")?;
    ctx.out
        .json(
            "normalform.json",
            &json!({
                "rho_tilde": nf.rho_tilde,
                "fd_step": FD_STEP,
                "max_coefficient_residual": worst_res,
                "mixed_derivatives": mixed,
            }),
        )
        .tag("cli")?;
    let tol = ctx.opts.tol;
    let failed = if worst_res > tol {
        Some(("normalform", format!("coefficient residual {worst_res:.3e} exceeds {tol:.1e}")))
    } else if worst_after > tol {
        Some(("normalform", format!("mixed derivative {worst_after:.3e} after transformation exceeds {tol:.1e}")))
    } else {
        None
    };
    ctx.finish(failed)
}

/// Frame recursion ratios above this mean the contraction estimate has failed.
const FRAME_RATIO_LIMIT: f64 = 0.55;

fn frame(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let budget = ConstantsBudget::new(&spec, ctx.sys.alpha()).tag("spectrum")?;
    let hat = HatSystem::at_fixed_point(&ctx.sys, 0);
    let co = homological_coeffs(&hat, &spec, None).tag("normalform")?;
    let times: Vec<i64> = (-40..=40).collect();
    let nf = apply_normal_form(co, &times, 0.25, ctx.sys.rho()).tag("normalform")?;
    let r = ctx.opts.radius.unwrap_or(0.05);
    let starts: Vec<f64> = (0..ctx.points(4)).map(|_| ctx.rng.random_range(0.2 * r..=r)).collect();
    let pairs: Vec<(usize, usize)> = (0..spec.tau).flat_map(|i| (spec.tau..spec.p()).map(move |k| (i, k))).collect();
    let jobs: Vec<(usize, f64, usize, usize)> =
        starts.iter().enumerate().flat_map(|(s, &x0)| pairs.iter().map(move |&(i, k)| (s, x0, i, k))).collect();
    let lin = 1.5 * ctx.sys.rho();
    let sols: Vec<Res<_>> = jobs
        .par_iter()
        .map(|&(s, x0, i, k)| {
            let sol = solve_stable_frame(&nf, &spec, &budget, x0, &FrameConfig::new(i, k, lin)).tag("cohomology")?;
            Ok((s, x0, sol))
        })
        .collect();
    let mut rows = Vec::new();
    let (mut worst_ratio, mut worst_res) = (0.0f64, 0.0f64);
    for r in sols {
        let (s, x0, sol) = r?;
        worst_ratio = worst_ratio.max(sol.max_ratio());
        worst_res = worst_res.max(sol.residual);
        rows.push(vec![
            (s + 1).to_string(),
            num(x0),
            (sol.i + 1).to_string(),
            (sol.kappa + 1).to_string(),
            vec_cell(&sol.v[sol.at_zero()]),
            num(sol.max_ratio()),
            num(sol.residual),
        ]);
    }
    ctx.out.csv("frame.csv", &["sample", "x0", "i", "kappa", "v0", "max_ratio", "residual"], &rows).tag("cli")?;
    let tol = ctx.opts.tol;
    let failed = if worst_ratio > FRAME_RATIO_LIMIT {
        Some(("cohomology", format!("frame recursion ratio {worst_ratio:.3} exceeds {FRAME_RATIO_LIMIT}")))
    } else if worst_res > tol {
        Some(("cohomology", format!("frame residual {worst_res:.3e} exceeds {tol:.1e}")))
    } else {
        None
    };
    ctx.finish(failed)
}

/// max over directions of ‖DΦ(x)e − e‖ by central differences.
fn derivative_deviation_at<C: Cocycle + ?Sized>(conj: &Conjugacy<'_, C>, x: &Vector, h: f64) -> smoothlin_core::Result<f64> {
    let d = x.len();
    let mut jac = Matrix::zeros(d, d);
    for k in 0..d {
        let mut e = Vector::zeros(d);
        e[k] = h;
        let col = (conj.eval(0, &(x + &e))? - conj.eval(0, &(x - &e))?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    Ok((jac - Matrix::identity(d, d)).abs().max())
}

fn passes(rep: &ConjugacyReport, tol: f64) -> bool {
    rep.max_residual < tol && rep.derivative_deviation < tol && rep.max_round_trip < 1e-3 * tol
}

const MAX_SHRINKS: usize = 8;

fn linearize(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let budget = ConstantsBudget::new(&spec, ctx.sys.alpha()).tag("spectrum")?;
    let conj = full_conjugacy(&ctx.sys, &spec, &budget).tag("linearize")?;
    let tol = ctx.opts.tol;
    let requested = ctx.opts.radius.unwrap_or(ctx.sys.rho() / 4.0);
    let points = ctx.points(200);
    let mut attempts = Vec::new();
    let mut passing = None;
    let mut table = Vec::new();
    for k in 0..=MAX_SHRINKS {
        let radius = requested / 2f64.powi(k as i32);
        let (rep, rows) = conj.verify(0, radius, points).tag("linearize")?;
        let ok = passes(&rep, tol);
        attempts.push(rep);
        table = rows;
        if ok {
            passing = Some(radius);
            break;
        }
        if ctx.opts.strict_radius {
            break;
        }
    }
    let devs: Vec<smoothlin_core::Result<f64>> =
        table.par_iter().map(|(x, _, _)| derivative_deviation_at(&conj, x, 1e-5)).collect();
    let mut rows = Vec::new();
    for ((x, res, rt), dev) in table.iter().zip(devs) {
        rows.push(vec![vec_cell(x), num(*res), num(dev.tag("linearize")?), num(*rt)]);
    }
    ctx.out.csv("linearize.csv", &["point", "residual", "dphi_deviation", "round_trip"], &rows).tag("cli")?;
    ctx.out
        .json(
            "linearize.json",
            &json!({
                "requested_radius": requested,
                "largest_passing_radius": passing,
                "strict_radius": ctx.opts.strict_radius,
                "tol": tol,
                "attempts": attempts,
            }),
        )
        .tag("cli")?;
    let failed = match passing {
        Some(_) => None,
        None if ctx.opts.strict_radius => {
            let rep = &attempts[0];
            Some(("linearize", format!(
                "radius {requested} fails: residual {:.3e}, DΦ(0) deviation {:.3e}, round trip {:.3e}",
                rep.max_residual, rep.derivative_deviation, rep.max_round_trip
            )))
        }
        None => Some(("linearize", format!("no passing radius down to {:.3e}", attempts[attempts.len() - 1].radius))),
    };
    drop(conj);
    ctx.finish(failed)
}

#[derive(Serialize)]
struct Suite {
    name: &'static str,
    status: &'static str,
    value: Option<f64>,
    threshold: Option<f64>,
    detail: String,
}

impl Suite {
    fn measured(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        let status = if value <= threshold { "pass" } else { "fail" };
        Self { name, status, value: Some(value), threshold: Some(threshold), detail }
    }

    fn from(name: &'static str, threshold: f64, r: smoothlin_core::Result<(f64, String)>) -> Self {
        match r {
            Ok((v, detail)) => Self::measured(name, v, threshold, detail),
            Err(e @ (Error::Precondition(_) | Error::Invalid(_))) => {
                Self { name, status: "skipped", value: None, threshold: Some(threshold), detail: e.to_string() }
            }
            Err(e) => Self { name, status: "fail", value: None, threshold: Some(threshold), detail: e.to_string() },
        }
    }
}

fn verify(mut ctx: Ctx) -> Res<Vec<PathBuf>> {
    let spec = ctx.spectrum()?;
    let rep = resonance_report(&spec, ctx.sys.alpha());
    if !rep.belitskii_ok {
        return Err(Failure::precondition("spectrum", format!("resonant triples (1-based): {:?}", rep.violating_triples)));
    }
    let budget = ConstantsBudget::new(&spec, ctx.sys.alpha()).tag("spectrum")?;
    let tol = ctx.opts.tol;
    let sys = &ctx.sys;
    let d = sys.dim();
    let hyperbolic = spec.tau > 0 && spec.tau < spec.p();
    let bases = halton_ball(3, d, 0.1);
    let mut suites = vec![Suite {
        name: "spectrum",
        status: "pass",
        value: None,
        threshold: None,
        detail: format!("exponents {:?}, bunching {}", spec.exponents, if rep.bunching_ok { "ok" } else { "fails" }),
    }];

    let sides: Vec<Side> = [Side::Stable, Side::Unstable]
        .into_iter()
        .filter(|s| match s {
            Side::Stable => spec.tau < spec.p(),
            _ => spec.tau > 0,
        })
        .collect();
    let lp = (|| {
        let mut worst = 0.0f64;
        let mut n = 0;
        for x in &bases {
            for &side in &sides {
                let cfg = ctx.lp(side);
                let leaf = leaf_chart(sys, &spec, &budget, 0, x, &cfg)?;
                let y = leaf.base_coordinate().add_scalar(0.02);
                worst = worst.max(solve_lp(sys, &spec, &budget, 0, x, &y, &cfg)?.residual);
                n += 1;
            }
        }
        Ok((worst, format!("{n} solutions")))
    })();
    suites.push(Suite::from("lyapunov_perron_residual", 1e-10, lp));

    let inv = (|| {
        let mut worst = 0.0f64;
        for x in &bases {
            for &side in &sides {
                let leaf = leaf_chart(sys, &spec, &budget, 0, x, &ctx.lp(side))?;
                let offsets = halton_ball(8, leaf.graph_coords().len(), 0.05);
                worst = worst.max(invariance_residual(sys, &spec, &budget, &leaf, &offsets)?);
            }
        }
        Ok((worst, format!("{} bases × 8 points", bases.len())))
    })();
    suites.push(Suite::from("foliation_invariance", tol, inv));

    let hat = HatSystem::at_fixed_point(sys, 0);
    let nf = homological_coeffs(&hat, &spec, None).and_then(|co| {
        let worst = co.residuals(0)?.into_iter().fold(0.0, f64::max);
        let times: Vec<i64> = (-40..=40).collect();
        Ok((worst, apply_normal_form(co, &times, 0.25, sys.rho())?))
    });
    let (nf_suite, nf) = match nf {
        Ok((worst, nf)) => (Suite::measured("normal_form_coefficients", worst, tol, "homological residual at n = 0".into()), Some(nf)),
        Err(e) => (Suite::from("normal_form_coefficients", tol, Err(e)), None),
    };
    suites.push(nf_suite);

    if let Some(nf) = &nf {
        let mixed = (|| {
            let m = mixed_derivatives(&hat, nf, &spec).map_err(|f| Error::IllConditioned(f.message))?;
            Ok((m.iter().map(|m| m.after).fold(0.0, f64::max), format!("{} unstable × stable pairs", m.len())))
        })();
        suites.push(Suite::from("mixed_derivative_removed", tol, mixed));

        let frame = (|| {
            if !hyperbolic {
                return Err(Error::Precondition("no stable/unstable pair".into()));
            }
            let mut worst_ratio = 0.0f64;
            let mut worst_res = 0.0f64;
            for i in 0..spec.tau {
                for k in spec.tau..spec.p() {
                    let sol = solve_stable_frame(nf, &spec, &budget, 0.05, &FrameConfig::new(i, k, 1.5 * sys.rho()))?;
                    worst_ratio = worst_ratio.max(sol.max_ratio());
                    worst_res = worst_res.max(sol.residual);
                }
            }
            Ok((worst_ratio, format!("max residual {worst_res:.3e}")))
        })();
        suites.push(Suite::from("frame_contraction", FRAME_RATIO_LIMIT, frame));
    }

    let conj = (|| {
        let conj = full_conjugacy(sys, &spec, &budget)?;
        let (rep, _) = conj.verify(0, ctx.opts.radius.unwrap_or(sys.rho() / 4.0), ctx.points(200))?;
        Ok(rep)
    })();
    match conj {
        Ok(rep) => {
            let detail = format!("radius {}, {} points", rep.radius, rep.points);
            suites.push(Suite::measured("conjugacy_residual", rep.max_residual, tol, detail.clone()));
            suites.push(Suite::measured("conjugacy_derivative_at_zero", rep.derivative_deviation, tol, detail.clone()));
            suites.push(Suite::measured("conjugacy_round_trip", rep.max_round_trip, 1e-3 * tol, detail));
        }
        Err(e) => suites.push(Suite::from("conjugacy_residual", tol, Err(e))),
    }

    let rows: Vec<Vec<String>> = suites
        .iter()
        .map(|s| {
            vec![
                s.name.to_string(),
                s.status.to_string(),
                s.value.map(num).unwrap_or_default(),
                s.threshold.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    ctx.out.csv("verify.csv", &["suite", "status", "value", "threshold"], &rows).tag("cli")?;
    ctx.out.json("verify.json", &suites).tag("cli")?;
    for s in &suites {
        println!("{:<30} {:<8} {}", s.name, s.status, s.detail);
    }
    let failed: Vec<&str> = suites.iter().filter(|s| s.status == "fail").map(|s| s.name).collect();
    let failure = (!failed.is_empty()).then(|| ("verify", format!("failed suites: {}", failed.join(", "))));
    ctx.finish(failure)
}
