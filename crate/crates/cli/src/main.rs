//! Command-line experiments on optimal quantization of measures on model
//! manifolds. Every run writes a CSV table with `#` manifest comments and a
//! `<out>.manifest.toml` file.
//!
//! Exit codes: 0 success, 2 invalid input, 3 the experiment ran but its
//! success criterion failed, 1 any other error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand::Rng;

use riemquant::experiments::{
    counterexample_run, empirical_convergence_run, metric_sandwich_run, q_constant_estimate, scaling_law_run,
};
use riemquant::geometry::{ManifoldKind, ModelManifold, Point};
use riemquant::measures::AtomMeasure;
use riemquant::parallel::{derive_seed, stream_rng};
use riemquant::polar::{build_polar_codebook, distance_estimate_check, upper_bound_report, PolarOptions};
use riemquant::quant1d::{moment_bound_check, Lloyd1dConfig};
use riemquant::quantizer::estimate_vnr;
use riemquant::transport::identity_check;
use riemquant::QuantError;

use config::{invalid, Params, RunConfig, ValidationError};
use output::{Cell, Table};

#[derive(Parser)]
#[command(name = "riemquant", version, about = "Optimal quantization experiments on model manifolds")]
struct Cli {
    /// TOML file with run parameters; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: logical cores). QUANT_THREADS takes
    /// precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path (default: `<command>.csv`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Multistart estimate of V_{N,r} and its codebook.
    Quantize(Params),
    /// N^{r/d} V_{N,r} over a list of sizes.
    ScalingLaw(Params),
    /// Estimate of the quantization coefficient of the unit cube.
    QConstant(Params),
    /// Binned distance between optimal codebooks and the limit point density.
    EmpiricalConvergence(Params),
    /// Squared distances against the frozen chart metric on small cubes.
    MetricSandwich(Params),
    /// Growth of N^r V_{N^2,r} for weighted circles in the hyperbolic plane.
    Counterexample(Params),
    /// Polar codebooks against the moment bound.
    PolarBound(Params),
    /// N^r V_{N,r} of a law on the line against its moment bound.
    MomentCheck(Params),
    /// Transport identity for Voronoi weights on random atomic measures.
    WassersteinCheck(Params),
}

impl Cmd {
    fn split(self) -> (&'static str, Params) {
        match self {
            Cmd::Quantize(p) => ("quantize", p),
            Cmd::ScalingLaw(p) => ("scaling-law", p),
            Cmd::QConstant(p) => ("q-constant", p),
            Cmd::EmpiricalConvergence(p) => ("empirical-convergence", p),
            Cmd::MetricSandwich(p) => ("metric-sandwich", p),
            Cmd::Counterexample(p) => ("counterexample", p),
            Cmd::PolarBound(p) => ("polar-bound", p),
            Cmd::MomentCheck(p) => ("moment-check", p),
            Cmd::WassersteinCheck(p) => ("wasserstein-check", p),
        }
    }
}

/// A finished table and whether the experiment met its criterion.
struct Outcome {
    table: Table,
    /// Further tables, written to `<out>.<suffix>.csv`.
    extra: Vec<(&'static str, Table)>,
    passed: bool,
}

const POWERS_OF_TWO: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];

fn quantize(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (_, mu) = cfg.measure("uniform")?;
    let est = cfg.estimate();
    let mut t = Table::new(["N", "V", "mc_error", "train_V", "iterations", "converged"]);
    let amb = mu.manifold().ambient_dim();
    let mut columns = vec!["N".to_string(), "index".into(), "weight".into()];
    columns.extend((0..amb).map(|k| format!("x{k}")));
    let mut codes = Table::new(columns);
    for n in cfg.sizes(&[8]) {
        let q = estimate_vnr(&mu, n, cfg.r(), &est, derive_seed(cfg.seed, n as u64))?;
        t.row(vec![
            n.into(),
            q.distortion.into(),
            q.mc_error.into(),
            q.train_distortion.into(),
            q.iterations.into(),
            q.converged.into(),
        ]);
        let weights = q.codebook.weights().unwrap_or(&[]);
        for (i, (p, w)) in q.codebook.points().iter().zip(weights).enumerate() {
            let mut row: Vec<Cell> = vec![n.into(), i.into(), (*w).into()];
            row.extend(p.coords().iter().map(|c| Cell::Num(*c)));
            codes.row(row);
        }
    }
    Ok(Outcome {
        table: t,
        extra: vec![("codebook", codes)],
        passed: true,
    })
}

fn scaling_law(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (name, mu) = cfg.measure("uniform-square")?;
    let rep = scaling_law_run(&mu, &name, cfg.r(), &cfg.sizes(&[16, 64, 256]), &cfg.estimate(), cfg.seed, None)?;
    let mut t = Table::new(["N", "V", "NrdV", "mc_error"]);
    for row in &rep.rows {
        t.row(vec![row.n.into(), row.v.into(), row.scaled.into(), row.mc_error.into()]);
    }
    if let Some(v) = rep.integral_term {
        t.note("integral_term", output::num(v));
    }
    if let Some(v) = rep.limit {
        t.note("limit", output::num(v));
    }
    if let Some(v) = rep.last_ratio {
        t.note("last_ratio", output::num(v));
    }
    for (n, why) in &rep.skipped {
        eprintln!("warning: N = {n} skipped: {why}");
        t.note(&format!("skipped_{n}"), why);
    }
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: true,
    })
}

fn q_constant(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let d = cfg.params.dim.unwrap_or(2);
    let rep = q_constant_estimate(d, cfg.r(), &cfg.sizes(&[16, 64, 256]), &cfg.estimate(), cfg.seed)?;
    let mut t = Table::new(["N", "NrdV"]);
    for row in &rep.rows {
        t.row(vec![row.n.into(), row.scaled.into()]);
    }
    t.note("estimate", output::num(rep.estimate));
    t.note("mc_error", output::num(rep.mc_error));
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: true,
    })
}

fn empirical_convergence(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (_, mu) = cfg.measure("triangular-square")?;
    let rows = empirical_convergence_run(&mu, cfg.r(), &cfg.sizes(&[16, 64, 256]), cfg.params.bins, &cfg.estimate(), cfg.seed)?;
    let mut t = Table::new(["N", "l1", "quantile_gap"]);
    for row in &rows {
        let gap = row.quantile_gap.map_or(Cell::Text(String::new()), Cell::Num);
        t.row(vec![row.n.into(), row.l1.into(), gap]);
    }
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: true,
    })
}

fn metric_sandwich(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let m = cfg.manifold(ManifoldKind::Sphere, 2)?;
    let deltas = cfg.params.deltas.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let rep = metric_sandwich_run(&m, &deltas, cfg.params.samples.unwrap_or(20_000), cfg.seed)?;
    let mut t = Table::new(["delta", "sup_ratio_dev", "C_hat"]);
    for row in &rep.rows {
        t.row(vec![row.delta.into(), row.sup_ratio_dev.into(), row.c_hat.into()]);
    }
    t.note("shrinks_linearly", rep.shrinks_linearly);
    t.note("c_hat_bounded", rep.c_hat_bounded);
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: rep.shrinks_linearly && rep.c_hat_bounded,
    })
}

fn counterexample(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let p = &cfg.params;
    let rep = counterexample_run(
        p.epsilon.unwrap_or(0.3),
        cfg.r(),
        p.kmax.unwrap_or(18),
        &cfg.sizes(&[2, 4, 8, 16]),
        &cfg.estimate(),
        cfg.seed,
    )?;
    let mut t = Table::new(["N", "NrV", "mc_error"]);
    for row in &rep.rows {
        t.row(vec![row.n.into(), row.scaled.into(), row.mc_error.into()]);
    }
    t.note("growth_ratio", output::num(rep.growth_ratio));
    t.note("growth_exponent", output::num(rep.growth_exponent));
    t.note("strictly_increasing", rep.strictly_increasing);
    t.note("separated", rep.separated);
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: rep.passed,
    })
}

fn polar_bound(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (_, mu) = cfg.measure("gaussian-hyperbolic")?;
    let d = PolarOptions::default();
    let opts = PolarOptions {
        radial_n: cfg.params.radial_n.unwrap_or(d.radial_n),
        eval_n: cfg.params.eval_n.unwrap_or(d.eval_n),
    };
    let x0 = mu.manifold().origin();
    let ns = cfg.sizes(&[2, 4, 8, 16]);
    let rep = upper_bound_report(&mu, &x0, cfg.r(), cfg.params.delta.unwrap_or(1.0), &ns, &opts, cfg.seed)?;
    let last = *ns.iter().max().expect("sizes are non-empty");
    let pc = build_polar_codebook(&mu, &x0, last, cfg.r(), &opts, cfg.seed)?;
    let chk = distance_estimate_check(&mu, &pc, cfg.params.samples.unwrap_or(100_000), derive_seed(cfg.seed, 1))?;
    let mut t = Table::new(["N", "F", "NrF", "mc_error"]);
    for row in &rep.rows {
        t.row(vec![row.n.into(), row.distortion.into(), row.scaled.into(), row.mc_error.into()]);
    }
    t.note("moment_sum", output::num(rep.moment_sum));
    t.note("stable", rep.stable);
    t.note("estimate_pairs", chk.pairs);
    t.note("estimate_violations", chk.violations);
    t.note("estimate_max_excess", output::num(chk.max_excess));
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: rep.stable && chk.violations == 0,
    })
}

fn moment_check(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (name, mu) = cfg.measure("exponential")?;
    let law = mu
        .line_law()
        .ok_or_else(|| invalid(format!("moment-check needs a law on the line with exact cells, got `{name}`")))?;
    let rep = moment_bound_check(
        &law,
        cfg.r(),
        cfg.params.delta.unwrap_or(1.0),
        &cfg.sizes(&POWERS_OF_TWO),
        &Lloyd1dConfig::default(),
    )?;
    let mut t = Table::new(["N", "NrV", "converged"]);
    for row in &rep.rows {
        t.row(vec![row.n.into(), row.scaled.into(), row.converged.into()]);
    }
    t.note("moment_term", output::num(rep.moment_term));
    t.note("empirical_sup", output::num(rep.empirical_sup));
    t.note("stable", rep.stable);
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: rep.stable,
    })
}

fn wasserstein_check(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let p = &cfg.params;
    let fixed = p.manifold.as_ref().map(|_| cfg.manifold(ManifoldKind::Euclidean, 2)).transpose()?;
    let (max_atoms, max_support) = (p.atoms.unwrap_or(50), p.support.unwrap_or(8));
    if max_atoms == 0 || max_support == 0 {
        return Err(invalid("--atoms and --support must be >= 1"));
    }
    let mut t = Table::new(["instance", "manifold", "r", "atoms", "support", "lhs", "rhs", "gap"]);
    let mut worst = 0.0f64;
    for i in 0..p.instances.unwrap_or(100) {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let m = fixed.unwrap_or_else(|| {
            [ModelManifold::euclidean(2), ModelManifold::sphere(2), ModelManifold::hyperbolic(2)][i % 3]
        });
        let r = p.r.unwrap_or(if i % 2 == 0 { 1.0 } else { 2.0 });
        let atoms = (0..rng.random_range(1..=max_atoms))
            .map(|_| (m.random_point(&mut rng, 1.0), rng.random_range(0.05..1.0)))
            .collect::<Vec<_>>();
        let n_atoms = atoms.len();
        let mu = AtomMeasure::new(m, atoms)?;
        let support: Vec<Point> = (0..rng.random_range(1..=max_support)).map(|_| m.random_point(&mut rng, 1.0)).collect();
        let chk = identity_check(&mu, &support, r)?;
        worst = worst.max(chk.gap);
        t.row(vec![
            i.into(),
            m.kind().name().into(),
            r.into(),
            n_atoms.into(),
            support.len().into(),
            chk.lhs.into(),
            chk.rhs.into(),
            chk.gap.into(),
        ]);
    }
    t.note("max_gap", output::num(worst));
    Ok(Outcome {
        table: t,
        extra: vec![],
        passed: worst <= 1e-9,
    })
}

fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var("QUANT_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(invalid(format!("QUANT_THREADS must be a positive integer, got `{v}`"))),
        },
        _ => match flag {
            Some(0) => Err(invalid("--threads must be >= 1")),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (name, flags) = cli.command.split();
    let params = match &cli.config {
        Some(path) => Params::from_file(path)?.merged(&flags),
        None => flags,
    };
    let cfg = RunConfig::new(name, params, cli.out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads(cli.threads)? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building the worker pool")?;
    let outcome = pool.install(|| match name {
        "quantize" => quantize(&cfg),
        "scaling-law" => scaling_law(&cfg),
        "q-constant" => q_constant(&cfg),
        "empirical-convergence" => empirical_convergence(&cfg),
        "metric-sandwich" => metric_sandwich(&cfg),
        "counterexample" => counterexample(&cfg),
        "polar-bound" => polar_bound(&cfg),
        "moment-check" => moment_check(&cfg),
        "wasserstein-check" => wasserstein_check(&cfg),
        _ => unreachable!("every subcommand is dispatched"),
    })?;
    output::write(&cfg, &cfg.out, &outcome.table)?;
    for (suffix, table) in &outcome.extra {
        output::write(&cfg, &output::sibling(&cfg.out, &format!("{suffix}.csv")), table)?;
    }
    eprintln!("wrote {}", cfg.out.display());
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("experiment criterion not met");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.is::<ValidationError>() || c.is::<QuantError>());
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
