//! Command-line front end: every library pipeline as a subcommand with
//! reproducible seeding, experiment manifests and CSV/JSON output.
//!
//! Exit codes: 0 success, 2 validation error, 3 budget error.

use clap::{Parser, Subcommand, ValueEnum};
use fpld::applications::{self, Manifest, SweepBudgets};
use fpld::overlap::{self, OverlapDistribution, SpeedFunction};
use fpld::priors::PriorModel;
use fpld::rng::RngState;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fpld",
    version,
    about = "Overlap quantiles, Franz-Parisi potentials and low-degree MMSE diagnostics for Gaussian additive models",
    long_about = None
)]
struct Cli {
    /// Seed for all randomness; required by stochastic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (FPLD_OUT_DIR overrides when set).
    #[arg(long, global = true, default_value = "fpld-out")]
    out_dir: PathBuf,
    /// Worker-thread cap; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output format of the primary data file.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    /// Linearly spaced grid.
    Lin,
    /// Geometrically spaced grid.
    Geom,
}

#[derive(Subcommand)]
enum Command {
    /// Quantile curve q(D) of the overlap of a prior.
    Quantiles {
        /// Prior as JSON: {"kind": "...", "params": {...}}
        #[arg(long)]
        model: String,
        /// Grid "start:stop[:count]" of D values.
        #[arg(long)]
        d_grid: String,
        /// Grid spacing.
        #[arg(long, value_enum, default_value_t = Scale::Lin)]
        scale: Scale,
        /// Monte-Carlo samples when no exact PMF exists.
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
    },
    /// Annealed FP curve over the overlap support.
    FpCurve {
        #[arg(long)]
        model: String,
        #[arg(long)]
        lambda: f64,
        /// Curve extends to q(d_max).
        #[arg(long, default_value_t = 10.0)]
        d_max: f64,
        /// Density points for continuous overlaps.
        #[arg(long, default_value_t = 64)]
        points: usize,
    },
    /// lambda + dF/dq at q(D) with the hard/easy sign.
    FpDerivative {
        #[arg(long)]
        model: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        d_level: f64,
    },
    /// Cumulant upper bound on the degree-D squared correlation.
    CumulantBound {
        #[arg(long)]
        model: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        degree: u32,
    },
    /// Overlap-only Monte-Carlo lower bound on the degree-D correlation.
    EstimatorCorr {
        #[arg(long)]
        model: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        degree: u32,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
    },
    /// Exact low-degree correlation and MMSE for finite-support priors.
    OracleMmse {
        #[arg(long)]
        model: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        degree: u32,
    },
    /// FP-sign vs correlation-bound sweep over an SNR grid.
    Equivalence {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        r: u32,
        #[arg(long)]
        degree: u32,
        /// Grid "start:stop[:count]" of SNR values.
        #[arg(long)]
        lambda_grid: String,
        #[arg(long, value_enum, default_value_t = Scale::Geom)]
        scale: Scale,
        #[arg(long, default_value_t = 20_000)]
        mc_samples: usize,
    },
    /// Diagonal-thresholding recovery trials on the truncated model.
    DiagThreshold {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        trials: usize,
        /// Override of the default sqrt(6 log n).
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Annealed vs quenched FP differences on the truncated 3-tensor model.
    Counterexample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda_grid: String,
        #[arg(long, value_enum, default_value_t = Scale::Geom)]
        scale: Scale,
        #[arg(long, default_value_t = 2)]
        q_prime: u32,
        #[arg(long, default_value_t = 3)]
        degree: u32,
        #[arg(long, default_value_t = 32)]
        replicas: usize,
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
    },
    /// Modified Bessel K on a grid, with recurrence residuals.
    Bessel {
        #[arg(long)]
        nu: f64,
        /// Grid "start:stop[:count]" of x values.
        #[arg(long)]
        x_grid: String,
        #[arg(long, value_enum, default_value_t = Scale::Geom)]
        scale: Scale,
    },
    /// Runs the identity/invariant suite; exits 0 iff all pass.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<fpld::Error>() {
                Some(fpld::Error::Budget(_)) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn parse_model(raw: &str) -> anyhow::Result<PriorModel> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| anyhow::anyhow!("model JSON malformed at /: {e}"))?;
    if value.get("kind").and_then(|v| v.as_str()).is_none() {
        anyhow::bail!("model JSON malformed at /kind: expected a string");
    }
    if !value
        .get("params")
        .map(|v| v.is_object())
        .unwrap_or(false)
    {
        anyhow::bail!("model JSON malformed at /params: expected an object");
    }
    let prior: PriorModel = serde_json::from_value(value)
        .map_err(|e| anyhow::anyhow!("model JSON malformed at /params: {e}"))?;
    prior
        .validate()
        .map_err(|e| anyhow::anyhow!("model JSON invalid at /params: {e}"))?;
    Ok(prior)
}

/// Parses "start:stop[:count]" into a grid.
fn parse_grid(spec: &str, scale: Scale) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        anyhow::bail!("grid '{spec}' must be start:stop[:count]");
    }
    let start: f64 = parts[0].parse()?;
    let stop: f64 = parts[1].parse()?;
    let count: usize = if parts.len() == 3 { parts[2].parse()? } else { 16 };
    if count == 0 {
        anyhow::bail!("grid count must be positive");
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let mut out = Vec::with_capacity(count);
    match scale {
        Scale::Lin => {
            for i in 0..count {
                out.push(start + (stop - start) * i as f64 / (count - 1) as f64);
            }
        }
        Scale::Geom => {
            if start <= 0.0 || stop <= 0.0 {
                anyhow::bail!("geometric grid requires positive endpoints");
            }
            for i in 0..count {
                out.push(start * (stop / start).powf(i as f64 / (count - 1) as f64));
            }
        }
    }
    Ok(out)
}

fn require_seed(seed: Option<u64>) -> anyhow::Result<u64> {
    seed.ok_or_else(|| anyhow::anyhow!("--seed is required for stochastic subcommands"))
}

fn out_dir(cli_dir: &std::path::Path) -> PathBuf {
    match std::env::var_os("FPLD_OUT_DIR") {
        Some(d) => PathBuf::from(d),
        None => cli_dir.to_path_buf(),
    }
}

/// Builds the overlap distribution for a model: exact PMF for discrete
/// priors, analytic density for Gaussian tensors, empirical otherwise.
fn overlap_distribution(
    prior: &PriorModel,
    mc_samples: usize,
    seed: Option<u64>,
) -> anyhow::Result<OverlapDistribution> {
    Ok(match prior {
        PriorModel::SparseRademacherTensor { n, k, r } => {
            overlap::exact_pmf_sparse_rademacher(*n, *k, *r)?
        }
        PriorModel::TruncatedSparseTensor3 { n, k } => overlap::exact_pmf_truncated3(*n, *k)?,
        PriorModel::GaussianTensor { n, r } => OverlapDistribution::AnalyticDensity {
            family: overlap::DensityFamily::GaussianInnerProduct { d: *n },
            tensor_order: *r,
        },
        _ => {
            let seed = require_seed(seed)?;
            overlap::empirical_overlap(prior, mc_samples, RngState::from_seed(seed))?
        }
    })
}

fn speed_for(prior: &PriorModel) -> Option<SpeedFunction> {
    match prior {
        PriorModel::SparseRademacherTensor { r, .. } => Some(SpeedFunction::TensorStep { r: *r }),
        PriorModel::TruncatedSparseTensor3 { .. } => Some(SpeedFunction::TensorStep { r: 3 }),
        _ => Some(SpeedFunction::NearestAtom),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let dir = out_dir(&cli.out_dir);
    match cli.command {
        Command::Quantiles {
            model,
            d_grid,
            scale,
            mc_samples,
        } => {
            let prior = parse_model(&model)?;
            let grid = parse_grid(&d_grid, scale)?;
            let dist = overlap_distribution(&prior, mc_samples, cli.seed)?;
            let csv = overlap::quantile_curve_to_csv(&dist, &grid)?;
            let manifest = Manifest::new(
                "quantiles",
                serde_json::from_str(&model)?,
                cli.seed.unwrap_or(0),
                serde_json::json!({"mc_samples": mc_samples, "d_grid": d_grid}),
            );
            emit(&dir, &manifest, "quantiles.csv", csv)
        }
        Command::FpCurve {
            model,
            lambda,
            d_max,
            points,
        } => {
            let prior = parse_model(&model)?;
            let dist = overlap_distribution(&prior, 0, cli.seed)?;
            let curve = fpld::fp::fp_curve(&dist, lambda, d_max, points)?;
            let csv = fpld::fp::fp_curve_to_csv(&curve);
            let manifest = Manifest::new(
                "fp-curve",
                serde_json::from_str(&model)?,
                cli.seed.unwrap_or(0),
                serde_json::json!({"lambda": lambda, "d_max": d_max, "points": points}),
            );
            emit(&dir, &manifest, "fp_curve.csv", csv)
        }
        Command::FpDerivative {
            model,
            lambda,
            d_level,
        } => {
            let prior = parse_model(&model)?;
            let dist = overlap_distribution(&prior, 0, cli.seed)?;
            let der =
                fpld::fp::fp_derivative_at_quantile(&dist, lambda, d_level, speed_for(&prior))?;
            let json = serde_json::json!({
                "q_at_level": der.q_at_level,
                "total": der.total,
                "fp_part": der.fp_part,
                "hard": der.is_hard(),
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
        Command::CumulantBound {
            model,
            lambda,
            degree,
        } => {
            let prior = parse_model(&model)?;
            let bound = fpld::cumulants::sw_corr_upper_bound(&prior, lambda, degree)?;
            println!(
                "{}",
                serde_json::json!({"lambda": lambda, "degree": degree, "upper_bound_corr_sq": bound})
            );
            Ok(())
        }
        Command::EstimatorCorr {
            model,
            lambda,
            degree,
            mc_samples,
        } => {
            let prior = parse_model(&model)?;
            let seed = require_seed(cli.seed)?;
            let est = fpld::estimators::corr_lower_bound_overlap(
                &prior,
                lambda,
                degree,
                mc_samples,
                RngState::from_seed(seed),
            )?;
            let mut csv = String::from("lambda,D,lower_bound,stderr_num,stderr_den\n");
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                lambda,
                degree,
                est.lower_bound.map(|v| v.to_string()).unwrap_or_default(),
                est.numerator_stderr,
                est.denominator_stderr
            ));
            let manifest = Manifest::new(
                "estimator-corr",
                serde_json::from_str(&model)?,
                seed,
                serde_json::json!({"mc_samples": mc_samples, "lambda": lambda, "degree": degree}),
            );
            emit(&dir, &manifest, "bound.csv", csv)
        }
        Command::OracleMmse {
            model,
            lambda,
            degree,
        } => {
            let prior = parse_model(&model)?;
            let res = fpld::oracle::exact_corr_and_mmse(&prior, lambda, degree)?;
            println!("{}", fpld::oracle::oracle_report_json(&res));
            Ok(())
        }
        Command::Equivalence {
            n,
            k,
            r,
            degree,
            lambda_grid,
            scale,
            mc_samples,
        } => {
            let seed = require_seed(cli.seed)?;
            let grid = parse_grid(&lambda_grid, scale)?;
            let budgets = SweepBudgets {
                mc_samples,
                oracle: r == 1,
                upper_bound: n <= 8,
            };
            let rep = applications::equivalence_sweep(
                n,
                k,
                r,
                degree,
                &grid,
                budgets,
                RngState::from_seed(seed),
            )?;
            let csv = applications::equivalence_to_csv(&rep);
            println!(
                "{}",
                serde_json::json!({
                    "lambda_star": rep.lambda_star,
                    "lambda_dagger": rep.lambda_dagger,
                    "sandwich_ok": rep.sandwich_ok,
                })
            );
            let manifest = Manifest::new(
                "equivalence",
                serde_json::json!({"kind": "sparse_rademacher_tensor", "params": {"n": n, "k": k, "r": r}}),
                seed,
                serde_json::json!({"mc_samples": mc_samples, "degree": degree, "lambda_grid": lambda_grid}),
            );
            emit(&dir, &manifest, "equivalence.csv", csv)
        }
        Command::DiagThreshold {
            n,
            k,
            lambda,
            trials,
            tau,
        } => {
            let seed = require_seed(cli.seed)?;
            let t = applications::run_threshold_trials(
                n,
                k,
                lambda,
                trials,
                tau,
                RngState::from_seed(seed),
            )?;
            println!("{}", serde_json::to_string_pretty(&t)?);
            let manifest = Manifest::new(
                "diag-threshold",
                serde_json::json!({"kind": "truncated_sparse_tensor3", "params": {"n": n, "k": k}}),
                seed,
                serde_json::json!({"trials": trials, "lambda": lambda, "tau": t.tau}),
            );
            emit(&dir, &manifest, "trials.json", serde_json::to_string_pretty(&t)?)
        }
        Command::Counterexample {
            n,
            k,
            lambda_grid,
            scale,
            q_prime,
            degree,
            replicas,
            mc_samples,
        } => {
            let seed = require_seed(cli.seed)?;
            let grid = parse_grid(&lambda_grid, scale)?;
            let rep = applications::counterexample_experiment(
                n,
                k,
                &grid,
                q_prime,
                degree,
                replicas,
                mc_samples,
                RngState::from_seed(seed),
            )?;
            println!("verdict: {}", rep.verdict);
            let csv = applications::counterexample_to_csv(&rep);
            let manifest = Manifest::new(
                "counterexample",
                serde_json::json!({"kind": "truncated_sparse_tensor3", "params": {"n": n, "k": k}}),
                seed,
                serde_json::json!({
                    "replicas": replicas, "q_prime": q_prime, "degree": degree,
                    "mc_samples": mc_samples, "lambda_grid": lambda_grid
                }),
            );
            emit(&dir, &manifest, "counterexample.csv", csv)
        }
        Command::Bessel { nu, x_grid, scale } => {
            let grid = parse_grid(&x_grid, scale)?;
            let mut csv = String::from("x,ln_k_nu,recurrence_residual\n");
            for &x in &grid {
                let lk = fpld::specfun::ln_bessel_k(nu, x)?;
                let lm = fpld::specfun::ln_bessel_k(nu - 1.0, x)?;
                let lp = fpld::specfun::ln_bessel_k(nu + 1.0, x)?;
                let resid = ((lm - lp).exp() + (2.0 * nu / x) * (lk - lp).exp() - 1.0).abs();
                csv.push_str(&format!("{x},{lk},{resid:e}\n"));
            }
            let manifest = Manifest::new(
                "bessel",
                serde_json::json!({"nu": nu}),
                cli.seed.unwrap_or(0),
                serde_json::json!({"x_grid": x_grid}),
            );
            emit(&dir, &manifest, "bessel.csv", csv)
        }
        Command::Selftest => selftest(),
    }
}

fn emit(
    dir: &std::path::Path,
    manifest: &Manifest,
    name: &str,
    content: String,
) -> anyhow::Result<()> {
    let written = applications::write_experiment(dir, manifest, &[(name, content)])?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

/// One check per library module; prints one pass/fail line each.
fn selftest() -> anyhow::Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // priors: trivial MMSE closed forms
    let tm = fpld::priors::trivial_mmse(&PriorModel::SparseClustering {
        n: 10,
        p: 20,
        s: 4,
        delta: 1.0,
    });
    check("priors: trivial MMSE of the clustering prior equals n*s", tm == 40.0);

    // overlap: exact PMF normalization and quantile monotonicity
    let dist = overlap::exact_pmf_sparse_rademacher(50, 7, 1)?;
    let q1 = overlap::quantile(&dist, 1.0)?.value;
    let q2 = overlap::quantile(&dist, 5.0)?.value;
    check("overlap: q(D) nondecreasing on the exact PMF", q2 >= q1);

    // fp: identity residual
    let mut max_resid = 0.0f64;
    for &(q, lp) in dist.atoms().unwrap() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let f = fpld::fp::annealed_fp(&dist, 1.0, q)?;
        max_resid = max_resid.max((q + f + lp).abs());
    }
    check("fp: lambda q + F + log P vanishes on atoms", max_resid < 1e-10);

    // cumulants: partition vs recursion on the prior oracle
    let prior = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 };
    let t1 = fpld::cumulants::build_cumulant_table(&prior, 3, true)?;
    let t2 = fpld::cumulants::build_cumulant_table(&prior, 3, false)?;
    let agree = t1
        .entries
        .iter()
        .zip(&t2.entries)
        .all(|((_, a), (_, b))| (a - b).abs() < 1e-9);
    check("cumulants: partition and recursion agree", agree);

    // estimators: Hermite values
    check(
        "estimators: h_2(2) = 3 and h_3(1) = -2",
        fpld::estimators::hermite_univariate(2, 2.0) == 3.0
            && fpld::estimators::hermite_univariate(3, 1.0) == -2.0,
    );

    // oracle: closed form at N = 1
    let one = PriorModel::SparseRademacherTensor { n: 1, k: 1, r: 1 };
    let res = fpld::oracle::exact_corr_and_mmse(&one, 1.0, 1)?;
    check(
        "oracle: Corr^2(lambda=1, D=1) = 1/2 for the sign prior",
        (res.corr_sq_total - 0.5).abs() < 1e-12,
    );

    // specfun: K_{1/2} closed form
    let k = fpld::specfun::bessel_k(0.5, 1.0)?;
    let want = (std::f64::consts::FRAC_PI_2).sqrt() * (-1.0f64).exp();
    check("specfun: K_1/2(1) closed form", (k - want).abs() / want < 1e-12);

    // applications: threshold rule
    let hat = applications::diag_threshold(&[-3.0, 0.5, 4.0], 2.0)?;
    check("applications: diagonal threshold rule", hat == vec![-1, 0, 1]);

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        anyhow::bail!("selftest: {failures} check(s) failed")
    }
}
