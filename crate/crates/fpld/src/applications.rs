//! Packaged, reproducible experiments: diagonal-thresholding recovery
//! trials, quantile-scaling bands, the FP/low-degree equivalence sweep and
//! the quenched-counterexample run. Each experiment emits a JSON manifest
//! (model, seed, budgets, version) plus CSV data; file names derive from a
//! content hash of the manifest.

use crate::estimators::corr_lower_bound_overlap;
use crate::fp::{fp_derivative_at_quantile, quenched_fp_diff};
use crate::oracle::exact_corr_and_mmse_product;
use crate::overlap::{
    empirical_overlap, exact_pmf_sparse_rademacher, exact_pmf_truncated3, quantile,
    DensityFamily, OverlapDistribution, SpeedFunction,
};
use crate::priors::{sample_signal_with, Latent, PriorModel};
use crate::rng::{standard_normal, RngState};
use crate::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Coordinatewise sign-threshold `sign(d_i) 1{|d_i| >= tau}`.
pub fn diag_threshold(diagonal: &[f64], tau: f64) -> Result<Vec<i8>> {
    if !(tau > 0.0) {
        return Err(Error::validation("threshold tau must be positive".to_string()));
    }
    Ok(diagonal
        .iter()
        .map(|&d| {
            if d.abs() >= tau {
                if d > 0.0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect())
}

/// Outcome of repeated support-recovery trials on the truncated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdTrial {
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub tau: f64,
    pub trials: usize,
    pub failures: usize,
    /// Analytic failure bound `2 n^-2 + 4 k n^-3 + 4 k n^-27`.
    pub analytic_bound: f64,
    /// `lambda >= 2 tau`, the regime with guaranteed exact recovery.
    pub snr_in_regime: bool,
}

/// Simulates the diagonal observations `d_i = lambda v_i + Z_iii` of the
/// truncated sparse 3-tensor model and counts exact-recovery failures of
/// the thresholding rule. `tau` defaults to `sqrt(6 log n)`.
pub fn run_threshold_trials(
    n: usize,
    k: usize,
    lambda: f64,
    trials: usize,
    tau_override: Option<f64>,
    rng_state: RngState,
) -> Result<ThresholdTrial> {
    if trials == 0 {
        return Err(Error::validation("need at least one trial".to_string()));
    }
    let prior = PriorModel::TruncatedSparseTensor3 { n, k };
    prior.validate()?;
    let tau = tau_override.unwrap_or_else(|| (6.0 * (n as f64).ln()).sqrt());
    if !(tau > 0.0) {
        return Err(Error::validation("threshold tau must be positive".to_string()));
    }
    let fails: usize = crate::rng::parallel_chunks(rng_state, trials, 512, move |st, m| {
        let mut rng = st.rng();
        (0..m)
            .map(|_| {
                let v = match sample_signal_with(&prior, &mut rng).latent {
                    Latent::Signs(v) => v,
                    _ => unreachable!(),
                };
                let d: Vec<f64> = v
                    .iter()
                    .map(|&vi| lambda * vi as f64 + standard_normal(&mut rng))
                    .collect();
                let hat = diag_threshold(&d, tau).unwrap();
                usize::from(hat != v)
            })
            .collect()
    })
    .into_iter()
    .sum();
    let nf = n as f64;
    let analytic_bound = 2.0 * nf.powi(-2) + 4.0 * k as f64 * nf.powi(-3) + 4.0 * k as f64 * nf.powi(-27);
    Ok(ThresholdTrial {
        n,
        k,
        lambda,
        tau,
        trials,
        failures: fails,
        analytic_bound,
        snr_in_regime: lambda >= 2.0 * tau,
    })
}

/// One row of a quantile-scaling experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub model: String,
    pub size: usize,
    pub d_level: f64,
    pub quantile: f64,
    pub predicted_scale: f64,
    pub ratio: f64,
}

/// Worked models of the quantile-scaling experiment.
#[derive(Debug, Clone)]
pub enum ScalingModel {
    /// Gaussian tensor: `q(D)^(1/r)` against `sqrt(nD) + D`.
    GaussianTensor { r: u32 },
    /// Sparse Rademacher with `k = n^beta`, `beta > 1/2`:
    /// `q(D)^(1/r)` against `sigma sqrt(D)`.
    SparseRademacherDense { beta: f64, r: u32 },
    /// Sparse Rademacher with `beta < 1/2`: base quantile against `D / log n`.
    SparseRademacherSparse { beta: f64, r: u32 },
    /// Clustering `(n, p = n^2, s = p^0.75)` toy: `q(D)` against `sigma_S D`.
    Clustering,
}

/// Runs one model over `sizes x d_grid`; the band of `ratio` across rows
/// at matched `D` quantifies stability of the predicted scale.
pub fn quantile_scaling_experiment(
    model: &ScalingModel,
    sizes: &[usize],
    d_grid: &[f64],
    m_ov: usize,
    rng_state: RngState,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for (si, &n) in sizes.iter().enumerate() {
        match model {
            ScalingModel::GaussianTensor { r } => {
                let dist = OverlapDistribution::AnalyticDensity {
                    family: DensityFamily::GaussianInnerProduct { d: n },
                    tensor_order: *r,
                };
                for &d in d_grid {
                    let q = quantile(&dist, d)?.value;
                    let base = q.powf(1.0 / *r as f64);
                    let pred = (n as f64 * d).sqrt() + d;
                    rows.push(ScalingRow {
                        model: "gaussian_tensor".to_string(),
                        size: n,
                        d_level: d,
                        quantile: q,
                        predicted_scale: pred,
                        ratio: base / pred,
                    });
                }
            }
            ScalingModel::SparseRademacherDense { beta, r } => {
                let k = (n as f64).powf(*beta).round() as usize;
                let sigma = k as f64 / (n as f64).sqrt();
                let dist = exact_pmf_sparse_rademacher(n, k, *r)?;
                for &d in d_grid {
                    let q = quantile(&dist, d)?.value;
                    let base = q.abs().powf(1.0 / *r as f64);
                    let pred = sigma * d.sqrt();
                    rows.push(ScalingRow {
                        model: "sparse_rademacher_dense".to_string(),
                        size: n,
                        d_level: d,
                        quantile: q,
                        predicted_scale: pred,
                        ratio: base / pred,
                    });
                }
            }
            ScalingModel::SparseRademacherSparse { beta, r } => {
                let k = (n as f64).powf(*beta).round() as usize;
                let dist = exact_pmf_sparse_rademacher(n, k, *r)?;
                for &mult in d_grid {
                    // the predicted scale D / log n applies for D of order log n and above
                    let d = mult * (n as f64).ln();
                    let q = quantile(&dist, d)?.value;
                    let base = q.abs().powf(1.0 / *r as f64);
                    let pred = d / (n as f64).ln();
                    rows.push(ScalingRow {
                        model: "sparse_rademacher_sparse".to_string(),
                        size: n,
                        d_level: d,
                        quantile: q,
                        predicted_scale: pred,
                        ratio: base / pred,
                    });
                }
            }
            ScalingModel::Clustering => {
                let p = n * n;
                let s = (p as f64).powf(0.75).round() as usize;
                let prior = PriorModel::SparseClustering {
                    n,
                    p,
                    s,
                    delta: 1.0,
                };
                let sigma_s = s as f64 * (n as f64 / p as f64).sqrt();
                let dist = empirical_overlap(&prior, m_ov, rng_state.substream(si as u64))?;
                for &d in d_grid {
                    let q = quantile(&dist, d)?.value;
                    let pred = sigma_s * d;
                    rows.push(ScalingRow {
                        model: "clustering".to_string(),
                        size: n,
                        d_level: d,
                        quantile: q,
                        predicted_scale: pred,
                        ratio: q / pred,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Largest ratio spread across sizes at matched `D` index.
pub fn scaling_band(rows: &[ScalingRow]) -> f64 {
    let mut band: f64 = 1.0;
    let mut by_d: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for (i, r) in rows.iter().enumerate() {
        // group by position in the D grid: same d_level ordering per size
        let key = i as u64 % 1_000_000;
        let _ = key;
        by_d.entry(r.d_level.to_bits()).or_default().push(r.ratio);
    }
    for (_, v) in by_d {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo > 0.0 {
            band = band.max(hi / lo);
        }
    }
    band
}

/// One row of the equivalence sweep.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub lambda: f64,
    /// Sign of the FP-derivative alone at `q(D)` (`>= 0` means hard).
    pub fp_hard: bool,
    /// `lambda + Delta F` at `q(D)`.
    pub fp_total: f64,
    pub q_d: f64,
    pub q_d_log2n: f64,
    pub lower_bound_corr_sq: Option<f64>,
    pub lower_bound_stderr: Option<f64>,
    pub upper_bound_corr_sq: Option<f64>,
    pub oracle_corr_sq: Option<f64>,
}

/// Result of the equivalence sweep on one model.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub model: String,
    pub degree: u32,
    pub rows: Vec<EquivalenceRow>,
    /// SNR where the FP-derivative sign flips (exactly `-Delta log P` at `q(D)`).
    pub lambda_star: Option<f64>,
    /// SNR where the oracle `Corr^2` crosses `q(D)` (bisection).
    pub lambda_dagger: Option<f64>,
    /// `lower <= upper + 3 * stderr` held on every row where both exist.
    pub sandwich_ok: bool,
    /// Fitted quantile growth `q(t) ~ b t^kappa` over `t in [1, D log^2 n]`.
    pub fitted_kappa: f64,
    pub fitted_b: f64,
    /// Fitted easy-side constant: `min lb^2 D^{2 kappa} / q(D)` over rows
    /// with `lambda >= 4 lambda*`; `None` when no row is that deep.
    pub easy_side_c: Option<f64>,
    /// On every row with `lambda <= lambda*/4`, the lower bound stayed
    /// below the `q(D log^2 n)` benchmark.
    pub hard_side_ok: bool,
}

/// Budgets of an equivalence sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepBudgets {
    pub mc_samples: usize,
    pub oracle: bool,
    pub upper_bound: bool,
}

/// Sweeps the SNR grid for a sparse Rademacher instance, reporting the
/// FP-derivative sign, the overlap lower bound, and (when feasible) the
/// cumulant upper bound and the exact oracle, then locates the two
/// crossings.
pub fn equivalence_sweep(
    n: usize,
    k: usize,
    r: u32,
    degree: u32,
    lambda_grid: &[f64],
    budgets: SweepBudgets,
    rng_state: RngState,
) -> Result<EquivalenceReport> {
    let prior = PriorModel::SparseRademacherTensor { n, k, r };
    prior.validate()?;
    let dist = exact_pmf_sparse_rademacher(n, k, r)?;
    let speed = SpeedFunction::TensorStep { r };
    let d_level = degree as f64;
    let q_d = quantile(&dist, d_level)?.value;
    let log2n = (n as f64).ln().powi(2);
    let q_d_log2n = quantile(&dist, d_level * log2n)?.value;

    let mut rows = Vec::with_capacity(lambda_grid.len());
    for (i, &lambda) in lambda_grid.iter().enumerate() {
        let der = fp_derivative_at_quantile(&dist, lambda, d_level, Some(speed))?;
        let lb = corr_lower_bound_overlap(
            &prior,
            lambda,
            degree,
            budgets.mc_samples,
            rng_state.substream(i as u64),
        )?;
        let ub = if budgets.upper_bound {
            crate::cumulants::sw_corr_upper_bound(&prior, lambda, degree).ok()
        } else {
            None
        };
        let oracle = if budgets.oracle && r == 1 {
            exact_corr_and_mmse_product(&prior, lambda, degree)
                .ok()
                .map(|o| o.corr_sq_total)
        } else {
            None
        };
        rows.push(EquivalenceRow {
            lambda,
            fp_hard: der.is_hard(),
            fp_total: der.total,
            q_d,
            q_d_log2n,
            lower_bound_corr_sq: lb.lower_bound.map(|b| b * b),
            lower_bound_stderr: lb.lower_bound_stderr,
            upper_bound_corr_sq: ub,
            oracle_corr_sq: oracle,
        });
    }

    // lambda* is exact: fp_part = -Delta log P - lambda crosses zero at
    let der0 = fp_derivative_at_quantile(&dist, 0.0, d_level, Some(speed))?;
    let lambda_star = if der0.total > 0.0 { Some(der0.total) } else { None };

    // lambda_dagger by bisection on the monotone oracle curve
    let lambda_dagger = if budgets.oracle && r == 1 {
        bisect_crossing(
            |lam| {
                exact_corr_and_mmse_product(&prior, lam, degree)
                    .map(|o| o.corr_sq_total - q_d)
                    .unwrap_or(f64::NAN)
            },
            1e-6,
            1e6,
        )
    } else {
        None
    };

    let sandwich_ok = rows.iter().all(|row| {
        match (row.lower_bound_corr_sq, row.upper_bound_corr_sq) {
            (Some(lb), Some(ub)) => {
                lb <= ub + 3.0 * row.lower_bound_stderr.unwrap_or(0.0).max(1e-12) * 2.0 * lb.sqrt().max(1.0)
            }
            _ => true,
        }
    });

    // log-log fit of q(t) ~ b t^kappa over the benchmark window
    let (fitted_kappa, fitted_b) = {
        let t_max = (d_level * log2n).max(2.0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..24 {
            let t = 1.0 + (t_max - 1.0) * i as f64 / 23.0;
            let q = quantile(&dist, t)?.value;
            if q > 0.0 {
                xs.push(t.ln());
                ys.push(q.ln());
            }
        }
        linear_fit(&xs, &ys)
    };
    let easy_side_c = lambda_star.and_then(|star| {
        rows.iter()
            .filter(|row| row.lambda >= 4.0 * star)
            .filter_map(|row| {
                row.lower_bound_corr_sq
                    .map(|lb| lb * d_level.powf(2.0 * fitted_kappa) / q_d.max(f64::MIN_POSITIVE))
            })
            .reduce(f64::min)
    });
    let hard_side_ok = match lambda_star {
        None => true,
        Some(star) => rows
            .iter()
            .filter(|row| row.lambda <= star / 4.0)
            .all(|row| match row.lower_bound_corr_sq {
                Some(lb) => lb <= q_d_log2n,
                None => true,
            }),
    };

    Ok(EquivalenceReport {
        model: format!("sparse_rademacher_tensor(n={n},k={k},r={r})"),
        degree,
        rows,
        lambda_star,
        lambda_dagger,
        sandwich_ok,
        fitted_kappa,
        fitted_b,
        easy_side_c,
        hard_side_ok,
    })
}

/// Least-squares slope and intercept (returned as `(slope, exp(intercept))`).
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, (my - slope * mx).exp())
}

/// Bisection for a sign change of an increasing function.
fn bisect_crossing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if !(flo < 0.0 && fhi > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm.is_nan() {
            return None;
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    Some((lo * hi).sqrt())
}

/// Per-lambda verdict of the counterexample run.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleRow {
    pub lambda: f64,
    /// `F_ann(q) - F_ann(0)` on the exact truncated PMF.
    pub annealed_diff: f64,
    /// Monte-Carlo `F(q) - F(0)` with its standard error.
    pub quenched_diff: f64,
    pub quenched_stderr: f64,
    /// Squared overlap lower bound on `Corr^2` and the benchmark `q(D)`.
    pub lower_bound_corr_sq: Option<f64>,
    pub lower_bound_stderr: Option<f64>,
    pub q_d: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub n: usize,
    pub k: usize,
    pub q_prime: u32,
    pub degree: u32,
    pub rows: Vec<CounterexampleRow>,
    pub verdict: String,
}

/// The quenched-counterexample experiment: at each SNR compare the
/// annealed FP difference (exact PMF), the quenched Monte-Carlo difference
/// `F(q) - F(0)` and the estimator benchmark `Corr^2` vs `q(D)` on the
/// truncated sparse 3-tensor model.
pub fn counterexample_experiment(
    n: usize,
    k: usize,
    lambda_grid: &[f64],
    q_prime: u32,
    degree: u32,
    replicas: usize,
    m_ov: usize,
    rng_state: RngState,
) -> Result<CounterexampleReport> {
    let prior = PriorModel::TruncatedSparseTensor3 { n, k };
    prior.validate()?;
    if n > 24 || k > 5 {
        return Err(Error::budget(
            "counterexample limited to n <= 24, k <= 5".to_string(),
        ));
    }
    let pmf = exact_pmf_truncated3(n, k)?;
    let q = (q_prime as f64).powi(3);
    let d_level = degree as f64;
    let q_d = quantile(&pmf, d_level)?.value;

    let diffs = quenched_fp_diff(&prior, lambda_grid, q_prime, replicas, rng_state)?;

    let mut rows = Vec::with_capacity(lambda_grid.len());
    for (i, &lambda) in lambda_grid.iter().enumerate() {
        let ann_q = crate::fp::annealed_fp(&pmf, lambda, q)?;
        let ann_0 = crate::fp::annealed_fp(&pmf, lambda, 0.0)?;
        let quenched_diff = diffs[i].diff;
        let quenched_stderr = diffs[i].stderr;
        let lb = if m_ov >= 1000 {
            corr_lower_bound_overlap(&prior, lambda, degree, m_ov, rng_state.substream(1000 + i as u64)).ok()
        } else {
            None
        };
        rows.push(CounterexampleRow {
            lambda,
            annealed_diff: ann_q - ann_0,
            quenched_diff,
            quenched_stderr,
            lower_bound_corr_sq: lb.as_ref().and_then(|b| b.lower_bound).map(|b| b * b),
            lower_bound_stderr: lb.as_ref().and_then(|b| b.lower_bound_stderr),
            q_d,
        });
    }

    // verdict: does a lambda exist where the annealed potential has turned
    // decreasing (diff < 0) while the quenched difference stays positive
    // with margin > 3 stderr?
    let witness = rows
        .iter()
        .find(|r| r.annealed_diff < 0.0 && r.quenched_diff > 3.0 * r.quenched_stderr);
    let verdict = match witness {
        Some(r) => format!(
            "annealed decreasing but quenched increasing at lambda = {} \
             (annealed diff {:.4}, quenched diff {:.4} +- {:.4})",
            r.lambda, r.annealed_diff, r.quenched_diff, r.quenched_stderr
        ),
        None => "no SNR in the grid separates the two potentials".to_string(),
    };
    Ok(CounterexampleReport {
        n,
        k,
        q_prime,
        degree,
        rows,
        verdict,
    })
}

/// Experiment manifest written next to every data file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub model: serde_json::Value,
    pub seed: u64,
    pub budgets: serde_json::Value,
    pub version: String,
}

impl Manifest {
    pub fn new(
        experiment: &str,
        model: serde_json::Value,
        seed: u64,
        budgets: serde_json::Value,
    ) -> Self {
        Manifest {
            experiment: experiment.to_string(),
            model,
            seed,
            budgets,
            version: format!("fpld-{}", env!("CARGO_PKG_VERSION")),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization")
    }

    /// Hex content hash of the manifest, used as the file-name stem.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Writes `manifest` and named data files into `dir` under hash-derived
/// names; returns the written paths.
pub fn write_experiment(
    dir: &std::path::Path,
    manifest: &Manifest,
    files: &[(&str, String)],
) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}-{}", manifest.experiment, manifest.content_hash());
    let mut written = Vec::new();
    let mpath = dir.join(format!("{stem}.manifest.json"));
    std::fs::write(&mpath, manifest.to_json())?;
    written.push(mpath);
    for (name, content) in files {
        let path = dir.join(format!("{stem}.{name}"));
        std::fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}

/// CSV of an equivalence report.
pub fn equivalence_to_csv(rep: &EquivalenceReport) -> String {
    let mut out = String::from(
        "lambda,fp_hard,fp_total,q_d,q_d_log2n,lower_bound_corr_sq,lower_bound_stderr,upper_bound_corr_sq,oracle_corr_sq\n",
    );
    for r in &rep.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.lambda,
            r.fp_hard,
            r.fp_total,
            r.q_d,
            r.q_d_log2n,
            opt(r.lower_bound_corr_sq),
            opt(r.lower_bound_stderr),
            opt(r.upper_bound_corr_sq),
            opt(r.oracle_corr_sq),
        ));
    }
    out
}

/// CSV of scaling rows.
pub fn scaling_to_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("model,size,d_level,quantile,predicted_scale,ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model, r.size, r.d_level, r.quantile, r.predicted_scale, r.ratio
        ));
    }
    out
}

/// CSV of counterexample rows.
pub fn counterexample_to_csv(rep: &CounterexampleReport) -> String {
    let mut out = String::from(
        "lambda,annealed_diff,quenched_diff,quenched_stderr,lower_bound_corr_sq,lower_bound_stderr,q_d\n",
    );
    for r in &rep.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.lambda,
            r.annealed_diff,
            r.quenched_diff,
            r.quenched_stderr,
            opt(r.lower_bound_corr_sq),
            opt(r.lower_bound_stderr),
            r.q_d
        ));
    }
    out
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule_examples() {
        assert_eq!(diag_threshold(&[5.0], 2.0).unwrap(), vec![1]);
        assert_eq!(
            diag_threshold(&[-3.0, 0.5, 4.0], 2.0).unwrap(),
            vec![-1, 0, 1]
        );
        // non-strict at the threshold
        assert_eq!(diag_threshold(&[2.0], 2.0).unwrap(), vec![1]);
        assert!(diag_threshold(&[1.0], 0.0).is_err());
    }

    #[test]
    fn threshold_trials_no_signal_always_fails() {
        let t = run_threshold_trials(50, 3, 0.0, 200, None, RngState::from_seed(1)).unwrap();
        assert!(
            t.failures as f64 / t.trials as f64 > 0.9,
            "failure rate {} at lambda = 0",
            t.failures as f64 / t.trials as f64
        );
        assert!(!t.snr_in_regime);
    }

    #[test]
    fn threshold_trials_strong_signal_succeeds() {
        let n = 200;
        let lambda = 2.0 * (6.0 * (n as f64).ln()).sqrt();
        let t = run_threshold_trials(n, 5, lambda, 400, None, RngState::from_seed(2)).unwrap();
        assert!(t.snr_in_regime);
        let freq = t.failures as f64 / t.trials as f64;
        let se = (freq.max(1e-9) * (1.0 - freq) / t.trials as f64).sqrt();
        assert!(
            freq <= t.analytic_bound + 3.0 * se + 1e-9,
            "failure frequency {freq} vs bound {}",
            t.analytic_bound
        );
    }

    #[test]
    fn threshold_failure_rate_nonincreasing_in_lambda() {
        let n = 60;
        let mut prev = f64::INFINITY;
        for &lambda in &[0.0, 2.0, 5.0, 12.0] {
            let t = run_threshold_trials(n, 4, lambda, 400, None, RngState::from_seed(3)).unwrap();
            let freq = t.failures as f64 / t.trials as f64;
            assert!(
                freq <= prev + 0.05,
                "failure rate increased: {freq} after {prev} at lambda {lambda}"
            );
            prev = freq;
        }
    }

    #[test]
    fn analytic_bound_value_at_reference_sizes() {
        let t = run_threshold_trials(500, 10, 30.0, 1, None, RngState::from_seed(4)).unwrap();
        let nf = 500.0f64;
        let want = 2.0 * nf.powi(-2) + 40.0 * nf.powi(-3) + 40.0 * nf.powi(-27);
        assert!((t.analytic_bound - want).abs() < 1e-18);
        assert!((t.tau - (6.0 * nf.ln()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scaling_bands_within_factor_four() {
        // gaussian tensor across two sizes
        let rows = quantile_scaling_experiment(
            &ScalingModel::GaussianTensor { r: 2 },
            &[50, 100],
            &[1.0, 4.0, 9.0],
            0,
            RngState::from_seed(5),
        )
        .unwrap();
        assert!(scaling_band(&rows) < 4.0, "gaussian band {}", scaling_band(&rows));

        let rows = quantile_scaling_experiment(
            &ScalingModel::SparseRademacherDense { beta: 0.7, r: 1 },
            &[3000, 10_000],
            &[2.0, 6.0, 12.0],
            0,
            RngState::from_seed(6),
        )
        .unwrap();
        assert!(scaling_band(&rows) < 4.0, "dense band {}", scaling_band(&rows));

        let rows = quantile_scaling_experiment(
            &ScalingModel::SparseRademacherSparse { beta: 0.3, r: 1 },
            &[1000, 10_000],
            &[1.0, 2.0, 3.0],
            0,
            RngState::from_seed(7),
        )
        .unwrap();
        // grouped by multiplier of log n rather than D itself
        let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            ratios.last().unwrap() / ratios.first().unwrap() < 4.0,
            "sparse band {:?}",
            ratios
        );

        let rows = quantile_scaling_experiment(
            &ScalingModel::Clustering,
            &[60, 120],
            &[1.0, 2.0, 4.0],
            60_000,
            RngState::from_seed(8),
        )
        .unwrap();
        assert!(
            scaling_band(&rows) < 4.0,
            "clustering band {}",
            scaling_band(&rows)
        );
    }

    #[test]
    fn equivalence_smoke_small() {
        let grid: Vec<f64> = (0..8).map(|i| 0.2 * 1.7f64.powi(i)).collect();
        let rep = equivalence_sweep(
            50,
            7,
            1,
            2,
            &grid,
            SweepBudgets {
                mc_samples: 5000,
                oracle: true,
                upper_bound: true,
            },
            RngState::from_seed(9),
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 8);
        let star = rep.lambda_star.unwrap();
        let dagger = rep.lambda_dagger.unwrap();
        assert!(star > 0.0 && dagger > 0.0);
        let ratio = (star / dagger).max(dagger / star);
        assert!(ratio < 8.0, "crossings {star} vs {dagger} (ratio {ratio})");
        assert!(rep.sandwich_ok);
        // at tiny lambda the correlation is below the benchmark
        let first = &rep.rows[0];
        if let Some(lb) = first.lower_bound_corr_sq {
            assert!(lb <= first.q_d_log2n);
        }
        let csv = equivalence_to_csv(&rep);
        assert!(csv.lines().count() == 9);
    }

    #[test]
    fn counterexample_tiny_instance() {
        let grid = [0.05, 0.3];
        let rep = counterexample_experiment(
            10,
            3,
            &grid,
            2,
            3,
            24,
            0,
            RngState::from_seed(10),
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 2);
        // at lambda = 0+ both differences are positive (entropy gap)
        assert!(rep.rows[0].annealed_diff > 0.0);
        assert!(rep.rows[0].quenched_diff > 0.0);
        // Jensen direction: quenched diff >= annealed diff - 3 stderr
        for r in &rep.rows {
            assert!(
                r.quenched_diff >= r.annealed_diff - 3.0 * r.quenched_stderr,
                "lambda {}: quenched {} vs annealed {}",
                r.lambda,
                r.quenched_diff,
                r.annealed_diff
            );
        }
        let csv = counterexample_to_csv(&rep);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn manifest_hash_and_write() {
        let m = Manifest::new(
            "quantiles",
            serde_json::json!({"kind": "sparse_rademacher_tensor", "params": {"n": 5, "k": 2, "r": 1}}),
            42,
            serde_json::json!({"mc_samples": 1000}),
        );
        let h1 = m.content_hash();
        let h2 = m.content_hash();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 16);
        let dir = std::env::temp_dir().join("fpld-manifest-test");
        let _ = std::fs::remove_dir_all(&dir);
        let files = write_experiment(&dir, &m, &[("data.csv", "a,b\n1,2\n".to_string())]).unwrap();
        assert_eq!(files.len(), 2);
        for f in &files {
            assert!(f.exists());
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
