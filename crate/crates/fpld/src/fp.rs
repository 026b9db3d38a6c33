//! The annealed Franz-Parisi potential through the identity
//! `lambda q + F(q) = -log P(<X,X'> = q)`, its (discrete) derivative at
//! overlap quantiles, and a desk-scale Monte-Carlo quenched FP evaluator
//! for the truncated sparse 3-tensor model.

use crate::overlap::{
    discrete_log_pmf_diff, quantile, DensityFamily, OverlapDistribution, SpeedFunction,
};
use crate::priors::{sample_signal_with, Latent, PriorModel};
use crate::rng::{standard_normal, RngState};
use crate::specfun;
use crate::{Error, Result};
use rayon::prelude::*;

/// `F_ann,lambda(q) = -lambda q - log P(q)` via the identity route.
pub fn annealed_fp(dist: &OverlapDistribution, lambda: f64, q: f64) -> Result<f64> {
    Ok(-lambda * q - log_mass_or_density(dist, q)?)
}

/// Definition route: `-log E[1_{overlap=q} e^{lambda overlap}]`, evaluated
/// as the tilted mass in linear space where possible. Used to cross-check
/// [`annealed_fp`] through a different floating-point path.
pub fn annealed_fp_tilted(dist: &OverlapDistribution, lambda: f64, q: f64) -> Result<f64> {
    let lp = log_mass_or_density(dist, q)?;
    let tilted_ln = lp + lambda * q;
    if tilted_ln.abs() < 700.0 && lp > -700.0 && (lambda * q).abs() < 700.0 {
        Ok(-(lp.exp() * (lambda * q).exp()).ln())
    } else {
        Ok(-tilted_ln)
    }
}

fn log_mass_or_density(dist: &OverlapDistribution, q: f64) -> Result<f64> {
    match dist {
        OverlapDistribution::ExactPmf { .. } => dist.log_prob(q),
        OverlapDistribution::AnalyticDensity {
            family: DensityFamily::GaussianInnerProduct { d },
            tensor_order,
        } => ln_overlap_density_gaussian(*d, *tensor_order, q),
        OverlapDistribution::Empirical { .. } => Err(Error::validation(
            "annealed FP needs an exact PMF or analytic density".to_string(),
        )),
    }
}

/// Log density of the overlap `S^r` where `S = <v, v'>` is the base
/// Gaussian inner product in dimension `d`.
fn ln_overlap_density_gaussian(d: usize, r: u32, q: f64) -> Result<f64> {
    if r == 1 {
        return specfun::ln_inner_product_density(d, q);
    }
    if q == 0.0 {
        return Err(Error::domain("overlap density singular at 0".to_string()));
    }
    let t = q.abs().powf(1.0 / r as f64);
    // change of variables s = t^r; both branches +-t map to s for even r
    let branches = if r % 2 == 0 { 2.0f64 } else { 1.0 };
    let jac = (t.powi(1 - (r as i32)) / r as f64).ln();
    Ok(specfun::ln_inner_product_density(d, t)? + jac + branches.ln())
}

/// `d/dq log f(q)` of the overlap density at `q = t^r > 0`.
fn overlap_log_density_derivative_gaussian(d: usize, r: u32, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::domain(
            "overlap log-density derivative requires q > 0".to_string(),
        ));
    }
    let t = q.powf(1.0 / r as f64);
    let base = specfun::log_density_derivative_gaussian_overlap(d, t)?;
    let rf = r as f64;
    Ok(base * t.powi(1 - (r as i32)) / rf + (1.0 / rf - 1.0) / q)
}

/// `lambda + dF/dq` (or the discrete difference) at `q = q(D)`, with the
/// sign of the FP-derivative alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpDerivative {
    /// The evaluation point `q(D)`.
    pub q_at_level: f64,
    /// `lambda + dF/dq = -(d/dq) log P` at `q(D)`.
    pub total: f64,
    /// `dF/dq` alone; nonnegative means "hard" in the monotonicity picture.
    pub fp_part: f64,
}

impl FpDerivative {
    pub fn is_hard(&self) -> bool {
        self.fp_part >= 0.0
    }
}

/// Evaluates `lambda + dF/dq` at the overlap quantile `q(D)`.
///
/// Discrete distributions require a speed function; analytic densities use
/// the exact Bessel derivative.
pub fn fp_derivative_at_quantile(
    dist: &OverlapDistribution,
    lambda: f64,
    d_level: f64,
    speed: Option<SpeedFunction>,
) -> Result<FpDerivative> {
    let q = quantile(dist, d_level)?.value;
    let minus_dlogp = match dist {
        OverlapDistribution::ExactPmf { .. } => {
            let sp = speed.ok_or_else(|| {
                Error::validation("discrete FP derivative requires a speed function".to_string())
            })?;
            -discrete_log_pmf_diff(dist, q, sp)?
        }
        OverlapDistribution::AnalyticDensity {
            family: DensityFamily::GaussianInnerProduct { d },
            tensor_order,
        } => -overlap_log_density_derivative_gaussian(*d, *tensor_order, q)?,
        OverlapDistribution::Empirical { .. } => {
            return Err(Error::validation(
                "FP derivative needs an exact PMF or analytic density".to_string(),
            ))
        }
    };
    Ok(FpDerivative {
        q_at_level: q,
        total: minus_dlogp,
        fp_part: minus_dlogp - lambda,
    })
}

/// One sampled point of an annealed FP curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpPoint {
    pub q: f64,
    pub f_ann: f64,
    /// `dF/dq` (continuous) or the discrete difference (exact PMFs).
    pub derivative_or_diff: f64,
    /// Sign of `lambda + dF/dq` at this point.
    pub total_sign: i8,
}

/// The annealed FP potential sampled over the overlap support.
#[derive(Debug, Clone)]
pub struct FpCurve {
    pub snr: f64,
    pub points: Vec<FpPoint>,
}

/// Builds the FP curve on all positive-mass atoms up to `q(d_max)`
/// (discrete) or on `n_points` log-spaced density points (continuous).
pub fn fp_curve(
    dist: &OverlapDistribution,
    lambda: f64,
    d_max: f64,
    n_points: usize,
) -> Result<FpCurve> {
    let mut points = Vec::new();
    match dist {
        OverlapDistribution::ExactPmf { atoms } => {
            let q_top = quantile(dist, d_max)?.value;
            let speed = SpeedFunction::NearestAtom;
            for &(q, lp) in atoms.iter() {
                if q < 0.0 || q > q_top || lp == f64::NEG_INFINITY {
                    continue;
                }
                let f_ann = annealed_fp(dist, lambda, q)?;
                match discrete_log_pmf_diff(dist, q, speed) {
                    Ok(dlogp) => {
                        let total = -dlogp;
                        points.push(FpPoint {
                            q,
                            f_ann,
                            derivative_or_diff: total - lambda,
                            total_sign: sign_of(total),
                        });
                    }
                    Err(_) => continue, // top atom has no successor
                }
            }
        }
        OverlapDistribution::AnalyticDensity {
            family: DensityFamily::GaussianInnerProduct { d },
            tensor_order,
        } => {
            let q_top = quantile(dist, d_max)?.value;
            let q_bot = q_top * 1e-4;
            let count = n_points.max(2);
            for i in 0..count {
                let q = q_bot * (q_top / q_bot).powf(i as f64 / (count - 1) as f64);
                let f_ann = annealed_fp(dist, lambda, q)?;
                let total = -overlap_log_density_derivative_gaussian(*d, *tensor_order, q)?;
                points.push(FpPoint {
                    q,
                    f_ann,
                    derivative_or_diff: total - lambda,
                    total_sign: sign_of(total),
                });
            }
        }
        OverlapDistribution::Empirical { .. } => {
            return Err(Error::validation(
                "FP curve needs an exact PMF or analytic density".to_string(),
            ))
        }
    }
    Ok(FpCurve {
        snr: lambda,
        points,
    })
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// CSV export of an FP curve: `(q, F_ann, derivative_or_diff, sign)`.
pub fn fp_curve_to_csv(curve: &FpCurve) -> String {
    let mut out = String::from("q,f_ann,derivative_or_diff,sign\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{}\n",
            p.q, p.f_ann, p.derivative_or_diff, p.total_sign
        ));
    }
    out
}

/// Monte-Carlo estimate of the quenched FP potential at one overlap class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchedEstimate {
    /// The overlap grid point `q = (q')^3`.
    pub q: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub outer_replicas: usize,
    /// Number of inner terms enumerated per replica.
    pub inner_terms: u64,
}

const QUENCHED_MAX_N: usize = 24;
const QUENCHED_MAX_K: usize = 5;

/// Quenched FP evaluator: outer Monte-Carlo over `(v, Z)`, exact inner
/// enumeration over `v'` in the truncated support with `<v, v'> = q'`.
///
/// The inner weight is the likelihood-ratio tilting
/// `exp(lambda <x, x'> + sqrt(lambda) <Z, x'> - lambda ||x'||^2 / 2)`
/// with `x' = vec(v'^{x3})`, so that Jensen's inequality against the
/// annealed potential holds exactly and the shift common to all classes
/// cancels in differences `F(q) - F(0)`.
pub fn quenched_fp_mc(
    prior: &PriorModel,
    lambda: f64,
    q_prime: u32,
    outer_replicas: usize,
    rng_state: RngState,
) -> Result<QuenchedEstimate> {
    let sweep = quenched_fp_sweep(prior, &[lambda], &[q_prime], outer_replicas, rng_state)?;
    Ok(sweep[0][0])
}

/// Shared-enumeration sweep across SNR values and overlap classes:
/// result is indexed `[lambda][q_prime]`.
pub fn quenched_fp_sweep(
    prior: &PriorModel,
    lambdas: &[f64],
    q_primes: &[u32],
    outer_replicas: usize,
    rng_state: RngState,
) -> Result<Vec<Vec<QuenchedEstimate>>> {
    let (n, k) = match prior {
        PriorModel::TruncatedSparseTensor3 { n, k } => (*n, *k),
        _ => {
            return Err(Error::validation(
                "quenched FP is implemented for the truncated sparse 3-tensor prior".to_string(),
            ))
        }
    };
    if n > QUENCHED_MAX_N || k > QUENCHED_MAX_K {
        return Err(Error::budget(format!(
            "quenched enumeration limited to n <= {QUENCHED_MAX_N}, k <= {QUENCHED_MAX_K}"
        )));
    }
    if outer_replicas == 0 {
        return Err(Error::validation(
            "need at least one outer replica".to_string(),
        ));
    }
    let targets: Vec<i64> = q_primes.iter().map(|&q| q as i64).collect();

    let results: Vec<(Vec<Vec<f64>>, u64)> = (0..outer_replicas)
        .into_par_iter()
        .map(|rep| {
            let st = rng_state.substream(rep as u64);
            let mut rng = st.rng();
            let v = match sample_signal_with(prior, &mut rng).latent {
                Latent::Signs(v) => v,
                _ => unreachable!(),
            };
            let z: Vec<f64> = (0..n * n * n).map(|_| standard_normal(&mut rng)).collect();
            inner_log_partition(n, k, &v, &z, lambdas, &targets)
        })
        .collect();

    let inner_terms = results[0].1;
    for (lam_idx, _) in lambdas.iter().enumerate() {
        for (t_idx, &t) in targets.iter().enumerate() {
            for (r, (lnz, _)) in results.iter().enumerate() {
                if lnz[lam_idx][t_idx] == f64::NEG_INFINITY {
                    return Err(Error::domain(format!(
                        "empty overlap class q' = {t} in replica {r}"
                    )));
                }
            }
        }
    }

    let mut out = Vec::with_capacity(lambdas.len());
    for lam_idx in 0..lambdas.len() {
        let mut row = Vec::with_capacity(targets.len());
        for (t_idx, &t) in targets.iter().enumerate() {
            let vals: Vec<f64> = results
                .iter()
                .map(|(lnz, _)| -lnz[lam_idx][t_idx])
                .collect();
            let mean = pairwise_sum(&vals) / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len().max(2) - 1) as f64;
            row.push(QuenchedEstimate {
                q: (t as f64).powi(3),
                estimate: mean,
                stderr: (var / vals.len() as f64).sqrt(),
                outer_replicas,
                inner_terms,
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Paired Monte-Carlo estimate of `F(q) - F(0)`: the inner partition
/// functions of both classes share each replica's `(v, Z)`, so the
/// common-disorder fluctuations cancel in the per-replica difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchedDiff {
    pub lambda: f64,
    pub q: f64,
    pub diff: f64,
    pub stderr: f64,
    pub outer_replicas: usize,
}

pub fn quenched_fp_diff(
    prior: &PriorModel,
    lambdas: &[f64],
    q_prime: u32,
    outer_replicas: usize,
    rng_state: RngState,
) -> Result<Vec<QuenchedDiff>> {
    let (n, k) = match prior {
        PriorModel::TruncatedSparseTensor3 { n, k } => (*n, *k),
        _ => {
            return Err(Error::validation(
                "quenched FP is implemented for the truncated sparse 3-tensor prior".to_string(),
            ))
        }
    };
    if n > QUENCHED_MAX_N || k > QUENCHED_MAX_K {
        return Err(Error::budget(format!(
            "quenched enumeration limited to n <= {QUENCHED_MAX_N}, k <= {QUENCHED_MAX_K}"
        )));
    }
    let targets = [q_prime as i64, 0i64];
    let results: Vec<Vec<Vec<f64>>> = (0..outer_replicas)
        .into_par_iter()
        .map(|rep| {
            let st = rng_state.substream(rep as u64);
            let mut rng = st.rng();
            let v = match sample_signal_with(prior, &mut rng).latent {
                Latent::Signs(v) => v,
                _ => unreachable!(),
            };
            let z: Vec<f64> = (0..n * n * n).map(|_| standard_normal(&mut rng)).collect();
            inner_log_partition(n, k, &v, &z, lambdas, &targets).0
        })
        .collect();
    let mut out = Vec::with_capacity(lambdas.len());
    for (lam_idx, &lambda) in lambdas.iter().enumerate() {
        let diffs: Vec<f64> = results
            .iter()
            .map(|lnz| {
                // F(q) - F(0) contribution: (-lnZ_q) - (-lnZ_0)
                -lnz[lam_idx][0] + lnz[lam_idx][1]
            })
            .collect();
        if diffs.iter().any(|d| !d.is_finite()) {
            return Err(Error::domain(format!(
                "empty overlap class q' = {q_prime} in some replica"
            )));
        }
        let mean = pairwise_sum(&diffs) / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>()
            / (diffs.len().max(2) - 1) as f64;
        out.push(QuenchedDiff {
            lambda,
            q: (q_prime as f64).powi(3),
            diff: mean,
            stderr: (var / diffs.len() as f64).sqrt(),
            outer_replicas,
        });
    }
    Ok(out)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Streaming log-sum-exp accumulator.
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
    fn push(&mut self, term: f64) {
        if term == f64::NEG_INFINITY {
            return;
        }
        if term <= self.max {
            self.sum += (term - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - term).exp() + 1.0;
            self.max = term;
        }
    }
    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Exact inner sum over `v'` in the truncated support, bucketed by the
/// overlap class, for every requested lambda in one enumeration pass.
fn inner_log_partition(
    n: usize,
    k: usize,
    v: &[i8],
    z: &[f64],
    lambdas: &[f64],
    targets: &[i64],
) -> (Vec<Vec<f64>>, u64) {
    let band_lo = k.div_ceil(2);
    let band_hi = (2 * k).min(n);
    let rho = k as f64 / n as f64;
    let ln_rho_half = (rho / 2.0).ln();
    let ln_one_minus = (1.0 - rho).ln();
    let mut trunc_terms = Vec::new();
    for m in 0..=n {
        if !(band_lo..=band_hi).contains(&m) {
            trunc_terms.push(
                crate::overlap::ln_binom(n, m)
                    + (m as f64) * rho.ln()
                    + ((n - m) as f64) * ln_one_minus,
            );
        }
    }
    let ln_trunc = crate::overlap::log_sum_exp(trunc_terms);

    let supp_v: Vec<usize> = (0..n).filter(|&i| v[i] != 0).collect();
    let off_v: Vec<usize> = (0..n).filter(|&i| v[i] == 0).collect();
    let kv = supp_v.len();

    let mut accs: Vec<Vec<LogSumExp>> = (0..lambdas.len())
        .map(|_| (0..targets.len()).map(|_| LogSumExp::new()).collect())
        .collect();

    let mut terms: u64 = 0;
    let mut idx: Vec<usize> = Vec::with_capacity(band_hi);
    let mut sgn: Vec<f64> = Vec::with_capacity(band_hi);
    let mut zt: Vec<f64> = Vec::new();
    let mut wj: Vec<f64> = Vec::new();

    for b in 0..=kv.min(band_hi) {
        // the T1 block's signed sum has parity b and magnitude at most b
        let reachable = targets
            .iter()
            .any(|t| t.unsigned_abs() as usize <= b && (b as i64 - t).rem_euclid(2) == 0);
        if !reachable {
            continue;
        }
        let mut comb1 = Combinations::new(kv, b);
        while let Some(sel1) = comb1.next() {
            let sel1 = sel1.to_vec();
            for m2 in 0..=(band_hi - b).min(off_v.len()) {
                let m = b + m2;
                if !(band_lo..=band_hi).contains(&m) {
                    continue;
                }
                let ln_prior = (m as f64) * ln_rho_half + ((n - m) as f64) * ln_one_minus;
                let m3 = (m as f64).powi(3);
                let mut comb2 = Combinations::new(off_v.len(), m2);
                while let Some(sel2) = comb2.next() {
                    idx.clear();
                    for &a in &sel1 {
                        idx.push(supp_v[a]);
                    }
                    for &a in sel2 {
                        idx.push(off_v[a]);
                    }
                    restrict_tensor(z, n, &idx, &mut zt);
                    // symmetrized slices for O(m^2) Gray-code sign updates
                    build_flip_slices(&zt, m, &mut wj);
                    sgn.clear();
                    sgn.resize(m, 1.0);
                    let mut g = cubic_form_restricted(&zt, &sgn);
                    let mut t: i64 = sel1.iter().map(|&a| v[supp_v[a]] as i64).sum();
                    let visit = |t: i64, g: f64, terms: &mut u64, accs: &mut Vec<Vec<LogSumExp>>| {
                        if let Some(t_idx) = targets.iter().position(|&tt| tt == t) {
                            *terms += 1;
                            for (lam_i, &lam) in lambdas.iter().enumerate() {
                                let term = ln_prior + lam.sqrt() * g - lam * m3 / 2.0;
                                accs[lam_i][t_idx].push(term);
                            }
                        }
                    };
                    visit(t, g, &mut terms, &mut accs);
                    for i in 1u32..(1 << m) {
                        let j = i.trailing_zeros() as usize;
                        // odd-in-j part of the cubic form under the current signs
                        let mut c1 = 0.0;
                        for a in 0..m {
                            if a == j {
                                continue;
                            }
                            let base = (j * m + a) * m;
                            let mut inner = 0.0;
                            for bb in 0..m {
                                if bb == j {
                                    continue;
                                }
                                inner += wj[base + bb] * sgn[bb];
                            }
                            c1 += sgn[a] * inner;
                        }
                        let zjjj = zt[(j * m + j) * m + j];
                        g -= 2.0 * sgn[j] * (c1 + zjjj);
                        if j < b {
                            t -= 2 * (sgn[j] as i64) * v[supp_v[sel1[j]]] as i64;
                        }
                        sgn[j] = -sgn[j];
                        visit(t, g, &mut terms, &mut accs);
                    }
                }
            }
        }
    }

    // the truncation atom v' = 1_[k]
    let t0: i64 = (0..k).map(|i| v[i] as i64).sum();
    if let Some(t_idx) = targets.iter().position(|&tt| tt == t0) {
        terms += 1;
        let idx0: Vec<usize> = (0..k).collect();
        let sgn0 = vec![1.0; k];
        let g = cubic_form(z, n, &idx0, &sgn0);
        let m3 = (k as f64).powi(3);
        for (lam_i, &lam) in lambdas.iter().enumerate() {
            let term = ln_trunc + lam.sqrt() * g - lam * m3 / 2.0;
            accs[lam_i][t_idx].push(term);
        }
    }

    let out = accs
        .iter()
        .enumerate()
        .map(|(lam_i, row)| {
            row.iter()
                .enumerate()
                .map(|(t_idx, a)| {
                    // class-constant tilt lambda * t^3
                    let t = targets[t_idx] as f64;
                    a.value() + lambdas[lam_i] * t.powi(3)
                })
                .collect()
        })
        .collect();
    (out, terms)
}

fn cubic_form(z: &[f64], n: usize, idx: &[usize], s: &[f64]) -> f64 {
    let m = idx.len();
    let mut acc = 0.0;
    for a in 0..m {
        let ia = idx[a] * n;
        for b in 0..m {
            let iab = (ia + idx[b]) * n;
            let sab = s[a] * s[b];
            let mut inner = 0.0;
            for c in 0..m {
                inner += z[iab + idx[c]] * s[c];
            }
            acc += sab * inner;
        }
    }
    acc
}

/// Copies the support-restricted slice `z[T x T x T]` into a contiguous
/// buffer so repeated sign sweeps stay in cache.
fn restrict_tensor(z: &[f64], n: usize, idx: &[usize], buf: &mut Vec<f64>) {
    let m = idx.len();
    buf.clear();
    buf.reserve(m * m * m);
    for &a in idx {
        let ia = a * n;
        for &b in idx {
            let iab = (ia + b) * n;
            for &c in idx {
                buf.push(z[iab + c]);
            }
        }
    }
}

/// Symmetrized flip slices W_j[a*m+b] = ZT[j,a,b] + ZT[a,j,b] + ZT[a,b,j].
fn build_flip_slices(zt: &[f64], m: usize, wj: &mut Vec<f64>) {
    wj.clear();
    wj.resize(m * m * m, 0.0);
    for j in 0..m {
        for a in 0..m {
            for b in 0..m {
                wj[(j * m + a) * m + b] =
                    zt[(j * m + a) * m + b] + zt[(a * m + j) * m + b] + zt[(a * m + b) * m + j];
            }
        }
    }
}

fn cubic_form_restricted(zt: &[f64], s: &[f64]) -> f64 {
    let m = s.len();
    let mut acc = 0.0;
    let mut pos = 0;
    for a in 0..m {
        let sa = s[a];
        for b in 0..m {
            let sab = sa * s[b];
            let mut inner = 0.0;
            for &sc in s.iter() {
                inner += zt[pos] * sc;
                pos += 1;
            }
            acc += sab * inner;
        }
    }
    acc
}

/// Lexicographic k-combinations of `0..n`.
struct Combinations {
    n: usize,
    k: usize,
    state: Vec<usize>,
    started: bool,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            k,
            state: (0..k).collect(),
            started: false,
            done: k > n,
        }
    }

    fn next(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.state);
        }
        if self.k == 0 {
            self.done = true;
            return None;
        }
        let mut i = self.k;
        loop {
            if i == 0 {
                self.done = true;
                return None;
            }
            i -= 1;
            if self.state[i] != i + self.n - self.k {
                break;
            }
        }
        self.state[i] += 1;
        for j in i + 1..self.k {
            self.state[j] = self.state[j - 1] + 1;
        }
        Some(&self.state)
    }
}

/// Exact maximum of `<vec(v'^{x3}), Z>` over the complete candidate set
/// `{v' in S_{n,m} : <v, v'> = q'}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCurveEstimate {
    pub q_prime: i64,
    pub m: usize,
    pub max_value: f64,
    pub candidates: u64,
}

pub fn gamma_max(v: &[i8], z: &[f64], q_prime: i64, m: usize) -> Result<GammaCurveEstimate> {
    let n = v.len();
    if z.len() != n * n * n {
        return Err(Error::validation(
            "noise tensor must have n^3 entries".to_string(),
        ));
    }
    let budget = crate::multi_index::binomial_big(n as u32, m as u32)
        * num_bigint::BigUint::from(2u32).pow(m as u32);
    if budget > num_bigint::BigUint::from(100_000_000u64) {
        return Err(Error::budget(format!(
            "C({n},{m}) 2^{m} exceeds the 1e8 enumeration budget"
        )));
    }
    let supp_v: Vec<usize> = (0..n).filter(|&i| v[i] != 0).collect();
    let off_v: Vec<usize> = (0..n).filter(|&i| v[i] == 0).collect();
    let kv = supp_v.len();

    let mut best = f64::NEG_INFINITY;
    let mut count: u64 = 0;
    let mut idx: Vec<usize> = Vec::with_capacity(m);
    let mut sgn: Vec<f64> = Vec::with_capacity(m);
    for b in 0..=kv.min(m) {
        let m2 = m - b;
        if m2 > off_v.len() {
            continue;
        }
        let mut comb1 = Combinations::new(kv, b);
        while let Some(sel1) = comb1.next() {
            let sel1 = sel1.to_vec();
            let mut comb2 = Combinations::new(off_v.len(), m2);
            while let Some(sel2) = comb2.next() {
                idx.clear();
                for &a in &sel1 {
                    idx.push(supp_v[a]);
                }
                for &a in sel2 {
                    idx.push(off_v[a]);
                }
                for mask in 0..(1u32 << m) {
                    let mut t = 0i64;
                    for (j, &a) in sel1.iter().enumerate() {
                        let s = if mask & (1 << j) != 0 { -1i64 } else { 1 };
                        t += s * v[supp_v[a]] as i64;
                    }
                    if t != q_prime {
                        continue;
                    }
                    count += 1;
                    sgn.clear();
                    for j in 0..m {
                        sgn.push(if mask & (1 << j) != 0 { -1.0 } else { 1.0 });
                    }
                    let g = cubic_form(z, n, &idx, &sgn);
                    if g > best {
                        best = g;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::domain(format!(
            "no m-sparse candidate with overlap {q_prime}"
        )));
    }
    Ok(GammaCurveEstimate {
        q_prime,
        m,
        max_value: best,
        candidates: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::exact_pmf_sparse_rademacher;

    #[test]
    fn identity_invariant_on_exact_pmfs() {
        for &(n, k, r) in &[(10usize, 3usize, 1u32), (40, 6, 3), (100, 20, 2)] {
            let dist = exact_pmf_sparse_rademacher(n, k, r).unwrap();
            for &lambda in &[0.1, 1.0, 10.0] {
                for &(q, lp) in dist.atoms().unwrap() {
                    if lp == f64::NEG_INFINITY {
                        continue;
                    }
                    let f = annealed_fp(&dist, lambda, q).unwrap();
                    let resid = (lambda * q + f + lp).abs();
                    assert!(
                        resid < 1e-10,
                        "identity residual {resid} at (n,k,r)=({n},{k},{r}), lambda={lambda}, q={q}"
                    );
                }
            }
        }
    }

    #[test]
    fn lambda_zero_reduces_to_neg_log_prob() {
        let dist = exact_pmf_sparse_rademacher(12, 4, 1).unwrap();
        let q = 2.0;
        let f = annealed_fp(&dist, 0.0, q).unwrap();
        assert_eq!(f, -dist.log_prob(q).unwrap());
    }

    #[test]
    fn two_atom_law_closed_form() {
        let dist = OverlapDistribution::exact_from_probs(vec![(0.0, 0.75), (1.0, 0.25)]).unwrap();
        let f = annealed_fp(&dist, 1.0, 1.0).unwrap();
        let want = 4.0f64.ln() - 1.0;
        assert!((f - want).abs() < 1e-14, "{f} vs {want}");
    }

    #[test]
    fn tilted_and_identity_routes_agree() {
        let dist = exact_pmf_sparse_rademacher(40, 6, 3).unwrap();
        for &(q, lp) in dist.atoms().unwrap() {
            if lp == f64::NEG_INFINITY || lp < -600.0 {
                continue;
            }
            let a = annealed_fp(&dist, 1.0, q).unwrap();
            let b = annealed_fp_tilted(&dist, 1.0, q).unwrap();
            assert!(
                (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                "routes disagree at q={q}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn zero_mass_point_errors() {
        let dist = OverlapDistribution::exact_from_probs(vec![(0.0, 0.75), (1.0, 0.25)]).unwrap();
        assert!(annealed_fp(&dist, 1.0, 0.5).is_err());
    }

    #[test]
    fn derivative_boundary_sign() {
        // lambda exactly equal to -Delta log P at q(D) makes fp_part = 0
        let dist = exact_pmf_sparse_rademacher(50, 7, 1).unwrap();
        let d = 3.0;
        let der =
            fp_derivative_at_quantile(&dist, 0.0, d, Some(SpeedFunction::TensorStep { r: 1 }))
                .unwrap();
        let lambda_star = der.total;
        let der2 = fp_derivative_at_quantile(
            &dist,
            lambda_star,
            d,
            Some(SpeedFunction::TensorStep { r: 1 }),
        )
        .unwrap();
        assert!(der2.fp_part.abs() < 1e-12);
        assert!(der2.is_hard());
        let der3 = fp_derivative_at_quantile(
            &dist,
            lambda_star + 0.1,
            d,
            Some(SpeedFunction::TensorStep { r: 1 }),
        )
        .unwrap();
        assert!(!der3.is_hard());
    }

    #[test]
    fn derivative_scaling_sparse_small_beta_band() {
        // -Delta log P at q(D) scale-tracks (log n)^r / D^(r-1) across sizes
        let r = 3u32;
        let mut ratios = Vec::new();
        for &n in &[1000usize, 10_000] {
            let k = (n as f64).powf(0.3).round() as usize;
            let d = 2.0 * (n as f64).ln();
            let dist = exact_pmf_sparse_rademacher(n, k, r).unwrap();
            let der =
                fp_derivative_at_quantile(&dist, 0.0, d, Some(SpeedFunction::TensorStep { r }))
                    .unwrap();
            let predicted = (n as f64).ln().powi(r as i32) / d.powi(r as i32 - 1);
            ratios.push(der.total / predicted);
        }
        let band = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(band < 2.0, "scaling band {band} too wide: {ratios:?}");
    }

    #[test]
    fn derivative_scaling_gaussian_tensor_across_n() {
        // lambda + dF/dq at q(D) tracks n^{-r/2} across n at fixed D
        let r = 2u32;
        let d_level = 4.0;
        let mut scaled = Vec::new();
        for &n in &[100usize, 400] {
            let dist = OverlapDistribution::AnalyticDensity {
                family: DensityFamily::GaussianInnerProduct { d: n },
                tensor_order: r,
            };
            let der = fp_derivative_at_quantile(&dist, 0.0, d_level, None).unwrap();
            scaled.push(der.total * (n as f64).powf(r as f64 / 2.0));
        }
        let band = scaled[0].max(scaled[1]) / scaled[0].min(scaled[1]);
        assert!(band < 2.0, "n-scaling band {band}: {scaled:?}");
    }

    #[test]
    fn continuous_derivative_matches_finite_difference() {
        // lambda + dF/dq equals -d/dq log f computed independently by
        // finite differences on the Bessel-analytic overlap density
        let d = 30usize;
        let r = 2u32;
        let dist = OverlapDistribution::AnalyticDensity {
            family: DensityFamily::GaussianInnerProduct { d },
            tensor_order: r,
        };
        let q = 80.0;
        let total = -overlap_log_density_derivative_gaussian(d, r, q).unwrap();
        let h = 1e-4;
        let fd = -(ln_overlap_density_gaussian(d, r, q + h).unwrap()
            - ln_overlap_density_gaussian(d, r, q - h).unwrap())
            / (2.0 * h);
        assert!(
            (total - fd).abs() < 1e-6,
            "analytic {total} vs finite difference {fd}"
        );
        let _ = &dist;
    }

    #[test]
    fn fp_curve_identity_and_export() {
        let dist = exact_pmf_sparse_rademacher(30, 6, 1).unwrap();
        let curve = fp_curve(&dist, 1.0, 8.0, 0).unwrap();
        assert!(!curve.points.is_empty());
        for p in &curve.points {
            let lp = dist.log_prob(p.q).unwrap();
            assert!((curve.snr * p.q + p.f_ann + lp).abs() < 1e-10);
        }
        let csv = fp_curve_to_csv(&curve);
        assert!(csv.starts_with("q,f_ann,derivative_or_diff,sign\n"));
        assert_eq!(csv.lines().count(), curve.points.len() + 1);
    }

    #[test]
    fn sign_classification_invariant_under_rescaling() {
        let dist = exact_pmf_sparse_rademacher(30, 6, 1).unwrap();
        let atoms = dist.atoms().unwrap().to_vec();
        let scaled = OverlapDistribution::exact_from_log_atoms(
            atoms.iter().map(|&(a, lp)| (3.0 * a, lp)).collect(),
        )
        .unwrap();
        for &(q, lp) in &atoms {
            if lp == f64::NEG_INFINITY || q < 0.0 {
                continue;
            }
            let d1 = discrete_log_pmf_diff(&dist, q, SpeedFunction::NearestAtom);
            let d2 = discrete_log_pmf_diff(&scaled, 3.0 * q, SpeedFunction::NearestAtom);
            if let (Ok(a), Ok(b)) = (d1, d2) {
                assert_eq!(sign_of(a), sign_of(b), "sign flip under rescaling at {q}");
            }
        }
    }

    #[test]
    fn quenched_lambda_zero_matches_conditional_pmf() {
        // F_0(q) = -E_v log P_{v'}(<v,v'> = q')
        let n = 10;
        let k = 3;
        let prior = PriorModel::TruncatedSparseTensor3 { n, k };
        let reps = 40;
        let est = quenched_fp_mc(&prior, 0.0, 1, reps, RngState::from_seed(7)).unwrap();
        let mut acc = 0.0;
        for rep in 0..reps {
            let st = RngState::from_seed(7).substream(rep as u64);
            let mut rng = st.rng();
            let v = match sample_signal_with(&prior, &mut rng).latent {
                Latent::Signs(v) => v,
                _ => unreachable!(),
            };
            let support = crate::priors::enumerate_support(&prior, 1 << 22).unwrap();
            let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let flat_v = crate::priors::tensor_flatten(&vf, 3);
            let mass: f64 = support
                .iter()
                .filter(|(fa, _)| {
                    let ov: f64 = fa.iter().zip(&flat_v).map(|(x, y)| x * y).sum();
                    (ov - 1.0).abs() < 0.5
                })
                .map(|(_, p)| p)
                .sum();
            acc += -mass.ln();
        }
        let want = acc / reps as f64;
        assert!(
            (est.estimate - want).abs() < 1e-9,
            "quenched at lambda=0: {} vs direct {want}",
            est.estimate
        );
    }

    #[test]
    fn quenched_empty_class_errors() {
        // q' = 7 is unreachable when every admissible v' has at most
        // 4 support coordinates in common with v
        let prior = PriorModel::TruncatedSparseTensor3 { n: 8, k: 2 };
        let err = quenched_fp_mc(&prior, 0.5, 7, 4, RngState::from_seed(3));
        assert!(err.is_err());
    }

    #[test]
    fn quenched_jensen_direction_vs_annealed() {
        let n = 12;
        let k = 3;
        let prior = PriorModel::TruncatedSparseTensor3 { n, k };
        let pmf = crate::overlap::exact_pmf_truncated3(n, k).unwrap();
        let lambda = 0.3;
        for q_prime in [0u32, 1, 2] {
            let est = quenched_fp_mc(&prior, lambda, q_prime, 48, RngState::from_seed(11)).unwrap();
            let q = (q_prime as f64).powi(3);
            let ann = annealed_fp(&pmf, lambda, q).unwrap();
            assert!(
                est.estimate >= ann - 3.0 * est.stderr,
                "Jensen violated at q'={q_prime}: quenched {} vs annealed {ann} (3se {})",
                est.estimate,
                3.0 * est.stderr
            );
        }
    }

    #[test]
    fn gamma_zero_noise_and_m1_reduction() {
        let n = 12;
        let k = 3;
        let _ = k;
        let mut v = vec![0i8; n];
        v[0] = 1;
        v[1] = -1;
        v[2] = 1;
        let z0 = vec![0.0; n * n * n];
        let g = gamma_max(&v, &z0, 0, 4).unwrap();
        assert_eq!(g.max_value, 0.0);
        // m = 1, q' = 0: candidates are +-e_j for j outside supp(v)
        let mut rng = RngState::from_seed(5).rng();
        let z: Vec<f64> = (0..n * n * n).map(|_| standard_normal(&mut rng)).collect();
        let g = gamma_max(&v, &z, 0, 1).unwrap();
        let want = (3..n)
            .map(|j| z[(j * n + j) * n + j].abs())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(g.max_value, want);
        assert_eq!(g.candidates, 2 * (n as u64 - 3));
    }

    #[test]
    fn gamma_lower_bound_frequency() {
        // Gamma(0, m) >= sqrt(m^3) sqrt(2 log C(n,m) - log(m log(n/m)) - A)
        // with high frequency at n = 20, m = 4, A = 6
        let n = 20;
        let k = 4;
        let m = 4;
        let a_n = 6.0;
        let prior = PriorModel::TruncatedSparseTensor3 { n, k };
        let mut hits = 0;
        let trials = 20;
        for trial in 0..trials {
            let st = RngState::from_seed(800 + trial);
            let mut rng = st.rng();
            let v = match sample_signal_with(&prior, &mut rng).latent {
                Latent::Signs(v) => v,
                _ => unreachable!(),
            };
            let z: Vec<f64> = (0..n * n * n).map(|_| standard_normal(&mut rng)).collect();
            let g = gamma_max(&v, &z, 0, m).unwrap();
            let ln_count = crate::overlap::ln_binom(n, m);
            let inner = 2.0 * ln_count - ((m as f64) * ((n as f64) / m as f64).ln()).ln() - a_n;
            let threshold = ((m as f64).powi(3)).sqrt() * inner.max(0.0).sqrt();
            if g.max_value >= threshold {
                hits += 1;
            }
        }
        assert!(
            hits >= trials / 2,
            "only {hits}/{trials} trials met the Gamma lower bound"
        );
    }

    #[test]
    fn gamma_budget_guard() {
        let v = vec![0i8; 40];
        let z = vec![0.0; 64_000];
        assert!(gamma_max(&v, &z, 0, 20).is_err());
    }
}
