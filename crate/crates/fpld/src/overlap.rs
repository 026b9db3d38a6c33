//! Distribution of the overlap `<X, X'>` of two independent prior draws:
//! exact PMFs for discrete priors, the Bessel density for Gaussian tensors,
//! Monte-Carlo samples otherwise; plus the quantile function `q(D)` and the
//! discrete derivative machinery over the overlap support.

use crate::priors::{sample_signal_with, PriorModel};
use crate::rng::{parallel_chunks, RngState};
use crate::specfun;
use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Families with an analytic overlap density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityFamily {
    /// `<G, H>` of independent standard Gaussians in dimension `d`
    /// (the base overlap of the Gaussian tensor prior).
    GaussianInnerProduct { d: usize },
}

/// Distribution of the overlap, in one of three modes.
#[derive(Debug, Clone)]
pub enum OverlapDistribution {
    /// Sorted atoms with log-probabilities.
    ExactPmf { atoms: Vec<(f64, f64)> },
    /// Closed-form density of the base overlap, overlap = base^tensor_order.
    AnalyticDensity {
        family: DensityFamily,
        tensor_order: u32,
    },
    /// Sorted i.i.d. samples, plus their sorted absolute values for
    /// constant-time quantile lookups.
    Empirical {
        samples: Vec<f64>,
        abs_sorted: Vec<f64>,
    },
}

/// A quantile query answer; `saturated` marks requests beyond the
/// resolution of an empirical sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileValue {
    pub value: f64,
    pub saturated: bool,
}

impl OverlapDistribution {
    /// Exact PMF constructor; atoms need not be sorted, probabilities are
    /// given in log scale and must sum to one.
    pub fn exact_from_log_atoms(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total = log_sum_exp(atoms.iter().map(|a| a.1));
        if total.abs() > 1e-12 {
            return Err(Error::validation(format!(
                "exact PMF not normalized: sum of probabilities deviates by {:e}",
                total.exp_m1()
            )));
        }
        Ok(OverlapDistribution::ExactPmf { atoms })
    }

    /// Convenience constructor from linear probabilities.
    pub fn exact_from_probs(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::exact_from_log_atoms(atoms.into_iter().map(|(a, p)| (a, p.ln())).collect())
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match self {
            OverlapDistribution::ExactPmf { atoms } => Some(atoms),
            _ => None,
        }
    }

    /// `log P(overlap = q)` for an exact PMF.
    pub fn log_prob(&self, q: f64) -> Result<f64> {
        let atoms = self
            .atoms()
            .ok_or_else(|| Error::validation("log_prob requires an exact PMF".to_string()))?;
        match lookup_atom(atoms, q) {
            Some(lp) if lp > f64::NEG_INFINITY => Ok(lp),
            _ => Err(Error::domain(format!("atom {q} carries zero mass"))),
        }
    }

    /// Number of backing samples, for empirical mode.
    pub fn sample_count(&self) -> Option<usize> {
        match self {
            OverlapDistribution::Empirical { samples, .. } => Some(samples.len()),
            _ => None,
        }
    }
}

pub(crate) fn empirical_from_samples(mut samples: Vec<f64>) -> OverlapDistribution {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut abs_sorted: Vec<f64> = samples.iter().map(|s| s.abs()).collect();
    abs_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    OverlapDistribution::Empirical {
        samples,
        abs_sorted,
    }
}

fn lookup_atom(atoms: &[(f64, f64)], q: f64) -> Option<f64> {
    let idx = atoms.partition_point(|a| a.0 < q - 1e-9);
    if idx < atoms.len() && (atoms[idx].0 - q).abs() <= 1e-9 {
        Some(atoms[idx].1)
    } else {
        None
    }
}

pub(crate) fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Exact PMF of the tensor overlap of two sparse Rademacher draws.
///
/// The base overlap `S = sum_i v_i v_i'` is a sum of n i.i.d. variables in
/// `{-1, 0, 1}` with `P(+-1) = p/2`, `p = (k/n)^2`, computed through the
/// binomial-mixture representation `P(S=s) = sum_t P(T=t) P(A_t=s)` in log
/// space; atoms are then mapped `s -> s^r`.
pub fn exact_pmf_sparse_rademacher(n: usize, k: usize, r: u32) -> Result<OverlapDistribution> {
    if k == 0 || k > n || r == 0 {
        return Err(Error::validation("requires 1 <= k <= n and r >= 1"));
    }
    let p = (k as f64 / n as f64).powi(2);
    let base = base_overlap_log_pmf(n, p);
    Ok(map_atoms_by_power(&base, r))
}

/// Log PMF of a sum of `n` i.i.d. `{-1, 0, 1}` variables with `P(+-1) = p/2`.
fn base_overlap_log_pmf(n: usize, p: f64) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let ln_half = -std::f64::consts::LN_2;
    let ln_pt = |t: i64| -> f64 {
        // log P(T = t), T ~ Bin(n, p)
        let tf = t as f64;
        if p >= 1.0 {
            return if t == n as i64 { 0.0 } else { f64::NEG_INFINITY };
        }
        ln_binom(n, t as usize) + tf * p.ln() + (nf - tf) * (1.0 - p).ln()
    };
    let mut out = Vec::with_capacity(2 * n + 1);
    for s in -(n as i64)..=(n as i64) {
        let mut terms = Vec::new();
        let mut t = s.unsigned_abs() as i64;
        if (t - s).rem_euclid(2) != 0 {
            t += 1;
        }
        while t <= n as i64 {
            let lp_t = ln_pt(t);
            if lp_t > f64::NEG_INFINITY {
                if t == 0 {
                    // only s = 0 reachable
                    terms.push(lp_t);
                } else {
                    let tf = t as f64;
                    let j = (tf + s as f64) / 2.0;
                    let ln_walk = ln_gamma(tf + 1.0) - ln_gamma(j + 1.0)
                        + tf * ln_half
                        - ln_gamma(tf - j + 1.0);
                    terms.push(lp_t + ln_walk);
                }
            }
            t += 2;
        }
        out.push((s as f64, log_sum_exp(terms)));
    }
    out
}

/// Maps atoms `s` of a base PMF to `s^r`, merging collisions (`+-s` for
/// even `r`) in log space.
fn map_atoms_by_power(base: &[(f64, f64)], r: u32) -> OverlapDistribution {
    use std::collections::BTreeMap;
    let mut merged: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &(s, lp) in base {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let key = (s as i64).pow(r);
        merged.entry(key).or_default().push(lp);
    }
    let atoms = merged
        .into_iter()
        .map(|(a, lps)| (a as f64, log_sum_exp(lps)))
        .collect();
    OverlapDistribution::ExactPmf { atoms }
}

/// Exact overlap PMF of the truncated sparse 3-tensor prior, via the
/// decomposition over (truncation atom / in-band support size,
/// support intersection, signed agreement); exact at any `n`.
pub fn exact_pmf_truncated3(n: usize, k: usize) -> Result<OverlapDistribution> {
    let prior = PriorModel::TruncatedSparseTensor3 { n, k };
    prior.validate()?;
    let (lo, hi) = prior.truncation_band().unwrap();
    let hi = hi.min(n);
    let rho = k as f64 / n as f64;
    let mut ln_pm = vec![f64::NEG_INFINITY; n + 1];
    let mut trunc_terms = Vec::new();
    for m in 0..=n {
        let lp = ln_binom(n, m) + (m as f64) * rho.ln() + ((n - m) as f64) * (1.0 - rho).ln();
        if (lo..=hi).contains(&m) {
            ln_pm[m] = lp;
        } else {
            trunc_terms.push(lp);
        }
    }
    let ln_trunc = log_sum_exp(trunc_terms);

    let mut per_s: Vec<Vec<f64>> = vec![Vec::new(); 2 * n + 1];
    let s_index = |s: i64| (s + n as i64) as usize;
    let ln_half = -std::f64::consts::LN_2;

    // in-band x in-band
    for m1 in lo..=hi {
        for m2 in lo..=hi {
            for b in 0..=m1.min(m2) {
                if n + b < m1 + m2 {
                    continue;
                }
                let ln_hyper = ln_binom(m1, b) + ln_binom(n - m1, m2 - b) - ln_binom(n, m2);
                let base = ln_pm[m1] + ln_pm[m2] + ln_hyper;
                if base == f64::NEG_INFINITY {
                    continue;
                }
                push_walk_terms(&mut per_s, s_index, b, base, ln_half);
            }
        }
    }
    // truncation atom x in-band (both orders)
    for m2 in lo..=hi {
        for b in 0..=m2.min(k) {
            if n + b < k + m2 {
                continue;
            }
            let ln_hyper = ln_binom(k, b) + ln_binom(n - k, m2 - b) - ln_binom(n, m2);
            let base = ln_trunc + ln_pm[m2] + ln_hyper + std::f64::consts::LN_2;
            if base == f64::NEG_INFINITY {
                continue;
            }
            push_walk_terms(&mut per_s, s_index, b, base, ln_half);
        }
    }
    // truncation atom x truncation atom: overlap = k
    per_s[s_index(k as i64)].push(2.0 * ln_trunc);

    let base: Vec<(f64, f64)> = (-(n as i64)..=(n as i64))
        .map(|s| (s as f64, log_sum_exp(per_s[s_index(s)].drain(..))))
        .collect();
    let dist = map_atoms_by_power(&base, 3);
    let total = log_sum_exp(dist.atoms().unwrap().iter().map(|a| a.1));
    if total.abs() > 1e-10 {
        return Err(Error::validation(format!(
            "truncated overlap PMF mis-normalized by {:e}",
            total.exp_m1()
        )));
    }
    Ok(dist)
}

/// Spreads `base` mass over a `b`-step Rademacher walk on the intersection.
fn push_walk_terms(
    per_s: &mut [Vec<f64>],
    s_index: impl Fn(i64) -> usize,
    b: usize,
    base: f64,
    ln_half: f64,
) {
    if b == 0 {
        per_s[s_index(0)].push(base);
        return;
    }
    for s in -(b as i64)..=(b as i64) {
        if (s + b as i64) % 2 != 0 {
            continue;
        }
        let j = ((b as i64 + s) / 2) as usize;
        let ln_walk = ln_binom(b, j) + (b as f64) * ln_half;
        per_s[s_index(s)].push(base + ln_walk);
    }
}

pub(crate) fn ln_binom(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `M_ov` i.i.d. overlap samples `<X, X'>` from independent prior pairs,
/// sorted ascending; deterministic given `rng_state`.
pub fn empirical_overlap(
    prior: &PriorModel,
    m_ov: usize,
    rng_state: RngState,
) -> Result<OverlapDistribution> {
    if m_ov < 2 {
        return Err(Error::validation("empirical overlap requires M_ov >= 2"));
    }
    let prior = prior.clone();
    let samples = parallel_chunks(rng_state, m_ov, 8192, move |st, m| {
        let mut rng = st.rng();
        (0..m)
            .map(|_| {
                let x = sample_signal_with(&prior, &mut rng);
                let y = sample_signal_with(&prior, &mut rng);
                x.overlap(&y)
            })
            .collect()
    });
    Ok(empirical_from_samples(samples))
}

/// i.i.d. samples of `S = |<X',X''>| + |<X,X'>| + |<X,X''>|` over
/// independent triples, sorted ascending.
pub fn triple_overlap_samples(
    prior: &PriorModel,
    m_ov: usize,
    rng_state: RngState,
) -> Result<OverlapDistribution> {
    if m_ov < 2 {
        return Err(Error::validation("triple overlap requires M_ov >= 2"));
    }
    let prior = prior.clone();
    let samples = parallel_chunks(rng_state, m_ov, 8192, move |st, m| {
        let mut rng = st.rng();
        (0..m)
            .map(|_| {
                let x = sample_signal_with(&prior, &mut rng);
                let x1 = sample_signal_with(&prior, &mut rng);
                let x2 = sample_signal_with(&prior, &mut rng);
                x1.overlap(&x2).abs() + x.overlap(&x1).abs() + x.overlap(&x2).abs()
            })
            .collect()
    });
    Ok(empirical_from_samples(samples))
}

/// The quantile `q(D) = inf { y : P(|A| <= y) >= 1 - exp(-D) }`.
pub fn quantile(dist: &OverlapDistribution, d_level: f64) -> Result<QuantileValue> {
    if !(d_level > 0.0) {
        return Err(Error::validation("quantile level D must be positive"));
    }
    match dist {
        OverlapDistribution::ExactPmf { atoms } => {
            let mut abs_atoms: Vec<(f64, f64)> =
                atoms.iter().map(|&(a, lp)| (a.abs(), lp)).collect();
            abs_atoms.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (a, lp) in abs_atoms {
                match merged.last_mut() {
                    Some(last) if (last.0 - a).abs() <= 1e-9 => {
                        last.1 = log_sum_exp([last.1, lp]);
                    }
                    _ => merged.push((a, lp)),
                }
            }
            // tail[i] = log P(|A| > merged[i].0), accumulated from the top
            let mut tail = vec![f64::NEG_INFINITY; merged.len()];
            for i in (0..merged.len().saturating_sub(1)).rev() {
                tail[i] = log_sum_exp([tail[i + 1], merged[i + 1].1]);
            }
            for (i, &(a, _)) in merged.iter().enumerate() {
                if tail[i] <= -d_level {
                    return Ok(QuantileValue {
                        value: a,
                        saturated: false,
                    });
                }
            }
            unreachable!("largest atom always satisfies the tail condition")
        }
        OverlapDistribution::Empirical { abs_sorted, .. } => {
            let m = abs_sorted.len();
            let level = 1.0 - (-d_level).exp();
            if (-d_level).exp() < 1.0 / m as f64 {
                return Ok(QuantileValue {
                    value: *abs_sorted.last().unwrap(),
                    saturated: true,
                });
            }
            let idx = ((level * m as f64).ceil() as usize).clamp(1, m);
            Ok(QuantileValue {
                value: abs_sorted[idx - 1],
                saturated: false,
            })
        }
        OverlapDistribution::AnalyticDensity {
            family: DensityFamily::GaussianInnerProduct { d },
            tensor_order,
        } => {
            let base = analytic_abs_quantile_gaussian(*d, d_level)?;
            Ok(QuantileValue {
                value: base.powi(*tensor_order as i32),
                saturated: false,
            })
        }
    }
}

/// Tail `P(|W| > y) = 2 int_y^inf f_d` by Simpson panels.
fn gaussian_overlap_tail(d: usize, y: f64) -> f64 {
    let mut total = 0.0;
    let mut a = y.max(1e-18);
    let upper = y + 90.0 + 6.0 * (d as f64).sqrt();
    while a < upper {
        let b = (a + (0.5 + 0.1 * a)).min(upper);
        total += simpson(
            |x| specfun::inner_product_density(d, x).unwrap_or(0.0),
            a,
            b,
            16,
        );
        a = b;
    }
    2.0 * total
}

fn analytic_abs_quantile_gaussian(d: usize, d_level: f64) -> Result<f64> {
    if d_level > 500.0 {
        return Err(Error::validation(
            "analytic quantile supported for D <= 500".to_string(),
        ));
    }
    let target = (-d_level).exp();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while gaussian_overlap_tail(d, hi) > target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::validation("analytic quantile failed to bracket"));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gaussian_overlap_tail(d, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * (1.0 + hi) {
            break;
        }
    }
    Ok(hi)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + (n % 2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += c * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Cached quantile evaluations over one distribution.
pub struct QuantileFn<'a> {
    dist: &'a OverlapDistribution,
    cache: std::sync::Mutex<std::collections::BTreeMap<u64, QuantileValue>>,
}

impl<'a> QuantileFn<'a> {
    pub fn new(dist: &'a OverlapDistribution) -> Self {
        QuantileFn {
            dist,
            cache: std::sync::Mutex::new(std::collections::BTreeMap::new()),
        }
    }

    pub fn eval(&self, d_level: f64) -> Result<QuantileValue> {
        let key = d_level.to_bits();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = quantile(self.dist, d_level)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

/// Speed functions `a_n(q) > 0` with `q + a_n(q)` in the overlap support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedFunction {
    /// Tensor default: at `q = s^r`, step to `(s+2)^r`.
    TensorStep { r: u32 },
    /// Step to the nearest strictly larger atom.
    NearestAtom,
}

impl SpeedFunction {
    /// The step `a_n(q)`; errors when `q + a_n(q)` is not a support atom.
    pub fn step(&self, dist: &OverlapDistribution, q: f64) -> Result<f64> {
        let atoms = dist
            .atoms()
            .ok_or_else(|| Error::validation("speed functions require an exact PMF".to_string()))?;
        match self {
            SpeedFunction::NearestAtom => {
                let idx = atoms.partition_point(|a| a.0 <= q + 1e-9);
                if idx >= atoms.len() {
                    return Err(Error::domain(format!(
                        "no atom above {q}; speed function undefined at the top atom"
                    )));
                }
                Ok(atoms[idx].0 - q)
            }
            SpeedFunction::TensorStep { r } => {
                let s = signed_root(q, *r)?;
                let next = (s + 2.0).powi(*r as i32);
                if lookup_atom(atoms, next).is_none() {
                    return Err(Error::domain(format!(
                        "stepped atom {next} (from base {s}) is outside the support"
                    )));
                }
                Ok(next - q)
            }
        }
    }
}

fn signed_root(q: f64, r: u32) -> Result<f64> {
    let mag = q.abs().powf(1.0 / r as f64);
    let s = (if q < 0.0 { -mag } else { mag }).round();
    if (s.powi(r as i32) - q).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "{q} is not an r-th power of an integer base (r = {r})"
        )));
    }
    Ok(s)
}

/// Discrete derivative of the log PMF:
/// `(log P(q + a) - log P(q)) / a` with `a = a_n(q)`.
pub fn discrete_log_pmf_diff(
    dist: &OverlapDistribution,
    q_atom: f64,
    speed: SpeedFunction,
) -> Result<f64> {
    let a = speed.step(dist, q_atom)?;
    let lp0 = dist.log_prob(q_atom)?;
    let lp1 = dist.log_prob(q_atom + a)?;
    Ok((lp1 - lp0) / a)
}

/// Kernel-based estimate of `d/dt log f(t)` with its reporting metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityDerivative {
    pub value: f64,
    /// Kernel bandwidth (empirical estimates only).
    pub bandwidth: Option<f64>,
    /// Finite-difference step (empirical estimates only).
    pub fd_step: Option<f64>,
    pub stderr: Option<f64>,
}

/// Families accepted by [`analytic_log_density_derivative`].
#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeFamily {
    /// Exact Bessel-ratio formula.
    GaussianInnerProduct { d: usize },
    /// Monte-Carlo kernel estimate on the clustering overlap
    /// `(sum xi xi') * (sum mu mu')`.
    ClusteringProduct {
        n: usize,
        p: usize,
        s: usize,
        m_ov: usize,
        state: RngState,
    },
}

/// `d/dt log f(t)` of the overlap density at `point != 0`.
pub fn analytic_log_density_derivative(
    family: &DerivativeFamily,
    point: f64,
) -> Result<LogDensityDerivative> {
    if point == 0.0 {
        return Err(Error::domain(
            "log-density derivative rejected at t = 0".to_string(),
        ));
    }
    match family {
        DerivativeFamily::GaussianInnerProduct { d } => {
            let v = specfun::log_density_derivative_gaussian_overlap(*d, point.abs())?;
            let value = if point > 0.0 { v } else { -v };
            Ok(LogDensityDerivative {
                value,
                bandwidth: None,
                fd_step: None,
                stderr: None,
            })
        }
        DerivativeFamily::ClusteringProduct {
            n,
            p,
            s,
            m_ov,
            state,
        } => {
            let prior = PriorModel::SparseClustering {
                n: *n,
                p: *p,
                s: *s,
                delta: 1.0,
            };
            let dist = empirical_overlap(&prior, *m_ov, *state)?;
            let samples = match &dist {
                OverlapDistribution::Empirical { samples, .. } => samples,
                _ => unreachable!(),
            };
            kernel_log_density_derivative(samples, point)
        }
    }
}

/// Gaussian-kernel log-density derivative with Silverman bandwidth and a
/// centered finite difference of step `bandwidth / 2`.
pub fn kernel_log_density_derivative(
    sorted_samples: &[f64],
    point: f64,
) -> Result<LogDensityDerivative> {
    let m = sorted_samples.len();
    if m < 100 {
        return Err(Error::validation(
            "kernel derivative needs at least 100 samples".to_string(),
        ));
    }
    let mf = m as f64;
    let mean = sorted_samples.iter().sum::<f64>() / mf;
    let var = sorted_samples
        .iter()
        .map(|&x| (x - mean).powi(2))
        .sum::<f64>()
        / (mf - 1.0);
    let iqr = sorted_samples[(0.75 * mf) as usize] - sorted_samples[(0.25 * mf) as usize];
    let spread = var.sqrt().min(iqr / 1.34).max(1e-300);
    let bandwidth = 0.9 * spread * mf.powf(-0.2);
    let fd_step = bandwidth / 2.0;

    let eval = |x: f64| -> (f64, f64) {
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        for &xi in sorted_samples {
            let kern = specfun::normal_pdf((x - xi) / bandwidth) / bandwidth;
            acc += kern;
            acc_sq += kern * kern;
        }
        let f = acc / mf;
        let varf = (acc_sq / mf - f * f).max(0.0) / mf;
        (f, varf.sqrt())
    };
    let (f_plus, se_plus) = eval(point + fd_step);
    let (f_minus, se_minus) = eval(point - fd_step);
    if f_plus <= 0.0 || f_minus <= 0.0 {
        return Err(Error::domain(
            "kernel density vanished at the evaluation point".to_string(),
        ));
    }
    let value = (f_plus.ln() - f_minus.ln()) / (2.0 * fd_step);
    let stderr =
        ((se_plus / f_plus).powi(2) + (se_minus / f_minus).powi(2)).sqrt() / (2.0 * fd_step);
    Ok(LogDensityDerivative {
        value,
        bandwidth: Some(bandwidth),
        fd_step: Some(fd_step),
        stderr: Some(stderr),
    })
}

/// CSV export of an exact PMF: `atom,log_prob` at 17 significant digits.
pub fn pmf_to_csv(dist: &OverlapDistribution) -> Result<String> {
    let atoms = dist
        .atoms()
        .ok_or_else(|| Error::validation("CSV export requires an exact PMF".to_string()))?;
    let mut out = String::from("atom,log_prob\n");
    for &(a, lp) in atoms {
        out.push_str(&format!("{:.16e},{:.16e}\n", a, lp));
    }
    Ok(out)
}

/// CSV export of a quantile curve: `D,q_of_D` at 17 significant digits.
pub fn quantile_curve_to_csv(dist: &OverlapDistribution, d_grid: &[f64]) -> Result<String> {
    let mut out = String::from("D,q_of_D\n");
    for &d in d_grid {
        let q = quantile(dist, d)?;
        out.push_str(&format!("{:.16e},{:.16e}\n", d, q.value));
    }
    Ok(out)
}
