//! Hermite-polynomial machinery and the explicit degree-D estimator built
//! from it: truncated Hermite weights `W(Y|X)`, the reference-set estimator
//! `p(Y)`, truncated exponentials, and the overlap-only lower bound on the
//! degree-D correlation that never materializes the ambient space.

use crate::multi_index::{enumerate_up_to_degree, MultiIndex};
use crate::priors::{sample_signal_with, GamInstance, PriorModel, SignalSample};
use crate::rng::RngState;
use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// `exp_{<=D}(x) = sum_{k=0}^D x^k / k!` by ascending compensated
/// summation.
pub fn truncated_exp(x: f64, degree: u32) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut c = 0.0f64;
    for k in 1..=degree {
        term *= x / k as f64;
        let y = term - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Probabilists' Hermite polynomial `h_k(z)` via the three-term recurrence
/// `h_{k+1}(z) = z h_k(z) - k h_{k-1}(z)`.
pub fn hermite_univariate(k: u32, z: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => z,
        _ => {
            let mut hm = 1.0;
            let mut h = z;
            for j in 1..k {
                let next = z * h - j as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

/// Multivariate Hermite `H_alpha(y) = prod_j h_{alpha_j}(y_j)`.
pub fn hermite(alpha: &MultiIndex, y: &[f64]) -> f64 {
    debug_assert_eq!(alpha.len(), y.len());
    let mut acc = 1.0;
    for (j, &e) in alpha.exps().iter().enumerate() {
        if e > 0 {
            acc *= hermite_univariate(e, y[j]);
        }
    }
    acc
}

/// Hermite evaluations capped at a maximum degree, with per-coordinate
/// recurrence workspace reuse.
pub struct HermiteEvaluator {
    pub max_degree: u32,
}

impl HermiteEvaluator {
    pub fn new(max_degree: u32) -> Self {
        HermiteEvaluator { max_degree }
    }

    /// Values `h_0(z)..h_cap(z)` in one recurrence sweep.
    pub fn all_orders(&self, z: f64) -> Vec<f64> {
        let cap = self.max_degree as usize;
        let mut out = Vec::with_capacity(cap + 1);
        out.push(1.0);
        if cap >= 1 {
            out.push(z);
        }
        for k in 1..cap {
            let next = z * out[k] - k as f64 * out[k - 1];
            out.push(next);
        }
        out
    }
}

/// The truncated Hermite weight
/// `W(Y|X) = sum_{|alpha| <= D} X^alpha H_alpha(Y) / alpha!`,
/// enumerated only over multi-indices supported on nonzero coordinates of
/// `x`.
pub fn weight_w(y: &[f64], x: &[f64], degree: u32) -> Result<f64> {
    if y.len() != x.len() {
        return Err(Error::validation("dimension mismatch in weight".to_string()));
    }
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    let s = support.len();
    let count = crate::multi_index::binomial_big(s as u32 + degree, degree);
    if count > num_bigint::BigUint::from(1_000_000u64) {
        return Err(Error::budget(format!(
            "weight enumeration C({s}+{degree},{degree}) exceeds 1e6"
        )));
    }
    // precompute Hermite values on the support
    let eval = HermiteEvaluator::new(degree);
    let h_vals: Vec<Vec<f64>> = support.iter().map(|&i| eval.all_orders(y[i])).collect();
    let x_pows: Vec<Vec<f64>> = support
        .iter()
        .map(|&i| {
            (0..=degree)
                .map(|e| x[i].powi(e as i32))
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for alpha in enumerate_up_to_degree(s, degree) {
        let mut term = 1.0 / alpha.factorial_f64();
        for (j, &e) in alpha.exps().iter().enumerate() {
            if e > 0 {
                term *= x_pows[j][e as usize] * h_vals[j][e as usize];
            }
        }
        let yk = term - c;
        let t = sum + yk;
        c = (t - sum) - yk;
        sum = t;
    }
    Ok(sum)
}

/// A reference set of prior draws with its generating seed.
pub struct ReferenceSet {
    pub samples: Vec<SignalSample>,
    pub seed: u64,
}

/// Default reference-set size.
pub const DEFAULT_REFERENCE_SIZE: usize = 2048;

impl ReferenceSet {
    pub fn generate(prior: &PriorModel, m: usize, rng_state: RngState) -> Result<Self> {
        if m == 0 {
            return Err(Error::validation("reference set requires M >= 1".to_string()));
        }
        let mut rng = rng_state.rng();
        let samples = (0..m).map(|_| sample_signal_with(prior, &mut rng)).collect();
        Ok(ReferenceSet {
            samples,
            seed: rng_state.seed(),
        })
    }
}

/// The materialized degree-D estimator
/// `p(y) = (1/M) sum_k W(y | sqrt(l) X_k) sqrt(l) X_k`.
pub fn materialized_estimator(
    gam: &GamInstance,
    refset: &ReferenceSet,
    y: &[f64],
    degree: u32,
) -> Result<Vec<f64>> {
    let dim = gam.ambient_dim();
    if dim > 50 || degree > 4 {
        return Err(Error::budget(
            "materialized estimator limited to ambient_dim <= 50, D <= 4".to_string(),
        ));
    }
    if y.len() != dim {
        return Err(Error::validation("observation dimension mismatch".to_string()));
    }
    let sqrt_l = gam.snr.sqrt();
    let m = refset.samples.len() as f64;
    let mut p = vec![0.0; dim];
    for xk in &refset.samples {
        let flat = xk.flat();
        let scaled: Vec<f64> = flat.iter().map(|&v| sqrt_l * v).collect();
        let w = weight_w(y, &scaled, degree)?;
        for (pi, &xi) in p.iter_mut().zip(&scaled) {
            *pi += w * xi / m;
        }
    }
    Ok(p)
}

/// Monte-Carlo estimate of the correlation lower bound
/// `Corr >= E[A exp_{<=D}(l A)] / (2 sqrt(E[S exp_{<=3D}(l S)]))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrBoundEstimate {
    pub lambda: f64,
    pub degree: u32,
    pub m_ov: usize,
    pub numerator: f64,
    pub numerator_stderr: f64,
    pub denominator: f64,
    pub denominator_stderr: f64,
    /// Plug-in ratio; `None` when the denominator estimate is not positive.
    pub lower_bound: Option<f64>,
    /// Delta-method standard error of the ratio.
    pub lower_bound_stderr: Option<f64>,
    /// Jackknife (block-deleted) ratio estimate.
    pub lower_bound_jackknife: Option<f64>,
    /// Samples whose tilt exceeded the safe floating-point range.
    pub overflow_samples: usize,
}

pub fn corr_lower_bound_overlap(
    prior: &PriorModel,
    lambda: f64,
    degree: u32,
    m_ov: usize,
    rng_state: RngState,
) -> Result<CorrBoundEstimate> {
    if m_ov < 1000 {
        return Err(Error::validation(
            "correlation lower bound requires M_ov >= 1000".to_string(),
        ));
    }
    let prior_cl = prior.clone();
    let pair: Vec<f64> = crate::rng::parallel_chunks(
        rng_state.substream(1),
        m_ov,
        8192,
        move |st, m| {
            let mut rng = st.rng();
            (0..m)
                .map(|_| {
                    let x = sample_signal_with(&prior_cl, &mut rng);
                    let y = sample_signal_with(&prior_cl, &mut rng);
                    x.overlap(&y)
                })
                .collect()
        },
    );
    let prior_cl = prior.clone();
    let triple: Vec<f64> = crate::rng::parallel_chunks(
        rng_state.substream(2),
        m_ov,
        8192,
        move |st, m| {
            let mut rng = st.rng();
            (0..m)
                .map(|_| {
                    let x = sample_signal_with(&prior_cl, &mut rng);
                    let x1 = sample_signal_with(&prior_cl, &mut rng);
                    let x2 = sample_signal_with(&prior_cl, &mut rng);
                    x1.overlap(&x2).abs() + x.overlap(&x1).abs() + x.overlap(&x2).abs()
                })
                .collect()
        },
    );

    let mut overflow = 0usize;
    let mut f_num = Vec::with_capacity(m_ov);
    for &a in &pair {
        if (lambda * a).abs() > 700.0 {
            overflow += 1;
        }
        f_num.push(a * truncated_exp(lambda * a, degree));
    }
    let mut f_den = Vec::with_capacity(m_ov);
    for &s in &triple {
        if (lambda * s).abs() > 700.0 {
            overflow += 1;
        }
        f_den.push(s * truncated_exp(lambda * s, 3 * degree));
    }
    let (num, num_se) = mean_stderr(&f_num);
    let (den, den_se) = mean_stderr(&f_den);

    let (lower_bound, lb_se, lb_jack) = if den > 0.0 {
        let r = num / (2.0 * den.sqrt());
        // delta method: dR/dN = 1/(2 sqrt(D)); dR/dD = -N/(4 D^(3/2))
        let var = num_se.powi(2) / (4.0 * den)
            + num.powi(2) * den_se.powi(2) / (16.0 * den.powi(3));
        // block jackknife with 50 blocks
        let blocks = 50usize.min(m_ov);
        let bs = m_ov / blocks;
        let mut jack_acc = 0.0;
        let total_num: f64 = f_num.iter().sum();
        let total_den: f64 = f_den.iter().sum();
        for b in 0..blocks {
            let (lo, hi) = (b * bs, if b == blocks - 1 { m_ov } else { (b + 1) * bs });
            let bn: f64 = f_num[lo..hi].iter().sum();
            let bd: f64 = f_den[lo..hi].iter().sum();
            let n_out = (total_num - bn) / (m_ov - (hi - lo)) as f64;
            let d_out = (total_den - bd) / (m_ov - (hi - lo)) as f64;
            if d_out > 0.0 {
                jack_acc += n_out / (2.0 * d_out.sqrt());
            } else {
                jack_acc += r;
            }
        }
        let jack = blocks as f64 * r - (blocks as f64 - 1.0) * (jack_acc / blocks as f64);
        (Some(r), Some(var.sqrt()), Some(jack))
    } else {
        (None, None, None)
    };

    Ok(CorrBoundEstimate {
        lambda,
        degree,
        m_ov,
        numerator: num,
        numerator_stderr: num_se,
        denominator: den,
        denominator_stderr: den_se,
        lower_bound,
        lower_bound_stderr: lb_se,
        lower_bound_jackknife: lb_jack,
        overflow_samples: overflow,
    })
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Observed truncation gap against the analytic error bound
/// `e^{q(C D)} ||V||_{D+2}^{D+2} / (D+1)! + e^{-C D/2} sum_k ||V||_{2k+2}^{k+1} / k!`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub gap: f64,
    pub analytic_bound: f64,
    pub mc_stderr: f64,
    pub quantile_used: f64,
}

/// `|E[V exp_{<=D}(V)] - E[V e^V 1_{|V| <= q(C_t D)}]|` with `V` given by
/// `lambda_scale * samples`; norms come from `exact_abs_moment` when
/// provided (e.g. closed-form Gaussian moments), otherwise from the sample.
pub fn exp_truncation_gap(
    samples: &[f64],
    lambda_scale: f64,
    degree: u32,
    c_t: f64,
    exact_abs_moment: Option<&dyn Fn(u32) -> f64>,
) -> Result<GapEstimate> {
    if samples.len() < 2 {
        return Err(Error::validation("need at least two samples".to_string()));
    }
    let v: Vec<f64> = samples.iter().map(|&s| lambda_scale * s).collect();
    let m = v.len() as f64;
    // empirical quantile of |V| at level C_t * D
    let mut abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let level = 1.0 - (-c_t * degree as f64).exp();
    let idx = ((level * m).ceil() as usize).clamp(1, v.len());
    let q = abs[idx - 1];

    let f1: Vec<f64> = v.iter().map(|&x| x * truncated_exp(x, degree)).collect();
    let f2: Vec<f64> = v
        .iter()
        .map(|&x| if x.abs() <= q { x * x.exp() } else { 0.0 })
        .collect();
    let diff: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
    let (gap_mean, gap_se) = mean_stderr(&diff);

    let norm_p = |p: u32| -> f64 {
        match exact_abs_moment {
            Some(f) => f(p).powf(1.0 / p as f64),
            None => {
                let mp = v.iter().map(|&x| x.abs().powi(p as i32)).sum::<f64>() / m;
                mp.powf(1.0 / p as f64)
            }
        }
    };
    let d = degree as f64;
    let term1 = q.exp() * norm_p(degree + 2).powi(degree as i32 + 2)
        / (ln_gamma(d + 2.0)).exp();
    let mut term2 = 0.0;
    for k in 0..=degree {
        term2 += norm_p(2 * k + 2).powi(k as i32 + 1) / (ln_gamma(k as f64 + 1.0)).exp();
    }
    term2 *= (-c_t * d / 2.0).exp();
    Ok(GapEstimate {
        gap: gap_mean.abs(),
        analytic_bound: term1 + term2,
        mc_stderr: gap_se,
        quantile_used: q,
    })
}

/// Binomial coefficient over multi-indices restricted to `r <= min(a, b)`,
/// used by the shifted-product identity checks.
pub fn shifted_product_expectation(alpha: &MultiIndex, beta: &MultiIndex, mu: &[f64]) -> f64 {
    // E[H_alpha(mu + Z) H_beta(mu + Z)]
    //   = sum_{r <= min(alpha,beta)} r! C(alpha,r) C(beta,r) mu^{alpha+beta-2r}
    let min_ab = MultiIndex::new(
        alpha
            .exps()
            .iter()
            .zip(beta.exps())
            .map(|(&a, &b)| a.min(b))
            .collect(),
    );
    let mut acc = 0.0;
    for r in min_ab.sub_indices() {
        let coeff = r.factorial_f64() * alpha.binomial_f64(&r) * beta.binomial_f64(&r);
        let expo = alpha.add(beta).sub(&r).sub(&r);
        acc += coeff * expo.monomial(mu);
    }
    acc
}
