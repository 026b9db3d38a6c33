//! Modified Bessel functions of the second kind, the density of a Gaussian
//! inner product, chi-square density utilities and local-CLT validators.
//!
//! `K_nu` is evaluated through the integral representation
//! `K_nu(x) = int_0^inf exp(-x cosh u) cosh(nu u) du` with a
//! double-exponential substitution, in log space so that very large orders
//! and very small arguments neither overflow nor underflow. For
//! `x > 30 + nu^2` the large-argument expansion takes over.

use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Evaluation route used for a `(nu, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselMethod {
    /// Double-exponential quadrature of the cosh integral.
    Integral,
    /// Large-argument asymptotic expansion.
    AsymptoticLargeX,
}

/// Method selection: the integral path is uniformly valid; the asymptotic
/// series is used only where its truncation error is far below 1e-13.
pub fn bessel_method(nu: f64, x: f64) -> BesselMethod {
    if x > 30.0 + nu * nu {
        BesselMethod::AsymptoticLargeX
    } else {
        BesselMethod::Integral
    }
}

/// `log K_nu(x)`; `nu` may be any real (uses `K_{-nu} = K_nu`), `x > 0`.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("K_nu requires x > 0, got {x}")));
    }
    let nu = nu.abs();
    if !(nu <= 5000.0) {
        return Err(Error::validation(format!(
            "order {nu} out of range [0, 5000]"
        )));
    }
    match bessel_method(nu, x) {
        BesselMethod::AsymptoticLargeX => Ok(ln_bessel_k_asymptotic(nu, x)),
        BesselMethod::Integral => Ok(ln_bessel_k_quadrature(nu, x)),
    }
}

/// `K_nu(x)` in linear scale; may overflow to `inf` for large orders at
/// small arguments, in which case the `ln_` variant is the one to use.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(ln_bessel_k(nu, x)?.exp())
}

fn ln_cosh(w: f64) -> f64 {
    let a = w.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn ln_bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    // u(t) = exp((pi/2) sinh t) maps R onto (0, inf); trapezoidal sums of
    // the transformed integrand converge double-exponentially. Large orders
    // sharpen the integrand's peak, so the step shrinks with sqrt(nu).
    const T_MIN: f64 = -7.0;
    const T_MAX: f64 = 3.5;
    let h: f64 = 0.004 / (nu / 50.0).sqrt().max(1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let n_steps = ((T_MAX - T_MIN) / h) as usize;
    let mut max_term = f64::NEG_INFINITY;
    let mut terms: Vec<f64> = Vec::with_capacity(n_steps + 1);
    for j in 0..=n_steps {
        let t = T_MIN + j as f64 * h;
        let u = (half_pi * t.sinh()).exp();
        // log of exp(-x cosh u) * cosh(nu u) * du/dt
        let ln_du = u.ln() + half_pi.ln() + t.cosh().ln();
        let ln_f = if u > 710.0 {
            f64::NEG_INFINITY
        } else {
            -x * u.cosh() + ln_cosh(nu * u) + ln_du
        };
        if ln_f > max_term {
            max_term = ln_f;
        }
        terms.push(ln_f);
    }
    if max_term == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms
        .iter()
        .map(|&t| if t == f64::NEG_INFINITY { 0.0 } else { (t - max_term).exp() })
        .sum();
    max_term + sum.ln() + h.ln()
}

fn ln_bessel_k_asymptotic(nu: f64, x: f64) -> f64 {
    // K_nu(x) ~ sqrt(pi/2x) e^{-x} sum_k a_k, a_k = prod_j (4nu^2-(2j-1)^2)/(8xj)
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let fournu2 = 4.0 * nu * nu;
    let mut prev = f64::INFINITY;
    for k in 1..=40u32 {
        let num = fournu2 - (2.0 * k as f64 - 1.0).powi(2);
        term *= num / (8.0 * x * k as f64);
        if term.abs() >= prev {
            break;
        }
        prev = term.abs();
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    0.5 * (std::f64::consts::FRAC_PI_2 / x).ln() - x + sum.ln()
}

/// Density `f_d` of `<G, H>` for independent standard Gaussians in R^d.
///
/// `f_d(x) = |x|^nu K_nu(|x|) / (sqrt(pi) Gamma(d/2) 2^(d/2 - 1/2))` with
/// `nu = d/2 - 1/2`; for `d = 1` this is `K_0(|x|)/pi`, diverging
/// logarithmically at the origin.
pub fn ln_inner_product_density(d: usize, x: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::validation("dimension must be >= 1"));
    }
    let ax = x.abs();
    let nu = d as f64 / 2.0 - 0.5;
    let df = d as f64;
    let ln_norm = 0.5 * std::f64::consts::PI.ln()
        + ln_gamma(df / 2.0)
        + (df / 2.0 - 0.5) * std::f64::consts::LN_2;
    if ax == 0.0 {
        if d == 1 {
            return Err(Error::domain(
                "f_1 has a logarithmic singularity at 0".to_string(),
            ));
        }
        // d >= 2: finite limit via x^nu K_nu(x) -> 2^(nu-1) Gamma(nu)
        return Ok((nu - 1.0) * std::f64::consts::LN_2 + ln_gamma(nu) - ln_norm);
    }
    Ok(nu * ax.ln() + ln_bessel_k(nu, ax)? - ln_norm)
}

pub fn inner_product_density(d: usize, x: f64) -> Result<f64> {
    Ok(ln_inner_product_density(d, x)?.exp())
}

/// `d/dt log f_d(t) = -K_{nu-1}(t)/K_nu(t)` for `t > 0`, `nu = (d-1)/2`.
pub fn log_density_derivative_gaussian_overlap(d: usize, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "log-density derivative requires t > 0, got {t}"
        )));
    }
    let nu = (d as f64 - 1.0) / 2.0;
    let ratio = (ln_bessel_k(nu - 1.0, t)? - ln_bessel_k(nu, t)?).exp();
    Ok(-ratio)
}

/// Exact PMF of a Rademacher sum against its local-CLT approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherLclt {
    pub exact: f64,
    pub gaussian_approx: f64,
    pub ratio: f64,
}

/// `P(S_n = s)` for `S_n` a sum of `n` symmetric signs, versus
/// `(2/sqrt(n)) phi(s/sqrt(n))`. Requires `s == n (mod 2)`, `|s| <= n`.
pub fn rademacher_pmf_and_lclt(n: u64, s: i64) -> Result<RademacherLclt> {
    if s.unsigned_abs() > n {
        return Err(Error::domain(format!("|s| = {} exceeds n = {n}", s.abs())));
    }
    if (n as i64 - s).rem_euclid(2) != 0 {
        return Err(Error::domain(format!(
            "parity violation: s = {s} with n = {n}"
        )));
    }
    let nf = n as f64;
    let j = (n as i64 + s) as f64 / 2.0;
    let ln_pmf = ln_gamma(nf + 1.0) - ln_gamma(j + 1.0) - ln_gamma(nf - j + 1.0)
        - nf * std::f64::consts::LN_2;
    let exact = ln_pmf.exp();
    let z = s as f64 / nf.sqrt();
    let gaussian_approx = 2.0 / nf.sqrt() * normal_pdf(z);
    Ok(RademacherLclt {
        exact,
        gaussian_approx,
        ratio: exact / gaussian_approx,
    })
}

pub fn normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Chi-square density `g_u(t)` for `u` degrees of freedom.
pub fn chisq_density(u: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let nu = u / 2.0;
    ((nu - 1.0) * t.ln() - t / 2.0 - nu * std::f64::consts::LN_2 - ln_gamma(nu)).exp()
}

/// Deviations of the chi-square density (and its derivative) from the
/// normal limit at the `sqrt(2u)` scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSqCltDeviation {
    /// `| sqrt(2u) g_u(u + x sqrt(2u)) - phi(x) |`
    pub density: f64,
    /// `| 2u g_u'(u + x sqrt(2u)) - phi'(x) |`
    pub derivative: f64,
}

pub fn chisq_density_clt_check(u: f64, x: f64) -> Result<ChiSqCltDeviation> {
    if u < 2.0 {
        return Err(Error::validation("chi-square CLT check requires u >= 2"));
    }
    if x.abs() > u.powf(1.0 / 6.0) {
        return Err(Error::validation(format!(
            "|x| = {} outside the CLT window u^(1/6) = {}",
            x.abs(),
            u.powf(1.0 / 6.0)
        )));
    }
    let scale = (2.0 * u).sqrt();
    let t = u + x * scale;
    let g = chisq_density(u, t);
    let gp = g * ((u / 2.0 - 1.0) / t - 0.5);
    let phi = normal_pdf(x);
    let phi_p = -x * phi;
    Ok(ChiSqCltDeviation {
        density: (scale * g - phi).abs(),
        derivative: (2.0 * u * gp - phi_p).abs(),
    })
}

/// `sup_t g_u(t)`, attained at `t = u - 2` for `u > 2`.
pub fn chisq_density_sup(u: f64) -> f64 {
    if u <= 2.0 {
        return f64::INFINITY;
    }
    chisq_density(u, u - 2.0)
}

/// Probabilists' Gauss-Hermite rule: nodes `x_i` and weights `w_i` with
/// `E[f(Z)] ~ sum w_i f(x_i)` for `Z ~ N(0,1)`; exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    use nalgebra::{DMatrix, SymmetricEigen};
    // Golub-Welsch on the Jacobi matrix of the monic probabilists' Hermite
    // recurrence: off-diagonal sqrt(k).
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1).collect();
    (nodes, weights)
}
