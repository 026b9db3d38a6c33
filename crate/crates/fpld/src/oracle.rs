//! Exact low-degree MMSE and correlation at tiny scale: closed-form moments
//! of monomials in `Y` under the planted measure (finite-support priors
//! crossed with Gaussian noise), a Gram-system solve for the optimal
//! degree-D projection, and Monte-Carlo correlation of arbitrary concrete
//! estimators.
//!
//! The basis is monomial rather than Hermite so the oracle shares no code
//! path with the estimator construction it cross-validates.

use crate::multi_index::{enumerate_up_to_degree, MultiIndex};
use crate::priors::{enumerate_support, sample_signal_with, GamInstance, PriorModel};
use crate::rng::{standard_normal, RngState};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Exact product of per-coordinate shifted-Gaussian moments
/// `prod_i E[(mu_i + Z_i)^(e_i)]`.
pub fn shifted_gaussian_monomial_moment(mu: &[f64], e: &MultiIndex) -> f64 {
    debug_assert_eq!(mu.len(), e.len());
    let mut acc = 1.0;
    for (i, &ei) in e.exps().iter().enumerate() {
        if ei > 0 {
            acc *= shifted_gaussian_moment_1d(mu[i], ei);
        }
    }
    acc
}

/// `E[(mu + Z)^e] = sum_{2m <= e} C(e, 2m) (2m-1)!! mu^(e-2m)`.
pub fn shifted_gaussian_moment_1d(mu: f64, e: u32) -> f64 {
    let mut acc = 0.0;
    let mut m = 0;
    while 2 * m <= e {
        let binom = crate::multi_index::binomial_big(e, 2 * m);
        let c: f64 = binom.to_string().parse().unwrap();
        acc += c * crate::priors::gaussian_moment(2 * m) * mu.powi((e - 2 * m) as i32);
        m += 1;
    }
    acc
}

/// Result of the exact degree-D projection.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub corr_sq_total: f64,
    pub corr_sq_per_coord: Vec<f64>,
    pub mmse: f64,
    pub basis_size: usize,
    pub cond_number: f64,
    /// Coefficients of the optimal unnormalized projection `g_i` in the
    /// monomial basis (graded-lex order).
    pub coefficients: Vec<Vec<f64>>,
    /// The basis, for estimator evaluation.
    pub basis: Vec<MultiIndex>,
}

impl OracleResult {
    /// Evaluates the optimal projection for coordinate `i` at `y`.
    pub fn eval_projection(&self, i: usize, y: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.coefficients[i])
            .map(|(alpha, &c)| c * alpha.monomial(y))
            .sum()
    }
}

/// Budgets of the general oracle path.
pub const ORACLE_MAX_ATOMS: usize = 10_000;
pub const ORACLE_MAX_BASIS: usize = 2000;

/// Exact degree-D correlation and MMSE for a finite-support prior:
/// builds `G_{ab} = E[Y^a Y^b]` and `c^(i)_a = E[Y^a X_i]` by averaging
/// shifted-Gaussian moments over the prior atoms, then solves by an
/// eigen-pseudoinverse with relative cutoff 1e-10.
pub fn exact_corr_and_mmse(prior: &PriorModel, lambda: f64, degree: u32) -> Result<OracleResult> {
    let atoms = enumerate_support(prior, ORACLE_MAX_ATOMS)?;
    let dim = prior.ambient_dim();
    let basis_count = crate::multi_index::binomial_big(dim as u32 + degree, degree);
    if basis_count > num_bigint::BigUint::from(ORACLE_MAX_BASIS as u64) {
        return Err(Error::budget(format!(
            "basis size C({dim}+{degree},{degree}) exceeds {ORACLE_MAX_BASIS}"
        )));
    }
    oracle_from_atoms(&atoms, dim, lambda, degree)
}

/// Product-prior shortcut: for i.i.d. coordinate priors the degree-D
/// projection of `X_i` depends on `Y_i` alone, so the vector problem
/// tensorizes into `n` copies of a one-dimensional Gram solve.
///
/// Valid for `sparse_rademacher_tensor` with `r = 1`; cross-validated
/// against the general path in tests.
pub fn exact_corr_and_mmse_product(
    prior: &PriorModel,
    lambda: f64,
    degree: u32,
) -> Result<OracleResult> {
    let (n, k) = match prior {
        PriorModel::SparseRademacherTensor { n, k, r: 1 } => (*n, *k),
        _ => {
            return Err(Error::validation(
                "product shortcut requires an i.i.d. coordinate prior (r = 1)".to_string(),
            ))
        }
    };
    let rho = k as f64 / n as f64;
    // one-coordinate Rad(rho) prior built directly on atoms
    let atoms_1d: Vec<(Vec<f64>, f64)> = if rho >= 1.0 {
        vec![(vec![1.0], 0.5), (vec![-1.0], 0.5)]
    } else {
        vec![
            (vec![0.0], 1.0 - rho),
            (vec![1.0], rho / 2.0),
            (vec![-1.0], rho / 2.0),
        ]
    };
    let one_res = oracle_from_atoms(&atoms_1d, 1, lambda, degree)?;
    let corr1 = one_res.corr_sq_total;
    let corr_sq_per_coord = vec![corr1; n];
    let corr_sq_total = corr1 * n as f64;
    let e_norm_sq = n as f64 * rho;
    Ok(OracleResult {
        corr_sq_total,
        corr_sq_per_coord,
        mmse: e_norm_sq - corr_sq_total,
        basis_size: one_res.basis_size,
        cond_number: one_res.cond_number,
        coefficients: one_res.coefficients,
        basis: one_res.basis,
    })
}

/// Shared Gram assembly over explicit atoms (used by both oracle paths).
fn oracle_from_atoms(
    atoms: &[(Vec<f64>, f64)],
    dim: usize,
    lambda: f64,
    degree: u32,
) -> Result<OracleResult> {
    let basis = enumerate_up_to_degree(dim, degree);
    let b = basis.len();
    let sqrt_l = lambda.sqrt();
    let mut g = DMatrix::<f64>::zeros(b, b);
    let mut cross: Vec<DVector<f64>> = vec![DVector::zeros(b); dim];
    let mut e_norm_sq = 0.0;
    for (x, p) in atoms {
        let mu: Vec<f64> = x.iter().map(|&v| sqrt_l * v).collect();
        let cap = 2 * degree;
        let mut table = vec![vec![0.0; (cap + 1) as usize]; dim];
        for (i, row) in table.iter_mut().enumerate() {
            for (e, slot) in row.iter_mut().enumerate() {
                *slot = shifted_gaussian_moment_1d(mu[i], e as u32);
            }
        }
        for a in 0..b {
            for bb in a..b {
                let mut prod = *p;
                for i in 0..dim {
                    let e = basis[a].get(i) + basis[bb].get(i);
                    if e > 0 {
                        prod *= table[i][e as usize];
                    }
                }
                g[(a, bb)] += prod;
            }
            let mut prod = *p;
            for i in 0..dim {
                let e = basis[a].get(i);
                if e > 0 {
                    prod *= table[i][e as usize];
                }
            }
            for (i, cr) in cross.iter_mut().enumerate() {
                cr[a] += prod * x[i];
            }
        }
        e_norm_sq += p * x.iter().map(|&v| v * v).sum::<f64>();
    }
    for a in 0..b {
        for bb in 0..a {
            g[(a, bb)] = g[(bb, a)];
        }
    }
    let eig = SymmetricEigen::new(g);
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-9 * max_eig.abs() {
        return Err(Error::validation(format!(
            "Gram matrix indefinite beyond tolerance: min eigenvalue {min_eig:e}"
        )));
    }
    let cutoff = 1e-10 * max_eig;
    let cond_number = max_eig
        / eig
            .eigenvalues
            .iter()
            .cloned()
            .filter(|&e| e > cutoff)
            .fold(f64::INFINITY, f64::min);
    let mut corr_sq_per_coord = Vec::with_capacity(dim);
    let mut coefficients = Vec::with_capacity(dim);
    for cr in &cross {
        let proj = eig.eigenvectors.transpose() * cr;
        let mut corr = 0.0;
        let mut coef_eig = DVector::<f64>::zeros(b);
        for j in 0..b {
            let ev = eig.eigenvalues[j];
            if ev > cutoff {
                corr += proj[j] * proj[j] / ev;
                coef_eig[j] = proj[j] / ev;
            }
        }
        corr_sq_per_coord.push(corr);
        coefficients.push((&eig.eigenvectors * coef_eig).iter().cloned().collect());
    }
    let corr_sq_total: f64 = corr_sq_per_coord.iter().sum();
    Ok(OracleResult {
        corr_sq_total,
        corr_sq_per_coord,
        mmse: e_norm_sq - corr_sq_total,
        basis_size: b,
        cond_number,
        coefficients,
        basis,
    })
}

/// Monte-Carlo correlation of a concrete estimator:
/// `E<f(Y), X> / sqrt(E||f(Y)||^2)` with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCorr {
    pub corr: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub fn mc_corr_of_estimator(
    gam: &GamInstance,
    estimator: &dyn Fn(&[f64]) -> Vec<f64>,
    m_ov: usize,
    rng_state: RngState,
) -> Result<McCorr> {
    if m_ov < 2 {
        return Err(Error::validation("need at least 2 samples".to_string()));
    }
    let mut rng = rng_state.rng();
    let sqrt_l = gam.snr.sqrt();
    let mut us = Vec::with_capacity(m_ov);
    let mut vs = Vec::with_capacity(m_ov);
    for _ in 0..m_ov {
        let x = sample_signal_with(&gam.prior, &mut rng);
        let xf = x.flat();
        let y: Vec<f64> = xf
            .iter()
            .map(|&v| sqrt_l * v + standard_normal(&mut rng))
            .collect();
        let f = estimator(&y);
        us.push(f.iter().zip(&xf).map(|(a, b)| a * b).sum::<f64>());
        vs.push(f.iter().map(|&a| a * a).sum::<f64>());
    }
    let m = m_ov as f64;
    let u = us.iter().sum::<f64>() / m;
    let v = vs.iter().sum::<f64>() / m;
    if v <= 0.0 {
        return Err(Error::domain("estimator has zero norm".to_string()));
    }
    let var_u = us.iter().map(|&x| (x - u).powi(2)).sum::<f64>() / (m - 1.0);
    let var_v = vs.iter().map(|&x| (x - v).powi(2)).sum::<f64>() / (m - 1.0);
    let cov_uv = us
        .iter()
        .zip(&vs)
        .map(|(&a, &b)| (a - u) * (b - v))
        .sum::<f64>()
        / (m - 1.0);
    let corr = u / v.sqrt();
    // gradient (1/sqrt(v), -u/(2 v^(3/2)))
    let gu = 1.0 / v.sqrt();
    let gv = -u / (2.0 * v.powf(1.5));
    let var = (gu * gu * var_u + 2.0 * gu * gv * cov_uv + gv * gv * var_v) / m;
    Ok(McCorr {
        corr,
        stderr: var.max(0.0).sqrt(),
        samples: m_ov,
    })
}

/// JSON report of an oracle run.
pub fn oracle_report_json(res: &OracleResult) -> String {
    let per: Vec<String> = res
        .corr_sq_per_coord
        .iter()
        .map(|c| format!("{c}"))
        .collect();
    format!(
        "{{\"basis_size\":{},\"cond_number\":{},\"corr_sq_per_coord\":[{}],\"corr_sq_total\":{},\"mmse\":{}}}",
        res.basis_size,
        res.cond_number,
        per.join(","),
        res.corr_sq_total,
        res.mmse
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_moments_small_cases() {
        assert_eq!(shifted_gaussian_moment_1d(0.0, 2), 1.0);
        assert_eq!(shifted_gaussian_moment_1d(2.0, 3), 14.0);
        assert_eq!(shifted_gaussian_moment_1d(0.0, 4), 3.0);
        let e = MultiIndex::new(vec![2, 3]);
        assert_eq!(shifted_gaussian_monomial_moment(&[0.0, 2.0], &e), 14.0);
    }

    #[test]
    fn sign_prior_closed_form() {
        // N = 1, X = +-1 uniform, D = 1: Corr^2 = lambda / (1 + lambda)
        let prior = PriorModel::SparseRademacherTensor { n: 1, k: 1, r: 1 };
        for i in 0..=9 {
            let lambda = 0.1 + i as f64 * 1.1;
            let res = exact_corr_and_mmse(&prior, lambda, 1).unwrap();
            let want = lambda / (1.0 + lambda);
            assert!(
                (res.corr_sq_total - want).abs() < 1e-12,
                "lambda {lambda}: {} vs {want}",
                res.corr_sq_total
            );
            assert!((res.mmse - (1.0 - want)).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_zero_centered() {
        let prior = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 };
        let res = exact_corr_and_mmse(&prior, 1.5, 0).unwrap();
        assert!(res.corr_sq_total.abs() < 1e-14);
        assert!((res.mmse - 2.0).abs() < 1e-12); // E||X||^2 = k
    }

    #[test]
    fn monotone_in_degree_and_snr() {
        let prior = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 };
        let mut prev = -1.0;
        for d in 0..=3u32 {
            let res = exact_corr_and_mmse(&prior, 0.8, d).unwrap();
            assert!(
                res.corr_sq_total >= prev - 1e-10,
                "corr^2 fell at D = {d}: {} < {prev}",
                res.corr_sq_total
            );
            prev = res.corr_sq_total;
        }
        let mut prev = -1.0;
        for i in 0..8 {
            let lambda = 0.2 * (i + 1) as f64;
            let res = exact_corr_and_mmse(&prior, lambda, 2).unwrap();
            assert!(
                res.corr_sq_total >= prev - 1e-10,
                "corr^2 fell at lambda = {lambda}"
            );
            prev = res.corr_sq_total;
        }
    }

    #[test]
    fn identity_mmse_plus_corr() {
        let prior = PriorModel::SparseRademacherTensor { n: 4, k: 2, r: 1 };
        let res = exact_corr_and_mmse(&prior, 1.2, 2).unwrap();
        let e_norm = 2.0; // k
        assert!((res.mmse + res.corr_sq_total - e_norm).abs() < 1e-10);
    }

    #[test]
    fn product_route_matches_general_route() {
        for &(n, k) in &[(3usize, 1usize), (4, 2), (3, 3)] {
            let prior = PriorModel::SparseRademacherTensor { n, k, r: 1 };
            for &(lambda, d) in &[(0.5, 1u32), (1.5, 2), (3.0, 3)] {
                let a = exact_corr_and_mmse(&prior, lambda, d).unwrap();
                let b = exact_corr_and_mmse_product(&prior, lambda, d).unwrap();
                assert!(
                    (a.corr_sq_total - b.corr_sq_total).abs()
                        < 1e-9 * (1.0 + a.corr_sq_total),
                    "(n,k)=({n},{k}), lambda={lambda}, D={d}: general {} vs product {}",
                    a.corr_sq_total,
                    b.corr_sq_total
                );
            }
        }
    }

    #[test]
    fn basis_reordering_invariance() {
        // exchangeable coordinates: per-coordinate Corr^2 all equal
        let prior = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 };
        let res = exact_corr_and_mmse(&prior, 0.9, 2).unwrap();
        for c in &res.corr_sq_per_coord {
            assert!((c - res.corr_sq_per_coord[0]).abs() < 1e-10);
        }
        // relabeling coordinates permutes the monomial basis; the
        // pseudoinverse solution is unchanged up to the same permutation
        let a = PriorModel::Constant {
            values: vec![0.7, -1.3, 0.2],
        };
        let b = PriorModel::Constant {
            values: vec![0.2, 0.7, -1.3],
        };
        let ra = exact_corr_and_mmse(&a, 1.1, 2).unwrap();
        let rb = exact_corr_and_mmse(&b, 1.1, 2).unwrap();
        assert!(
            (ra.corr_sq_total - rb.corr_sq_total).abs() < 1e-9,
            "{} vs {}",
            ra.corr_sq_total,
            rb.corr_sq_total
        );
        assert!((ra.mmse - rb.mmse).abs() < 1e-9);
    }

    #[test]
    fn tensor_prior_general_route() {
        // r = 2 tensor atoms are valid finite support too
        let prior = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 2 };
        let res = exact_corr_and_mmse(&prior, 0.7, 1).unwrap();
        assert!(res.corr_sq_total >= 0.0);
        let e_norm = crate::priors::trivial_mmse(&prior)
            + 0.0; // trivial = E||X||^2 - ||EX||^2; for r=2, ||EX||^2 > 0
        let _ = e_norm;
    }

    #[test]
    fn mc_corr_constant_estimator() {
        let prior = PriorModel::Constant {
            values: vec![1.0, -2.0],
        };
        let gam = GamInstance::new(prior, 1.0).unwrap();
        let c = vec![1.0, -2.0];
        let est = move |_y: &[f64]| c.clone();
        let res = mc_corr_of_estimator(&gam, &est, 5000, RngState::from_seed(3)).unwrap();
        let want = 5.0f64.sqrt(); // ||c||
        assert!(
            (res.corr - want).abs() < 4.0 * res.stderr.max(1e-9) + 1e-9,
            "corr {} vs {want}",
            res.corr
        );
    }

    #[test]
    fn mc_corr_of_oracle_projection_matches_closed_form() {
        let prior = PriorModel::SparseRademacherTensor { n: 1, k: 1, r: 1 };
        let lambda = 1.0;
        let gam = GamInstance::new(prior.clone(), lambda).unwrap();
        let res = exact_corr_and_mmse(&prior, lambda, 1).unwrap();
        let est = move |y: &[f64]| vec![res.eval_projection(0, y)];
        let mc = mc_corr_of_estimator(&gam, &est, 200_000, RngState::from_seed(5)).unwrap();
        let want = (lambda / (1.0 + lambda)).sqrt();
        assert!(
            (mc.corr - want).abs() <= 3.0 * mc.stderr,
            "MC corr {} vs closed form {want} (3se {})",
            mc.corr,
            3.0 * mc.stderr
        );
    }

    #[test]
    fn zero_estimator_rejected() {
        let prior = PriorModel::SparseRademacherTensor { n: 2, k: 1, r: 1 };
        let gam = GamInstance::new(prior, 1.0).unwrap();
        let est = |_y: &[f64]| vec![0.0, 0.0];
        assert!(mc_corr_of_estimator(&gam, &est, 100, RngState::from_seed(1)).is_err());
    }

    #[test]
    fn budget_guards() {
        let prior = PriorModel::SparseRademacherTensor { n: 12, k: 2, r: 1 };
        assert!(matches!(
            exact_corr_and_mmse(&prior, 1.0, 1),
            Err(Error::Budget(_))
        ));
        let prior = PriorModel::GaussianTensor { n: 2, r: 1 };
        assert!(exact_corr_and_mmse(&prior, 1.0, 1).is_err());
    }

    #[test]
    fn report_json_shape() {
        let prior = PriorModel::SparseRademacherTensor { n: 2, k: 1, r: 1 };
        let res = exact_corr_and_mmse(&prior, 1.0, 1).unwrap();
        let js = oracle_report_json(&res);
        assert!(js.contains("\"basis_size\":"));
        assert!(js.contains("\"mmse\":"));
        let parsed: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert!(parsed["corr_sq_total"].as_f64().unwrap() >= 0.0);
    }
}
