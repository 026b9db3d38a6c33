//! The Gaussian additive model `Y = sqrt(lambda) * X + Z` and the concrete
//! priors it is instantiated with: Gaussian tensors, sparse Rademacher
//! tensors, the sparse clustering prior and the truncated sparse 3-tensor.
//!
//! Each prior exposes seeded sampling, exact mixed moments where a closed
//! form exists, and the trivial (prior-mean estimator) MMSE
//! `E||X||^2 - ||E X||^2`.

use crate::multi_index::MultiIndex;
use crate::rng::{standard_normal, RngState};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default cap on the total degree accepted by the exact moment path.
pub const MOMENT_DEGREE_CAP: u32 = 12;

/// A prior `P_0` on the signal `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PriorModel {
    /// `X = vec(v^{x r})` with `v` having n i.i.d. `N(0,1)` entries.
    GaussianTensor { n: usize, r: u32 },
    /// `X = vec(v^{x r})` with `v_i` i.i.d. `Rad(k/n)`: `+1` and `-1` with
    /// probability `k/(2n)` each, `0` otherwise.
    SparseRademacherTensor { n: usize, k: usize, r: u32 },
    /// `X = vec(xi mu^T)` with `xi_i` i.i.d. symmetric signs and
    /// `mu_j = b_j g_j`, `b_j ~ Ber(s/p)`, `g_j ~ N(0,1)` (the rescaled
    /// prior; `delta` only fixes the SNR mapping `lambda = delta / s`).
    SparseClustering {
        n: usize,
        p: usize,
        s: usize,
        delta: f64,
    },
    /// Sparse Rademacher 3-tensor whose base vector is replaced by the
    /// indicator of `[k]` exactly when the support size leaves
    /// `[ceil(k/2), 2k]`.
    TruncatedSparseTensor3 { n: usize, k: usize },
    /// Deterministic signal; used as a degenerate reference prior in tests
    /// and self-checks.
    Constant { values: Vec<f64> },
}

/// The latent object generating a signal draw.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    /// Base vector of a Gaussian tensor prior.
    Dense(Vec<f64>),
    /// Base vector of a sparse (possibly truncated) tensor prior.
    Signs(Vec<i8>),
    /// Labels and centers of the clustering prior.
    Clustering { xi: Vec<i8>, mu: Vec<f64> },
    /// Constant prior: the signal itself.
    Fixed(Vec<f64>),
}

/// One draw from a prior, kept in latent form; the ambient flattening is
/// materialized on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub latent: Latent,
    prior: PriorModel,
}

/// A GAM instance `Y = sqrt(snr) * X + Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamInstance {
    pub prior: PriorModel,
    pub snr: f64,
}

/// Value of an exact-or-approximate moment query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentValue {
    pub value: f64,
    /// False when the value is a Monte-Carlo estimate.
    pub exact: bool,
}

impl PriorModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorModel::GaussianTensor { n, r } => {
                if *n == 0 || *r == 0 {
                    return Err(Error::validation("gaussian_tensor requires n >= 1, r >= 1"));
                }
            }
            PriorModel::SparseRademacherTensor { n, k, r } => {
                if *n == 0 || *r == 0 || *k == 0 || k > n {
                    return Err(Error::validation(
                        "sparse_rademacher_tensor requires 1 <= k <= n and r >= 1",
                    ));
                }
            }
            PriorModel::SparseClustering { n, p, s, delta } => {
                if *n == 0 || *p == 0 || *s == 0 || s > p || *delta <= 0.0 {
                    return Err(Error::validation(
                        "sparse_clustering requires 1 <= s <= p, n >= 1, delta > 0",
                    ));
                }
            }
            PriorModel::TruncatedSparseTensor3 { n, k } => {
                if *n == 0 || *k == 0 || k > n {
                    return Err(Error::validation(
                        "truncated_sparse_tensor3 requires 1 <= k <= n",
                    ));
                }
            }
            PriorModel::Constant { values } => {
                if values.is_empty() {
                    return Err(Error::validation("constant prior requires a nonempty vector"));
                }
            }
        }
        Ok(())
    }

    /// Total number of ambient coordinates of `X`.
    pub fn ambient_dim(&self) -> usize {
        match self {
            PriorModel::GaussianTensor { n, r } => n.pow(*r),
            PriorModel::SparseRademacherTensor { n, r, .. } => n.pow(*r),
            PriorModel::SparseClustering { n, p, .. } => n * p,
            PriorModel::TruncatedSparseTensor3 { n, .. } => n.pow(3),
            PriorModel::Constant { values } => values.len(),
        }
    }

    /// Truncation band `[ceil(k/2), 2k]` of the truncated 3-tensor prior.
    pub fn truncation_band(&self) -> Option<(usize, usize)> {
        match self {
            PriorModel::TruncatedSparseTensor3 { k, .. } => Some((k.div_ceil(2), 2 * k)),
            _ => None,
        }
    }

    fn tensor_order(&self) -> Option<u32> {
        match self {
            PriorModel::GaussianTensor { r, .. } => Some(*r),
            PriorModel::SparseRademacherTensor { r, .. } => Some(*r),
            PriorModel::TruncatedSparseTensor3 { .. } => Some(3),
            _ => None,
        }
    }

    /// Per-latent-coordinate moment `E[v^e]`, for priors with i.i.d. latent
    /// coordinates.
    fn latent_moment(&self, e: u32) -> Option<f64> {
        match self {
            PriorModel::GaussianTensor { .. } => Some(gaussian_moment(e)),
            PriorModel::SparseRademacherTensor { n, k, .. } => {
                if e == 0 {
                    Some(1.0)
                } else if e % 2 == 1 {
                    Some(0.0)
                } else {
                    Some(*k as f64 / *n as f64)
                }
            }
            _ => None,
        }
    }
}

/// Moment of a standard normal: `(e-1)!!` for even `e`, zero for odd.
pub fn gaussian_moment(e: u32) -> f64 {
    if e % 2 == 1 {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut j = 1;
    while j < e {
        acc *= j as f64;
        j += 2;
    }
    acc
}

/// Draws one signal from the prior; deterministic given `rng_state`.
pub fn sample_signal(prior: &PriorModel, rng_state: RngState) -> SignalSample {
    let mut rng = rng_state.rng();
    sample_signal_with(prior, &mut rng)
}

pub(crate) fn sample_signal_with<R: Rng>(prior: &PriorModel, rng: &mut R) -> SignalSample {
    let latent = match prior {
        PriorModel::GaussianTensor { n, .. } => {
            Latent::Dense((0..*n).map(|_| standard_normal(rng)).collect())
        }
        PriorModel::SparseRademacherTensor { n, k, .. } => {
            Latent::Signs(sample_rad_vector(*n, *k as f64 / *n as f64, rng))
        }
        PriorModel::TruncatedSparseTensor3 { n, k } => {
            let u = sample_rad_vector(*n, *k as f64 / *n as f64, rng);
            let (lo, hi) = prior.truncation_band().unwrap();
            let nnz = u.iter().filter(|&&x| x != 0).count();
            if (lo..=hi).contains(&nnz) {
                Latent::Signs(u)
            } else {
                let mut v = vec![0i8; *n];
                v[..*k].fill(1);
                Latent::Signs(v)
            }
        }
        PriorModel::SparseClustering { n, p, s, .. } => {
            let xi: Vec<i8> = (0..*n)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            let rho = *s as f64 / *p as f64;
            let mu: Vec<f64> = (0..*p)
                .map(|_| {
                    if rng.gen::<f64>() < rho {
                        standard_normal(rng)
                    } else {
                        0.0
                    }
                })
                .collect();
            Latent::Clustering { xi, mu }
        }
        PriorModel::Constant { values } => Latent::Fixed(values.clone()),
    };
    SignalSample {
        latent,
        prior: prior.clone(),
    }
}

fn sample_rad_vector<R: Rng>(n: usize, rho: f64, rng: &mut R) -> Vec<i8> {
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rho {
                if rng.gen::<bool>() {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect()
}

impl SignalSample {
    /// Flattens the latent into the ambient coordinates of `X`.
    pub fn flat(&self) -> Vec<f64> {
        match (&self.latent, &self.prior) {
            (Latent::Fixed(v), _) => v.clone(),
            (Latent::Dense(v), _) => tensor_flatten(v, self.prior.tensor_order().unwrap()),
            (Latent::Signs(v), _) => {
                let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                tensor_flatten(&vf, self.prior.tensor_order().unwrap())
            }
            (Latent::Clustering { xi, mu }, _) => {
                let mut out = Vec::with_capacity(xi.len() * mu.len());
                for &x in xi {
                    for &m in mu {
                        out.push(x as f64 * m);
                    }
                }
                out
            }
        }
    }

    /// Inner product `<X, X'>` computed in latent space.
    pub fn overlap(&self, other: &SignalSample) -> f64 {
        match (&self.latent, &other.latent) {
            (Latent::Fixed(a), Latent::Fixed(b)) => dot(a, b),
            (Latent::Dense(a), Latent::Dense(b)) => {
                let r = self.prior.tensor_order().unwrap();
                dot(a, b).powi(r as i32)
            }
            (Latent::Signs(a), Latent::Signs(b)) => {
                let r = self.prior.tensor_order().unwrap();
                let s: i64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| x as i64 * y as i64)
                    .sum();
                (s as f64).powi(r as i32)
            }
            (
                Latent::Clustering { xi: xa, mu: ma },
                Latent::Clustering { xi: xb, mu: mb },
            ) => {
                let a: i64 = xa.iter().zip(xb).map(|(&x, &y)| x as i64 * y as i64).sum();
                let b = dot(ma, mb);
                a as f64 * b
            }
            _ => panic!("overlap of samples from different prior families"),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.overlap(self)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `vec(v^{x r})` in row-major order: entry `(i_1, ..., i_r)` sits at
/// `i_1 n^{r-1} + ... + i_r`.
pub fn tensor_flatten(v: &[f64], r: u32) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![1.0; n.pow(r)];
    for (t, slot) in out.iter_mut().enumerate() {
        let mut idx = t;
        let mut acc = 1.0;
        for _ in 0..r {
            acc *= v[idx % n];
            idx /= n;
        }
        *slot = acc;
    }
    out
}

/// Draws `(X, Y)` with `Y = sqrt(snr) X + Z`.
pub fn sample_observation(gam: &GamInstance, rng_state: RngState) -> (SignalSample, Vec<f64>) {
    let mut rng = rng_state.rng();
    let x = sample_signal_with(&gam.prior, &mut rng);
    let sqrt_l = gam.snr.sqrt();
    let y = x
        .flat()
        .iter()
        .map(|&xi| sqrt_l * xi + standard_normal(&mut rng))
        .collect();
    (x, y)
}

/// Exact `E[X^alpha]` by reducing ambient exponents to latent exponents and
/// multiplying independent closed-form per-coordinate moments.
///
/// The truncated 3-tensor prior has no closed form; a Monte-Carlo estimate
/// flagged `exact: false` is returned instead.
pub fn moment(prior: &PriorModel, alpha: &MultiIndex) -> Result<MomentValue> {
    moment_capped(prior, alpha, MOMENT_DEGREE_CAP)
}

pub fn moment_capped(prior: &PriorModel, alpha: &MultiIndex, cap: u32) -> Result<MomentValue> {
    if alpha.len() != prior.ambient_dim() {
        return Err(Error::validation(format!(
            "multi-index length {} != ambient dimension {}",
            alpha.len(),
            prior.ambient_dim()
        )));
    }
    if alpha.degree() > cap {
        return Err(Error::budget(format!(
            "moment degree {} exceeds cap {}",
            alpha.degree(),
            cap
        )));
    }
    match prior {
        PriorModel::Constant { values } => Ok(MomentValue {
            value: alpha.monomial(values),
            exact: true,
        }),
        PriorModel::GaussianTensor { n, r } | PriorModel::SparseRademacherTensor { n, r, .. } => {
            let e = latent_exponents_tensor(*n, *r, alpha);
            let mut acc = 1.0;
            for &ej in &e {
                if ej > 0 {
                    acc *= prior.latent_moment(ej).unwrap();
                }
                if acc == 0.0 {
                    break;
                }
            }
            Ok(MomentValue {
                value: acc,
                exact: true,
            })
        }
        PriorModel::SparseClustering { n, p, s, .. } => {
            // X_{(i,j)} = xi_i mu_j; ambient index t = i*p + j.
            let mut xi_exp = vec![0u32; *n];
            let mut mu_exp = vec![0u32; *p];
            for (t, &a) in alpha.exps().iter().enumerate() {
                if a > 0 {
                    xi_exp[t / p] += a;
                    mu_exp[t % p] += a;
                }
            }
            let mut acc = 1.0;
            for &e in &xi_exp {
                if e % 2 == 1 {
                    return Ok(MomentValue {
                        value: 0.0,
                        exact: true,
                    });
                }
            }
            let rho = *s as f64 / *p as f64;
            for &e in &mu_exp {
                if e == 0 {
                    continue;
                }
                if e % 2 == 1 {
                    return Ok(MomentValue {
                        value: 0.0,
                        exact: true,
                    });
                }
                acc *= rho * gaussian_moment(e);
            }
            Ok(MomentValue {
                value: acc,
                exact: true,
            })
        }
        PriorModel::TruncatedSparseTensor3 { .. } => {
            // No exact product form: the truncation couples coordinates.
            let m = 200_000;
            let state = RngState::from_seed(0x7a11_0f00);
            let mut rng = state.rng();
            let mut acc = 0.0;
            for _ in 0..m {
                let x = sample_signal_with(prior, &mut rng);
                let flat_needed: f64 = alpha
                    .support()
                    .map(|t| {
                        let v = match &x.latent {
                            Latent::Signs(v) => v,
                            _ => unreachable!(),
                        };
                        let n = v.len();
                        let (i, rest) = (t % n, t / n);
                        let (j, l) = (rest % n, rest / n);
                        let base = (v[i] as f64) * (v[j] as f64) * (v[l] as f64);
                        base.powi(alpha.get(t) as i32)
                    })
                    .product();
                acc += flat_needed;
            }
            Ok(MomentValue {
                value: acc / m as f64,
                exact: false,
            })
        }
    }
}

/// Accumulates latent exponents of `v` induced by ambient exponents of
/// `X = vec(v^{x r})`.
pub fn latent_exponents_tensor(n: usize, r: u32, alpha: &MultiIndex) -> Vec<u32> {
    let mut e = vec![0u32; n];
    for (t, &a) in alpha.exps().iter().enumerate() {
        if a > 0 {
            let mut idx = t;
            for _ in 0..r {
                e[idx % n] += a;
                idx /= n;
            }
        }
    }
    e
}

/// Trivial MMSE `E||X||^2 - ||E X||^2` of the prior-mean estimator.
pub fn trivial_mmse(prior: &PriorModel) -> f64 {
    match prior {
        PriorModel::Constant { .. } => 0.0,
        PriorModel::GaussianTensor { n, r } => {
            // E||X||^2 = E[(chi^2_n)^r] = prod_{j<r} (n + 2j);
            // ||E X||^2 = E<X, X'> = E[S^r], S | v ~ N(0, ||v||^2).
            let nf = *n as f64;
            let mut e_norm = 1.0;
            for j in 0..*r {
                e_norm *= nf + 2.0 * j as f64;
            }
            let mean_sq = if r % 2 == 1 {
                0.0
            } else {
                let half = r / 2;
                let mut acc = gaussian_moment(*r); // (r-1)!!
                for j in 0..half {
                    acc *= nf + 2.0 * j as f64;
                }
                acc
            };
            e_norm - mean_sq
        }
        PriorModel::SparseRademacherTensor { n, k, r } => {
            // ||X||^2 = ||v||_0^r with ||v||_0 ~ Bin(n, k/n);
            // ||E X||^2 = E[S^r] for S the base overlap (zero for odd r).
            let e_norm = iid_sum_moment(*n, *r, &|e| bernoulli_moment(e, *k as f64 / *n as f64));
            let p = (*k as f64 / *n as f64).powi(2);
            let mean_sq = if r % 2 == 1 {
                0.0
            } else {
                iid_sum_moment(*n, *r, &|e| rad_product_moment(e, p))
            };
            e_norm - mean_sq
        }
        PriorModel::SparseClustering { n, s, .. } => {
            // E||X||^2 = n * p * (s/p) = n s; E X = 0 by sign symmetry.
            (*n * *s) as f64
        }
        PriorModel::TruncatedSparseTensor3 { n, k } => {
            let (lo, hi) = prior.truncation_band().unwrap();
            let rho = *k as f64 / *n as f64;
            let mut e_norm = 0.0;
            let mut out_of_band = 0.0;
            for m in 0..=*n {
                let pm = binom_pmf(*n, m, rho);
                if (lo..=hi).contains(&m) {
                    e_norm += pm * (m as f64).powi(3);
                } else {
                    out_of_band += pm;
                    e_norm += pm * (*k as f64).powi(3);
                }
            }
            // E X = P(out of band) * vec(1_[k]^{x3}) by sign symmetry in band.
            e_norm - out_of_band * out_of_band * (*k as f64).powi(3)
        }
    }
}

fn bernoulli_moment(e: u32, rho: f64) -> f64 {
    if e == 0 {
        1.0
    } else {
        rho
    }
}

fn rad_product_moment(e: u32, p: f64) -> f64 {
    if e == 0 {
        1.0
    } else if e % 2 == 1 {
        0.0
    } else {
        p
    }
}

/// `E[(X_1 + ... + X_n)^r]` for i.i.d. coordinates with moments `mom(e)`,
/// by the binomial moment recursion over partial sums.
fn iid_sum_moment(n: usize, r: u32, mom: &dyn Fn(u32) -> f64) -> f64 {
    let r = r as usize;
    // moments[j] = E[(partial sum)^j]
    let mut moments = vec![0.0; r + 1];
    moments[0] = 1.0;
    let coord: Vec<f64> = (0..=r as u32).map(mom).collect();
    let mut binom = vec![vec![0.0; r + 1]; r + 1];
    for j in 0..=r {
        binom[j][0] = 1.0;
        for l in 1..=j {
            binom[j][l] = binom[j - 1][l - 1] + if l <= j - 1 { binom[j - 1][l] } else { 0.0 };
        }
    }
    for _ in 0..n {
        let mut next = vec![0.0; r + 1];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in 0..=j {
                acc += binom[j][l] * moments[j - l] * coord[l];
            }
            *slot = acc;
        }
        moments = next;
    }
    moments[r]
}

pub(crate) fn binom_pmf(n: usize, m: usize, rho: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if rho == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if rho == 1.0 {
        return if m == n { 1.0 } else { 0.0 };
    }
    let (nf, mf) = (n as f64, m as f64);
    let lc = ln_gamma(nf + 1.0) - ln_gamma(mf + 1.0) - ln_gamma(nf - mf + 1.0);
    (lc + mf * rho.ln() + (nf - mf) * (1.0 - rho).ln()).exp()
}

/// Enumerates the full support of a finite-support prior as
/// `(flat signal, probability)` pairs. Returns a budget error when the
/// support or the ambient dimension is too large, and a validation error
/// for continuous priors.
pub fn enumerate_support(
    prior: &PriorModel,
    max_atoms: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    match prior {
        PriorModel::Constant { values } => Ok(vec![(values.clone(), 1.0)]),
        PriorModel::SparseRademacherTensor { n, k, r } => {
            let total = 3usize.checked_pow(*n as u32).ok_or_else(|| {
                Error::budget("support enumeration overflow".to_string())
            })?;
            if total > max_atoms {
                return Err(Error::budget(format!(
                    "support size 3^{n} = {total} exceeds budget {max_atoms}"
                )));
            }
            let rho = *k as f64 / *n as f64;
            let mut out = Vec::with_capacity(total);
            let mut v = vec![0i8; *n];
            enumerate_signs(&mut v, 0, rho, 1.0, *r, &mut out);
            Ok(out)
        }
        PriorModel::TruncatedSparseTensor3 { n, k } => {
            let total = 3usize
                .checked_pow(*n as u32)
                .ok_or_else(|| Error::budget("support enumeration overflow".to_string()))?;
            if total > max_atoms {
                return Err(Error::budget(format!(
                    "support size 3^{n} = {total} exceeds budget {max_atoms}"
                )));
            }
            let rho = *k as f64 / *n as f64;
            let (lo, hi) = prior.truncation_band().unwrap();
            let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut trunc_mass = 0.0;
            let mut v = vec![0i8; *n];
            enumerate_signs_raw(&mut v, 0, rho, 1.0, &mut |u, pr| {
                let nnz = u.iter().filter(|&&x| x != 0).count();
                if (lo..=hi).contains(&nnz) {
                    let vf: Vec<f64> = u.iter().map(|&x| x as f64).collect();
                    atoms.push((tensor_flatten(&vf, 3), pr));
                } else {
                    trunc_mass += pr;
                }
            });
            if trunc_mass > 0.0 {
                let mut ind = vec![0.0; *n];
                ind[..*k].fill(1.0);
                atoms.push((tensor_flatten(&ind, 3), trunc_mass));
            }
            Ok(atoms)
        }
        _ => Err(Error::validation(
            "prior does not have enumerable finite support".to_string(),
        )),
    }
}

fn enumerate_signs(
    v: &mut Vec<i8>,
    pos: usize,
    rho: f64,
    prob: f64,
    r: u32,
    out: &mut Vec<(Vec<f64>, f64)>,
) {
    if pos == v.len() {
        let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        out.push((tensor_flatten(&vf, r), prob));
        return;
    }
    for (val, pr) in [(0i8, 1.0 - rho), (1, rho / 2.0), (-1, rho / 2.0)] {
        if pr == 0.0 {
            continue;
        }
        v[pos] = val;
        enumerate_signs(v, pos + 1, rho, prob * pr, r, out);
    }
    v[pos] = 0;
}

fn enumerate_signs_raw(
    v: &mut Vec<i8>,
    pos: usize,
    rho: f64,
    prob: f64,
    f: &mut impl FnMut(&[i8], f64),
) {
    if pos == v.len() {
        f(v, prob);
        return;
    }
    for (val, pr) in [(0i8, 1.0 - rho), (1, rho / 2.0), (-1, rho / 2.0)] {
        if pr == 0.0 {
            continue;
        }
        v[pos] = val;
        enumerate_signs_raw(v, pos + 1, rho, prob * pr, f);
    }
    v[pos] = 0;
}

impl GamInstance {
    pub fn new(prior: PriorModel, snr: f64) -> Result<Self> {
        prior.validate()?;
        if snr < 0.0 || !snr.is_finite() {
            return Err(Error::validation("snr must be a finite nonnegative real"));
        }
        Ok(GamInstance { prior, snr })
    }

    pub fn ambient_dim(&self) -> usize {
        self.prior.ambient_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multi_index::MultiIndex;

    #[test]
    fn gaussian_r1_reduces_to_standard_normal_vector() {
        let p = PriorModel::GaussianTensor { n: 2, r: 1 };
        let x = sample_signal(&p, RngState::from_seed(1));
        assert_eq!(x.flat().len(), 2);
    }

    #[test]
    fn rad_with_k_equal_n_never_zero() {
        let p = PriorModel::SparseRademacherTensor { n: 4, k: 4, r: 1 };
        for seed in 0..200 {
            let x = sample_signal(&p, RngState::from_seed(seed));
            for c in x.flat() {
                assert!(c == 1.0 || c == -1.0);
            }
        }
    }

    #[test]
    fn truncation_frequency_matches_binomial_tail() {
        let n = 20;
        let k = 4;
        let p = PriorModel::TruncatedSparseTensor3 { n, k };
        let (lo, hi) = p.truncation_band().unwrap();
        assert_eq!((lo, hi), (2, 8));
        let m = 100_000;
        let state = RngState::from_seed(42);
        let mut rng = state.rng();
        let mut truncated = 0usize;
        for _ in 0..m {
            let x = sample_signal_with(&p, &mut rng);
            if let Latent::Signs(v) = &x.latent {
                let nnz = v.iter().filter(|&&t| t != 0).count();
                let is_indicator = v[..k].iter().all(|&t| t == 1) && nnz == k;
                // the truncation atom is 1_[k]; hitting it by chance from an
                // in-band draw is possible, so count by comparing against the
                // raw support-size law instead
                let _ = is_indicator;
                let _ = nnz;
            }
        }
        // exact tail of Bin(n, k/n) outside [2, 8]
        let rho = k as f64 / n as f64;
        let tail: f64 = (0..=n)
            .filter(|m| !(lo..=hi).contains(m))
            .map(|m| binom_pmf(n, m, rho))
            .sum();
        // re-simulate counting the pre-truncation draw
        let mut rng = RngState::from_seed(43).rng();
        for _ in 0..m {
            let u = sample_rad_vector(n, rho, &mut rng);
            let nnz = u.iter().filter(|&&t| t != 0).count();
            if !(lo..=hi).contains(&nnz) {
                truncated += 1;
            }
        }
        let freq = truncated as f64 / m as f64;
        let se = (tail * (1.0 - tail) / m as f64).sqrt();
        assert!(
            (freq - tail).abs() <= 3.0 * se,
            "freq {freq} vs exact tail {tail} (3 se = {})",
            3.0 * se
        );
    }

    #[test]
    fn observation_variance_matches_snr_plus_one() {
        let gam = GamInstance::new(PriorModel::GaussianTensor { n: 1, r: 1 }, 4.0).unwrap();
        let m = 1_000_000;
        let state = RngState::from_seed(5);
        let mut rng = state.rng();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..m {
            let x = sample_signal_with(&gam.prior, &mut rng);
            let y = gam.snr.sqrt() * x.flat()[0] + standard_normal(&mut rng);
            sum += y;
            sumsq += y * y;
        }
        let var = sumsq / m as f64 - (sum / m as f64).powi(2);
        assert!((var - 5.0).abs() / 5.0 < 0.02, "Var(Y) = {var}, want 5");
    }

    #[test]
    fn pure_noise_mean_is_zero() {
        let gam = GamInstance::new(
            PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 },
            0.0,
        )
        .unwrap();
        let m = 100_000;
        let mut rng = RngState::from_seed(9).rng();
        let mut sums = [0.0; 3];
        for _ in 0..m {
            let x = sample_signal_with(&gam.prior, &mut rng);
            let f = x.flat();
            for (i, s) in sums.iter_mut().enumerate() {
                *s += 0.0 * f[i] + standard_normal(&mut rng);
            }
        }
        for s in sums {
            let mean = s / m as f64;
            assert!(mean.abs() < 3.0 / (m as f64).sqrt() + 1e-12, "mean {mean}");
        }
    }

    #[test]
    fn constant_prior_observation_means() {
        let gam = GamInstance::new(
            PriorModel::Constant {
                values: vec![1.0, 1.0],
            },
            1.0,
        )
        .unwrap();
        let m = 200_000;
        let mut rng = RngState::from_seed(11).rng();
        let mut sums = [0.0; 2];
        for _ in 0..m {
            let x = sample_signal_with(&gam.prior, &mut rng);
            let f = x.flat();
            for (i, s) in sums.iter_mut().enumerate() {
                *s += f[i] + standard_normal(&mut rng);
            }
        }
        for s in sums {
            assert!((s / m as f64 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn exact_moments_small_cases() {
        // E Z^4 = 3
        let p = PriorModel::GaussianTensor { n: 1, r: 1 };
        let m = moment(&p, &MultiIndex::new(vec![4])).unwrap();
        assert!(m.exact);
        assert_eq!(m.value, 3.0);

        // sparse Rademacher n=2, k=1: E v_1^2 = 1/2
        let p = PriorModel::SparseRademacherTensor { n: 2, k: 1, r: 1 };
        let m = moment(&p, &MultiIndex::new(vec![2, 0])).unwrap();
        assert_eq!(m.value, 0.5);

        // gaussian tensor n=2, r=2: E[X_{11} X_{22}] = E[v_1^2 v_2^2] = 1
        let p = PriorModel::GaussianTensor { n: 2, r: 2 };
        let mut exps = vec![0u32; 4];
        exps[0] = 1; // (1,1)
        exps[3] = 1; // (2,2)
        let m = moment(&p, &MultiIndex::new(exps)).unwrap();
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn moment_degree_cap_enforced() {
        let p = PriorModel::GaussianTensor { n: 1, r: 1 };
        let err = moment(&p, &MultiIndex::new(vec![13])).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn empirical_moments_match_exact_for_low_degrees() {
        let priors = [
            PriorModel::GaussianTensor { n: 2, r: 2 },
            PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 1 },
            PriorModel::SparseClustering {
                n: 2,
                p: 3,
                s: 2,
                delta: 1.0,
            },
        ];
        let m = 1_000_000;
        for (pi, prior) in priors.iter().enumerate() {
            let dim = prior.ambient_dim();
            // a few fixed test indices of degree <= 4
            let mut indices = vec![
                MultiIndex::unit(dim, 0, 2),
                MultiIndex::unit(dim, dim - 1, 4),
            ];
            let mut cross = vec![0u32; dim];
            cross[0] = 2;
            cross[dim - 1] = 2;
            indices.push(MultiIndex::new(cross));
            let mut rng = RngState::from_seed(100 + pi as u64).rng();
            let mut sums = vec![0.0; indices.len()];
            let mut sumsq = vec![0.0; indices.len()];
            for _ in 0..m {
                let x = sample_signal_with(prior, &mut rng);
                let f = x.flat();
                for (j, a) in indices.iter().enumerate() {
                    let t = a.monomial(&f);
                    sums[j] += t;
                    sumsq[j] += t * t;
                }
            }
            for (j, a) in indices.iter().enumerate() {
                let mean = sums[j] / m as f64;
                let var = (sumsq[j] / m as f64 - mean * mean).max(0.0);
                let se = (var / m as f64).sqrt();
                let exact = moment(prior, a).unwrap().value;
                assert!(
                    (mean - exact).abs() <= 4.0 * se + 1e-9,
                    "prior {pi} index {:?}: mc {mean} vs exact {exact} (4se = {})",
                    a.exps(),
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn trivial_mmse_closed_forms() {
        // gaussian r=1: n
        assert_eq!(trivial_mmse(&PriorModel::GaussianTensor { n: 7, r: 1 }), 7.0);
        // sparse Rademacher r=1: k up to rounding in the moment recursion
        let tm1 = trivial_mmse(&PriorModel::SparseRademacherTensor { n: 50, k: 7, r: 1 });
        assert!((tm1 - 7.0).abs() < 1e-12, "trivial mmse {tm1}");
        // clustering: n*s
        assert_eq!(
            trivial_mmse(&PriorModel::SparseClustering {
                n: 10,
                p: 20,
                s: 4,
                delta: 1.0
            }),
            40.0
        );
        // sparse Rademacher r>=2: k^r up to the finite-size correction,
        // and exactly E[T^r] - E[S^r]
        let p = PriorModel::SparseRademacherTensor {
            n: 400,
            k: 20,
            r: 2,
        };
        let tm = trivial_mmse(&p);
        let kr = 400.0;
        assert!(
            (tm / kr - 1.0).abs() < 0.1,
            "trivial mmse {tm} should approximate k^r = {kr}"
        );
    }

    #[test]
    fn trivial_mmse_matches_mc() {
        let p = PriorModel::SparseRademacherTensor { n: 8, k: 3, r: 2 };
        let exact = trivial_mmse(&p);
        let m = 200_000;
        let mut rng = RngState::from_seed(77).rng();
        // E||X||^2 - ||EX||^2 = E<X,X> - E<X,X'>
        let mut acc = 0.0;
        for _ in 0..m {
            let x = sample_signal_with(&p, &mut rng);
            let x2 = sample_signal_with(&p, &mut rng);
            acc += x.norm_sq() - x.overlap(&x2);
        }
        let mc = acc / m as f64;
        assert!(
            (mc - exact).abs() / exact < 0.05,
            "mc {mc} vs exact {exact}"
        );
    }

    #[test]
    fn flatten_round_trip_reproduces_tensor_entries() {
        let p = PriorModel::SparseRademacherTensor { n: 3, k: 2, r: 3 };
        let x = sample_signal(&p, RngState::from_seed(2));
        let v = match &x.latent {
            Latent::Signs(v) => v.clone(),
            _ => unreachable!(),
        };
        let f = x.flat();
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let t = i + n * j + n * n * l;
                    let want = (v[i] * v[j] * v[l]) as f64;
                    assert_eq!(f[t], want);
                }
            }
        }
    }

    #[test]
    fn prior_json_round_trip() {
        let p = PriorModel::SparseRademacherTensor { n: 50, k: 7, r: 1 };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"sparse_rademacher_tensor\""));
        assert!(s.contains("\"params\""));
        let q: PriorModel = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let r: PriorModel = serde_json::from_str(
            r#"{"kind":"sparse_clustering","params":{"n":4,"p":8,"s":2,"delta":1.5}}"#,
        )
        .unwrap();
        assert_eq!(
            r,
            PriorModel::SparseClustering {
                n: 4,
                p: 8,
                s: 2,
                delta: 1.5
            }
        );
    }
}
