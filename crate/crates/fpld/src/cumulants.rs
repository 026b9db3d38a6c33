//! Joint-cumulant engine over multi-indices: the set-partition and
//! recursion formulas, the diagonal slice identity, cumulants of paired
//! products, nonnegativity checkers for structured priors, and the
//! cumulant upper bound on the degree-D squared correlation.
//!
//! Formulas are generic over the scalar so that identities that hold
//! exactly (vanishing across independent blocks) can be verified in
//! rational arithmetic, while production paths run in f64 with
//! compensated summation.

use crate::multi_index::{enumerate_up_to_degree, MultiIndex};
use crate::priors::{latent_exponents_tensor, moment, PriorModel};
use crate::{Error, Result};
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Mutex;

/// Scalars the cumulant formulas run over.
pub trait CumulantScalar:
    Clone
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + PartialEq
{
    fn from_u64(x: u64) -> Self;
}

impl CumulantScalar for f64 {
    fn from_u64(x: u64) -> Self {
        x as f64
    }
}

impl CumulantScalar for BigRational {
    fn from_u64(x: u64) -> Self {
        BigRational::from_integer(x.into())
    }
}

/// Mixed-moment source `vars -> E[prod_i X_{vars[i]}]`; `vars` is a
/// multiset of coordinate ids.
pub trait MomentOracle<T> {
    fn moment(&self, vars: &[usize]) -> Result<T>;
    fn max_degree(&self) -> u32;
    fn is_exact(&self) -> bool;
}

/// Moment oracle backed by a lookup table keyed on sorted multisets.
#[derive(Debug, Clone)]
pub struct TableOracle<T> {
    table: BTreeMap<Vec<usize>, T>,
    max_degree: u32,
}

impl<T: Clone> TableOracle<T> {
    pub fn new(table: BTreeMap<Vec<usize>, T>, max_degree: u32) -> Self {
        TableOracle { table, max_degree }
    }
}

impl<T: Clone + One> MomentOracle<T> for TableOracle<T> {
    fn moment(&self, vars: &[usize]) -> Result<T> {
        if vars.is_empty() {
            return Ok(T::one());
        }
        let mut key = vars.to_vec();
        key.sort_unstable();
        self.table
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::validation(format!("moment table missing entry for {key:?}")))
    }
    fn max_degree(&self) -> u32 {
        self.max_degree
    }
    fn is_exact(&self) -> bool {
        true
    }
}

/// Moment oracle over a prior's ambient coordinates, memoized on the
/// canonical latent-exponent reduction so tensor symmetry collapses the
/// cache.
pub struct PriorOracle<'a> {
    prior: &'a PriorModel,
    cap: u32,
    cache: Mutex<HashMap<Vec<u32>, f64>>,
    exact: bool,
}

impl<'a> PriorOracle<'a> {
    pub fn new(prior: &'a PriorModel, cap: u32) -> Self {
        let exact = !matches!(prior, PriorModel::TruncatedSparseTensor3 { .. });
        PriorOracle {
            prior,
            cap,
            cache: Mutex::new(HashMap::new()),
            exact,
        }
    }

    fn canonical_key(&self, alpha: &MultiIndex) -> Vec<u32> {
        match self.prior {
            PriorModel::GaussianTensor { n, r } | PriorModel::SparseRademacherTensor { n, r, .. } => {
                let mut e = latent_exponents_tensor(*n, *r, alpha);
                e.sort_unstable();
                e
            }
            PriorModel::SparseClustering { n, p, .. } => {
                let mut xi = vec![0u32; *n];
                let mut mu = vec![0u32; *p];
                for (t, &a) in alpha.exps().iter().enumerate() {
                    if a > 0 {
                        xi[t / p] += a;
                        mu[t % p] += a;
                    }
                }
                xi.sort_unstable();
                mu.sort_unstable();
                xi.extend_from_slice(&[u32::MAX]);
                xi.extend(mu);
                xi
            }
            _ => alpha.exps().to_vec(),
        }
    }
}

impl MomentOracle<f64> for PriorOracle<'_> {
    fn moment(&self, vars: &[usize]) -> Result<f64> {
        let dim = self.prior.ambient_dim();
        let mut exps = vec![0u32; dim];
        for &v in vars {
            if v >= dim {
                return Err(Error::validation(format!("coordinate {v} out of range")));
            }
            exps[v] += 1;
        }
        let alpha = MultiIndex::new(exps);
        let key = self.canonical_key(&alpha);
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let m = moment(self.prior, &alpha)?;
        self.cache.lock().unwrap().insert(key, m.value);
        Ok(m.value)
    }
    fn max_degree(&self) -> u32 {
        self.cap
    }
    fn is_exact(&self) -> bool {
        self.exact
    }
}

/// Bell-number budget: set partitions are enumerated for at most this many
/// elements.
pub const PARTITION_MAX_M: usize = 10;

fn partition_lists(m: usize) -> &'static Vec<Vec<usize>> {
    use std::sync::OnceLock;
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static Vec<Vec<usize>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(v) = guard.get(&m) {
        return v;
    }
    // restricted-growth strings: a[0] = 0, a[i] <= max(a[0..i]) + 1
    let mut all: Vec<Vec<usize>> = Vec::new();
    let mut a = vec![0usize; m];
    loop {
        all.push(a.clone());
        // advance
        let mut i = m;
        loop {
            if i <= 1 {
                let leaked: &'static Vec<Vec<usize>> = Box::leak(Box::new(all));
                guard.insert(m, leaked);
                return leaked;
            }
            i -= 1;
            let max_prefix = a[..i].iter().copied().max().unwrap_or(0);
            if a[i] <= max_prefix {
                a[i] += 1;
                for x in a.iter_mut().skip(i + 1) {
                    *x = 0;
                }
                break;
            }
        }
    }
}

/// Joint cumulant by the set-partition formula
/// `sum_pi (|pi|-1)! (-1)^(|pi|-1) prod_B E[prod_{i in B} X_i]`.
pub fn cumulant_partition<T: CumulantScalar>(
    oracle: &dyn MomentOracle<T>,
    vars: &[usize],
) -> Result<T> {
    let m = vars.len();
    if m == 0 {
        return Err(Error::validation("cumulant of zero variables".to_string()));
    }
    if m > PARTITION_MAX_M {
        return Err(Error::budget(format!(
            "partition formula limited to m <= {PARTITION_MAX_M}, got {m}"
        )));
    }
    if (m as u32) > oracle.max_degree() {
        return Err(Error::budget(format!(
            "oracle degree cap {} insufficient for m = {m}",
            oracle.max_degree()
        )));
    }
    let mut acc = T::zero();
    let mut block: Vec<usize> = Vec::with_capacity(m);
    for assignment in partition_lists(m) {
        let n_blocks = assignment.iter().copied().max().unwrap() + 1;
        // (|pi|-1)! (-1)^(|pi|-1)
        let mut coeff = T::one();
        for j in 1..n_blocks as u64 {
            coeff = coeff * T::from_u64(j);
        }
        if (n_blocks - 1) % 2 == 1 {
            coeff = -coeff;
        }
        let mut prod = coeff;
        for b in 0..n_blocks {
            block.clear();
            for (i, &bi) in assignment.iter().enumerate() {
                if bi == b {
                    block.push(vars[i]);
                }
            }
            prod = prod * oracle.moment(&block)?;
        }
        acc = acc + prod;
    }
    Ok(acc)
}

/// Joint cumulant by the splitting recursion
/// `kappa(Y) = E[prod Y] - sum_{S} kappa(Y_i : i not in S) E[prod_S Y]`,
/// memoized over sub-multisets.
pub fn cumulant_recursive<T: CumulantScalar>(
    oracle: &dyn MomentOracle<T>,
    vars: &[usize],
) -> Result<T> {
    let m = vars.len();
    if m == 0 {
        return Err(Error::validation("cumulant of zero variables".to_string()));
    }
    if m > PARTITION_MAX_M {
        return Err(Error::budget(format!(
            "recursion limited to m <= {PARTITION_MAX_M}, got {m}"
        )));
    }
    if (m as u32) > oracle.max_degree() {
        return Err(Error::budget(format!(
            "oracle degree cap {} insufficient for m = {m}",
            oracle.max_degree()
        )));
    }
    let mut memo: BTreeMap<Vec<usize>, T> = BTreeMap::new();
    cumulant_recursive_inner(oracle, vars, &mut memo)
}

fn cumulant_recursive_inner<T: CumulantScalar>(
    oracle: &dyn MomentOracle<T>,
    vars: &[usize],
    memo: &mut BTreeMap<Vec<usize>, T>,
) -> Result<T> {
    let mut key = vars.to_vec();
    key.sort_unstable();
    if let Some(v) = memo.get(&key) {
        return Ok(v.clone());
    }
    let m = vars.len();
    let mut acc = oracle.moment(vars)?;
    if m > 1 {
        // nonempty S subset of positions {1..m-1} (position 0 stays out)
        for mask in 1u32..(1 << (m - 1)) {
            let mut inside: Vec<usize> = Vec::new();
            let mut outside: Vec<usize> = vec![vars[0]];
            for j in 0..m - 1 {
                if mask & (1 << j) != 0 {
                    inside.push(vars[j + 1]);
                } else {
                    outside.push(vars[j + 1]);
                }
            }
            let kappa_out = cumulant_recursive_inner(oracle, &outside, memo)?;
            acc = acc - kappa_out * oracle.moment(&inside)?;
        }
    }
    memo.insert(key, acc.clone());
    Ok(acc)
}

/// Expands a multi-index into the multiset of coordinate ids it denotes.
pub fn expand_multi_index(alpha: &MultiIndex) -> Vec<usize> {
    let mut out = Vec::with_capacity(alpha.degree() as usize);
    for (i, &e) in alpha.exps().iter().enumerate() {
        for _ in 0..e {
            out.push(i);
        }
    }
    out
}

/// `|kappa_m(sum_i X_i)/m! - sum_{|gamma|=m} kappa_gamma / gamma!|`.
pub fn diagonal_slice_check(
    oracle: &dyn MomentOracle<f64>,
    m: u32,
    n_coords: usize,
) -> Result<f64> {
    if m > 6 || n_coords > 4 {
        return Err(Error::budget(
            "diagonal slice check limited to m <= 6, N <= 4".to_string(),
        ));
    }
    // 1-D oracle of the sum: E[(sum X)^j] = sum_{|gamma|=j} j!/gamma! E[X^gamma]
    let mut sum_moments = vec![0.0f64; m as usize + 1];
    sum_moments[0] = 1.0;
    for j in 1..=m {
        let mut acc = 0.0;
        for gamma in enumerate_up_to_degree(n_coords, j) {
            if gamma.degree() != j {
                continue;
            }
            let coeff = crate::multi_index::factorial_big(j)
                .to_string()
                .parse::<f64>()
                .unwrap()
                / gamma.factorial_f64();
            acc += coeff * oracle.moment(&expand_multi_index(&gamma))?;
        }
        sum_moments[j as usize] = acc;
    }
    let sum_oracle = TableOracle::new(
        (1..=m as usize)
            .map(|j| (vec![0usize; j], sum_moments[j]))
            .collect(),
        m,
    );
    let lhs = cumulant_partition(&sum_oracle, &vec![0usize; m as usize])?
        / crate::multi_index::factorial_big(m)
            .to_string()
            .parse::<f64>()
            .unwrap();
    let mut rhs = 0.0;
    for gamma in enumerate_up_to_degree(n_coords, m) {
        if gamma.degree() != m {
            continue;
        }
        let kappa = cumulant_partition(oracle, &expand_multi_index(&gamma))?;
        rhs += kappa / gamma.factorial_f64();
    }
    Ok((lhs - rhs).abs())
}

/// Adapter: moments of the paired products `X_i X_i'` for an independent
/// copy `X'`: `E[prod (X_i X_i')^(gamma_i)] = (E[X^gamma])^2`.
pub struct PairProductOracle<'a, T> {
    pub base: &'a dyn MomentOracle<T>,
}

impl<T: CumulantScalar> MomentOracle<T> for PairProductOracle<'_, T> {
    fn moment(&self, vars: &[usize]) -> Result<T> {
        let m = self.base.moment(vars)?;
        Ok(m.clone() * m)
    }
    fn max_degree(&self) -> u32 {
        self.base.max_degree()
    }
    fn is_exact(&self) -> bool {
        self.base.is_exact()
    }
}

/// `ktilde_alpha = kappa_alpha(X_1 X_1', ..., X_N X_N')`.
pub fn ktilde<T: CumulantScalar>(
    oracle: &dyn MomentOracle<T>,
    alpha: &MultiIndex,
) -> Result<T> {
    if alpha.degree() > 5 {
        return Err(Error::budget("ktilde limited to |alpha| <= 5".to_string()));
    }
    let pair = PairProductOracle { base: oracle };
    cumulant_partition(&pair, &expand_multi_index(alpha))
}

/// Kahan-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Cumulant upper bound on the degree-D squared correlation:
/// `sum_i sum_{0 <= |alpha| <= D} kappa_alpha^2(X_i, sqrt(l) X, ...) / alpha!`.
///
/// By multilinearity the SNR factors out of each cumulant as
/// `lambda^{|alpha|}`; the remaining joint cumulants are computed from the
/// prior's exact moment oracle (Monte-Carlo oracles are rejected).
pub fn sw_corr_upper_bound(prior: &PriorModel, lambda: f64, degree: u32) -> Result<f64> {
    let dim = prior.ambient_dim();
    let oracle = PriorOracle::new(prior, (degree + 1).max(crate::priors::MOMENT_DEGREE_CAP));
    if !oracle.is_exact() {
        return Err(Error::validation(
            "cumulant bound requires an exact moment oracle".to_string(),
        ));
    }
    let basis_count = crate::multi_index::binomial_big(dim as u32 + degree, degree);
    if basis_count > num_bigint::BigUint::from(1_000_000u64) {
        return Err(Error::budget(format!(
            "multi-index enumeration C({} + {degree}, {degree}) exceeds 1e6",
            dim
        )));
    }
    let alphas = enumerate_up_to_degree(dim, degree);
    let mut total = Kahan::default();
    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for i in 0..dim {
        for alpha in &alphas {
            let mut vars = expand_multi_index(alpha);
            vars.push(i);
            let kappa = cumulant_recursive_inner(&oracle, &vars, &mut memo)?;
            let weight = lambda.powi(alpha.degree() as i32) / alpha.factorial_f64();
            total.add(kappa * kappa * weight);
        }
    }
    Ok(total.sum)
}

/// Report of the low-order nonnegativity checks on a prior.
#[derive(Debug, Clone)]
pub struct NonNegReport {
    /// Minimum joint cumulant over the enumerated multi-index range.
    pub min_kappa: f64,
    /// Witness multi-index attaining the minimum.
    pub argmin: MultiIndex,
    /// Latent coordinate moments `E[v^e]` are all nonnegative.
    pub moments_nonneg: bool,
    /// Fitted supermultiplicativity ratio
    /// `max_{k,t} E[v^k] E[v^t] / E[v^{k+t}]` over even exponents.
    pub supermultiplicative_rho: Option<f64>,
    /// Minimum 1-D cumulant of a latent coordinate, orders 1..=D.
    pub latent_cumulant_min: f64,
}

/// Enumerates joint cumulants `kappa_alpha` for `|alpha| <= degree` and the
/// per-class structural diagnostics on the latent coordinate prior.
pub fn check_low_order_nonneg(prior: &PriorModel, degree: u32) -> Result<NonNegReport> {
    let dim = prior.ambient_dim();
    if degree > 4 || dim > 4 {
        return Err(Error::budget(
            "nonnegativity checker limited to |alpha| <= 4, N <= 4".to_string(),
        ));
    }
    let oracle = PriorOracle::new(prior, crate::priors::MOMENT_DEGREE_CAP);
    let mut min_kappa = f64::INFINITY;
    let mut argmin = MultiIndex::zeros(dim);
    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for alpha in enumerate_up_to_degree(dim, degree) {
        if alpha.degree() == 0 {
            continue;
        }
        let kappa = cumulant_recursive_inner(&oracle, &expand_multi_index(&alpha), &mut memo)?;
        if kappa < min_kappa {
            min_kappa = kappa;
            argmin = alpha.clone();
        }
    }

    // latent coordinate diagnostics
    let latent_mom: Option<Box<dyn Fn(u32) -> f64>> = match prior {
        PriorModel::GaussianTensor { .. } => Some(Box::new(crate::priors::gaussian_moment)),
        PriorModel::SparseRademacherTensor { n, k, .. } => {
            let rho = *k as f64 / *n as f64;
            Some(Box::new(move |e| {
                if e == 0 {
                    1.0
                } else if e % 2 == 1 {
                    0.0
                } else {
                    rho
                }
            }))
        }
        PriorModel::SparseClustering { p, s, .. } => {
            let rho = *s as f64 / *p as f64;
            Some(Box::new(move |e| {
                if e == 0 {
                    1.0
                } else if e % 2 == 1 {
                    0.0
                } else {
                    rho * crate::priors::gaussian_moment(e)
                }
            }))
        }
        PriorModel::Constant { values } => {
            let c = values[0];
            Some(Box::new(move |e| c.powi(e as i32)))
        }
        PriorModel::TruncatedSparseTensor3 { .. } => None,
    };
    let (moments_nonneg, supermultiplicative_rho, latent_cumulant_min) = match latent_mom {
        None => (false, None, f64::NAN),
        Some(f) => {
            let cap = 2 * degree.max(2);
            let nonneg = (0..=cap).all(|e| f(e) >= 0.0);
            let mut rho_fit: f64 = 0.0;
            let mut any = false;
            for a in 1..=cap / 2 {
                for b in 1..=cap - a {
                    if a + b > cap {
                        continue;
                    }
                    let denom = f(a + b);
                    if denom > 0.0 {
                        any = true;
                        rho_fit = rho_fit.max(f(a) * f(b) / denom);
                    }
                }
            }
            // 1-D cumulants from the latent moments
            let table: BTreeMap<Vec<usize>, f64> = (1..=degree as usize)
                .map(|j| (vec![0usize; j], f(j as u32)))
                .collect();
            let latent_oracle = TableOracle::new(table, degree);
            let mut cmin = f64::INFINITY;
            for j in 1..=degree as usize {
                cmin = cmin.min(cumulant_partition(&latent_oracle, &vec![0usize; j])?);
            }
            (nonneg, if any { Some(rho_fit) } else { None }, cmin)
        }
    };
    Ok(NonNegReport {
        min_kappa,
        argmin,
        moments_nonneg,
        supermultiplicative_rho,
        latent_cumulant_min,
    })
}

/// Tabulated joint cumulants over `|alpha| <= degree`.
#[derive(Debug, Clone)]
pub struct CumulantTable {
    pub entries: Vec<(MultiIndex, f64)>,
    /// "partition" or "recursion"
    pub provenance: &'static str,
}

pub fn build_cumulant_table(
    prior: &PriorModel,
    degree: u32,
    use_partition: bool,
) -> Result<CumulantTable> {
    let dim = prior.ambient_dim();
    let oracle = PriorOracle::new(prior, crate::priors::MOMENT_DEGREE_CAP);
    let mut entries = Vec::new();
    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for alpha in enumerate_up_to_degree(dim, degree) {
        if alpha.degree() == 0 {
            continue;
        }
        let vars = expand_multi_index(&alpha);
        let kappa = if use_partition {
            cumulant_partition(&oracle, &vars)?
        } else {
            cumulant_recursive_inner(&oracle, &vars, &mut memo)?
        };
        entries.push((alpha, kappa));
    }
    Ok(CumulantTable {
        entries,
        provenance: if use_partition { "partition" } else { "recursion" },
    })
}

/// CSV export: `alpha_as_sorted_pairs,kappa,kappa_squared_over_factorial`.
pub fn cumulant_table_to_csv(table: &CumulantTable) -> String {
    let mut out = String::from("alpha_as_sorted_pairs,kappa,kappa_squared_over_factorial\n");
    for (alpha, kappa) in &table.entries {
        let pairs: Vec<String> = alpha
            .exps()
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| format!("{i}:{e}"))
            .collect();
        out.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            pairs.join(";"),
            kappa,
            kappa * kappa / alpha.factorial_f64()
        ));
    }
    out
}
