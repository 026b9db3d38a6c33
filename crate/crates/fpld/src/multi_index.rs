//! Multi-indices `alpha` over a fixed set of coordinates, with exact
//! factorials and binomials in big-integer arithmetic.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// Exponent vector `alpha` in `N^len`. Indexes cumulants, Hermite
/// polynomials and monomial bases.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    exps: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        MultiIndex { exps }
    }

    pub fn zeros(len: usize) -> Self {
        MultiIndex {
            exps: vec![0; len],
        }
    }

    /// Elementary index `e_i` scaled by `k`.
    pub fn unit(len: usize, i: usize, k: u32) -> Self {
        let mut exps = vec![0; len];
        exps[i] = k;
        MultiIndex { exps }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn get(&self, i: usize) -> u32 {
        self.exps[i]
    }

    /// Total degree `|alpha|`.
    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, _)| i)
    }

    /// Coordinatewise `self <= other`.
    pub fn leq(&self, other: &MultiIndex) -> bool {
        self.exps
            .iter()
            .zip(&other.exps)
            .all(|(a, b)| a <= b)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            exps: self
                .exps
                .iter()
                .zip(&other.exps)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Coordinatewise difference; requires `other <= self`.
    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            exps: self
                .exps
                .iter()
                .zip(&other.exps)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `alpha! = prod_i alpha_i!` exactly.
    pub fn factorial_big(&self) -> BigUint {
        let mut acc = BigUint::one();
        for &e in &self.exps {
            acc *= factorial_big(e);
        }
        acc
    }

    /// `alpha!` as f64 (exact for small degrees, correctly rounded otherwise).
    pub fn factorial_f64(&self) -> f64 {
        self.factorial_big().to_f64().unwrap_or(f64::INFINITY)
    }

    /// `binom(alpha, beta) = prod_i binom(alpha_i, beta_i)`; requires `beta <= alpha`.
    pub fn binomial_big(&self, beta: &MultiIndex) -> BigUint {
        let mut acc = BigUint::one();
        for (&a, &b) in self.exps.iter().zip(&beta.exps) {
            acc *= binomial_big(a, b);
        }
        acc
    }

    pub fn binomial_f64(&self, beta: &MultiIndex) -> f64 {
        self.binomial_big(beta).to_f64().unwrap_or(f64::INFINITY)
    }

    /// `x^alpha = prod_i x_i^(alpha_i)`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.exps.len());
        let mut acc = 1.0;
        for (&xi, &e) in x.iter().zip(&self.exps) {
            acc *= xi.powi(e as i32);
        }
        acc
    }

    /// All indices `gamma` with `gamma <= self` (coordinatewise), in
    /// lexicographic order of exponent vectors.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::zeros(self.len())];
        for (i, &e) in self.exps.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * (e as usize + 1));
            for base in &out {
                for v in 0..=e {
                    let mut exps = base.exps.clone();
                    exps[i] = v;
                    next.push(MultiIndex { exps });
                }
            }
            out = next;
        }
        out
    }
}

/// All multi-indices over `len` coordinates with `|alpha| <= max_degree`,
/// graded (by total degree) then lexicographic within a grade. The empty
/// index comes first.
pub fn enumerate_up_to_degree(len: usize, max_degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        let mut cur = vec![0u32; len];
        gen_fixed_degree(len, d, 0, &mut cur, &mut out);
    }
    out
}

fn gen_fixed_degree(
    len: usize,
    remaining: u32,
    pos: usize,
    cur: &mut Vec<u32>,
    out: &mut Vec<MultiIndex>,
) {
    if pos == len {
        if remaining == 0 {
            out.push(MultiIndex::new(cur.clone()));
        }
        return;
    }
    if pos == len - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex::new(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        gen_fixed_degree(len, remaining - v, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

pub fn factorial_big(n: u32) -> BigUint {
    let mut acc = BigUint::one();
    for k in 2..=n {
        acc *= BigUint::from(k);
    }
    acc
}

pub fn binomial_big(n: u32, k: u32) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for j in 0..k {
        acc = acc * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    acc
}
