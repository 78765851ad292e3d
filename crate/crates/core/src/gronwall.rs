//! Discrete Grönwall inequalities as numeric checks.
//!
//! Both checks take sequences `a_0..a_M`, `b_0..b_M`, `c_0..c_{M-1}` and report, for every
//! `l = 1..M`, whether the hypothesis holds at `l` and whether the conclusion holds.
//!
//! Standard form:
//!
//! ```text
//! a_l + tau sum_{m<=l} b_m <= C2 + tau sum_{m<l} a_m c_m
//!   =>  a_l + tau sum_{m<=l} b_m <= C2 exp(tau sum_{m<l} c_m) <= C2 exp(C1)
//! ```
//!
//! Weighted form, with `0 < alpha < 1` and `A = 1 / (1 - alpha)`:
//!
//! ```text
//! a_l + tau sum_{m<=l} b_m <= C2 + tau sum_{m<l} c_m sum_{j<=m} alpha^(m-j) a_j
//!   =>  a_l + tau sum_{m<=l} b_m <= (C2 + a_0 C1) exp(A C1)
//! ```
//!
//! The standard form also needs its hypothesis at `l = 0`, i.e. `a_0 + tau b_0 <= C2`;
//! without it `a_1 = C2 + tau c_0 a_0` with a large `a_0` breaks the conclusion. The
//! weighted form carries `a_0` in its bound and needs no such condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative slack in all comparisons, so that saturated instances compare as equal.
pub const COMPARISON_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallInput {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
}

impl GronwallInput {
    /// `M`, the number of steps.
    pub fn steps(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.c.len();
        if m == 0 {
            return Err(Error::InvalidInput("c must have at least one entry".into()));
        }
        if self.a.len() != m + 1 {
            return Err(Error::DimensionMismatch { expected: m + 1, got: self.a.len() });
        }
        if self.b.len() != m + 1 {
            return Err(Error::DimensionMismatch { expected: m + 1, got: self.b.len() });
        }
        for (name, seq) in [("a", &self.a), ("b", &self.b), ("c", &self.c)] {
            if let Some(i) = seq.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput(format!("{name}[{i}] = {} is not a nonnegative number", seq[i])));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, v) in [("C1", self.c1), ("C2", self.c2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// `a_l + tau sum_{m<=l} b_m` for `l = 0..=M`.
    fn lhs(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| {
                acc += self.tau * b;
                a + acc
            })
            .collect()
    }

    /// `tau sum_{m<l} c_m` for `l = 0..=M`.
    fn c_prefix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.c.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for c in &self.c {
            acc += self.tau * c;
            out.push(acc);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    /// `tau sum c <= C1`.
    pub c_sum_within_c1: bool,
    /// Hypothesis at `l = 1..=M` (entry `l - 1`).
    pub hypothesis: Vec<bool>,
    /// Conclusion at `l = 1..=M` against `bound`.
    pub conclusion: Vec<bool>,
    pub lhs: Vec<f64>,
    pub hypothesis_rhs: Vec<f64>,
    /// The lemma's bound with `C1` replaced by `tau sum_{m<l} c_m`, which is the lemma
    /// applied up to step `l`.
    pub bound: Vec<f64>,
    /// The bound in terms of `C1`.
    pub uniform_bound: f64,
    /// The `l = 0` hypothesis, `a_0 + tau b_0 <= C2` (needed by the standard form).
    pub initial_hypothesis: bool,
}

impl GronwallReport {
    /// First `l` at which every hypothesis up to `l` holds but the conclusion fails.
    pub fn first_violation(&self) -> Option<usize> {
        for l in 0..self.hypothesis.len() {
            if !self.hypothesis[l] {
                return None;
            }
            if !self.conclusion[l] || (self.c_sum_within_c1 && !leq(self.lhs[l], self.uniform_bound)) {
                return Some(l + 1);
            }
        }
        None
    }

    /// Every hypothesis holds (including `tau sum c <= C1`).
    pub fn hypotheses_hold(&self) -> bool {
        self.c_sum_within_c1 && self.hypothesis.iter().all(|&h| h)
    }
}

fn leq(x: f64, y: f64) -> bool {
    x <= y + COMPARISON_TOLERANCE * x.abs().max(y.abs())
}

fn report(input: &GronwallInput, hypothesis_rhs: Vec<f64>, bound: Vec<f64>, uniform_bound: f64) -> GronwallReport {
    let lhs_all = input.lhs();
    let lhs = lhs_all[1..].to_vec();
    let total_c = *input.c_prefix().last().unwrap();
    GronwallReport {
        c_sum_within_c1: leq(total_c, input.c1),
        hypothesis: lhs.iter().zip(&hypothesis_rhs).map(|(l, r)| leq(*l, *r)).collect(),
        conclusion: lhs.iter().zip(&bound).map(|(l, b)| leq(*l, *b)).collect(),
        initial_hypothesis: leq(lhs_all[0], input.c2),
        lhs,
        hypothesis_rhs,
        bound,
        uniform_bound,
    }
}

pub fn check_gronwall_standard(input: &GronwallInput) -> Result<GronwallReport> {
    input.validate()?;
    let m = input.steps();
    let mut rhs = Vec::with_capacity(m);
    let mut acc = 0.0;
    for l in 1..=m {
        acc += input.tau * input.a[l - 1] * input.c[l - 1];
        rhs.push(input.c2 + acc);
    }
    let bound = input.c_prefix()[1..].iter().map(|s| input.c2 * s.exp()).collect();
    let mut r = report(input, rhs, bound, input.c2 * input.c1.exp());
    // the l = 0 case is part of the standard hypothesis
    if !r.initial_hypothesis {
        r.hypothesis.iter_mut().for_each(|h| *h = false);
    }
    Ok(r)
}

/// `A_alpha = 1 / (1 - alpha)`, correctly rounded in practice (`a_alpha(1/3) == 1.5`).
pub fn a_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    // 1 - alpha = d + err exactly, then one Newton correction of the reciprocal
    let d = 1.0 - alpha;
    let err = (1.0 - d) - alpha;
    let inv = 1.0 / d;
    let r = (-inv).mul_add(d, 1.0) - inv * err;
    Ok(inv + inv * r)
}

/// `w_m = sum_{j<=m} alpha^(m-j) a_j` for `m = 0..M-1`, by `w_m = alpha w_{m-1} + a_m`.
fn weighted_sums(a: &[f64], alpha: f64, len: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(len);
    let mut acc = 0.0;
    for &aj in &a[..len] {
        acc = alpha * acc + aj;
        w.push(acc);
    }
    w
}

pub fn check_gronwall_weighted(input: &GronwallInput, alpha: f64) -> Result<GronwallReport> {
    input.validate()?;
    let big_a = a_alpha(alpha)?;
    let m = input.steps();
    let w = weighted_sums(&input.a, alpha, m);
    let mut rhs = Vec::with_capacity(m);
    let mut acc = 0.0;
    for l in 1..=m {
        acc += input.tau * input.c[l - 1] * w[l - 1];
        rhs.push(input.c2 + acc);
    }
    let a0 = input.a[0];
    let bound = input.c_prefix()[1..].iter().map(|s| (input.c2 + a0 * s) * (big_a * s).exp()).collect();
    Ok(report(input, rhs, bound, (input.c2 + a0 * input.c1) * (big_a * input.c1).exp()))
}

/// `a` saturating the standard hypothesis at every `l >= 0`. `b` has `c.len() + 1`
/// entries with `tau sum b <= C2`; pass zeros for the plain extremal sequence.
pub fn extremal_standard(c: &[f64], b: &[f64], tau: f64, c2: f64) -> GronwallInput {
    let mut a = Vec::with_capacity(c.len() + 1);
    let mut b_sum = tau * b[0];
    a.push((c2 - b_sum).max(0.0));
    let mut acc = 0.0;
    for (m, cm) in c.iter().enumerate() {
        acc += tau * a[m] * cm;
        b_sum += tau * b[m + 1];
        a.push((c2 + acc - b_sum).max(0.0));
    }
    let c1 = tau * c.iter().sum::<f64>();
    GronwallInput { b: b.to_vec(), a, c: c.to_vec(), tau, c1, c2 }
}

/// `a` saturating the weighted hypothesis at every `l >= 1` for the given `a_0`.
pub fn extremal_weighted(c: &[f64], b: &[f64], tau: f64, c2: f64, a0: f64, alpha: f64) -> GronwallInput {
    let mut a = Vec::with_capacity(c.len() + 1);
    a.push(a0);
    let mut b_sum = tau * b[0];
    let mut acc = 0.0;
    let mut w = 0.0;
    for (m, cm) in c.iter().enumerate() {
        w = alpha * w + a[m];
        acc += tau * cm * w;
        b_sum += tau * b[m + 1];
        a.push((c2 + acc - b_sum).max(0.0));
    }
    let c1 = tau * c.iter().sum::<f64>();
    GronwallInput { b: b.to_vec(), a, c: c.to_vec(), tau, c1, c2 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelftestSummary {
    pub standard_instances: usize,
    pub standard_violations: usize,
    pub weighted_instances: usize,
    pub weighted_violations: usize,
    /// Instances where the generated data failed its own hypothesis (generator bugs).
    pub hypothesis_failures: usize,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.standard_violations == 0 && self.weighted_violations == 0 && self.hypothesis_failures == 0
    }
}

/// Random extremal instance data: `(c, b, tau, C2)`. Half of the instances have `b = 0`;
/// the others spend a random part of `C2` on `b`.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let m = rng.random_range(1..=60);
    let tau = 10f64.powf(rng.random_range(-3.0..0.0));
    let scale = 10f64.powf(rng.random_range(-2.0..1.5));
    let c = (0..m).map(|_| scale * rng.random_range(0.0..1.0)).collect();
    let c2 = rng.random_range(0.01..10.0);
    let mut b: Vec<f64> = (0..=m).map(|_| rng.random_range(0.0..1.0)).collect();
    let share = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..1.0) };
    let total = tau * b.iter().sum::<f64>();
    b.iter_mut().for_each(|v| *v *= share * c2 / total);
    (c, b, tau, c2)
}

/// Checks both lemmas on `instances` random extremal instances each.
pub fn selftest(instances: usize, seed: u64) -> Result<SelftestSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SelftestSummary::default();
    for _ in 0..instances {
        let (c, b, tau, c2) = random_instance(&mut rng);
        let input = extremal_standard(&c, &b, tau, c2);
        let r = check_gronwall_standard(&input)?;
        s.standard_instances += 1;
        if !r.hypotheses_hold() {
            s.hypothesis_failures += 1;
        }
        if r.first_violation().is_some() {
            s.standard_violations += 1;
        }
    }
    for _ in 0..instances {
        let (c, b, tau, c2) = random_instance(&mut rng);
        let alpha = rng.random_range(0.01..0.99);
        let a0 = rng.random_range(0.0..10.0);
        let input = extremal_weighted(&c, &b, tau, c2, a0, alpha);
        let r = check_gronwall_weighted(&input, alpha)?;
        s.weighted_instances += 1;
        if !r.hypotheses_hold() {
            s.hypothesis_failures += 1;
        }
        if r.first_violation().is_some() {
            s.weighted_violations += 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, tau: f64, c2: f64) -> GronwallInput {
        let c1 = tau * c.iter().sum::<f64>();
        GronwallInput { a, b, c, tau, c1, c2 }
    }

    #[test]
    fn zero_c_gives_c2() {
        let inp = input(vec![1.0, 0.5, 0.8, 0.2], vec![0.0, 2.0, 0.0, 1.0], vec![0.0; 3], 0.1, 1.0);
        let r = check_gronwall_standard(&inp).unwrap();
        assert!(r.bound.iter().all(|&b| b == 1.0));
        assert_eq!(r.uniform_bound, 1.0);
        assert!(r.hypotheses_hold() && r.conclusion.iter().all(|&c| c));
        let w = check_gronwall_weighted(&inp, 0.5).unwrap();
        assert!(w.bound.iter().all(|&b| b == 1.0));
        assert_eq!(r.first_violation(), None);
    }

    #[test]
    fn zero_a_and_b() {
        for c2 in [0.0, 1.0, 7.5] {
            let inp = input(vec![0.0; 5], vec![0.0; 5], vec![3.0, 1.0, 0.0, 2.0], 0.2, c2);
            let r = check_gronwall_standard(&inp).unwrap();
            assert!(r.conclusion.iter().all(|&c| c) && r.first_violation().is_none());
        }
    }

    #[test]
    fn a_alpha_values() {
        assert_eq!(a_alpha(1.0 / 3.0).unwrap(), 1.5);
        assert_eq!(a_alpha(0.5).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let alpha: f64 = rng.random_range(1e-9..0.999);
            let naive = 1.0 / (1.0 - alpha);
            assert!((a_alpha(alpha).unwrap() - naive).abs() <= 4.0 * f64::EPSILON * naive);
        }
        for bad in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(a_alpha(bad).is_err());
        }
        let inp = extremal_weighted(&[1.0], &[0.0; 2], 0.1, 1.0, 0.0, 0.5);
        assert!(check_gronwall_weighted(&inp, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let ok = input(vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0], 0.1, 1.0);
        assert!(check_gronwall_standard(&ok).is_ok());
        let mut bad = ok.clone();
        bad.a[1] = -1.0;
        assert!(check_gronwall_standard(&bad).unwrap_err().to_string().contains("a[1]"));
        let mut bad = ok.clone();
        bad.c.push(0.0);
        assert!(check_gronwall_standard(&bad).is_err());
        let mut bad = ok;
        bad.tau = 0.0;
        assert!(check_gronwall_standard(&bad).is_err());
    }

    #[test]
    fn c_sum_above_c1_is_reported() {
        let mut inp = extremal_standard(&[1.0, 2.0], &[0.0; 3], 0.5, 1.0);
        inp.c1 = 1.0;
        let r = check_gronwall_standard(&inp).unwrap();
        assert!(!r.c_sum_within_c1 && !r.hypotheses_hold());
    }

    #[test]
    fn standard_needs_the_initial_hypothesis() {
        // a_0 far above C2: the l >= 1 hypotheses hold with equality, the conclusion fails
        let c = [1.0];
        let (tau, c2, a0) = (1.0, 1.0, 100.0);
        let inp = input(vec![a0, c2 + tau * a0 * c[0]], vec![0.0; 2], c.to_vec(), tau, c2);
        let r = check_gronwall_standard(&inp).unwrap();
        assert!(!r.initial_hypothesis && !r.conclusion[0]);
        // the report does not count this as a violation of the lemma
        assert_eq!(r.first_violation(), None);
    }

    #[test]
    fn extremal_instances_never_violate() {
        let s = selftest(1000, 2024).unwrap();
        assert_eq!(s.standard_instances, 1000);
        assert_eq!(s.weighted_instances, 1000);
        assert!(s.passed(), "{s:?}");
    }

    #[test]
    fn extremal_standard_is_tight_for_small_steps() {
        // a_l = C2 prod (1 + tau c) approaches C2 exp(tau sum c) as tau -> 0
        let m = 10_000;
        let tau = 1.0 / m as f64;
        let inp = extremal_standard(&vec![2.0; m], &vec![0.0; m + 1], tau, 1.0);
        let r = check_gronwall_standard(&inp).unwrap();
        let ratio = r.lhs[m - 1] / r.bound[m - 1];
        assert!(ratio < 1.0 && ratio > 0.999, "{ratio}");
    }

    #[test]
    fn bounds_are_monotone_in_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (c, b, tau, c2) = random_instance(&mut rng);
            let base = extremal_weighted(&c, &b, tau, c2, 1.0, 0.3);
            let mut bumped = base.clone();
            let k = rng.random_range(0..c.len());
            bumped.c[k] += rng.random_range(0.0..2.0);
            bumped.c1 = tau * bumped.c.iter().sum::<f64>();
            let s0 = check_gronwall_standard(&base).unwrap();
            let s1 = check_gronwall_standard(&bumped).unwrap();
            let w0 = check_gronwall_weighted(&base, 0.3).unwrap();
            let w1 = check_gronwall_weighted(&bumped, 0.3).unwrap();
            for l in 0..c.len() {
                assert!(s1.bound[l] >= s0.bound[l] && w1.bound[l] >= w0.bound[l]);
            }
            assert!(s1.uniform_bound >= s0.uniform_bound && w1.uniform_bound >= w0.uniform_bound);
        }
    }

    #[test]
    fn weighted_approaches_standard_as_alpha_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (mut c, b, tau, c2) = random_instance(&mut rng);
            // keep C1 <= 10 so exp(A C1) and exp(C1) stay within 1e-4 of each other
            let c1 = tau * c.iter().sum::<f64>();
            if c1 > 10.0 {
                c.iter_mut().for_each(|v| *v *= 10.0 / c1);
            }
            let inp = extremal_standard(&c, &b, tau, c2);
            let s = check_gronwall_standard(&inp).unwrap();
            let w = check_gronwall_weighted(&inp, 1e-6).unwrap();
            let a0 = inp.a[0];
            for l in 0..c.len() {
                let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
                assert!(rel(w.hypothesis_rhs[l], s.hypothesis_rhs[l]) < 1e-4);
                // same exponential factor; the weighted bound only adds a_0 C1 to C2
                let sum_c = tau * c[..=l].iter().sum::<f64>();
                let expected = s.bound[l] * (c2 + a0 * sum_c) / c2;
                assert!(rel(w.bound[l], expected) < 1e-4, "{} {}", w.bound[l], expected);
            }
        }
    }
}
