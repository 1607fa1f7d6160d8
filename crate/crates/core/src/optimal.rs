//! Benchmarks for the mechanism: the optimum of the continuous relaxation in
//! closed form, and the exact optimum over 0/1 estimators by enumeration.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{sum, Scalar};
use crate::error::{Error, Result};
use crate::instances::AuctionInstance;
use crate::mechanism::{fair_inner_product, Branch};

/// Largest `n` accepted by [`brute_force_opt`].
pub const ORACLE_LIMIT: usize = 20;

/// Optimum of the relaxation `max sum |w_i| x_i` over `x` in `[0,1]^n` subject
/// to tight individual rationality and the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalSolution {
    pub x_star: Vec<f64>,
    pub payments: Vec<f64>,
    /// Number of individuals fully bought; `x_star[ell]` is the fractional one.
    pub ell: usize,
    pub objective: f64,
    #[serde(skip)]
    abs_weights: Vec<f64>,
    #[serde(skip)]
    unit_costs: Vec<f64>,
    #[serde(skip)]
    budget: f64,
}

/// Closed-form optimum: with `p(t) = sum_{i>t} |w_i|`, `q(t) = sum_{i<=t} v_i |w_i|`
/// and `g(t) = q(t) - B p(t)`, buy the first `ell = max{t : g(t) <= 0}`
/// individuals and the fraction `-g(ell) / ((v + B)|w|)` of the next one.
pub fn fractional_optimum(instance: &AuctionInstance) -> Result<FractionalSolution> {
    if !instance.is_canonical() {
        let index = (1..instance.len())
            .find(|&i| instance.unit_costs()[i] < instance.unit_costs()[i - 1])
            .unwrap_or(0);
        return Err(Error::NotCanonical { index });
    }
    let w = instance.abs_weights();
    let v = instance.unit_costs().to_vec();
    let b = instance.budget();
    let n = w.len();

    let mut p = vec![0.0; n + 1];
    for t in (0..n).rev() {
        p[t] = p[t + 1] + w[t];
    }
    let mut q = vec![0.0; n + 1];
    for t in 0..n {
        q[t + 1] = q[t] + v[t] * w[t];
    }
    let ell = (0..=n)
        .rev()
        .find(|&t| q[t] - b * p[t] <= 0.0)
        .expect("g(0) = -B W <= 0");
    if ell == n {
        return Err(Error::DegenerateAllOnes);
    }

    let fraction = (b * p[ell] - q[ell]) / ((v[ell] + b) * w[ell]);
    if !(0.0..=1.0 + 1e-12).contains(&fraction) {
        return Err(Error::Invariant(format!(
            "fractional coordinate {fraction} outside [0, 1]"
        )));
    }
    let mut x_star = vec![0.0; n];
    x_star[..ell].fill(1.0);
    x_star[ell] = fraction;

    let residual: f64 = w.iter().zip(&x_star).map(|(w, x)| w * (1.0 - x)).fold(0.0, |acc, x| acc + x);
    if residual.is_nan() || residual <= 0.0 {
        return Err(Error::DegenerateAllOnes);
    }
    let payments = (0..n).map(|i| v[i] * w[i] * x_star[i] / residual).collect();
    let objective = w.iter().zip(&x_star).map(|(w, x)| w * x).fold(0.0, |acc, x| acc + x);
    Ok(FractionalSolution {
        x_star,
        payments,
        ell,
        objective,
        abs_weights: w,
        unit_costs: v,
        budget: b,
    })
}

/// Lagrange multipliers proving optimality of the fractional solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// `max_i |-|w_i| + lambda (v_i + B)|w_i| + mu_i - nu_i|`.
    pub stationarity: f64,
    /// `max_i |mu_i (x_i - 1)| + |nu_i x_i|`.
    pub complementary_slackness: f64,
    /// `|sum v_i |w_i| x_i - B sum |w_i| (1 - x_i)|` relative to `B W`.
    pub budget_gap: f64,
    pub min_multiplier: f64,
}

impl KktCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_multiplier >= 0.0
            && self.stationarity <= tol
            && self.complementary_slackness <= tol
            && self.budget_gap <= tol
    }
}

impl FractionalSolution {
    pub fn abs_weights(&self) -> &[f64] {
        &self.abs_weights
    }

    /// `lambda = 1/(v_{l+1} + B)`, `mu_i = (v_{l+1} - v_i)|w_i| lambda` for
    /// `i <= l`, `nu_i = (v_i - v_{l+1})|w_i| lambda` for `i > l + 1`.
    pub fn kkt_certificate(&self) -> KktCertificate {
        let (w, v, b, x) = (&self.abs_weights, &self.unit_costs, self.budget, &self.x_star);
        let n = w.len();
        let pivot = v[self.ell];
        let lambda = 1.0 / (pivot + b);
        let mu: Vec<f64> = (0..n)
            .map(|i| if i < self.ell { (pivot - v[i]) * w[i] * lambda } else { 0.0 })
            .collect();
        let nu: Vec<f64> = (0..n)
            .map(|i| if i > self.ell { (v[i] - pivot) * w[i] * lambda } else { 0.0 })
            .collect();
        let stationarity = (0..n)
            .map(|i| ((-w[i] + lambda * (v[i] + b) * w[i] + mu[i] - nu[i]) / w[i]).abs())
            .fold(0.0, f64::max);
        let complementary_slackness = (0..n)
            .map(|i| (mu[i] * (x[i] - 1.0)).abs() + (nu[i] * x[i]).abs())
            .fold(0.0, f64::max);
        let min_multiplier = mu
            .iter()
            .chain(&nu)
            .copied()
            .chain(std::iter::once(lambda))
            .fold(f64::INFINITY, f64::min);
        KktCertificate {
            lambda,
            mu,
            nu,
            stationarity,
            complementary_slackness,
            budget_gap: self.budget_gap(),
            min_multiplier,
        }
    }

    /// Relative gap in `sum v_i |w_i| x_i = B sum |w_i| (1 - x_i)`.
    pub fn budget_gap(&self) -> f64 {
        let (w, v, x) = (&self.abs_weights, &self.unit_costs, &self.x_star);
        let spend: f64 = (0..w.len()).map(|i| v[i] * w[i] * x[i]).fold(0.0, |acc, x| acc + x);
        let residual: f64 = (0..w.len()).map(|i| w[i] * (1.0 - x[i])).fold(0.0, |acc, x| acc + x);
        let scale = (self.budget * residual).abs().max(spend.abs()).max(f64::MIN_POSITIVE);
        (spend - self.budget * residual).abs() / scale
    }
}

/// Exact optimum over 0/1 participation vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x: Vec<bool>,
    pub objective: f64,
    /// Tight individually rational payments `v_i eps_i`.
    pub payments: Vec<f64>,
}

/// Enumerates every 0/1 vector (all-ones only when every cost is zero) and
/// keeps the heaviest one whose tight payments fit the budget. Ties go to the
/// lexicographically smallest selected index set.
pub fn brute_force_opt(instance: &AuctionInstance) -> Result<OracleSolution> {
    let w = instance.abs_weights();
    let mask = brute_force_mask(&w, instance.unit_costs(), &instance.budget())?;
    let n = w.len();
    let x: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
    let objective = (0..n).filter(|&i| x[i]).map(|i| w[i]).fold(0.0, |acc, x| acc + x);
    let residual: f64 = (0..n).filter(|&i| !x[i]).map(|i| w[i]).fold(0.0, |acc, x| acc + x);
    let payments = (0..n)
        .map(|i| {
            if !x[i] || residual == 0.0 {
                0.0
            } else {
                instance.unit_costs()[i] * w[i] / residual
            }
        })
        .collect();
    Ok(OracleSolution {
        x,
        objective,
        payments,
    })
}

/// Bitmask of the optimal selection in any arithmetic.
pub fn brute_force_mask<T: Scalar>(abs_weights: &[T], unit_costs: &[T], budget: &T) -> Result<u32> {
    let n = abs_weights.len();
    if n > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            n,
            limit: ORACLE_LIMIT,
        });
    }
    let full: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    if n > 0 && unit_costs.iter().all(|v| v.is_zero()) {
        return Ok(full);
    }
    let eval = |mask: u32| -> Option<T> {
        let mut spend = T::zero();
        let mut bought = T::zero();
        let mut rest = T::zero();
        for i in 0..n {
            if mask >> i & 1 == 1 {
                spend = spend + unit_costs[i].clone() * abs_weights[i].clone();
                bought = bought + abs_weights[i].clone();
            } else {
                rest = rest + abs_weights[i].clone();
            }
        }
        (spend <= budget.clone() * rest).then_some(bought)
    };
    let better = |a: &(u32, T), b: &(u32, T)| -> bool {
        match a.1.partial_cmp(&b.1) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => lex_less(a.0, b.0),
            _ => false,
        }
    };
    let reduce = |acc: Option<(u32, T)>, cand: Option<(u32, T)>| match (acc, cand) {
        (None, c) => c,
        (a, None) => a,
        (Some(a), Some(c)) => Some(if better(&c, &a) { c } else { a }),
    };
    let scan = |lo: u32, hi: u32| {
        (lo..hi)
            .filter(|&m| m != full)
            .filter_map(|m| eval(m).map(|obj| (m, obj)))
            .fold(None, |acc, c| reduce(acc, Some(c)))
    };
    let best = if n >= 14 {
        let chunk = 1u32 << 10;
        (0..=full / chunk)
            .into_par_iter()
            .map(|c| scan(c * chunk, ((c + 1) * chunk).min(full + 1)))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(None, reduce)
    } else {
        scan(0, full + 1)
    };
    // The empty selection is always feasible.
    Ok(best.map(|(m, _)| m).unwrap_or(0))
}

/// Lexicographic order of the index sets encoded by two masks.
fn lex_less(a: u32, b: u32) -> bool {
    if a == b {
        return false;
    }
    let diff = a ^ b;
    let low = diff & diff.wrapping_neg();
    let above = !(low | (low - 1));
    // The set holding the lowest differing index is smaller, unless the
    // other set ends right there (then it is a prefix, hence smaller).
    if a & low != 0 {
        b & above != 0 || b & (low - 1) != a & (low - 1)
    } else {
        a & above == 0
    }
}

/// One named inequality checked by [`opt_bounds_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub property: String,
    pub holds: bool,
    pub detail: String,
}

/// Approximation and structural checks on one oracle-sized instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptBoundsReport {
    pub opt: f64,
    pub fractional: f64,
    pub mechanism: f64,
    /// `OPT / S(x; w)`.
    pub ratio: f64,
    pub ell: usize,
    pub k: usize,
    pub branch: Branch,
    pub uniform_weights: bool,
    pub checks: Vec<BoundCheck>,
}

impl OptBoundsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn violations(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }
}

/// Relative slack for comparisons between independently rounded sums.
const SUM_SLACK: f64 = 1e-9;

/// Tolerance for the optimality certificate of the relaxation.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Runs the oracle, the relaxation and the mechanism on a canonical instance
/// and checks `OPT <= S(x*)`, `OPT <= 5 S(x)` (`2 S(x)` for equal weights),
/// the KKT certificate and tight budget of `x*`, `ell >= k` and
/// `w([k+1]) > sum_{i=k+1}^{ell+1} |w_i| x*_i`.
pub fn opt_bounds_check(instance: &AuctionInstance) -> Result<OptBoundsReport> {
    let oracle = brute_force_opt(instance)?;
    let frac = fractional_optimum(instance)?;
    let mech = fair_inner_product(instance)?;
    let w = instance.abs_weights();
    let s = mech.objective();
    let k = mech.selection.k;
    let uniform = w.iter().all(|&x| x == w[0]);
    let mut checks = Vec::new();
    let mut check = |property: &str, holds: bool, detail: String| {
        checks.push(BoundCheck {
            property: property.into(),
            holds,
            detail,
        })
    };

    check(
        "fractional-dominates",
        oracle.objective <= frac.objective * (1.0 + SUM_SLACK),
        format!("OPT {} vs fractional {}", oracle.objective, frac.objective),
    );
    let ratio = if oracle.objective == s { 1.0 } else { oracle.objective / s };
    check("five-approximation", ratio <= 5.0, format!("OPT / S = {ratio}"));
    if uniform {
        check("two-approximation-equal-weights", ratio <= 2.0, format!("OPT / S = {ratio}"));
    }
    let cert = frac.kkt_certificate();
    check(
        "kkt-certificate",
        cert.min_multiplier >= 0.0
            && cert.stationarity <= CERTIFICATE_TOL
            && cert.complementary_slackness <= CERTIFICATE_TOL,
        format!(
            "min multiplier {}, stationarity {}, slackness {}",
            cert.min_multiplier, cert.stationarity, cert.complementary_slackness
        ),
    );
    check(
        "budget-identity",
        cert.budget_gap <= CERTIFICATE_TOL,
        format!("relative gap {}", cert.budget_gap),
    );
    check("ell-at-least-k", frac.ell >= k, format!("ell = {}, k = {k}", frac.ell));
    // 0-based: sum_{i <= k} |w_i| > sum_{k <= i <= ell} |w_i| x*_i
    let head = sum(w[..=k.min(w.len() - 1)].iter().copied());
    let tail = (k..=frac.ell).fold(0.0, |acc, i| acc + w[i] * frac.x_star[i]);
    check(
        "prefix-dominates-fractional-tail",
        head > tail,
        format!("w([k+1]) = {head}, fractional tail {tail}"),
    );
    Ok(OptBoundsReport {
        opt: oracle.objective,
        fractional: frac.objective,
        mechanism: s,
        ratio,
        ell: frac.ell,
        k,
        branch: mech.selection.branch,
        uniform_weights: uniform,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::ValueInterval;

    fn inst(w: &[f64], v: &[f64], b: f64) -> AuctionInstance {
        AuctionInstance::new(w.to_vec(), v.to_vec(), b, ValueInterval::unit()).unwrap()
    }

    #[test]
    fn fractional_hand_example() {
        // g = (-6, -3.5, 0, 3.5, 7) -> ell = 2, x_3 = 0.
        let f = fractional_optimum(&inst(&[1.0; 4], &[1.0, 2.0, 2.0, 2.0], 1.5)).unwrap();
        assert_eq!(f.ell, 2);
        assert_eq!(f.x_star, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.objective, 2.0);
        assert_eq!(f.payments.iter().sum::<f64>(), 1.5);
        assert!(f.kkt_certificate().holds(1e-12));
    }

    #[test]
    fn fractional_zero_budget() {
        let f = fractional_optimum(&inst(&[1.0, 2.0], &[1.0, 2.0], 0.0)).unwrap();
        assert_eq!(f.ell, 0);
        assert_eq!(f.x_star[0], 0.0);
        assert_eq!(f.objective, 0.0);
    }

    #[test]
    fn fractional_monotone_in_budget() {
        let base = inst(&[2.0, 1.0, 3.0, 1.0], &[0.5, 1.0, 1.5, 4.0], 0.1);
        let mut last = -1.0;
        for b in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1e4] {
            let f = fractional_optimum(&base.with_budget(b).unwrap()).unwrap();
            assert!(f.objective >= last);
            assert!(f.objective < base.total_weight());
            last = f.objective;
        }
    }

    #[test]
    fn fractional_requires_sorted_costs() {
        assert!(matches!(
            fractional_optimum(&inst(&[1.0; 2], &[2.0, 1.0], 1.0)),
            Err(Error::NotCanonical { .. })
        ));
    }

    #[test]
    fn oracle_hardness_instance() {
        let o = brute_force_opt(&inst(&[1.0; 4], &[1.0, 2.0, 2.0, 2.0], 1.5)).unwrap();
        assert_eq!(o.objective, 2.0);
        assert_eq!(o.x, vec![true, true, false, false]);
        assert_eq!(o.payments.iter().sum::<f64>(), 1.5);
    }

    #[test]
    fn oracle_zero_budget() {
        let o = brute_force_opt(&inst(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.0)).unwrap();
        assert_eq!(o.objective, 0.0);
    }

    #[test]
    fn oracle_all_free() {
        let o = brute_force_opt(&inst(&[1.0, 2.0], &[0.0, 0.0], 1.0)).unwrap();
        assert_eq!(o.objective, 3.0);
    }

    #[test]
    fn oracle_rejects_large() {
        let n = ORACLE_LIMIT + 1;
        assert!(matches!(
            brute_force_opt(&inst(&vec![1.0; n], &vec![1.0; n], 1.0)),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn lex_order_on_masks() {
        // {0,1} < {0,2} < {1,2}; {0} < {0,1}
        assert!(lex_less(0b011, 0b101));
        assert!(lex_less(0b101, 0b110));
        assert!(lex_less(0b001, 0b011));
        assert!(!lex_less(0b011, 0b001));
        assert!(lex_less(0b1001, 0b0110));
        assert!(!lex_less(0b110, 0b110));
    }

    #[test]
    fn parallel_enumeration_agrees_with_serial() {
        let w: Vec<f64> = (0..15).map(|i| 1.0 + (i % 4) as f64).collect();
        let v: Vec<f64> = (0..15).map(|i| 0.5 + i as f64 * 0.25).collect();
        let par = brute_force_mask(&w, &v, &3.0).unwrap();
        // Serial reference: direct scan.
        let n = w.len();
        let mut best = (0u32, -1.0f64);
        for m in 0u32..(1 << n) - 1 {
            let (mut s, mut b, mut r) = (0.0, 0.0, 0.0);
            for i in 0..n {
                if m >> i & 1 == 1 {
                    s += v[i] * w[i];
                    b += w[i];
                } else {
                    r += w[i];
                }
            }
            if s <= 3.0 * r && (b > best.1 || (b == best.1 && lex_less(m, best.0))) {
                best = (m, b);
            }
        }
        assert_eq!(par, best.0);
    }

    #[test]
    fn bounds_on_hardness_instance() {
        let r = opt_bounds_check(&inst(&[1.0; 4], &[1.0, 2.0, 2.0, 2.0], 1.5)).unwrap();
        assert!(r.passed(), "{:?}", r.violations());
        assert_eq!(r.checks.len(), 7);
        assert_eq!(r.opt, 2.0);
        assert_eq!(r.mechanism, 1.0);
        assert_eq!(r.ratio, 2.0);
        assert!(r.uniform_weights);
    }
}
