//! FairInnerProduct: a truthful, individually rational, budget-feasible
//! auction that outputs a discrete canonical Laplace estimator.
//!
//! Individuals are ordered by reported unit cost. `k` is the largest prefix
//! length `t` with `B / w([t]) >= v_t / (W - w([t]))`; `t = n` never passes
//! (its right-hand side is unbounded), so `v_{k+1}` always exists. The mechanism
//! either buys the prefix `[k]`, paying proportionally to `|w_i|` and capped by
//! the first excluded cost, or, when the heaviest individual `i*` outweighs the
//! rest of `[k]`, buys `{i*}` alone at a price that does not depend on `v_{i*}`.
//!
//! The core ([`select`]) is generic over [`Scalar`] so the verification harness
//! can replay it in exact rational arithmetic. Threshold tests are evaluated in
//! cross-multiplied form (all denominators are positive there), which is exact
//! in `f64` on integer-valued inputs.

use serde::{Deserialize, Serialize};

use crate::arith::{min_of, sum, Rational, Scalar};
use crate::error::{Error, Result};
use crate::estimator::{Dclef, DclefRecord, LinearStatistic};
use crate::instances::{cost_order, payable_survivors, AuctionInstance, FilterMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Only the heaviest individual is bought.
    Star,
    /// The cheapest `k` individuals are bought.
    TopK,
}

/// Rule set the core runs. Everything other than [`Rules::Standard`] is a
/// deliberately broken variant used to check that the property suites catch
/// mistakes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Rules {
    #[default]
    Standard,
    /// Multiply every payment by a constant.
    PaymentScale(f64),
    /// Treat the `t = n` threshold test as satisfied.
    KIncludesN,
    /// Use `>=` in the heaviest-individual test.
    NonStrictStar,
    /// Drop the `v_{k+1}` cap from the prefix payments.
    NoCostCap,
}

/// Mechanism output in canonical (cost-sorted) index space.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    /// Selected individuals, ascending.
    pub selected: Vec<usize>,
    pub payments: Vec<T>,
    pub k: usize,
    pub i_star: usize,
    pub branch: Branch,
    /// Smallest member of the alternative-threshold set, Star branch only.
    pub r: Option<usize>,
    /// Price offered to `i*`, Star branch only.
    pub p_hat: Option<T>,
}

impl<T: Scalar> Selection<T> {
    pub fn is_selected(&self, i: usize) -> bool {
        self.selected.binary_search(&i).is_ok()
    }

    pub fn total_payment(&self) -> T {
        sum(self.payments.iter().cloned())
    }

    /// `sum_{i not selected} |w_i|`.
    pub fn residual_weight(&self, abs_weights: &[T]) -> T {
        sum((0..abs_weights.len())
            .filter(|&i| !self.is_selected(i))
            .map(|i| abs_weights[i].clone()))
    }

    /// Canonical privacy level of each individual; `None` if unbounded.
    pub fn epsilons(&self, abs_weights: &[T]) -> Option<Vec<T>> {
        let residual = self.residual_weight(abs_weights);
        if residual.is_zero() {
            return None;
        }
        Some(
            (0..abs_weights.len())
                .map(|i| {
                    if self.is_selected(i) {
                        abs_weights[i].clone() / residual.clone()
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        )
    }

    /// `sum_i |w_i| x_i`.
    pub fn objective(&self, abs_weights: &[T]) -> T {
        sum(self.selected.iter().map(|&i| abs_weights[i].clone()))
    }
}

/// Runs the mechanism on canonical data (costs non-decreasing), breaking
/// ties for the heaviest individual by position.
pub fn select<T: Scalar>(
    abs_weights: &[T],
    unit_costs: &[T],
    budget: &T,
    rules: Rules,
) -> Result<Selection<T>> {
    let rank: Vec<usize> = (0..abs_weights.len()).collect();
    select_ranked(abs_weights, unit_costs, budget, rules, &rank)
}

/// As [`select`], with heaviest-individual ties going to the smallest
/// `rank`. The rank must not depend on reported costs (input indices do),
/// otherwise a tied individual could win the tie by underbidding.
pub fn select_ranked<T: Scalar>(
    abs_weights: &[T],
    unit_costs: &[T],
    budget: &T,
    rules: Rules,
    rank: &[usize],
) -> Result<Selection<T>> {
    let n = abs_weights.len();
    if rank.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rank.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInstance);
    }
    if n != unit_costs.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: unit_costs.len(),
        });
    }
    if let Some(i) = (1..n).find(|&i| unit_costs[i] < unit_costs[i - 1]) {
        return Err(Error::NotCanonical { index: i });
    }
    let total = sum(abs_weights.iter().cloned());

    // k: largest t with B (W - w([t])) >= v_t w([t]).
    let mut prefix = T::zero();
    let mut k = 0;
    for t in 0..n {
        prefix = prefix + abs_weights[t].clone();
        let passes = if t + 1 == n {
            rules == Rules::KIncludesN
        } else {
            budget.clone() * (total.clone() - prefix.clone()) >= unit_costs[t].clone() * prefix.clone()
        };
        if passes {
            k = t + 1;
        }
    }
    if k == 0 {
        return Err(Error::AssumptionViolated { index: 0 });
    }
    let prefix_k = sum(abs_weights[..k].iter().cloned());
    let rest_k = total.clone() - prefix_k.clone();

    let mut i_star = 0;
    for i in 1..n {
        if abs_weights[i] > abs_weights[i_star]
            || (abs_weights[i] == abs_weights[i_star] && rank[i] < rank[i_star])
        {
            i_star = i;
        }
    }
    let w_star = abs_weights[i_star].clone();
    let others_in_k = sum((0..k).filter(|&i| i != i_star).map(|i| abs_weights[i].clone()));
    let star = match rules {
        Rules::NonStrictStar => w_star >= others_in_k,
        _ => w_star > others_in_k,
    };

    let scale = match rules {
        Rules::PaymentScale(s) => Some(T::from_f64(s)),
        _ => None,
    };
    let scaled = |p: T| match &scale {
        Some(s) => p * s.clone(),
        None => p,
    };

    let mut payments = vec![T::zero(); n];
    let selection = if star {
        let r = alternative_threshold(abs_weights, unit_costs, budget, &total, i_star);
        let p_hat = match r {
            None => budget.clone(),
            Some(r) => w_star.clone() * unit_costs[r].clone() / (total.clone() - w_star.clone()),
        };
        if rules == Rules::Standard {
            // The empty-set and ordering facts the payment analysis relies on.
            if i_star > k && r.is_some() {
                return Err(Error::Invariant(format!(
                    "alternative threshold set non-empty with i* = {i_star} > k + 1 = {}",
                    k + 1
                )));
            }
            if let Some(r) = r {
                if r <= i_star {
                    return Err(Error::Invariant(format!("r = {r} not after i* = {i_star}")));
                }
            }
        }
        payments[i_star] = scaled(p_hat.clone());
        Selection {
            selected: vec![i_star],
            payments,
            k,
            i_star,
            branch: Branch::Star,
            r,
            p_hat: Some(p_hat),
        }
    } else {
        let by_budget = budget.clone() / prefix_k.clone();
        let rate = if k == n || rules == Rules::NoCostCap {
            by_budget
        } else {
            min_of(by_budget, unit_costs[k].clone() / rest_k)
        };
        for i in 0..k {
            payments[i] = scaled(abs_weights[i].clone() * rate.clone());
        }
        Selection {
            selected: (0..k).collect(),
            payments,
            k,
            i_star,
            branch: Branch::TopK,
            r: None,
            p_hat: None,
        }
    };
    Ok(selection)
}

/// `min S_{-i*}`: the first `t != i*` whose prefix without `i*` both passes
/// the threshold test and weighs at least `|w_{i*}|`.
fn alternative_threshold<T: Scalar>(
    abs_weights: &[T],
    unit_costs: &[T],
    budget: &T,
    total: &T,
    i_star: usize,
) -> Option<usize> {
    let w_star = &abs_weights[i_star];
    let mut prefix = T::zero();
    for t in 0..abs_weights.len() {
        if t == i_star {
            continue;
        }
        prefix = prefix + abs_weights[t].clone();
        let affordable =
            budget.clone() * (total.clone() - prefix.clone()) >= unit_costs[t].clone() * prefix.clone();
        if affordable && prefix >= *w_star {
            return Some(t);
        }
    }
    None
}

/// Float outcome on a canonical instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismOutcome {
    pub selection: Selection<f64>,
    pub dclef: Dclef,
}

impl MechanismOutcome {
    pub fn selected(&self) -> &[usize] {
        &self.selection.selected
    }

    pub fn payments(&self) -> &[f64] {
        &self.selection.payments
    }

    pub fn objective(&self) -> f64 {
        self.dclef.selected_weight()
    }
}

/// FairInnerProduct on a canonical, filtered instance.
pub fn fair_inner_product(instance: &AuctionInstance) -> Result<MechanismOutcome> {
    fair_inner_product_with(instance, Rules::Standard)
}

pub fn fair_inner_product_with(instance: &AuctionInstance, rules: Rules) -> Result<MechanismOutcome> {
    let selection = select(
        &instance.abs_weights(),
        instance.unit_costs(),
        &instance.budget(),
        rules,
    )?;
    let dclef = Dclef::from_selection(LinearStatistic::from_instance(instance), &selection.selected);
    Ok(MechanismOutcome { selection, dclef })
}

/// The same run in exact rational arithmetic.
pub fn fair_inner_product_exact(instance: &AuctionInstance) -> Result<Selection<Rational>> {
    let (w, v, b) = to_rational(instance);
    select(&w, &v, &b, Rules::Standard)
}

pub(crate) fn to_rational(instance: &AuctionInstance) -> (Vec<Rational>, Vec<Rational>, Rational) {
    (
        instance.weights().iter().map(|w| Rational::from_f64(w.abs())).collect(),
        instance.unit_costs().iter().map(|&v| Rational::from_f64(v)).collect(),
        Rational::from_f64(instance.budget()),
    )
}

/// Equal-magnitude weights: the mechanism always buys the prefix `[k]`.
/// With `k = 1` the heaviest-individual test also fires and selects the same
/// set; `selection.branch` records which payment rule was used.
pub fn ghosh_roth_special_case(instance: &AuctionInstance) -> Result<MechanismOutcome> {
    let first = instance.weights()[0].abs();
    if instance.weights().iter().any(|w| w.abs() != first) {
        return Err(Error::NonUniformWeights);
    }
    let outcome = fair_inner_product(instance)?;
    let k = outcome.selection.k;
    if outcome.selection.selected != (0..k).collect::<Vec<_>>() {
        return Err(Error::Invariant(format!(
            "equal weights selected {:?}, expected the first {k}",
            outcome.selection.selected
        )));
    }
    Ok(outcome)
}

/// Filter, sort and run, in any arithmetic. Indices of the result are
/// canonical; `original_index` maps them back to the input.
#[derive(Clone, Debug)]
pub struct PipelineRun<T> {
    pub selection: Selection<T>,
    /// Canonical weights/costs the selection refers to.
    pub abs_weights: Vec<T>,
    pub unit_costs: Vec<T>,
    pub original_index: Vec<usize>,
    pub removed: Vec<usize>,
}

impl<T: Scalar> PipelineRun<T> {
    /// Canonical position of input individual `i`, if it took part.
    pub fn position_of(&self, input: usize) -> Option<usize> {
        self.original_index.iter().position(|&j| j == input)
    }

    /// `p_i - true_cost * eps_i` for input individual `i`.
    pub fn utility(&self, input: usize, true_cost: &T) -> T {
        let Some(j) = self.position_of(input) else {
            return T::zero();
        };
        if !self.selection.is_selected(j) {
            return self.selection.payments[j].clone();
        }
        let residual = self.selection.residual_weight(&self.abs_weights);
        let eps = self.abs_weights[j].clone() / residual;
        self.selection.payments[j].clone() - true_cost.clone() * eps
    }
}

/// `Ok(None)` when nobody survives the filter.
pub fn run_pipeline<T: Scalar>(
    abs_weights: &[T],
    unit_costs: &[T],
    budget: &T,
    mode: FilterMode,
    rules: Rules,
) -> Result<Option<PipelineRun<T>>> {
    let alive = payable_survivors(abs_weights, unit_costs, budget, mode);
    if alive.is_empty() {
        return Ok(None);
    }
    let order = cost_order(unit_costs, &alive);
    let removed = (0..abs_weights.len())
        .filter(|i| alive.binary_search(i).is_err())
        .collect();
    let w: Vec<T> = order.iter().map(|&i| abs_weights[i].clone()).collect();
    let v: Vec<T> = order.iter().map(|&i| unit_costs[i].clone()).collect();
    let selection = select_ranked(&w, &v, budget, rules, &order)?;
    Ok(Some(PipelineRun {
        selection,
        abs_weights: w,
        unit_costs: v,
        original_index: order,
        removed,
    }))
}

/// Full auction on an arbitrary instance, reported in input index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionReport {
    #[serde(rename = "O")]
    pub selected: Vec<usize>,
    pub payments: Vec<f64>,
    pub k: usize,
    pub i_star: usize,
    pub branch: Branch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub p_hat: Option<f64>,
    /// Estimator over the whole input population; filtered-out individuals
    /// have `x_i = 0`.
    pub dclef: DclefRecord,
    pub removed: Vec<usize>,
}

pub fn run_auction(instance: &AuctionInstance, mode: FilterMode) -> Result<AuctionReport> {
    run_auction_with(instance, mode, Rules::Standard)
}

pub fn run_auction_with(
    instance: &AuctionInstance,
    mode: FilterMode,
    rules: Rules,
) -> Result<AuctionReport> {
    let run = run_pipeline(
        &instance.abs_weights(),
        instance.unit_costs(),
        &instance.budget(),
        mode,
        rules,
    )?
    .ok_or(Error::EmptyInstance)?;
    Ok(report_from_run(instance, &run))
}

/// Rational run, reported in doubles.
pub fn run_auction_exact(instance: &AuctionInstance, mode: FilterMode) -> Result<AuctionReport> {
    let (w, v, b) = to_rational(instance);
    let run = run_pipeline(&w, &v, &b, mode, Rules::Standard)?.ok_or(Error::EmptyInstance)?;
    let as_f64 = PipelineRun {
        selection: Selection {
            selected: run.selection.selected.clone(),
            payments: run.selection.payments.iter().map(Scalar::to_f64).collect(),
            k: run.selection.k,
            i_star: run.selection.i_star,
            branch: run.selection.branch,
            r: run.selection.r,
            p_hat: run.selection.p_hat.as_ref().map(Scalar::to_f64),
        },
        abs_weights: run.abs_weights.iter().map(Scalar::to_f64).collect(),
        unit_costs: run.unit_costs.iter().map(Scalar::to_f64).collect(),
        original_index: run.original_index,
        removed: run.removed,
    };
    Ok(report_from_run(instance, &as_f64))
}

fn report_from_run(instance: &AuctionInstance, run: &PipelineRun<f64>) -> AuctionReport {
    let mut payments = vec![0.0; instance.len()];
    for (j, &orig) in run.original_index.iter().enumerate() {
        payments[orig] = run.selection.payments[j];
    }
    let mut selected: Vec<usize> = run
        .selection
        .selected
        .iter()
        .map(|&j| run.original_index[j])
        .collect();
    selected.sort_unstable();
    let dclef = Dclef::from_selection(LinearStatistic::from_instance(instance), &selected);
    AuctionReport {
        selected,
        payments,
        k: run.selection.k,
        i_star: run.original_index[run.selection.i_star],
        branch: run.selection.branch,
        r: run.selection.r.map(|r| run.original_index[r]),
        p_hat: run.selection.p_hat,
        dclef: dclef.to_record(),
        removed: run.removed.clone(),
    }
}
