//! Property sweeps over generated instances.
//!
//! Instance `i` of a sweep is drawn from its own generator seeded with
//! `instance_seed(rng_seed, i)`, so any failure replays from the config seed
//! and the index alone, and results do not depend on how the stream is split
//! across threads.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{ArithmeticMode, Rational, Scalar};
use crate::error::{Error, Result};
use crate::estimator::{Lef, LinearStatistic};
use crate::instances::{prepare, AuctionInstance, FilterMode, InstanceFile, ValueInterval};
use crate::mechanism::{run_auction_with, run_pipeline, Branch, PipelineRun, Rules};
use crate::optimal::{opt_bounds_check, ORACLE_LIMIT};

/// Relative slack for float IR and budget checks.
pub const FLOAT_REL_SLACK: f64 = 1e-9;
/// Absolute slack for float utility comparisons.
pub const FLOAT_UTILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDistribution {
    /// Magnitude 1, random signs.
    Equal,
    /// Magnitudes uniform on `[0.1, 10]`, positive.
    Uniform,
    /// `exp(N(0, 1))`, positive.
    Lognormal,
    /// Magnitudes uniform on `[0.1, 10]`, random signs.
    Signed,
    /// Integers in `+-{1, ..., 10}`.
    IntegerGrid,
}

impl WeightDistribution {
    fn is_integral(self) -> bool {
        matches!(self, Self::Equal | Self::IntegerGrid)
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        let sign = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        match self {
            Self::Equal => sign(rng),
            Self::Uniform => rng.random_range(0.1..=10.0),
            Self::Lognormal => LogNormal::new(0.0, 1.0).expect("valid").sample(rng),
            Self::Signed => sign(rng) * rng.random_range(0.1..=10.0),
            Self::IntegerGrid => sign(rng) * rng.random_range(1..=10) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostDistribution {
    /// Uniform on `[0, 10]`.
    Uniform,
    /// `exp(N(0, 1))`.
    Lognormal,
    /// Integers in `{0, ..., 10}`.
    IntegerGrid,
    /// Drawn from `{1, 2, 3}`, so ties are common.
    Tied,
}

impl CostDistribution {
    fn is_integral(self) -> bool {
        matches!(self, Self::IntegerGrid | Self::Tied)
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Self::Uniform => rng.random_range(0.0..=10.0),
            Self::Lognormal => LogNormal::new(0.0, 1.0).expect("valid").sample(rng),
            Self::IntegerGrid => rng.random_range(0..=10) as f64,
            Self::Tied => rng.random_range(1..=3) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BudgetRule {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Integers in `{1, ..., max}`.
    IntegerGrid { max: u32 },
}

impl BudgetRule {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Self::Fixed { value } => value,
            Self::Uniform { lo, hi } => rng.random_range(lo..=hi),
            Self::IntegerGrid { max } => rng.random_range(1..=max) as f64,
        }
    }

    fn validate(self) -> Result<()> {
        let ok = match self {
            Self::Fixed { value } => value >= 0.0 && value.is_finite(),
            Self::Uniform { lo, hi } => lo >= 0.0 && lo <= hi && hi.is_finite(),
            Self::IntegerGrid { max } => max >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ParameterOutOfRange(format!("invalid budget rule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Inclusive range of instance sizes.
    pub n_range: (usize, usize),
    pub instance_count: usize,
    pub weight_distribution: WeightDistribution,
    pub cost_distribution: CostDistribution,
    pub budget_rule: BudgetRule,
    pub rng_seed: u64,
    pub arithmetic_mode: ArithmeticMode,
    pub filter_mode: FilterMode,
    /// Rule set under test; anything but `standard` is a deliberate mutation.
    pub rules: Rules,
    /// Log-spaced misreports per individual on `[v/10, 10 v]`.
    pub log_grid_points: usize,
    pub max_witnesses: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_range: (2, 10),
            instance_count: 10_000,
            weight_distribution: WeightDistribution::Signed,
            cost_distribution: CostDistribution::Uniform,
            budget_rule: BudgetRule::Uniform { lo: 0.5, hi: 20.0 },
            rng_seed: 0,
            arithmetic_mode: ArithmeticMode::Float,
            filter_mode: FilterMode::FixedPoint,
            rules: Rules::Standard,
            log_grid_points: 21,
            max_witnesses: 16,
        }
    }
}

impl SweepConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi {
            return Err(Error::ParameterOutOfRange(format!(
                "n_range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
            )));
        }
        if hi > 64 {
            return Err(Error::ParameterOutOfRange(format!("n_range upper bound {hi} > 64")));
        }
        self.budget_rule.validate()?;
        if self.arithmetic_mode == ArithmeticMode::Rational
            && !(self.weight_distribution.is_integral() && self.cost_distribution.is_integral())
        {
            return Err(Error::ParameterOutOfRange(
                "rational arithmetic requires integer-grid weights and costs".into(),
            ));
        }
        if let Rules::PaymentScale(s) = self.rules {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::ParameterOutOfRange(format!("payment scale {s}")));
            }
        }
        Ok(())
    }

    fn integer_grid(&self) -> bool {
        self.cost_distribution.is_integral()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of instance `index` in the stream of `master`.
pub fn instance_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Instance `index` of the stream described by `config`.
pub fn generate_instance(config: &SweepConfig, index: usize) -> AuctionInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(config.rng_seed, index as u64));
    let n = rng.random_range(config.n_range.0..=config.n_range.1);
    let weights = (0..n).map(|_| config.weight_distribution.sample(&mut rng)).collect();
    let costs = (0..n).map(|_| config.cost_distribution.sample(&mut rng)).collect();
    let budget = config.budget_rule.sample(&mut rng);
    AuctionInstance::new(weights, costs, budget, ValueInterval::unit()).expect("generated instance is valid")
}

/// Four individuals of weight `d`, costs `(a, 2, 2, 2)` and budget `1 + a/2`.
pub fn hardness_instance(a: f64, d: f64) -> Result<AuctionInstance> {
    if !(a > 0.0 && a < 2.0) {
        return Err(Error::ParameterOutOfRange(format!("a = {a} outside (0, 2)")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::ParameterOutOfRange(format!("d = {d} must be positive")));
    }
    AuctionInstance::new(vec![d; 4], vec![a, 2.0, 2.0, 2.0], 1.0 + a / 2.0, ValueInterval::unit())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyCount {
    pub checked: u64,
    pub failed: u64,
}

/// A failed check, replayable from `(rng_seed, instance_index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub property: String,
    pub instance_index: usize,
    pub instance_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub individual: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misreport: Option<f64>,
    pub detail: String,
    pub instance: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub instance_id: usize,
    pub ratio: f64,
    pub branch: Branch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rng_seed: u64,
    pub instances: usize,
    /// Instances with no survivor after filtering.
    pub skipped: usize,
    pub properties: BTreeMap<String, PropertyCount>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_equal_weight_ratio: Option<f64>,
    pub witnesses: Vec<Witness>,
    #[serde(skip)]
    pub rows: Vec<RatioRow>,
}

impl VerificationReport {
    pub fn failures(&self) -> u64 {
        self.properties.values().map(|c| c.failed).sum()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn count(&self, property: &str) -> PropertyCount {
        self.properties.get(property).copied().unwrap_or_default()
    }

    /// `instance_id,ratio,branch` rows of an approximation sweep.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Folds per-instance outcomes in index order.
    fn merge(config: &SweepConfig, outcomes: Vec<InstanceOutcome>) -> Self {
        let mut report = Self {
            rng_seed: config.rng_seed,
            instances: outcomes.len(),
            ..Self::default()
        };
        for o in outcomes {
            report.skipped += usize::from(o.skipped);
            for (name, c) in o.counts {
                let entry = report.properties.entry(name.to_owned()).or_default();
                entry.checked += c.checked;
                entry.failed += c.failed;
            }
            let room = config.max_witnesses.saturating_sub(report.witnesses.len());
            report.witnesses.extend(o.witnesses.into_iter().take(room));
            if let Some(row) = o.row {
                report.worst_ratio = Some(report.worst_ratio.map_or(row.ratio, |w| w.max(row.ratio)));
                if o.equal_weights {
                    report.worst_equal_weight_ratio =
                        Some(report.worst_equal_weight_ratio.map_or(row.ratio, |w| w.max(row.ratio)));
                }
                report.rows.push(row);
            }
        }
        report
    }
}

#[derive(Default)]
struct InstanceOutcome {
    counts: BTreeMap<&'static str, PropertyCount>,
    witnesses: Vec<Witness>,
    skipped: bool,
    row: Option<RatioRow>,
    equal_weights: bool,
}

/// Records results for one instance and builds witnesses on failure.
struct Recorder<'a> {
    config: &'a SweepConfig,
    index: usize,
    instance: &'a AuctionInstance,
    out: InstanceOutcome,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a SweepConfig, index: usize, instance: &'a AuctionInstance) -> Self {
        Self {
            config,
            index,
            instance,
            out: InstanceOutcome::default(),
        }
    }

    fn record(&mut self, property: &'static str, holds: bool, witness: impl FnOnce() -> (Option<usize>, Option<f64>, String)) {
        let c = self.out.counts.entry(property).or_default();
        c.checked += 1;
        if holds {
            return;
        }
        c.failed += 1;
        // One witness per property per instance is enough to replay it.
        if self.out.witnesses.iter().any(|w| w.property == property)
            || self.out.witnesses.len() >= self.config.max_witnesses
        {
            return;
        }
        let (individual, misreport, detail) = witness();
        let file = InstanceFile {
            instance: self.instance.clone(),
            database: None,
        };
        self.out.witnesses.push(Witness {
            property: property.into(),
            instance_index: self.index,
            instance_seed: instance_seed(self.config.rng_seed, self.index as u64),
            individual,
            misreport,
            detail,
            instance: serde_json::from_str(&file.to_json_string()).expect("instance json"),
        });
    }
}

fn at_least<T: Scalar>(a: &T, b: &T, exact: bool) -> bool {
    if exact {
        return a >= b;
    }
    let (a, b) = (a.to_f64(), b.to_f64());
    a >= b - FLOAT_REL_SLACK * a.abs().max(b.abs())
}

/// Candidate misreports for input individual `i`: a log grid around the true
/// cost, zero, every other cost and its immediate neighbours, and the
/// neighbours of `i`'s own critical cost when selected.
pub fn misreport_grid(costs: &[f64], i: usize, log_points: usize, step: Option<f64>, critical: Option<f64>) -> Vec<f64> {
    let v = costs[i];
    let base = if v > 0.0 {
        v
    } else {
        let positive: Vec<f64> = costs.iter().copied().filter(|&c| c > 0.0).collect();
        if positive.is_empty() {
            1.0
        } else {
            positive.iter().sum::<f64>() / positive.len() as f64
        }
    };
    let mut grid = vec![0.0];
    for j in 0..log_points {
        let t = if log_points > 1 { j as f64 / (log_points - 1) as f64 } else { 0.5 };
        grid.push(base * 10f64.powf(2.0 * t - 1.0));
    }
    let near = |c: f64| step.unwrap_or_else(|| (c.abs() * 1e-6).max(1e-9));
    let mut anchors: Vec<f64> = costs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &c)| c).collect();
    anchors.extend(critical);
    for c in anchors {
        let h = near(c);
        grid.extend([c - h, c, c + h]);
    }
    grid.retain(|c| c.is_finite() && *c >= 0.0 && *c != v);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Selected individual's critical cost `p_i / eps_i`.
fn critical_cost<T: Scalar>(run: &PipelineRun<T>, input: usize) -> Option<f64> {
    let j = run.position_of(input)?;
    if !run.selection.is_selected(j) {
        return None;
    }
    let residual = run.selection.residual_weight(&run.abs_weights);
    if residual.is_zero() {
        return None;
    }
    let eps = run.abs_weights[j].clone() / residual;
    Some((run.selection.payments[j].clone() / eps).to_f64())
}

fn check_instance<T: Scalar>(rec: &mut Recorder<'_>, exact: bool) {
    let config = rec.config;
    let inst = rec.instance;
    let w: Vec<T> = inst.abs_weights().into_iter().map(T::from_f64).collect();
    let v: Vec<T> = inst.unit_costs().iter().map(|&c| T::from_f64(c)).collect();
    let b = T::from_f64(inst.budget());
    let step = config.integer_grid().then_some(0.5);

    let run = match run_pipeline(&w, &v, &b, config.filter_mode, config.rules) {
        Ok(Some(run)) => run,
        Ok(None) => {
            rec.out.skipped = true;
            return;
        }
        Err(e) => {
            rec.record("mechanism-error", false, || (None, None, e.to_string()));
            return;
        }
    };
    rec.record("mechanism-error", true, || unreachable!());

    // Individual rationality and budget.
    let residual = run.selection.residual_weight(&run.abs_weights);
    for j in 0..run.abs_weights.len() {
        let p = &run.selection.payments[j];
        let (holds, detail) = if !run.selection.is_selected(j) {
            (p.is_zero(), format!("unselected payment {}", p.to_f64()))
        } else if residual.is_zero() {
            (run.unit_costs[j].is_zero(), "selected with unbounded privacy loss".to_owned())
        } else {
            let cost = run.unit_costs[j].clone() * run.abs_weights[j].clone() / residual.clone();
            (
                at_least(p, &cost, exact),
                format!("payment {} < privacy cost {}", p.to_f64(), cost.to_f64()),
            )
        };
        let input = run.original_index[j];
        rec.record("individual-rationality", holds, || (Some(input), None, detail));
    }
    let total = run.selection.total_payment();
    rec.record("budget-feasibility", at_least(&b, &total, exact), || {
        (None, None, format!("total payment {} > budget {}", total.to_f64(), b.to_f64()))
    });

    // No misreport beats the truthful utility.
    let costs = inst.unit_costs();
    let slack = T::from_f64(if exact { 0.0 } else { FLOAT_UTILITY_SLACK });
    for i in 0..inst.len() {
        let truthful = run.utility(i, &v[i]);
        let grid = misreport_grid(costs, i, config.log_grid_points, step, critical_cost(&run, i));
        let mut worst: Option<(f64, T)> = None;
        let mut failure: Option<String> = None;
        for &m in &grid {
            let mut reported = v.clone();
            reported[i] = T::from_f64(m);
            let gain = match run_pipeline(&w, &reported, &b, config.filter_mode, config.rules) {
                Ok(Some(r)) => r.utility(i, &v[i]),
                Ok(None) => T::zero(),
                Err(e) => {
                    failure.get_or_insert_with(|| format!("misreport {m}: {e}"));
                    continue;
                }
            };
            let better = gain.clone() - truthful.clone();
            if worst.as_ref().is_none_or(|(_, g)| better > *g) {
                worst = Some((m, better));
            }
        }
        if let Some(detail) = failure {
            rec.record("mechanism-error", false, || (Some(i), None, detail));
        }
        let (m, gain) = worst.unwrap_or((costs[i], T::zero()));
        rec.record("truthfulness", gain <= slack, || {
            (
                Some(i),
                Some(m),
                format!(
                    "utility {} when reporting {m} instead of {} (truthful {})",
                    (gain.clone() + truthful.clone()).to_f64(),
                    costs[i],
                    truthful.to_f64()
                ),
            )
        });
    }
}

/// Outcome is unchanged when any subset of weights flips sign.
fn check_sign_invariance(rec: &mut Recorder<'_>) {
    let inst = rec.instance;
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(rec.config.rng_seed, rec.index as u64) ^ 0x5157);
    let mut flipped = inst.weights().to_vec();
    let mut which: Vec<usize> = (0..flipped.len()).filter(|_| rng.random_bool(0.5)).collect();
    if which.is_empty() {
        which.push(0);
    }
    which.shuffle(&mut rng);
    for &i in &which {
        flipped[i] = -flipped[i];
    }
    let other = inst.with_weights(flipped).expect("same magnitudes");
    let a = run_auction_with(inst, rec.config.filter_mode, rec.config.rules);
    let b = run_auction_with(&other, rec.config.filter_mode, rec.config.rules);
    rec.record("sign-invariance", a == b, || {
        (None, None, format!("flipping {which:?} changed the outcome"))
    });
}

/// Truthfulness, individual rationality, budget feasibility and sign
/// invariance over the configured instance stream.
pub fn run_truthfulness_sweep(config: &SweepConfig) -> Result<VerificationReport> {
    config.validate()?;
    let outcomes: Vec<InstanceOutcome> = (0..config.instance_count)
        .into_par_iter()
        .map(|index| {
            let inst = generate_instance(config, index);
            let mut rec = Recorder::new(config, index, &inst);
            match config.arithmetic_mode {
                ArithmeticMode::Float => {
                    check_instance::<f64>(&mut rec, false);
                    check_sign_invariance(&mut rec);
                }
                ArithmeticMode::Rational => check_instance::<Rational>(&mut rec, true),
            }
            rec.out
        })
        .collect();
    Ok(VerificationReport::merge(config, outcomes))
}

/// `OPT / S(x; w)` and the structural bounds on each filtered instance.
pub fn run_approximation_sweep(config: &SweepConfig) -> Result<VerificationReport> {
    config.validate()?;
    if config.n_range.1 > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            n: config.n_range.1,
            limit: ORACLE_LIMIT,
        });
    }
    let outcomes: Vec<InstanceOutcome> = (0..config.instance_count)
        .into_par_iter()
        .map(|index| {
            let inst = generate_instance(config, index);
            let mut rec = Recorder::new(config, index, &inst);
            approximation_checks(&mut rec);
            rec.out
        })
        .collect();
    Ok(VerificationReport::merge(config, outcomes))
}

fn approximation_checks(rec: &mut Recorder<'_>) {
    let prepared = match prepare(rec.instance, rec.config.filter_mode) {
        Ok(p) => p,
        Err(Error::EmptyInstance) => {
            rec.out.skipped = true;
            return;
        }
        Err(e) => {
            rec.record("mechanism-error", false, || (None, None, e.to_string()));
            return;
        }
    };
    match opt_bounds_check(&prepared.canonical) {
        // Every cost zero: the relaxation buys everyone, nothing to compare.
        Err(Error::DegenerateAllOnes) => rec.out.skipped = true,
        Err(e) => rec.record("mechanism-error", false, || (None, None, e.to_string())),
        Ok(report) => {
            for c in &report.checks {
                let name: &'static str = match c.property.as_str() {
                    "fractional-dominates" => "fractional-dominates",
                    "five-approximation" => "five-approximation",
                    "two-approximation-equal-weights" => "two-approximation-equal-weights",
                    "kkt-certificate" => "kkt-certificate",
                    "budget-identity" => "budget-identity",
                    "ell-at-least-k" => "ell-at-least-k",
                    _ => "prefix-dominates-fractional-tail",
                };
                let detail = c.detail.clone();
                rec.record(name, c.holds, || (None, None, detail));
            }
            rec.out.equal_weights = report.uniform_weights;
            rec.out.row = Some(RatioRow {
                instance_id: rec.index,
                ratio: report.ratio,
                branch: report.branch,
            });
        }
    }
}

/// Largest change of the noise-free DCLEF output when entry `i` moves,
/// over all corner databases, in exact arithmetic.
pub fn sensitivity_brute_force(statistic: &LinearStatistic, x: &[bool]) -> Result<Vec<Rational>> {
    let n = statistic.len();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if n > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            n,
            limit: ORACLE_LIMIT,
        });
    }
    let interval = statistic.interval();
    let lo = Rational::from_f64(interval.min());
    let hi = Rational::from_f64(interval.max());
    let mid = (lo.clone() + hi.clone()) / Rational::from_integer(2);
    let w: Vec<Rational> = statistic.weights().iter().map(|&c| Rational::from_f64(c)).collect();
    let mean = |mask: u32| {
        (0..n).fold(Rational::zero(), |acc, i| {
            let d = if !x[i] {
                mid.clone()
            } else if mask >> i & 1 == 1 {
                hi.clone()
            } else {
                lo.clone()
            };
            acc + w[i].clone() * d
        })
    };
    let means: Vec<Rational> = (0..1u32 << n).map(mean).collect();
    Ok((0..n)
        .map(|i| {
            (0..1u32 << n)
                .map(|m| (means[m as usize].clone() - means[(m ^ (1 << i)) as usize].clone()).abs())
                .fold(Rational::zero(), |a, b| if b > a { b } else { a })
        })
        .collect())
}

/// `Delta |w_i| x_i` in exact arithmetic.
pub fn analytic_sensitivity(statistic: &LinearStatistic, x: &[bool]) -> Vec<Rational> {
    let interval = statistic.interval();
    let delta = Rational::from_f64(interval.max()) - Rational::from_f64(interval.min());
    statistic
        .weights()
        .iter()
        .zip(x)
        .map(|(&w, &on)| if on { delta.clone() * Rational::from_f64(w).abs() } else { Rational::zero() })
        .collect()
}

/// Databases at the interval ends that differ only in entry `i` and move
/// the estimator mean the most.
pub fn extreme_pair(statistic: &LinearStatistic, i: usize) -> (Vec<f64>, Vec<f64>) {
    let interval = statistic.interval();
    let mut d = vec![interval.min(); statistic.len()];
    let mut d_prime = d.clone();
    d[i] = interval.min();
    d_prime[i] = interval.max();
    (d, d_prime)
}

/// Monte-Carlo worst-case mean squared error over the corner databases.
/// One noise sample stream is shared by all corners.
pub fn monte_carlo_distortion<R: Rng>(lef: &Lef, samples: usize, rng: &mut R) -> f64 {
    let stat = lef.statistic();
    let n = stat.len();
    let (mut first, mut second) = (0.0, 0.0);
    for _ in 0..samples {
        let z = crate::estimator::sample_laplace(rng, lef.sigma());
        first += z;
        second += z * z;
    }
    let (first, second) = (first / samples as f64, second / samples as f64);
    let interval = stat.interval();
    let corners = 1u64 << n.min(20);
    (0..corners)
        .map(|mask| {
            let d: Vec<f64> = (0..n)
                .map(|i| if mask >> i & 1 == 1 { interval.max() } else { interval.min() })
                .collect();
            let bias = lef.mean(&d) - stat.value(&d);
            bias * bias + 2.0 * bias * first + second
        })
        .fold(0.0, f64::max)
}
