//! Auction data model: value interval, instance, database, canonical ordering,
//! the budget-payability filter and JSON file I/O.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arith::{sum, Scalar};
use crate::error::{Error, Result};

/// The interval `[min, max]` every private value lies in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueInterval {
    min: f64,
    max: f64,
}

impl ValueInterval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::Validation("interval bounds must be finite".into()));
        }
        if min >= max {
            return Err(Error::Validation("degenerate interval".into()));
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Interval length.
    pub fn delta(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        (self.min + self.max) / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }
}

/// Complete auction input: public weights, reported unit costs, budget and the
/// value interval. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct AuctionInstance {
    weights: Vec<f64>,
    unit_costs: Vec<f64>,
    budget: f64,
    interval: ValueInterval,
}

impl AuctionInstance {
    /// Validates structure. A zero budget is accepted here (it is a meaningful
    /// degenerate case for the benchmarks); files must carry a positive one.
    pub fn new(
        weights: Vec<f64>,
        unit_costs: Vec<f64>,
        budget: f64,
        interval: ValueInterval,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if weights.len() != unit_costs.len() {
            return Err(Error::Validation(format!(
                "{} weights but {} unit costs",
                weights.len(),
                unit_costs.len()
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::Validation(format!("weight not finite at index {i}")));
            }
            if w == 0.0 {
                return Err(Error::Validation(format!("weight zero at index {i}")));
            }
        }
        for (i, &v) in unit_costs.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "unit cost must be finite and nonnegative at index {i}"
                )));
            }
        }
        if !budget.is_finite() || budget < 0.0 {
            return Err(Error::Validation("budget must be finite and nonnegative".into()));
        }
        Ok(Self {
            weights,
            unit_costs,
            budget,
            interval,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn unit_costs(&self) -> &[f64] {
        &self.unit_costs
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn interval(&self) -> ValueInterval {
        self.interval
    }

    pub fn abs_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.abs()).collect()
    }

    /// `W`, the l1 norm of the weights.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).fold(0.0, |acc, x| acc + x)
    }

    /// `w(H)` for an index subset.
    pub fn weight_of(&self, subset: impl IntoIterator<Item = usize>) -> f64 {
        subset.into_iter().map(|i| self.weights[i].abs()).fold(0.0, |acc, x| acc + x)
    }

    pub fn is_canonical(&self) -> bool {
        self.unit_costs.windows(2).all(|p| p[0] <= p[1])
    }

    /// Same instance with one reported cost replaced.
    pub fn with_unit_cost(&self, index: usize, cost: f64) -> Result<Self> {
        let mut costs = self.unit_costs.clone();
        costs[index] = cost;
        Self::new(self.weights.clone(), costs, self.budget, self.interval)
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, self.unit_costs.clone(), self.budget, self.interval)
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.weights.clone(), self.unit_costs.clone(), budget, self.interval)
    }

    fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.weights[i]).collect(),
            indices.iter().map(|&i| self.unit_costs[i]).collect(),
            self.budget,
            self.interval,
        )
    }
}

/// Private values, one per individual.
#[derive(Clone, Debug, PartialEq)]
pub struct Database {
    entries: Vec<f64>,
}

impl Database {
    pub fn new(entries: Vec<f64>, interval: &ValueInterval) -> Result<Self> {
        if let Some(i) = entries.iter().position(|&d| !interval.contains(d)) {
            return Err(Error::Validation(format!(
                "database entry {i} outside [{}, {}]",
                interval.min(),
                interval.max()
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Index bookkeeping for a reordering: `forward[new] = original`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &orig) in forward.iter().enumerate() {
            if orig >= n || inverse[orig] != usize::MAX {
                return Err(Error::Validation("not a permutation".into()));
            }
            inverse[orig] = new;
        }
        Ok(Self { forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Original index of canonical position `new`.
    pub fn original(&self, new: usize) -> usize {
        self.forward[new]
    }

    /// Canonical position of original index `orig`.
    pub fn canonical(&self, orig: usize) -> usize {
        self.inverse[orig]
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Reorders values given in canonical order back to original order.
    pub fn to_original<T: Clone>(&self, canonical: &[T]) -> Vec<T> {
        self.inverse.iter().map(|&new| canonical[new].clone()).collect()
    }
}

/// Sorts individuals by unit cost, ties by original index.
pub fn canonicalize(instance: &AuctionInstance) -> (AuctionInstance, Permutation) {
    let all: Vec<usize> = (0..instance.len()).collect();
    let order = cost_order(&instance.unit_costs, &all);
    let sorted = instance
        .select(&order)
        .expect("reordering preserves validity");
    let perm = Permutation::from_forward(order).expect("sort yields a permutation");
    (sorted, perm)
}

/// How the budget-payability filter is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Recompute `W` over survivors until nothing else is removed.
    #[default]
    FixedPoint,
    /// Single pass against the original `W`.
    Once,
}

/// `|w_i| v_i / (W - |w_i|) <= B`, with a zero denominator counted as a violation.
pub fn is_payable<T: Scalar>(abs_weight: &T, unit_cost: &T, total_weight: &T, budget: &T) -> bool {
    let rest = total_weight.clone() - abs_weight.clone();
    rest > T::zero() && abs_weight.clone() * unit_cost.clone() <= budget.clone() * rest
}

/// Indices (ascending) that survive the payability filter.
pub fn payable_survivors<T: Scalar>(
    abs_weights: &[T],
    unit_costs: &[T],
    budget: &T,
    mode: FilterMode,
) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..abs_weights.len()).collect();
    loop {
        // Summed in cost order so the mechanism's threshold test on the
        // cheapest survivor rounds exactly like this one.
        let total = sum(cost_order(unit_costs, &alive).iter().map(|&i| abs_weights[i].clone()));
        // Every violator is removed in the same round, so order never matters.
        let keep: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&i| is_payable(&abs_weights[i], &unit_costs[i], &total, budget))
            .collect();
        let changed = keep.len() != alive.len();
        alive = keep;
        if !changed || mode == FilterMode::Once || alive.is_empty() {
            return alive;
        }
    }
}

/// Stable ordering of `indices` by unit cost.
pub fn cost_order<T: Scalar>(unit_costs: &[T], indices: &[usize]) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| {
        unit_costs[a]
            .partial_cmp(&unit_costs[b])
            .expect("unit costs are comparable")
    });
    order
}

/// Removes individuals that no budget-feasible mechanism can pay. Returns the
/// surviving instance (original relative order) and the removed original indices.
pub fn filter_assumption1(instance: &AuctionInstance) -> Result<(AuctionInstance, Vec<usize>)> {
    filter_assumption1_with(instance, FilterMode::FixedPoint)
}

pub fn filter_assumption1_with(
    instance: &AuctionInstance,
    mode: FilterMode,
) -> Result<(AuctionInstance, Vec<usize>)> {
    let alive = payable_survivors(
        &instance.abs_weights(),
        &instance.unit_costs,
        &instance.budget,
        mode,
    );
    if alive.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let removed = (0..instance.len())
        .filter(|i| alive.binary_search(i).is_err())
        .collect();
    Ok((instance.select(&alive)?, removed))
}

/// Instance after filtering and sorting, with the maps back to the input indices.
#[derive(Clone, Debug)]
pub struct PreparedInstance {
    pub canonical: AuctionInstance,
    /// `original_index[j]` is the input index of canonical individual `j`.
    pub original_index: Vec<usize>,
    pub removed: Vec<usize>,
    pub input_len: usize,
}

impl PreparedInstance {
    /// Spreads canonical-order values over input order, filling removed slots.
    pub fn to_input_order<T: Clone>(&self, canonical: &[T], fill: T) -> Vec<T> {
        let mut out = vec![fill; self.input_len];
        for (j, value) in canonical.iter().enumerate() {
            out[self.original_index[j]] = value.clone();
        }
        out
    }
}

/// Filter then canonicalize.
pub fn prepare(instance: &AuctionInstance, mode: FilterMode) -> Result<PreparedInstance> {
    let (survivors, removed) = filter_assumption1_with(instance, mode)?;
    let kept: Vec<usize> = (0..instance.len())
        .filter(|i| removed.binary_search(i).is_err())
        .collect();
    let (canonical, perm) = canonicalize(&survivors);
    let original_index = perm.forward().iter().map(|&j| kept[j]).collect();
    Ok(PreparedInstance {
        canonical,
        original_index,
        removed,
        input_len: instance.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IntervalRecord {
    min: f64,
    max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InstanceRecord {
    weights: Vec<f64>,
    unit_costs: Vec<f64>,
    budget: f64,
    interval: IntervalRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    database: Option<Vec<f64>>,
}

/// Instance plus the optional database block carried by instance files.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFile {
    pub instance: AuctionInstance,
    pub database: Option<Database>,
}

impl InstanceFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let record: InstanceRecord = serde_json::from_str(text)?;
        Self::from_record(record)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let record: InstanceRecord = serde_json::from_reader(reader)?;
        Self::from_record(record)
    }

    fn from_record(record: InstanceRecord) -> Result<Self> {
        let interval = ValueInterval::new(record.interval.min, record.interval.max)?;
        if record.budget.is_nan() || record.budget <= 0.0 {
            return Err(Error::Validation("budget must be positive".into()));
        }
        let instance =
            AuctionInstance::new(record.weights, record.unit_costs, record.budget, interval)?;
        let database = match record.database {
            Some(entries) => {
                if entries.len() != instance.len() {
                    return Err(Error::Validation(format!(
                        "database has {} entries, instance has {}",
                        entries.len(),
                        instance.len()
                    )));
                }
                Some(Database::new(entries, &interval)?)
            }
            None => None,
        };
        Ok(Self { instance, database })
    }

    pub fn to_json_string(&self) -> String {
        let record = InstanceRecord {
            weights: self.instance.weights.clone(),
            unit_costs: self.instance.unit_costs.clone(),
            budget: self.instance.budget,
            interval: IntervalRecord {
                min: self.instance.interval.min,
                max: self.instance.interval.max,
            },
            database: self.database.as_ref().map(|d| d.entries.clone()),
        };
        serde_json::to_string_pretty(&record).expect("finite values serialize")
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json_string().as_bytes())?;
        Ok(())
    }
}

/// Reads and validates an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<AuctionInstance> {
    Ok(load_instance_file(path)?.instance)
}

pub fn load_instance_file(path: impl AsRef<Path>) -> Result<InstanceFile> {
    let file = std::fs::File::open(path)?;
    InstanceFile::from_reader(std::io::BufReader::new(file))
}

pub fn save_instance(instance: &AuctionInstance, path: impl AsRef<Path>) -> Result<()> {
    let file = InstanceFile {
        instance: instance.clone(),
        database: None,
    };
    std::fs::write(path, file.to_json_string())?;
    Ok(())
}
