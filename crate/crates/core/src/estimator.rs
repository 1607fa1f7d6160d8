//! Laplace estimators of a weighted sum `s(d) = sum_i w_i d_i`.
//!
//! A Laplace estimator interpolates each entry between its true value and the
//! interval midpoint (`x_i` in `[0, 1]`) and adds Laplace noise of scale
//! `sigma`. The discrete canonical variant ([`Dclef`]) restricts `x` to 0/1 and
//! ties the noise to the residual weight, `sigma = Delta * sum_i |w_i| (1 - x_i)`.
//!
//! Privacy guarantees are per individual: `eps_i = Delta |w_i| x_i / sigma`.
//! When `sigma = 0` and `x_i > 0` the guarantee is unbounded and reported as
//! `f64::INFINITY`, never NaN.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{AuctionInstance, Database, ValueInterval};

/// Largest `n` for the exhaustive subset searches.
pub const EXHAUSTIVE_LIMIT: usize = 25;

/// Public weights plus the value interval: the statistic being estimated.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearStatistic {
    weights: Vec<f64>,
    interval: ValueInterval,
}

impl LinearStatistic {
    pub fn new(weights: Vec<f64>, interval: ValueInterval) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if let Some(i) = weights.iter().position(|w| *w == 0.0 || !w.is_finite()) {
            return Err(Error::Validation(format!("weight zero at index {i}")));
        }
        Ok(Self { weights, interval })
    }

    pub fn from_instance(instance: &AuctionInstance) -> Self {
        Self {
            weights: instance.weights().to_vec(),
            interval: instance.interval(),
        }
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

    pub fn interval(&self) -> ValueInterval {
        self.interval
    }

    pub fn abs_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.abs()).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).fold(0.0, |acc, x| acc + x)
    }

    /// Exact value `sum_i w_i d_i`.
    pub fn value(&self, entries: &[f64]) -> f64 {
        self.weights.iter().zip(entries).map(|(w, d)| w * d).fold(0.0, |acc, x| acc + x)
    }
}

/// Draws `Lap(scale)` by inverting the CDF on one uniform draw.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

/// General Laplace estimator with interpolation vector `x` and noise scale `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lef {
    statistic: LinearStatistic,
    x: Vec<f64>,
    sigma: f64,
}

impl Lef {
    pub fn new(statistic: LinearStatistic, x: Vec<f64>, sigma: f64) -> Result<Self> {
        if x.len() != statistic.len() {
            return Err(Error::DimensionMismatch {
                expected: statistic.len(),
                found: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|xi| !(0.0..=1.0).contains(xi)) {
            return Err(Error::Validation(format!("x[{i}] outside [0, 1]")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Validation("sigma must be finite and nonnegative".into()));
        }
        Ok(Self { statistic, x, sigma })
    }

    pub fn statistic(&self) -> &LinearStatistic {
        &self.statistic
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Noise-free part of the estimator at `d`.
    pub fn mean(&self, entries: &[f64]) -> f64 {
        let mid = self.statistic.interval.midpoint();
        self.statistic
            .weights
            .iter()
            .zip(&self.x)
            .zip(entries)
            .map(|((w, x), d)| w * d * x + mid * w * (1.0 - x))
            .fold(0.0, |acc, x| acc + x)
    }

    /// One release of the estimator on `database`.
    pub fn evaluate<R: Rng + ?Sized>(&self, database: &Database, rng: &mut R) -> Result<f64> {
        if database.len() != self.statistic.len() {
            return Err(Error::DimensionMismatch {
                expected: self.statistic.len(),
                found: database.len(),
            });
        }
        Ok(self.mean(database.entries()) + sample_laplace(rng, self.sigma))
    }

    /// Per-individual privacy levels; unbounded entries are `+inf`.
    pub fn epsilons(&self) -> Vec<f64> {
        let delta = self.statistic.interval.delta();
        self.statistic
            .weights
            .iter()
            .zip(&self.x)
            .map(|(w, &x)| {
                if x == 0.0 {
                    0.0
                } else if self.sigma == 0.0 {
                    f64::INFINITY
                } else {
                    delta * w.abs() * x / self.sigma
                }
            })
            .collect()
    }

    /// As [`Lef::epsilons`], but an unbounded guarantee is an error.
    pub fn checked_epsilons(&self) -> Result<Vec<f64>> {
        let eps = self.epsilons();
        if let Some(index) = eps.iter().position(|e| e.is_infinite()) {
            return Err(Error::UnboundedPrivacyLoss { index });
        }
        Ok(eps)
    }

    /// Worst-case mean squared error, attained at interval corners.
    pub fn distortion(&self) -> f64 {
        let residual: f64 = self
            .statistic
            .weights
            .iter()
            .zip(&self.x)
            .map(|(w, x)| w.abs() * (1.0 - x))
            .fold(0.0, |acc, x| acc + x);
        let bias = self.statistic.interval.delta() / 2.0 * residual;
        bias * bias + 2.0 * self.sigma * self.sigma
    }

    /// Log density of the output at `y` on database `entries`.
    pub fn log_density(&self, entries: &[f64], y: f64) -> f64 {
        let mu = self.mean(entries);
        -(y - mu).abs() / self.sigma - (2.0 * self.sigma).ln()
    }

    /// `sup_y log(p_d(y) / p_d'(y))`, evaluated from the closed-form densities
    /// at a point past both means where the supremum is attained.
    pub fn max_log_density_ratio(&self, d: &[f64], d_prime: &[f64]) -> f64 {
        let (mu, mu_prime) = (self.mean(d), self.mean(d_prime));
        let y = if mu <= mu_prime {
            mu - self.sigma
        } else {
            mu + self.sigma
        };
        self.log_density(d, y) - self.log_density(d_prime, y)
    }
}

/// Discrete canonical Laplace estimator: 0/1 participation, canonical noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Dclef {
    statistic: LinearStatistic,
    x: Vec<bool>,
}

impl Dclef {
    pub fn new(statistic: LinearStatistic, x: Vec<bool>) -> Result<Self> {
        if x.len() != statistic.len() {
            return Err(Error::DimensionMismatch {
                expected: statistic.len(),
                found: x.len(),
            });
        }
        Ok(Self { statistic, x })
    }

    /// DCLEF with `x_i = 1` exactly on `selected`.
    pub fn from_selection(statistic: LinearStatistic, selected: &[usize]) -> Self {
        let mut x = vec![false; statistic.len()];
        for &i in selected {
            x[i] = true;
        }
        Self { statistic, x }
    }

    pub fn statistic(&self) -> &LinearStatistic {
        &self.statistic
    }

    pub fn x(&self) -> &[bool] {
        &self.x
    }

    /// `H = {i : x_i = 1}`.
    pub fn selected(&self) -> Vec<usize> {
        (0..self.x.len()).filter(|&i| self.x[i]).collect()
    }

    /// `sum_i |w_i| x_i`.
    pub fn selected_weight(&self) -> f64 {
        self.statistic
            .weights
            .iter()
            .zip(&self.x)
            .filter(|(_, &x)| x)
            .map(|(w, _)| w.abs())
            .fold(0.0, |acc, x| acc + x)
    }

    /// `sum_i |w_i| (1 - x_i)`.
    pub fn residual_weight(&self) -> f64 {
        self.statistic
            .weights
            .iter()
            .zip(&self.x)
            .filter(|(_, &x)| !x)
            .map(|(w, _)| w.abs())
            .fold(0.0, |acc, x| acc + x)
    }

    pub fn sigma(&self) -> f64 {
        self.statistic.interval.delta() * self.residual_weight()
    }

    /// `|w_i| x_i / sum_j |w_j| (1 - x_j)`; `+inf` for selected individuals
    /// when everyone is selected.
    pub fn epsilons(&self) -> Vec<f64> {
        let residual = self.residual_weight();
        self.statistic
            .weights
            .iter()
            .zip(&self.x)
            .map(|(w, &x)| match (x, residual == 0.0) {
                (false, _) => 0.0,
                (true, true) => f64::INFINITY,
                (true, false) => w.abs() / residual,
            })
            .collect()
    }

    /// `(9/4) Delta^2 (W - sum_i |w_i| x_i)^2`, with the difference taken as
    /// the residual sum so no cancellation occurs.
    pub fn distortion(&self) -> f64 {
        let delta = self.statistic.interval.delta();
        let r = self.residual_weight();
        2.25 * delta * delta * r * r
    }

    pub fn to_lef(&self) -> Lef {
        Lef {
            statistic: self.statistic.clone(),
            x: self.x.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            sigma: self.sigma(),
        }
    }

    pub fn privacy_profile(&self) -> PrivacyProfile {
        PrivacyProfile {
            abs_weights: self.statistic.abs_weights(),
            epsilons: self.epsilons(),
        }
    }

    pub fn to_record(&self) -> DclefRecord {
        DclefRecord {
            x: self.x.iter().map(|&b| u8::from(b)).collect(),
            sigma: self.sigma(),
            epsilons: self.epsilons(),
            distortion: self.distortion(),
        }
    }
}

/// Serialized form. Infinite epsilons serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DclefRecord {
    pub x: Vec<u8>,
    pub sigma: f64,
    pub epsilons: Vec<f64>,
    pub distortion: f64,
}

/// Weight magnitudes paired with privacy levels: the input of the privacy index.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyProfile {
    pub abs_weights: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl PrivacyProfile {
    pub fn new(abs_weights: Vec<f64>, epsilons: Vec<f64>) -> Result<Self> {
        if abs_weights.len() != epsilons.len() {
            return Err(Error::DimensionMismatch {
                expected: abs_weights.len(),
                found: epsilons.len(),
            });
        }
        if epsilons.iter().any(|e| e.is_nan() || *e < 0.0) {
            return Err(Error::Validation("epsilons must be nonnegative".into()));
        }
        Ok(Self {
            abs_weights,
            epsilons,
        })
    }

    pub fn len(&self) -> usize {
        self.abs_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_weights.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMethod {
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyIndexResult {
    pub beta: f64,
    pub witness: Vec<usize>,
    pub method: IndexMethod,
}

/// Exact privacy index: the heaviest subset whose epsilons sum strictly
/// below one half (0/1 knapsack of capacity 1/2, solved by pruned search).
pub fn privacy_index_exact(profile: &PrivacyProfile) -> Result<PrivacyIndexResult> {
    let n = profile.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::InstanceTooLarge {
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + profile.abs_weights[i];
    }
    let mut search = KnapsackSearch {
        weights: &profile.abs_weights,
        suffix: &suffix,
        best_weight: -1.0,
        best: Vec::new(),
        current: Vec::new(),
    };
    search.run(0, 0.0, &mut |i, load: &mut f64| {
        let next = *load + profile.epsilons[i];
        if next < 0.5 {
            *load = next;
            true
        } else {
            false
        }
    }, 0.0);
    Ok(PrivacyIndexResult {
        beta: search.best_weight.max(0.0),
        witness: search.best,
        method: IndexMethod::Exact,
    })
}

/// Include-first depth-first search over subsets; the first subset reaching a
/// strictly larger weight wins, which is the lexicographically smallest among
/// equal-weight optima.
struct KnapsackSearch<'a> {
    weights: &'a [f64],
    suffix: &'a [f64],
    best_weight: f64,
    best: Vec<usize>,
    current: Vec<usize>,
}

impl KnapsackSearch<'_> {
    fn run<F>(&mut self, i: usize, weight: f64, admit: &mut F, load: f64)
    where
        F: FnMut(usize, &mut f64) -> bool,
    {
        if weight + self.suffix[i] <= self.best_weight {
            return;
        }
        if i == self.weights.len() {
            self.best_weight = weight;
            self.best = self.current.clone();
            return;
        }
        let mut next_load = load;
        if admit(i, &mut next_load) {
            self.current.push(i);
            self.run(i + 1, weight + self.weights[i], admit, next_load);
            self.current.pop();
        }
        self.run(i + 1, weight, admit, load);
    }
}

/// Greedy knapsack bound: drop everyone with `eps >= 1/2`, sort the rest by
/// `eps_i / |w_i|` and take the longest prefix whose epsilons sum below one
/// half, or the heaviest single individual if that weighs more. The prefix
/// contains every prefix passing the per-item test
/// `eps_j / |w_j| < 1 / (2 w([j]))`, and the result is always at least half
/// the exact index.
pub fn privacy_index_greedy(profile: &PrivacyProfile) -> PrivacyIndexResult {
    let n = profile.len();
    let w = &profile.abs_weights;
    let eps = &profile.epsilons;
    let mut order: Vec<usize> = (0..n).filter(|&i| eps[i] < 0.5).collect();
    order.sort_by(|&a, &b| (eps[a] / w[a]).total_cmp(&(eps[b] / w[b])));

    let mut load = 0.0;
    let mut h = 0;
    for &i in &order {
        load += eps[i];
        if load >= 0.5 {
            break;
        }
        h += 1;
    }
    let prefix: Vec<usize> = order[..h].to_vec();
    let prefix_w: f64 = prefix.iter().map(|&i| w[i]).fold(0.0, |acc, x| acc + x);

    let single = (0..n)
        .filter(|&i| eps[i] < 0.5)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if w[b] >= w[i] => Some(b),
            _ => Some(i),
        });

    let witness = match single {
        Some(s) if prefix_w < w[s] => vec![s],
        _ => {
            let mut p = prefix;
            p.sort_unstable();
            p
        }
    };
    PrivacyIndexResult {
        beta: witness.iter().map(|&i| w[i]).fold(0.0, |acc, x| acc + x),
        witness,
        method: IndexMethod::Greedy,
    }
}

/// Exact privacy index for `n <= 25`, the greedy lower bound otherwise.
pub fn privacy_index(profile: &PrivacyProfile) -> PrivacyIndexResult {
    privacy_index_exact(profile).unwrap_or_else(|_| privacy_index_greedy(profile))
}

/// Resolution of the weight grid used by the large-`n` subset-sum fallback,
/// relative to `W`.
pub const SUBSET_SUM_RESOLUTION: f64 = 1e-6;

/// Heaviest subset with total weight at most `capacity`. Exact search for
/// `n <= 25`; above that, a dynamic program over weights rounded up to a grid
/// of `W * 1e-6`, so the returned set is always feasible.
pub fn max_weight_subset(abs_weights: &[f64], capacity: f64) -> Vec<usize> {
    let n = abs_weights.len();
    if n <= EXHAUSTIVE_LIMIT {
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + abs_weights[i];
        }
        let mut search = KnapsackSearch {
            weights: abs_weights,
            suffix: &suffix,
            best_weight: -1.0,
            best: Vec::new(),
            current: Vec::new(),
        };
        search.run(
            0,
            0.0,
            &mut |i, load: &mut f64| {
                let next = *load + abs_weights[i];
                if next <= capacity {
                    *load = next;
                    true
                } else {
                    false
                }
            },
            0.0,
        );
        return search.best;
    }

    let total: f64 = abs_weights.iter().fold(0.0, |acc, x| acc + x);
    let resolution = total * SUBSET_SUM_RESOLUTION;
    let cap = (capacity / resolution).floor().max(0.0) as usize;
    let units: Vec<usize> = abs_weights
        .iter()
        .map(|w| (w / resolution).ceil() as usize)
        .collect();
    // first_item[c]: item whose addition first made grid weight c reachable.
    let mut first_item = vec![usize::MAX; cap + 1];
    let mut reachable = vec![false; cap + 1];
    reachable[0] = true;
    for (i, &u) in units.iter().enumerate() {
        if u == 0 || u > cap {
            continue;
        }
        for c in (u..=cap).rev() {
            if !reachable[c] && reachable[c - u] {
                reachable[c] = true;
                first_item[c] = i;
            }
        }
    }
    let mut c = (0..=cap).rev().find(|&c| reachable[c]).unwrap_or(0);
    let mut chosen = Vec::new();
    while c > 0 {
        let i = first_item[c];
        chosen.push(i);
        c -= units[i];
    }
    chosen.sort_unstable();
    chosen
}

/// DCLEF that withholds (`x_i = 0`) the heaviest subset of weight at most
/// `alpha * W` and keeps everyone else. Its distortion is at most
/// `(9/4) (alpha W Delta)^2`.
pub fn tradeoff_construct(statistic: &LinearStatistic, alpha: f64) -> Result<Dclef> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::ParameterOutOfRange(format!("alpha = {alpha}")));
    }
    let abs = statistic.abs_weights();
    let withheld = max_weight_subset(&abs, alpha * statistic.total_weight());
    let mut x = vec![true; statistic.len()];
    for i in withheld {
        x[i] = false;
    }
    Dclef::new(statistic.clone(), x)
}

/// For a DCLEF with distortion below `(W Delta)^2 / 48`, the trade-off
/// construction at `alpha = sqrt(48 delta) / (W Delta)`.
pub fn surrogate_dclef(dclef: &Dclef) -> Result<(Dclef, f64)> {
    let stat = dclef.statistic();
    let scale = stat.total_weight() * stat.interval().delta();
    let delta = dclef.distortion();
    if delta >= scale * scale / 48.0 {
        return Err(Error::ParameterOutOfRange(
            "distortion must be below (W Delta)^2 / 48".into(),
        ));
    }
    let alpha = (48.0 * delta).sqrt() / scale;
    Ok((tradeoff_construct(stat, alpha)?, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundStatus {
    /// Premise and conclusion both hold.
    Holds,
    /// Distortion above the premise threshold; nothing to check.
    Vacuous,
    /// Premise holds but the privacy index exceeds `2 alpha W`.
    Violated,
    /// Only the greedy bound was available and it was not tight enough.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub status: BoundStatus,
    pub alpha: f64,
    pub distortion: f64,
    pub distortion_threshold: f64,
    pub beta: f64,
    pub beta_bound: f64,
    pub method: IndexMethod,
}

/// Checks: distortion `<= (alpha W Delta)^2 / 48` implies index `<= 2 alpha W`.
pub fn check_tradeoff_bound(dclef: &Dclef, alpha: f64) -> Result<TradeoffReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParameterOutOfRange(format!("alpha = {alpha}")));
    }
    let stat = dclef.statistic();
    let total = stat.total_weight();
    let scaled = alpha * total * stat.interval().delta();
    let threshold = scaled * scaled / 48.0;
    let distortion = dclef.distortion();
    let bound = 2.0 * alpha * total;
    let profile = dclef.privacy_profile();

    let (status, beta, method) = if distortion > threshold {
        let idx = privacy_index(&profile);
        (BoundStatus::Vacuous, idx.beta, idx.method)
    } else if profile.len() <= EXHAUSTIVE_LIMIT {
        let idx = privacy_index_exact(&profile)?;
        let status = if idx.beta <= bound {
            BoundStatus::Holds
        } else {
            BoundStatus::Violated
        };
        (status, idx.beta, IndexMethod::Exact)
    } else {
        // beta <= 2 * greedy, so the greedy value can only certify.
        let idx = privacy_index_greedy(&profile);
        let status = if 2.0 * idx.beta <= bound {
            BoundStatus::Holds
        } else {
            BoundStatus::Undetermined
        };
        (status, idx.beta, IndexMethod::Greedy)
    };
    Ok(TradeoffReport {
        status,
        alpha,
        distortion,
        distortion_threshold: threshold,
        beta,
        beta_bound: bound,
        method,
    })
}

/// `sqrt(3 delta)`: the accuracy any estimator of distortion `delta` achieves
/// with probability at least 2/3.
pub fn accuracy_bound(distortion: f64) -> f64 {
    (3.0 * distortion).sqrt()
}
