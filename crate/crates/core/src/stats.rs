//! Rank-based comparison statistics over per-dataset accuracy tables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};

/// Largest sample size for which the Wilcoxon p-value is computed exactly.
pub const EXACT_WILCOXON_MAX_N: usize = 25;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Accuracy of every model on every dataset. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMatrix {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub class_counts: Vec<usize>,
    /// `accuracy[dataset][model]`
    pub accuracy: Vec<Vec<Option<f64>>>,
}

impl ResultMatrix {
    pub fn get(&self, dataset: usize, model: usize) -> Result<f64> {
        let cell = self.accuracy.get(dataset).and_then(|row| row.get(model)).copied().flatten();
        match cell {
            Some(a) if (0.0..=1.0).contains(&a) => Ok(a),
            Some(a) => Err(Error::Config(format!(
                "accuracy {a} for dataset {:?}, model {:?} lies outside [0, 1]",
                self.datasets[dataset], self.models[model]
            ))),
            None => Err(Error::Config(format!(
                "missing accuracy for dataset {:?} (row {}), model {:?} (column {})",
                self.datasets.get(dataset).map_or("?", String::as_str),
                dataset + 1,
                self.models.get(model).map_or("?", String::as_str),
                model + 1
            ))),
        }
    }

    /// All accuracies of one model, in dataset order.
    pub fn column(&self, model: usize) -> Result<Vec<f64>> {
        (0..self.datasets.len()).map(|d| self.get(d, model)).collect()
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }
}

/// Mean per-class error: the mean over datasets of `(1 − accuracy) / classes`.
pub fn mpce(accuracies: &[f64], class_counts: &[usize]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Config("MPCE over zero datasets".into()));
    }
    if class_counts.len() != accuracies.len() {
        return Err(Error::Config(format!("{} accuracies but {} class counts", accuracies.len(), class_counts.len())));
    }
    let mut total = 0.0;
    for (i, (&acc, &classes)) in accuracies.iter().zip(class_counts).enumerate() {
        if classes < 2 {
            return Err(Error::Config(format!("dataset {i} has class count {classes}; at least 2 required")));
        }
        total += (1.0 - acc) / classes as f64;
    }
    Ok(total / accuracies.len() as f64)
}

/// Ranks with 1 for the largest value; tied values share the mean of the
/// positions they occupy.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    average_tied_ranks(&order, |i| values[i])
}

fn average_tied_ranks(order: &[usize], key: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut ranks = vec![0.0; order.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && key(order[end]) == key(order[start]) {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    /// `ranks[dataset][model]`
    pub per_dataset: Vec<Vec<f64>>,
    pub arithmetic: Vec<f64>,
    pub geometric: Vec<f64>,
}

/// Per-dataset ranks (1 = most accurate) and their arithmetic and geometric
/// means for every model.
pub fn ranks(matrix: &ResultMatrix) -> Result<RankSummary> {
    if matrix.datasets.is_empty() || matrix.models.is_empty() {
        return Err(Error::Config("rank summary of an empty result matrix".into()));
    }
    let models = matrix.models.len();
    let mut per_dataset = Vec::with_capacity(matrix.datasets.len());
    for d in 0..matrix.datasets.len() {
        let row = (0..models).map(|m| matrix.get(d, m)).collect::<Result<Vec<_>>>()?;
        per_dataset.push(descending_ranks(&row));
    }
    let k = per_dataset.len() as f64;
    let arithmetic = (0..models).map(|m| per_dataset.iter().map(|r| r[m]).sum::<f64>() / k).collect();
    let geometric = (0..models).map(|m| libm::exp(per_dataset.iter().map(|r| libm::log(r[m])).sum::<f64>() / k)).collect();
    Ok(RankSummary { per_dataset, arithmetic, geometric })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs with a non-zero difference.
    pub n: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PValueMethod,
    /// Every difference was zero; `p_value` is 1.
    pub degenerate: bool,
}

/// Average ranks of `|d|` over the non-zero differences, returned doubled so
/// that they are integers, together with the sign of each difference.
fn signed_doubled_ranks(x: &[f64], y: &[f64]) -> (Vec<u64>, Vec<bool>, Vec<usize>) {
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let ranks = average_tied_ranks(&order, |i| diffs[i].abs());
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    let doubled = ranks.iter().map(|r| (2.0 * r) as u64).collect();
    let positive = diffs.iter().map(|d| *d > 0.0).collect();
    (doubled, positive, tie_sizes)
}

/// Number of sign assignments whose positive doubled-rank sum is at most
/// `bound`, counted by dynamic programming over the rank multiset.
fn count_at_most(doubled: &[u64], bound: u64) -> u64 {
    let total: u64 = doubled.iter().sum();
    let mut ways = vec![0u64; total as usize + 1];
    ways[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if ways[s] != 0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    ways.iter().take(bound as usize + 1).sum()
}

fn standard_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes receive average ranks.
/// Up to [`EXACT_WILCOXON_MAX_N`] non-zero pairs the p-value is exact;
/// beyond that a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_impl(x, y, None)
}

/// [`wilcoxon_signed_rank`] with the p-value method forced. Exact p-values
/// are counted in 64-bit integers and are rejected above 60 pairs.
pub fn wilcoxon_signed_rank_with(x: &[f64], y: &[f64], method: PValueMethod) -> Result<WilcoxonResult> {
    wilcoxon_impl(x, y, Some(method))
}

fn wilcoxon_impl(x: &[f64], y: &[f64], forced: Option<PValueMethod>) -> Result<WilcoxonResult> {
    if x.len() != y.len() || x.is_empty() {
        return Err(dim_err("wilcoxon_signed_rank", format!("need equal non-empty samples, got {} and {}", x.len(), y.len())));
    }
    let (doubled, positive, ties) = signed_doubled_ranks(x, y);
    let n = doubled.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p_value: 1.0,
            method: PValueMethod::Exact,
            degenerate: true,
        });
    }
    let plus2: u64 = doubled.iter().zip(&positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let minus2: u64 = doubled.iter().sum::<u64>() - plus2;
    let w2 = plus2.min(minus2);
    let (w_plus, w_minus, statistic) = (plus2 as f64 / 2.0, minus2 as f64 / 2.0, w2 as f64 / 2.0);

    let method = forced.unwrap_or(if n <= EXACT_WILCOXON_MAX_N { PValueMethod::Exact } else { PValueMethod::NormalApproximation });
    if method == PValueMethod::Exact && n > 60 {
        return Err(Error::Config(format!("exact p-value requested for {n} pairs")));
    }
    let (p_value, method) = if method == PValueMethod::Exact {
        let count = count_at_most(&doubled, w2);
        let p = 2.0 * count as f64 / libm::exp2(n as f64);
        (p.min(1.0), PValueMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let diff = statistic - mean;
        let corrected = diff - 0.5 * diff.signum();
        let z = if var > 0.0 { corrected / libm::sqrt(var) } else { 0.0 };
        ((2.0 * standard_normal_sf(z.abs())).min(1.0), PValueMethod::NormalApproximation)
    };
    Ok(WilcoxonResult { statistic, w_plus, w_minus, n, p_value, method, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseComparison {
    pub first: usize,
    pub second: usize,
    pub test: WilcoxonResult,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub models: Vec<String>,
    pub mpce: Vec<f64>,
    pub arithmetic_rank: Vec<f64>,
    pub geometric_rank: Vec<f64>,
    pub pairwise: Vec<PairwiseComparison>,
    /// Per model, datasets on which it is strictly more accurate than the
    /// baseline, and datasets on which it ties, when a baseline was named.
    pub versus_baseline: Option<(usize, Vec<(usize, usize)>)>,
}

impl MetricsReport {
    pub fn pair(&self, a: usize, b: usize) -> Option<&PairwiseComparison> {
        self.pairwise.iter().find(|p| (p.first, p.second) == (a, b) || (p.first, p.second) == (b, a))
    }
}

/// MPCE, ranks and all pairwise Wilcoxon tests over a complete result matrix.
pub fn compare_models(matrix: &ResultMatrix, baseline: Option<&str>) -> Result<MetricsReport> {
    let models = matrix.models.len();
    if models < 2 {
        return Err(Error::Config(format!("model comparison needs at least 2 models, got {models}")));
    }
    let columns = (0..models).map(|m| matrix.column(m)).collect::<Result<Vec<_>>>()?;
    let mpce = columns.iter().map(|c| mpce(c, &matrix.class_counts)).collect::<Result<Vec<_>>>()?;
    let summary = ranks(matrix)?;
    let mut pairwise = Vec::new();
    for a in 0..models {
        for b in a + 1..models {
            let test = wilcoxon_signed_rank(&columns[a], &columns[b])?;
            let significant = test.p_value < SIGNIFICANCE_LEVEL;
            pairwise.push(PairwiseComparison { first: a, second: b, test, significant });
        }
    }
    let versus_baseline = match baseline {
        None => None,
        Some(name) => {
            let base = matrix.model_index(name).ok_or_else(|| Error::Config(format!("baseline model {name:?} not in the matrix")))?;
            let counts = columns
                .iter()
                .map(|c| {
                    let wins = c.iter().zip(&columns[base]).filter(|(a, b)| a > b).count();
                    let ties = c.iter().zip(&columns[base]).filter(|(a, b)| a == b).count();
                    (wins, ties)
                })
                .collect();
            Some((base, counts))
        }
    };
    Ok(MetricsReport {
        models: matrix.models.clone(),
        mpce,
        arithmetic_rank: summary.arithmetic,
        geometric_rank: summary.geometric,
        pairwise,
        versus_baseline,
    })
}
