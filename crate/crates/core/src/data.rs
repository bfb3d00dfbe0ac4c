//! Labelled univariate series collections and the synthetic
//! Cylinder-Bell-Funnel generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::seeded_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Equal-length univariate series with contiguous class indices.
///
/// `label_values[k]` is the raw label that was mapped to class index `k`; the
/// values are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    series: Vec<Tensor>,
    labels: Vec<usize>,
    label_values: Vec<f64>,
}

/// Sorted distinct raw labels; position in the result is the class index.
pub fn label_map(raw: &[f64]) -> Vec<f64> {
    let mut values = raw.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

fn class_index(label_values: &[f64], raw: f64) -> Result<usize> {
    label_values.iter().position(|&v| v == raw).ok_or(Error::UnknownLabel(raw))
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, series: Vec<Tensor>, labels: Vec<usize>, label_values: Vec<f64>) -> Result<Self> {
        if series.len() != labels.len() {
            return Err(dim_err("dataset", format!("{} series but {} labels", series.len(), labels.len())));
        }
        let len = series.first().map_or(0, Tensor::len);
        let mut shaped = Vec::with_capacity(series.len());
        for (i, s) in series.into_iter().enumerate() {
            if s.len() != len {
                return Err(dim_err("dataset", format!("series {i} has length {} but series 0 has {len}", s.len())));
            }
            shaped.push(s.reshape(vec![1, len])?);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_values.len()) {
            return Err(Error::Index { index: bad, len: label_values.len() });
        }
        Ok(Self { name: name.into(), split, series: shaped, labels, label_values })
    }

    /// Builds a dataset from `(raw label, values)` rows. Raw labels are mapped
    /// through `label_values` when given (e.g. the training split's map),
    /// otherwise through the sorted distinct labels of the rows themselves.
    pub fn from_raw(name: impl Into<String>, split: Split, rows: Vec<(f64, Vec<f64>)>, label_values: Option<&[f64]>) -> Result<Self> {
        let raw: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let label_values = match label_values {
            Some(v) => v.to_vec(),
            None => label_map(&raw),
        };
        let labels = raw.iter().map(|&r| class_index(&label_values, r)).collect::<Result<Vec<_>>>()?;
        let mut series = Vec::with_capacity(rows.len());
        for (i, (_, values)) in rows.into_iter().enumerate() {
            if values.is_empty() {
                return Err(dim_err("dataset", format!("row {i} has no values")));
            }
            series.push(Tensor::vector(values));
        }
        Self::new(name, split, series, labels, label_values)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn series(&self) -> &[Tensor] {
        &self.series
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_values(&self) -> &[f64] {
        &self.label_values
    }

    pub fn raw_label(&self, i: usize) -> f64 {
        self.label_values[self.labels[i]]
    }

    pub fn class_count(&self) -> usize {
        self.label_values.len()
    }

    /// Common series length, 0 for an empty dataset.
    pub fn series_length(&self) -> usize {
        self.series.first().map_or(0, Tensor::len)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_values: self.label_values.clone(),
        }
    }

    /// Stratified random split into `(kept, held_out)` where roughly
    /// `fraction` of every class is held out (at least one sample of a class
    /// always stays in the kept part).
    pub fn holdout_split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::Config(format!("validation fraction must lie in (0, 1), got {fraction}")));
        }
        let mut rng = seeded_rng(seed);
        let (mut kept, mut held) = (Vec::new(), Vec::new());
        for class in 0..self.class_count() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let take = (libm::round(idx.len() as f64 * fraction) as usize).min(idx.len().saturating_sub(1));
            held.extend_from_slice(&idx[..take]);
            kept.extend_from_slice(&idx[take..]);
        }
        kept.sort_unstable();
        held.sort_unstable();
        Ok((self.subset(&kept), self.subset(&held)))
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Rescales to zero mean and unit (population) standard deviation. Constant
/// series are only centred.
pub fn z_normalize(values: &mut [f64]) {
    let (mean, std) = mean_std(values);
    let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    /// `(mean, std)` of each series.
    pub per_series: Vec<(f64, f64)>,
    /// Series with `|mean| > 0.1` or `|std − 1| > 0.1`.
    pub flagged: usize,
    pub fraction_flagged: f64,
}

/// Checks how far each series is from zero mean and unit variance.
pub fn normalization_report(dataset: &Dataset) -> Result<NormalizationReport> {
    if dataset.is_empty() {
        return Err(Error::Config("normalization report of an empty dataset".into()));
    }
    let per_series: Vec<(f64, f64)> = dataset.series().iter().map(|s| mean_std(s.data())).collect();
    let flagged = per_series.iter().filter(|(m, s)| m.abs() > 0.1 || (s - 1.0).abs() > 0.1).count();
    Ok(NormalizationReport { fraction_flagged: flagged as f64 / per_series.len() as f64, per_series, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbfShape {
    Cylinder,
    Bell,
    Funnel,
}

impl CbfShape {
    pub const ALL: [CbfShape; 3] = [CbfShape::Cylinder, CbfShape::Bell, CbfShape::Funnel];
}

/// Noise-free CBF pattern over `[start, end]` (inclusive): a plateau, a rising
/// ramp or a falling ramp of height `amplitude`, zero elsewhere.
pub fn cbf_pattern(shape: CbfShape, start: usize, end: usize, amplitude: f64, length: usize) -> Vec<f64> {
    let span = (end - start) as f64;
    (0..length)
        .map(|t| {
            if t < start || t > end {
                return 0.0;
            }
            match shape {
                CbfShape::Cylinder => amplitude,
                CbfShape::Bell => amplitude * (t - start) as f64 / span,
                CbfShape::Funnel => amplitude * (end - t) as f64 / span,
            }
        })
        .collect()
}

pub const MIN_CBF_LENGTH: usize = 16;

/// Draws `n_per_class` z-normalised series of each CBF class (labels 0, 1, 2
/// for cylinder, bell, funnel), grouped by class.
///
/// Onsets are `a ~ U{⌈N/8⌉, ⌈N/4⌉}`, durations `b − a ~ U{⌈N/4⌉, ⌈N/2⌉}`,
/// amplitudes `6 + η` and every point carries unit Gaussian noise.
pub fn generate_cbf(n_per_class: usize, length: usize, seed: u64) -> Result<Dataset> {
    if length < MIN_CBF_LENGTH {
        return Err(Error::Config(format!("CBF series length must be at least {MIN_CBF_LENGTH}, got {length}")));
    }
    let mut rng = seeded_rng(seed);
    let onset = (length.div_ceil(8), length.div_ceil(4));
    let duration = (length.div_ceil(4), length.div_ceil(2));
    let mut series = Vec::with_capacity(3 * n_per_class);
    let mut labels = Vec::with_capacity(3 * n_per_class);
    for (class, shape) in CbfShape::ALL.into_iter().enumerate() {
        for _ in 0..n_per_class {
            let a = rng.gen_range(onset.0..=onset.1);
            let b = (a + rng.gen_range(duration.0..=duration.1)).min(length - 1);
            let eta: f64 = StandardNormal.sample(&mut rng);
            let mut values = cbf_pattern(shape, a, b, 6.0 + eta, length);
            for v in values.iter_mut() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v += noise;
            }
            z_normalize(&mut values);
            series.push(Tensor::vector(values));
            labels.push(class);
        }
    }
    Dataset::new("CBF", Split::Train, series, labels, vec![1.0, 2.0, 3.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cylinder_without_noise() {
        let v = cbf_pattern(CbfShape::Cylinder, 4, 8, 6.0, 16);
        for (t, x) in v.iter().enumerate() {
            assert_eq!(*x, if (4..=8).contains(&t) { 6.0 } else { 0.0 });
        }
        let bell = cbf_pattern(CbfShape::Bell, 4, 8, 6.0, 16);
        assert_eq!(&bell[4..=8], &[0.0, 1.5, 3.0, 4.5, 6.0]);
        let funnel = cbf_pattern(CbfShape::Funnel, 4, 8, 6.0, 16);
        assert_eq!(&funnel[4..=8], &[6.0, 4.5, 3.0, 1.5, 0.0]);
    }

    #[test]
    fn cbf_is_deterministic_balanced_and_normalised() {
        let a = generate_cbf(7, 128, 3).unwrap();
        assert_eq!(a, generate_cbf(7, 128, 3).unwrap());
        assert_ne!(a, generate_cbf(7, 128, 4).unwrap());
        assert_eq!(a.class_counts(), vec![7, 7, 7]);
        assert_eq!(a.series_length(), 128);
        for s in a.series() {
            let (m, sd) = mean_std(s.data());
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cbf_rejects_short_series() {
        assert!(matches!(generate_cbf(1, 15, 0), Err(Error::Config(_))));
    }

    #[test]
    fn raw_labels_are_remapped_by_sort_order() {
        let d = Dataset::from_raw("x", Split::Train, vec![(1.0, vec![0.0]), (-1.0, vec![1.0]), (1.0, vec![2.0])], None).unwrap();
        assert_eq!(d.labels(), &[1, 0, 1]);
        assert_eq!(d.label_values(), &[-1.0, 1.0]);
        let err = Dataset::from_raw("y", Split::Test, vec![(5.0, vec![0.0])], Some(d.label_values())).unwrap_err();
        assert_eq!(err, Error::UnknownLabel(5.0));
    }

    #[test]
    fn ragged_series_are_rejected() {
        let err = Dataset::from_raw("x", Split::Train, vec![(1.0, vec![0.0, 1.0]), (2.0, vec![1.0])], None).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn normalization_report_counts() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let mut v: Vec<f64> = (0..20).map(|t| libm::sin(t as f64 + i as f64)).collect();
            z_normalize(&mut v);
            if i < 3 {
                v.iter_mut().for_each(|x| *x = *x * 3.0 + 1.0);
            }
            rows.push((0.0, v));
        }
        let d = Dataset::from_raw("m", Split::Train, rows, None).unwrap();
        let r = normalization_report(&d).unwrap();
        assert_eq!(r.flagged, 3);
        assert!((r.fraction_flagged - 0.3).abs() < 1e-15);

        let c = Dataset::from_raw("c", Split::Train, vec![(0.0, vec![2.0; 5])], None).unwrap();
        assert_eq!(normalization_report(&c).unwrap().flagged, 1);
    }

    #[test]
    fn holdout_is_stratified() {
        let d = generate_cbf(10, 32, 1).unwrap();
        let (kept, held) = d.holdout_split(0.2, 5).unwrap();
        assert_eq!(kept.class_counts(), vec![8, 8, 8]);
        assert_eq!(held.class_counts(), vec![2, 2, 2]);
    }
}
