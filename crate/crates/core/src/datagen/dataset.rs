use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Samples and class labels held by one data source.
#[derive(Clone, Debug)]
pub struct LocalDataset<T> {
    samples: Matrix<T>,
    labels: Vec<usize>,
    num_classes: usize,
    source_id: usize,
    second_moment: OnceLock<Matrix<T>>,
}

impl<T: Scalar> PartialEq for LocalDataset<T> {
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.source_id == other.source_id
    }
}

impl<T: Scalar> LocalDataset<T> {
    /// `samples` holds one sample per row.
    pub fn new(samples: Matrix<T>, labels: Vec<usize>, num_classes: usize, source_id: usize) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::dims(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(LocalDataset {
            samples,
            labels,
            num_classes,
            source_id,
            second_moment: OnceLock::new(),
        })
    }

    /// Empty dataset of dimension `d`.
    pub fn empty(d: usize, num_classes: usize, source_id: usize) -> Self {
        Self::new(Matrix::zeros(0, d), Vec::new(), num_classes, source_id)
            .expect("empty dataset is always valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn with_source_id(mut self, id: usize) -> Self {
        self.source_id = id;
        self
    }

    #[inline]
    pub fn samples(&self) -> &Matrix<T> {
        &self.samples
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[T] {
        self.samples.row(i)
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Uncentered second moment `(1/n) sum_i x_i x_i^T`, computed once.
    pub fn second_moment(&self) -> Result<&Matrix<T>> {
        if self.is_empty() {
            return Err(Error::Empty("second moment of an empty dataset".into()));
        }
        Ok(self.second_moment.get_or_init(|| {
            let mut x = self.samples.row_outer_sum();
            x.scale_in_place(T::one() / T::of_usize(self.len()));
            x
        }))
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(Matrix::from_vec(indices.len(), d, data)?, labels, self.num_classes, self.source_id)
    }

    /// Concatenates datasets in order. The union gets source id 0 and the
    /// largest class count among the parts.
    pub fn concat(parts: &[LocalDataset<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Empty("no datasets to concatenate".into()))?;
        let d = first.dim();
        let num_classes = parts.iter().map(|p| p.num_classes).max().unwrap_or(0);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != d {
                return Err(Error::dims(format!("dataset dims {} and {d}", p.dim())));
            }
            data.extend_from_slice(p.samples.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        Self::new(Matrix::from_vec(labels.len(), d, data)?, labels, num_classes, 0)
    }

    /// Returns a copy with every sample replaced by `f(sample)`.
    pub fn map_samples(&self, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        let rows: Vec<Vec<T>> = self.samples.row_iter().map(f).collect();
        let samples = if rows.is_empty() {
            Matrix::zeros(0, self.dim())
        } else {
            Matrix::from_rows(&rows)?
        };
        Self::new(samples, self.labels.clone(), self.num_classes, self.source_id)
    }

    /// Random (train, test) split with `round(test_fraction * n)` test rows.
    pub fn split<R: Rng + ?Sized>(&self, test_fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// Writes one CSV row per sample: `label,x_1,...,x_d` (no header).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (row, &label) in self.samples.row_iter().zip(&self.labels) {
            write!(w, "{label}")?;
            for v in row {
                write!(w, ",{}", v.as_f64())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the layout written by [`write_csv`](Self::write_csv). The class
    /// count is the larger of `min_classes` and `max label + 1`.
    pub fn read_csv<R: BufRead>(r: R, min_classes: usize, source_id: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut d: Option<usize> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: label: {e}", lineno + 1)))?;
            let before = data.len();
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: value {f:?}: {e}", lineno + 1)))?;
                data.push(T::of(v));
            }
            let width = data.len() - before;
            match d {
                None => d = Some(width),
                Some(w) if w != width => {
                    return Err(Error::Parse(format!(
                        "line {}: {width} values, expected {w}",
                        lineno + 1
                    )))
                }
                _ => {}
            }
            labels.push(label);
        }
        let d = d.unwrap_or(0);
        let num_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(min_classes);
        Self::new(Matrix::from_vec(labels.len(), d, data)?, labels, num_classes, source_id)
    }
}
