//! Channels-by-samples container for multivariate time series.

use nalgebra::{DMatrix, DVector};

use crate::{real, Error, Result, Scalar};

/// A multivariate time series: `D` channels observed over `T` samples.
///
/// Rows are channels, columns are time points. Values are finite by
/// construction; ingestion code is responsible for filling gaps before
/// building a series.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries<T: Scalar> {
    data: DMatrix<T>,
    labels: Vec<String>,
    sample_step: Option<f64>,
}

impl<T: Scalar> MultiSeries<T> {
    /// Builds a series from a channels-by-samples matrix and channel labels.
    pub fn new(data: DMatrix<T>, labels: Vec<String>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::TooFewChannels { found: data.nrows() });
        }
        if labels.len() != data.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} channels",
                labels.len(),
                data.nrows()
            )));
        }
        for (i, row) in data.row_iter().enumerate() {
            for (t, x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteValue { channel: i, sample: t });
                }
            }
        }
        Ok(Self { data, labels, sample_step: None })
    }

    /// Builds a series with generated labels `ch0, ch1, ...`.
    pub fn from_data(data: DMatrix<T>) -> Result<Self> {
        let labels = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        Self::new(data, labels)
    }

    /// Attaches the sampling step (time units per sample).
    pub fn with_sample_step(mut self, step: f64) -> Self {
        self.sample_step = Some(step);
        self
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sample_step(&self) -> Option<f64> {
        self.sample_step
    }

    /// One channel as a time-indexed vector.
    pub fn channel(&self, i: usize) -> DVector<T> {
        self.data.row(i).transpose()
    }

    /// Projects the series onto a spatial filter: returns `fᵀX` as a T-vector.
    pub fn project(&self, f: &DVector<T>) -> DVector<T> {
        assert_eq!(f.len(), self.channels(), "filter length must match channel count");
        (f.transpose() * &self.data).transpose()
    }

    /// Subtracts each channel's mean in place.
    pub fn center(&mut self) {
        let t_inv = T::one() / real::<T>(self.samples() as f64);
        for mut row in self.data.row_iter_mut() {
            let mean = row.iter().fold(T::zero(), |a, x| a + *x) * t_inv;
            row.iter_mut().for_each(|x| *x -= mean);
        }
    }

    /// Returns a centered copy.
    pub fn centered(&self) -> Self {
        let mut out = self.clone();
        out.center();
        out
    }

    /// Centers and scales each channel to unit standard deviation.
    pub fn standardize(&mut self) -> Result<()> {
        self.center();
        let t_inv = T::one() / real::<T>(self.samples() as f64);
        for (i, mut row) in self.data.row_iter_mut().enumerate() {
            let var = row.iter().fold(T::zero(), |a, x| a + *x * *x) * t_inv;
            if var <= T::zero() {
                return Err(Error::ZeroVarianceChannel { index: i });
            }
            let inv_sd = T::one() / var.sqrt();
            row.iter_mut().for_each(|x| *x *= inv_sd);
        }
        Ok(())
    }

    /// Replaces the data matrix, keeping labels. Shapes must agree.
    pub(crate) fn replace_data(&mut self, data: DMatrix<T>) {
        assert_eq!(data.nrows(), self.data.nrows());
        assert_eq!(data.ncols(), self.data.ncols());
        self.data = data;
    }
}
