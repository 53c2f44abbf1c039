//! Assembled belief samples: repeated completions over a query grid, with
//! the uncertainty proxies derived from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elicit::prompt::PromptSpec;
use crate::families::QueryGrid;
use crate::{Error, Result};

/// One repeat: per-location values and token NLLs, plus the raw texts that
/// produced them (one per call — grid-length for POINTWISE, one for JOINT).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// None where the call was invalid (POINTWISE: that location's call;
    /// JOINT: the whole list).
    pub values: Vec<Option<f64>>,
    /// Mean token NLL per location, when the oracle exposed
    /// log-probabilities and attribution succeeded.
    pub nlls: Vec<Option<f64>>,
    pub raw: Vec<String>,
}

impl Completion {
    /// Every location parsed.
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }
}

/// Empirical sample of the protocol-conditioned belief: `n` repeats over a
/// fixed grid under one prompt condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSample {
    pub spec: PromptSpec,
    pub grid: QueryGrid,
    pub completions: Vec<Completion>,
    /// Fraction of raw oracle calls that failed to parse.
    pub invalid_rate: f64,
}

impl BeliefSample {
    /// Valid values observed at grid index `j`, in repeat order.
    pub fn values_at(&self, j: usize) -> Vec<f64> {
        self.completions
            .iter()
            .filter_map(|c| c.values[j])
            .collect()
    }

    /// Unbiased per-location sampling variance over valid completions.
    pub fn sampling_variance(&self) -> Result<Vec<f64>> {
        (0..self.grid.len())
            .map(|j| {
                let vals = self.values_at(j);
                if vals.len() < 2 {
                    return Err(Error::InsufficientSamples {
                        needed: 2,
                        got: vals.len(),
                    });
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                Ok(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
            })
            .collect()
    }

    fn location_nlls(&self, j: usize) -> Vec<f64> {
        self.completions
            .iter()
            .filter(|c| c.values[j].is_some())
            .filter_map(|c| c.nlls[j])
            .collect()
    }

    /// Per-location mean token NLL over valid completions.
    pub fn mean_nll(&self) -> Result<Vec<f64>> {
        (0..self.grid.len())
            .map(|j| {
                if self.values_at(j).is_empty() {
                    return Err(Error::InsufficientSamples { needed: 1, got: 0 });
                }
                let nlls = self.location_nlls(j);
                if nlls.is_empty() {
                    return Err(Error::ProxyUnavailable);
                }
                Ok(nlls.iter().sum::<f64>() / nlls.len() as f64)
            })
            .collect()
    }

    /// Per-location mean confidence exp(-NLL) over valid completions.
    pub fn token_confidence(&self) -> Result<Vec<f64>> {
        (0..self.grid.len())
            .map(|j| {
                if self.values_at(j).is_empty() {
                    return Err(Error::InsufficientSamples { needed: 1, got: 0 });
                }
                let nlls = self.location_nlls(j);
                if nlls.is_empty() {
                    return Err(Error::ProxyUnavailable);
                }
                Ok(nlls.iter().map(|n| (-n).exp()).sum::<f64>() / nlls.len() as f64)
            })
            .collect()
    }

    /// Per-location mean prediction over valid completions.
    pub fn mean_curve(&self) -> Result<Vec<f64>> {
        (0..self.grid.len())
            .map(|j| {
                let vals = self.values_at(j);
                if vals.is_empty() {
                    return Err(Error::InsufficientSamples { needed: 1, got: 0 });
                }
                Ok(vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Fully parsed completion curves, one vector per complete repeat.
    pub fn curve_vectors(&self) -> Vec<Vec<f64>> {
        self.completions
            .iter()
            .filter(|c| c.is_complete())
            .map(|c| c.values.iter().map(|v| v.expect("complete row")).collect())
            .collect()
    }

    /// Unbiased covariance matrix across grid locations, over complete
    /// repeats only (partial rows would make entries incomparable).
    pub fn covariance_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = self.curve_vectors();
        let k = rows.len();
        if k < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: k });
        }
        let m = self.grid.len();
        let mut mean = vec![0.0; m];
        for row in &rows {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for acc in &mut mean {
            *acc /= k as f64;
        }
        let mut cov = DMatrix::zeros(m, m);
        for row in &rows {
            for a in 0..m {
                let da = row[a] - mean[a];
                for b in a..m {
                    let v = da * (row[b] - mean[b]);
                    cov[(a, b)] += v;
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                let v = cov[(a, b)] / (k - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Ok(cov)
    }
}
