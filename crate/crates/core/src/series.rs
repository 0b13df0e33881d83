use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Log-price path of one asset.
///
/// `times` are observation indices for data loaded from CSV (trading-day
/// index) and simulation time for synthetic paths. `dates` carries the
/// calendar labels when the series came from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub id: String,
    pub times: Vec<f64>,
    pub log_prices: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<Vec<String>>,
}

impl PriceSeries {
    pub fn new(id: impl Into<String>, times: Vec<f64>, log_prices: Vec<f64>) -> Result<Self> {
        let s = PriceSeries { id: id.into(), times, log_prices, dates: None };
        s.validate()?;
        Ok(s)
    }

    /// Series indexed 0, 1, 2, ...
    pub fn from_log_prices(id: impl Into<String>, log_prices: Vec<f64>) -> Result<Self> {
        let times = (0..log_prices.len()).map(|i| i as f64).collect();
        Self::new(id, times, log_prices)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.log_prices.len() {
            return Err(invalid(format!(
                "series {}: {} times but {} log-prices",
                self.id,
                self.times.len(),
                self.log_prices.len()
            )));
        }
        if let Some(d) = &self.dates {
            if d.len() != self.times.len() {
                return Err(invalid(format!("series {}: date labels do not match length", self.id)));
            }
        }
        if let Some(i) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(invalid(format!(
                "series {}: timestamps not strictly increasing at index {}",
                self.id,
                i + 1
            )));
        }
        if let Some(i) = self.log_prices.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("series {}: non-finite log-price at index {i}", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prices.is_empty()
    }

    /// First differences of the log-prices.
    pub fn returns(&self) -> Vec<f64> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Observations `start..end` as a new series with the same id.
    pub fn slice(&self, start: usize, end: usize) -> PriceSeries {
        PriceSeries {
            id: self.id.clone(),
            times: self.times[start..end].to_vec(),
            log_prices: self.log_prices[start..end].to_vec(),
            dates: self.dates.as_ref().map(|d| d[start..end].to_vec()),
        }
    }
}
