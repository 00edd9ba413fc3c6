//! Global min/max scaling to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRecord {
    pub min: f64,
    pub max: f64,
}

impl NormRecord {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite value while fitting normalisation".into()));
            }
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(Error::Contract("cannot fit normalisation on no data".into()));
        }
        Ok(NormRecord { min, max })
    }

    /// Width of the original range; a constant modality maps to 0.
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let r = self.range();
        if r == 0.0 {
            return 0.0;
        }
        ((2.0 * (x - self.min) / r) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.min + (y + 1.0) * 0.5 * self.range()
    }
}
