//! Widening a three-channel first convolution to accept the thermal plane.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// How the fourth input channel's kernels are synthesised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationMode {
    /// Per-filter mean of the RGB kernels.
    #[default]
    MeanRgb,
    Zeros,
}

/// Appends a fourth input channel to `(out, 3, kh, kw)` kernels; the RGB slices are kept as is.
pub fn inflate_input_layer(weights3: &Tensor, mode: InflationMode) -> Result<Tensor> {
    let (_, c_in, _, _) = weights3.dims4()?;
    if c_in != 3 {
        return Err(ModelError::WrongChannelCount {
            expected: 3,
            found: c_in,
        });
    }
    let extra = match mode {
        InflationMode::MeanRgb => weights3.mean_keepdim(1)?,
        InflationMode::Zeros => weights3.narrow(1, 0, 1)?.zeros_like()?,
    };
    Ok(Tensor::cat(&[weights3, &extra], 1)?)
}
