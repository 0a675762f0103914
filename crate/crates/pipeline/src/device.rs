//! Compute-device selection from the environment.

use candle_core::Device;

use crate::{PipelineError, Result};

/// Environment variable naming the device: `cpu` (default) or `cuda:<n>`.
pub const DEVICE_ENV: &str = "OCCDIFF_DEVICE";

pub fn parse_device(spec: &str) -> Result<Device> {
    match spec.trim() {
        "" | "cpu" => Ok(Device::Cpu),
        s if s.starts_with("cuda") => {
            let ordinal = s.strip_prefix("cuda").and_then(|r| r.strip_prefix(':')).unwrap_or("0");
            let n: usize = ordinal.parse().map_err(|_| PipelineError::InvalidConfig(format!("bad device {s:?}")))?;
            Ok(Device::new_cuda(n)?)
        }
        s => Err(PipelineError::InvalidConfig(format!("unknown device {s:?} (cpu | cuda:<n>)"))),
    }
}

pub fn device_from_env() -> Result<Device> {
    parse_device(&std::env::var(DEVICE_ENV).unwrap_or_default())
}
