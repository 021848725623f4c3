//! Training-cost calculator: multiplicative FLOPs and VRAM factors of the
//! efficiency techniques relative to full fine-tuning.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    /// Low-rank adapters.
    Lora,
    /// Compressed reward model.
    Crm,
    /// FP8 weights and activations.
    Fp8,
    /// Optimizer-state CPU offload.
    Offload,
}

impl Technique {
    pub const ALL: [Technique; 4] = [Technique::Lora, Technique::Crm, Technique::Fp8, Technique::Offload];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Lora => "lora",
            Technique::Crm => "crm",
            Technique::Fp8 => "fp8",
            Technique::Offload => "offload",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown technique `{s}` (expected lora, crm, fp8 or offload)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceFactors {
    pub lora_flops: f64,
    pub crm_flops: f64,
    pub lora_vram: f64,
    pub fp8_vram: f64,
    pub offload_vram: f64,
    pub crm_vram: f64,
}

impl Default for ResourceFactors {
    fn default() -> Self {
        ResourceFactors {
            lora_flops: 0.25,
            crm_flops: 0.5,
            lora_vram: 0.33,
            fp8_vram: 0.5,
            offload_vram: 0.125,
            crm_vram: 0.5,
        }
    }
}

impl ResourceFactors {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lora_flops", self.lora_flops),
            ("crm_flops", self.crm_flops),
            ("lora_vram", self.lora_vram),
            ("fp8_vram", self.fp8_vram),
            ("offload_vram", self.offload_vram),
            ("crm_vram", self.crm_vram),
        ];
        match all.iter().find(|(_, v)| !(*v > 0.0 && *v <= 1.0)) {
            Some((name, v)) => Err(Error::InvalidConfig(format!("{name} = {v} must be in (0, 1]"))),
            None => Ok(()),
        }
    }

    fn flops(&self, t: Technique) -> f64 {
        match t {
            Technique::Lora => self.lora_flops,
            Technique::Crm => self.crm_flops,
            Technique::Fp8 | Technique::Offload => 1.0,
        }
    }

    fn vram(&self, t: Technique) -> f64 {
        match t {
            Technique::Lora => self.lora_vram,
            Technique::Crm => self.crm_vram,
            Technique::Fp8 => self.fp8_vram,
            Technique::Offload => self.offload_vram,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceEstimate {
    pub flops_factor: f64,
    pub vram_factor: f64,
}

impl ResourceEstimate {
    pub fn flops_reduction(&self) -> f64 {
        1.0 / self.flops_factor
    }

    pub fn vram_reduction(&self) -> f64 {
        1.0 / self.vram_factor
    }
}

/// Product of the enabled factors in each dimension.
pub fn estimate_resources(f: &ResourceFactors, enabled: &BTreeSet<Technique>) -> ResourceEstimate {
    ResourceEstimate {
        flops_factor: enabled.iter().map(|&t| f.flops(t)).product(),
        vram_factor: enabled.iter().map(|&t| f.vram(t)).product(),
    }
}
