//! Multi-dimensional resource quantities.
//!
//! The system meters four resource kinds: CPU, memory, storage, and
//! bandwidth. A [`ResourceVector`] carries one nonnegative quantity per kind
//! and is the common currency of requests, capacities, and allocations.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RESOURCE_KINDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Cpu,
    Memory,
    Storage,
    Bandwidth,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; RESOURCE_KINDS] = [
        ResourceKind::Cpu,
        ResourceKind::Memory,
        ResourceKind::Storage,
        ResourceKind::Bandwidth,
    ];

    pub fn index(self) -> usize {
        match self {
            ResourceKind::Cpu => 0,
            ResourceKind::Memory => 1,
            ResourceKind::Storage => 2,
            ResourceKind::Bandwidth => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::Cpu => "cpu",
            ResourceKind::Memory => "memory",
            ResourceKind::Storage => "storage",
            ResourceKind::Bandwidth => "bandwidth",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ResourceError {
    #[error("{kind} component is negative: {value}")]
    Negative { kind: &'static str, value: f64 },
    #[error("range has min {min} > max {max}")]
    InvertedRange { min: f64, max: f64 },
}

/// Nonnegative quantities indexed by [`ResourceKind`], in the fixed order
/// (cpu, memory, storage, bandwidth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ResourceVector(pub [f64; RESOURCE_KINDS]);

impl ResourceVector {
    pub fn new(components: [f64; RESOURCE_KINDS]) -> Self {
        ResourceVector(components)
    }

    pub fn zero() -> Self {
        ResourceVector([0.0; RESOURCE_KINDS])
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        for kind in ResourceKind::ALL {
            let v = self.get(kind);
            if !(v >= 0.0) {
                return Err(ResourceError::Negative {
                    kind: kind.name(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: ResourceKind) -> f64 {
        self.0[kind.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    /// Componentwise subtraction; `None` if any component would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        let mut out = [0.0; RESOURCE_KINDS];
        for i in 0..RESOURCE_KINDS {
            let v = self.0[i] - other.0[i];
            if v < 0.0 {
                return None;
            }
            out[i] = v;
        }
        Some(ResourceVector(out))
    }

    pub fn add(&self, other: &ResourceVector) -> ResourceVector {
        let mut out = [0.0; RESOURCE_KINDS];
        for i in 0..RESOURCE_KINDS {
            out[i] = self.0[i] + other.0[i];
        }
        ResourceVector(out)
    }

    pub fn scale(&self, factor: f64) -> ResourceVector {
        let mut out = self.0;
        for v in &mut out {
            *v *= factor;
        }
        ResourceVector(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResourceKind, f64)> + '_ {
        ResourceKind::ALL.iter().map(|k| (*k, self.get(*k)))
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(cpu={}, mem={}, sto={}, bw={})",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

/// Inclusive `[min, max]` demand range from a device registration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceRange {
    pub min: f64,
    pub max: f64,
}

impl ResourceRange {
    pub fn new(min: f64, max: f64) -> Self {
        ResourceRange { min, max }
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        if self.min < 0.0 {
            return Err(ResourceError::Negative {
                kind: "range min",
                value: self.min,
            });
        }
        if self.min > self.max {
            return Err(ResourceError::InvertedRange {
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}
