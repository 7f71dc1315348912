use tracing::warn;

use super::IndexConfig;
use crate::distance::{dot, dot_f32, normalized};
use crate::error::Result;
use crate::types::{PinId, PinStore};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Refinement {
    /// Surviving pins in ascending id order.
    pub accepted: Vec<PinId>,
    pub low_quality: usize,
    pub duplicates: usize,
}

/// Drops pins below the quality floor, then near-duplicates of pins already
/// accepted, scanning in pin-id order.
///
/// The duplicate scan compares each candidate against every accepted pin, so
/// its cost is quadratic in the pool size.
pub fn refine_pool(store: &PinStore, cfg: &IndexConfig) -> Result<Refinement> {
    cfg.validate()?;
    let mut out = Refinement::default();
    let mut kept: Vec<Vec<f32>> = Vec::new();
    // Single-precision screening with a margin, confirmed in double precision.
    let screen = (cfg.dedup_threshold - 1e-4) as f32;
    for (pin, v, quality) in store.iter() {
        if (quality as f64) < cfg.quality_floor {
            out.low_quality += 1;
            continue;
        }
        let unit = normalized(v)?;
        let dup = kept
            .iter()
            .any(|k| dot_f32(k, &unit) >= screen && dot(k, &unit) >= cfg.dedup_threshold);
        if dup {
            out.duplicates += 1;
            continue;
        }
        kept.push(unit);
        out.accepted.push(pin);
    }
    if out.accepted.is_empty() && !store.is_empty() {
        warn!(pins = store.len(), "refinement rejected every pin");
    }
    Ok(out)
}
