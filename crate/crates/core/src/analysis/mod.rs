//! Receptive-field analysis, blind-spot detection, cost accounting and
//! activation maps.

mod amap;
mod bitset;
mod cost;
mod oracle;
mod rf;

pub use amap::{activation_map, amap_csv, l2_over_channels};
pub use bitset::IndexSet;
pub use cost::{cost_report, CostReport, CostRow, Section};
pub use oracle::{gradient_rf_all, gradient_rf_oracle, linearized};
pub use rf::{detect_blind_spots, receptive_field, Interval, ReceptiveFields, RfEntry};

/// `rf` mode CSV: one row per activation and time index.
pub fn rf_csv(entries: &[RfEntry]) -> String {
    let mut s = String::from("layer,t,rf_min,rf_max,rf_size,contiguous\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.path,
            e.time,
            e.min(),
            e.max(),
            e.indices.len(),
            e.is_contiguous()
        ));
    }
    s
}

/// `blindspots` mode CSV: only activations with gaps; gaps written as
/// `start-end` separated by `;`.
pub fn blind_spot_csv(entries: &[RfEntry]) -> String {
    let mut s = String::from("layer,t,rf_min,rf_max,rf_size,blind_spots\n");
    for e in entries.iter().filter(|e| !e.blind_spots.is_empty()) {
        let gaps: Vec<String> = e.blind_spots.iter().map(|i| format!("{}-{}", i.start, i.end)).collect();
        s.push_str(&format!("{},{},{},{},{},{}\n", e.path, e.time, e.min(), e.max(), e.indices.len(), gaps.join(";")));
    }
    s
}
