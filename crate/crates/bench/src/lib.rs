//! Shared fixtures for the pipeline benchmarks; see `benches/pipeline.rs`.

use synthgen_core::bank::BankEntry;
use synthgen_core::{CaptionBank, ImageRecord, Split};

/// Bank with `classes * per_class` entries and globally distinct pairs.
pub fn synthetic_bank(classes: usize, per_class: usize) -> CaptionBank {
    let mut entries = Vec::with_capacity(classes * per_class);
    for class_idx in 0..classes {
        for entry_idx in 0..per_class {
            entries.push(BankEntry {
                image_id: format!("img_{class_idx:03}_{entry_idx:03}"),
                class_label: format!("class_{class_idx:03}"),
                background: format!("background {class_idx}-{entry_idx}"),
                pose: format!("pose {class_idx}-{entry_idx}"),
                degraded: false,
            });
        }
    }
    CaptionBank::new("bench", "hand-built", None, entries)
}

/// Flat train catalog with `classes * per_class` records.
pub fn synthetic_records(classes: usize, per_class: usize) -> Vec<ImageRecord> {
    let mut records = Vec::with_capacity(classes * per_class);
    for class_idx in 0..classes {
        for entry_idx in 0..per_class {
            records.push(ImageRecord {
                image_id: format!("img_{class_idx:03}_{entry_idx:03}"),
                class_label: format!("class_{class_idx:03}"),
                path: format!("data/{class_idx:03}/{entry_idx:03}.png"),
                split: Split::Train,
            });
        }
    }
    records
}
