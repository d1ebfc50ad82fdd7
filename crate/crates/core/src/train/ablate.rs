//! The 2×2×2 ablation grid over preprocessing (padded vs. resized),
//! flattening (max-pool vs. concatenation), and the shortcut branch.

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{FlattenMode, NetworkConfig};
use crate::preprocess::PadMode;
use std::path::Path;

pub const ABLATION_HEADER: &str =
    "preprocessing,flattening,shortcut,train_cer,train_wer,val_cer,val_wer";

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub pad_mode: PadMode,
    pub flatten: FlattenMode,
    pub shortcut: bool,
    pub train_cer: f64,
    pub train_wer: f64,
    pub val_cer: Option<f64>,
    pub val_wer: Option<f64>,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}",
            match self.pad_mode {
                PadMode::Pad => "padded",
                PadMode::Stretch => "resized",
            },
            match self.flatten {
                FlattenMode::Maxpool => "maxpool",
                FlattenMode::Concat => "concat",
            },
            if self.shortcut { "shortcut" } else { "noshortcut" }
        )
    }

    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            match self.pad_mode {
                PadMode::Pad => "padded",
                PadMode::Stretch => "resized",
            },
            self.flatten,
            if self.shortcut { "yes" } else { "no" },
            self.train_cer,
            self.train_wer,
            opt(self.val_cer),
            opt(self.val_wer)
        )
    }
}

/// Trains all eight cells with the same seed and desk-scale schedule,
/// writing one `ablation.csv` row per cell plus a subdirectory with each
/// cell's checkpoints and metric log. `net_base` fixes everything the grid
/// does not vary (canvas, widths, head size).
pub fn ablate(
    base: &TrainConfig,
    net_base: &NetworkConfig,
    out_dir: &Path,
) -> Result<Vec<AblationCell>> {
    base.validate()?;
    if !base.eval_train_metrics {
        return Err(Error::config("the ablation grid needs per-epoch training metrics"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut cells = Vec::with_capacity(8);
    for pad_mode in [PadMode::Stretch, PadMode::Pad] {
        for flatten in [FlattenMode::Concat, FlattenMode::Maxpool] {
            for shortcut in [false, true] {
                let mut cfg = base.clone();
                cfg.pad_mode = pad_mode;
                cfg.flatten = Some(flatten);
                cfg.shortcut_weight = if shortcut { base.shortcut_weight.max(0.1) } else { 0.0 };
                let mut net_cfg = net_base.clone();
                net_cfg.flatten = flatten;
                net_cfg.shortcut_enabled = shortcut;

                let mut cell = AblationCell {
                    pad_mode,
                    flatten,
                    shortcut,
                    train_cer: f64::NAN,
                    train_wer: f64::NAN,
                    val_cer: None,
                    val_wer: None,
                };
                let cell_dir = out_dir.join(cell.label());
                let outcome = train(&cfg, &net_cfg, &cell_dir)?;
                let last = |split: crate::dataset::Split| {
                    outcome.metrics.rows().iter().rev().find(|r| r.split == split)
                };
                if let Some(row) = last(crate::dataset::Split::Train) {
                    cell.train_cer = row.cer;
                    cell.train_wer = row.wer;
                }
                if let Some(row) = last(crate::dataset::Split::Val) {
                    cell.val_cer = Some(row.cer);
                    cell.val_wer = Some(row.wer);
                }
                eprintln!(
                    "ablation {}: train CER {:.2}% WER {:.2}%",
                    cell.label(),
                    cell.train_cer,
                    cell.train_wer
                );
                cells.push(cell);
            }
        }
    }

    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for c in &cells {
        csv.push_str(&c.csv_row());
        csv.push('\n');
    }
    let path = out_dir.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}
