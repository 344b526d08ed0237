//! Ablation grids over view combinations, one- versus two-stage co-attention and the channel
//! fusion unit. Each cell trains a fresh model and scores it on a held-out set.

use std::fmt::Write as _;
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::viewgen::ViewKind;

use super::checkpoint;
use super::config::TrainConfig;
use super::dataset::Sample;
use super::train::{train, validate};

pub const GRIDS: [&str; 3] = ["table3", "table4", "table5"];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// View combination, e.g. `V-A&C`.
    pub views_label: &'static str,
    /// `--` for the single-view baseline, otherwise `one-stage` or `two-stage`.
    pub camv: &'static str,
    pub cfu: bool,
    pub views: Vec<ViewKind>,
    pub camv_stage2: bool,
}

/// A mild shear of the base square, scaled to `size`.
pub fn perspective_preset(size: usize) -> ViewKind {
    let s = size as f64;
    ViewKind::Perspective {
        src: [(0.0, 0.0), (s, 0.0), (0.0, s)],
        dst: [(0.08 * s, 0.04 * s), (0.96 * s, 0.08 * s), (0.04 * s, 0.92 * s)],
    }
}

/// Views of a combination label; every set starts with the original view.
pub fn view_combo(label: &str, image_size: usize) -> Result<Vec<ViewKind>> {
    let angle = [ViewKind::DiagonalFlip, ViewKind::VerticalFlip];
    let close = [ViewKind::Close(1.5), ViewKind::Close(2.0)];
    let far = [ViewKind::Far(0.5)];
    let persp = [perspective_preset(image_size)];
    let extra: Vec<ViewKind> = match label {
        "V-O" => vec![],
        "V-F" => far.to_vec(),
        "V-C" => close.to_vec(),
        "V-A" => angle.to_vec(),
        "V-P" => persp.to_vec(),
        "V-F&C" => [&far[..], &close[..]].concat(),
        "V-A&F" => [&angle[..], &far[..]].concat(),
        "V-C&P" => [&close[..], &persp[..]].concat(),
        "V-A&P" => [&angle[..], &persp[..]].concat(),
        "V-A&C" => [&angle[..], &close[..]].concat(),
        other => return Err(Error::UnknownStrategy { kind: "view combination", name: other.into() }),
    };
    Ok(std::iter::once(ViewKind::Original).chain(extra).collect())
}

const SINGLES: [&str; 3] = ["V-F", "V-C", "V-A"];
const PAIRS: [&str; 5] = ["V-F&C", "V-A&F", "V-C&P", "V-A&P", "V-A&C"];

fn cell(label: &'static str, camv: &'static str, cfu: bool, image_size: usize) -> Result<Cell> {
    Ok(Cell { views_label: label, camv, cfu, views: view_combo(label, image_size)?, camv_stage2: camv == "two-stage" })
}

/// Rows of a named grid in table order.
pub fn grid(name: &str, image_size: usize) -> Result<Vec<Cell>> {
    let mut rows = Vec::new();
    match name {
        "table3" | "table4" => {
            if name == "table3" {
                rows.push(cell("V-O", "--", true, image_size)?);
            }
            for s in SINGLES {
                rows.push(cell(s, "one-stage", true, image_size)?);
            }
            for p in PAIRS {
                rows.push(cell(p, "one-stage", true, image_size)?);
                rows.push(cell(p, "two-stage", true, image_size)?);
            }
        }
        "table5" => {
            rows.push(cell("V-A&C", "two-stage", false, image_size)?);
            rows.push(cell("V-A&C", "two-stage", true, image_size)?);
        }
        other => return Err(Error::UnknownStrategy { kind: "ablation grid", name: other.into() }),
    }
    Ok(rows)
}

/// Configuration of one cell on top of `base`.
pub fn cell_config(base: &TrainConfig, cell: &Cell) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.model.views = cell.views.clone();
    cfg.model.camv_stage2 = cell.camv_stage2;
    cfg.model.cfu_enabled = cell.cfu;
    cfg
}

/// Trains every cell on `train_set` (validating on `val_set` if non-empty), then scores
/// the selected checkpoint on `test_set`. Per-cell artifacts go under `out_dir/cell_NN`.
pub fn run_grid(
    name: &str,
    base: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    out_dir: &Path,
) -> Result<Vec<(Cell, MetricReport)>> {
    grid(name, base.model.image_size)?
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let cfg = cell_config(base, &cell);
            info!("{name} row {i}: {} {} cfu={}", cell.views_label, cell.camv, cell.cfu);
            let run = train(&cfg, train_set, val_set, &out_dir.join(format!("cell_{i:02}")))?;
            let (_, model, _) = checkpoint::load(&run.outcome.checkpoint)?;
            Ok((cell, validate(&model, test_set)?))
        })
        .collect()
}

pub const CSV_HEADER: &str = "grid,views,camv,cfu,s_measure,f_beta_weighted,mae,f_beta,e_measure";

pub fn to_csv(name: &str, rows: &[(Cell, MetricReport)]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (c, r) in rows {
        let s = r.scalars();
        let _ = writeln!(
            out,
            "{name},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.views_label,
            c.camv,
            if c.cfu { "CFU" } else { "no-CFU" },
            s[0],
            s[1],
            s[2],
            s[3],
            s[4]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn grid_shapes() {
        let t3 = grid("table3", 64).unwrap();
        assert_eq!(t3.len(), 14);
        assert_eq!(t3[0].views, vec![ViewKind::Original]);
        assert_eq!(t3.iter().filter(|c| c.camv == "two-stage").count(), 5);
        assert_eq!(grid("table4", 64).unwrap().len(), 13);
        let t5 = grid("table5", 64).unwrap();
        assert_eq!(t5.iter().map(|c| c.cfu).collect::<Vec<_>>(), vec![false, true]);
        assert!(grid("table9", 64).is_err());
    }

    #[test]
    fn every_cell_is_a_valid_model_config() {
        for name in GRIDS {
            for size in [64, 384] {
                for c in grid(name, size).unwrap() {
                    let m = ModelConfig { views: c.views.clone(), image_size: size, ..ModelConfig::tiny() };
                    m.validate().unwrap_or_else(|e| panic!("{name} {} at {size}: {e}", c.views_label));
                }
            }
        }
    }
}
