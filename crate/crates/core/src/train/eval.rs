use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{prepare_case, Case, PreparedCase, Volume};
use crate::error::{Error, Result};
use crate::metrics::{stratified_report, LabelMask, SegReport, Subset, Zone};
use crate::net::ZonalNet;
use crate::stats::{wilcoxon_signed_rank, TestResult};
use crate::tensor::Tensor;

/// Slices per eval-mode forward pass.
const EVAL_BATCH: usize = 8;

/// Argmax masks for input-size planes.
pub fn segment_slices(model: &ZonalNet, images: &[Vec<f32>]) -> Result<Vec<LabelMask>> {
    let s = model.config().input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let input = Tensor::new([chunk.len(), 1, s, s], chunk.concat())?;
        let seg = model.forward_segment(&input)?;
        for labels in seg.labels.chunks(s * s) {
            out.push(LabelMask::new(s, s, labels.to_vec())?);
        }
    }
    Ok(out)
}

/// Mean over PZ and TZ of the cohort-mean prostate-slice DSC, computed on
/// the network grid.
pub fn validation_score(model: &ZonalNet, cases: &[PreparedCase]) -> Result<f64> {
    let mut per_zone = [Vec::new(), Vec::new()];
    for case in cases {
        let truth = case.masks.as_ref().ok_or_else(|| Error::Dataset(format!("{} has no mask", case.id)))?;
        let pred = segment_slices(model, &case.images)?;
        let row = stratified_report(&case.id, &pred, truth)?;
        for (k, zone) in Zone::ALL.into_iter().enumerate() {
            per_zone[k].extend(row.zone(zone).prostate_slices);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok((mean(&per_zone[0]) + mean(&per_zone[1])) / 2.0)
}

/// Predicted mask volume on the original grid of `image`.
pub fn predict_volume(model: &ZonalNet, image: &Volume, crop_mm: f64) -> Result<Volume> {
    let case = Case { id: String::new(), image: image.clone(), mask: None, reader2: None };
    let prepared = prepare_case(&case, model.config().input_size, crop_mm)?;
    let masks = segment_slices(model, &prepared.images)?;
    let restored: Vec<LabelMask> = masks.iter().map(|m| prepared.restore_mask(m)).collect::<Result<_>>()?;
    Volume::from_masks(&restored, image.spacing_mm())
}

/// Signed-rank comparison of one report cell between two reports, paired
/// by case id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub zone: Zone,
    pub subset: Subset,
    pub pairs: usize,
    pub test: Option<TestResult>,
    /// Why no test was run.
    pub note: Option<String>,
}

/// Paired signed-rank tests of `a` against `b` for every cell.
pub fn compare_paired(a: &SegReport, b: &SegReport) -> Vec<CellComparison> {
    let mut out = Vec::new();
    for zone in Zone::ALL {
        for subset in Subset::ALL {
            let bv = b.cell_values(zone, subset);
            let (x, y): (Vec<f64>, Vec<f64>) = a
                .cell_values(zone, subset)
                .into_iter()
                .filter_map(|(id, v)| bv.iter().find(|(bid, _)| *bid == id).map(|(_, w)| (v, *w)))
                .unzip();
            let (test, note) = if x.is_empty() {
                (None, Some("no paired values".to_string()))
            } else {
                match wilcoxon_signed_rank(&x, &y) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            out.push(CellComparison { zone, subset, pairs: x.len(), test, note });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Model against reader-1 masks.
    pub model: SegReport,
    /// Reader 2 against reader 1, for cases with both.
    pub inter_reader: Option<SegReport>,
    /// Model-vs-reader-1 against reader-1-vs-reader-2, per cell.
    pub comparisons: Vec<CellComparison>,
    /// Cases left out because they had no reader-1 mask.
    pub skipped: Vec<String>,
}

/// Segments every case, maps predictions back to the original grid and
/// scores them against the reader-1 masks.
pub fn evaluate(model: &ZonalNet, cases: &[Case], crop_mm: f64) -> Result<Evaluation> {
    let mut model_rows = Vec::new();
    let mut reader_rows = Vec::new();
    let mut skipped = Vec::new();
    for case in cases {
        let Some(mask) = &case.mask else {
            warn!("{}: no reader-1 mask, skipping", case.id);
            skipped.push(case.id.clone());
            continue;
        };
        let truth = mask.mask_slices()?;
        let pred = predict_volume(model, &case.image, crop_mm)?.mask_slices()?;
        model_rows.push(stratified_report(&case.id, &pred, &truth)?);
        if let Some(r2) = &case.reader2 {
            reader_rows.push(stratified_report(&case.id, &r2.mask_slices()?, &truth)?);
        }
    }
    if model_rows.is_empty() {
        return Err(Error::Dataset("no case had a reader-1 mask".into()));
    }
    let model = SegReport::new("model vs reader 1", model_rows);
    let inter_reader = (!reader_rows.is_empty()).then(|| SegReport::new("reader 2 vs reader 1", reader_rows));
    let comparisons = inter_reader.as_ref().map(|r| compare_paired(&model, r)).unwrap_or_default();
    Ok(Evaluation { model, inter_reader, comparisons, skipped })
}

