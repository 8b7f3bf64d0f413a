//! Training loss, Dice similarity and slice-stratified evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::stats::{summarize, Summary};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

pub const BACKGROUND: u8 = 0;
pub const PZ_LABEL: u8 = 1;
pub const TZ_LABEL: u8 = 2;

/// One 2D slice of zone labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Validation(format!(
                "mask of {width}×{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > TZ_LABEL) {
            return Err(Error::Validation(format!("label {bad} outside {{0, 1, 2}}")));
        }
        Ok(Self { width, height, labels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![BACKGROUND; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, zone: Zone) -> usize {
        let l = zone.label();
        self.labels.iter().filter(|&&x| x == l).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    #[serde(rename = "PZ")]
    Pz,
    #[serde(rename = "TZ")]
    Tz,
}

impl Zone {
    pub const ALL: [Zone; 2] = [Zone::Pz, Zone::Tz];

    pub fn label(self) -> u8 {
        match self {
            Zone::Pz => PZ_LABEL,
            Zone::Tz => TZ_LABEL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::Pz => "PZ",
            Zone::Tz => "TZ",
        }
    }
}

/// Mean CE over pixels and batch of softmax probabilities against label
/// masks, one mask per batch element.
pub fn cross_entropy_loss(tape: &mut Tape<f32>, probs: Var, targets: &[LabelMask]) -> Result<Var> {
    let (n, c, h, w) = tape.value(probs).dims4()?;
    if c != 3 || n != targets.len() || targets.iter().any(|t| t.width != w || t.height != h) {
        return Err(Error::Validation(format!(
            "probabilities {n}×{c}×{h}×{w} do not match {} target masks",
            targets.len()
        )));
    }
    let labels: Vec<u8> = targets.iter().flat_map(|t| t.labels.iter().copied()).collect();
    Ok(tape.cross_entropy(probs, &labels, PROB_EPSILON)?)
}

fn check_same_geometry(pred: &[LabelMask], truth: &[LabelMask]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!("{} predicted slices vs {} truth slices", pred.len(), truth.len())));
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if (p.width, p.height) != (t.width, t.height) {
            return Err(Error::Validation(format!(
                "slice {i}: prediction {}×{} vs truth {}×{}",
                p.width, p.height, t.width, t.height
            )));
        }
    }
    Ok(())
}

/// Voxel-pooled Dice over the given slices; `None` when the zone is absent
/// from both prediction and truth.
pub fn dsc(pred: &[LabelMask], truth: &[LabelMask], zone: Zone) -> Result<Option<f64>> {
    check_same_geometry(pred, truth)?;
    Ok(dsc_unchecked(pred.iter().zip(truth), zone))
}

fn dsc_unchecked<'a>(pairs: impl Iterator<Item = (&'a LabelMask, &'a LabelMask)>, zone: Zone) -> Option<f64> {
    let l = zone.label();
    let (mut inter, mut total) = (0usize, 0usize);
    for (p, t) in pairs {
        for (&a, &b) in p.labels.iter().zip(&t.labels) {
            let (x, y) = (a == l, b == l);
            inter += usize::from(x && y);
            total += usize::from(x) + usize::from(y);
        }
    }
    (total > 0).then(|| 2.0 * inter as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceCategory {
    NonProstate,
    /// TZ only.
    BaseEnd,
    /// Both zones.
    Middle,
    /// PZ only.
    ApexEnd,
}

pub fn categorize_slice(truth: &LabelMask) -> SliceCategory {
    let pz = truth.labels.contains(&PZ_LABEL);
    let tz = truth.labels.contains(&TZ_LABEL);
    match (pz, tz) {
        (false, false) => SliceCategory::NonProstate,
        (false, true) => SliceCategory::BaseEnd,
        (true, true) => SliceCategory::Middle,
        (true, false) => SliceCategory::ApexEnd,
    }
}

/// The slice sets a report row evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    AllSlices,
    ProstateSlices,
    BaseEnd,
    Middle,
    ApexEnd,
}

impl Subset {
    pub const ALL: [Subset; 5] = [Subset::AllSlices, Subset::ProstateSlices, Subset::BaseEnd, Subset::Middle, Subset::ApexEnd];

    pub fn name(self) -> &'static str {
        match self {
            Subset::AllSlices => "all_slices",
            Subset::ProstateSlices => "prostate_slices",
            Subset::BaseEnd => "base_end",
            Subset::Middle => "middle",
            Subset::ApexEnd => "apex_end",
        }
    }

    pub fn contains(self, category: SliceCategory) -> bool {
        match self {
            Subset::AllSlices => true,
            Subset::ProstateSlices => category != SliceCategory::NonProstate,
            Subset::BaseEnd => category == SliceCategory::BaseEnd,
            Subset::Middle => category == SliceCategory::Middle,
            Subset::ApexEnd => category == SliceCategory::ApexEnd,
        }
    }
}

/// DSC per subset for one zone, in [`Subset::ALL`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneScores {
    pub all_slices: Option<f64>,
    pub prostate_slices: Option<f64>,
    pub base_end: Option<f64>,
    pub middle: Option<f64>,
    pub apex_end: Option<f64>,
}

impl ZoneScores {
    pub fn get(&self, subset: Subset) -> Option<f64> {
        match subset {
            Subset::AllSlices => self.all_slices,
            Subset::ProstateSlices => self.prostate_slices,
            Subset::BaseEnd => self.base_end,
            Subset::Middle => self.middle,
            Subset::ApexEnd => self.apex_end,
        }
    }

    fn slot(&mut self, subset: Subset) -> &mut Option<f64> {
        match subset {
            Subset::AllSlices => &mut self.all_slices,
            Subset::ProstateSlices => &mut self.prostate_slices,
            Subset::BaseEnd => &mut self.base_end,
            Subset::Middle => &mut self.middle,
            Subset::ApexEnd => &mut self.apex_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub case_id: String,
    pub pz: ZoneScores,
    pub tz: ZoneScores,
}

impl PatientRow {
    pub fn zone(&self, zone: Zone) -> &ZoneScores {
        match zone {
            Zone::Pz => &self.pz,
            Zone::Tz => &self.tz,
        }
    }
}

/// DSC per zone over the five slice subsets of one volume; slice categories
/// come from the truth only.
pub fn stratified_report(case_id: &str, pred: &[LabelMask], truth: &[LabelMask]) -> Result<PatientRow> {
    check_same_geometry(pred, truth)?;
    let categories: Vec<SliceCategory> = truth.iter().map(categorize_slice).collect();
    let mut row = PatientRow { case_id: case_id.to_string(), pz: ZoneScores::default(), tz: ZoneScores::default() };
    for subset in Subset::ALL {
        let pick = || {
            pred.iter().zip(truth).zip(&categories).filter(|(_, &c)| subset.contains(c)).map(|(pair, _)| pair)
        };
        *row.pz.slot(subset) = dsc_unchecked(pick(), Zone::Pz);
        *row.tz.slot(subset) = dsc_unchecked(pick(), Zone::Tz);
    }
    Ok(row)
}

/// Cohort mean±SD per zone and subset over present cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub pz: Vec<(Subset, Option<Summary>)>,
    pub tz: Vec<(Subset, Option<Summary>)>,
}

impl CohortSummary {
    pub fn get(&self, zone: Zone, subset: Subset) -> Option<Summary> {
        let cells = match zone {
            Zone::Pz => &self.pz,
            Zone::Tz => &self.tz,
        };
        cells.iter().find(|(s, _)| *s == subset).and_then(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    /// What the rows compare, e.g. `model vs reader 1`.
    pub label: String,
    pub patients: Vec<PatientRow>,
    pub summary: CohortSummary,
}

impl SegReport {
    pub fn new(label: impl Into<String>, patients: Vec<PatientRow>) -> Self {
        let summarize_zone = |zone: Zone| {
            Subset::ALL
                .iter()
                .map(|&s| {
                    let values: Vec<f64> = patients.iter().filter_map(|p| p.zone(zone).get(s)).collect();
                    (s, summarize(&values).ok())
                })
                .collect()
        };
        let summary = CohortSummary { pz: summarize_zone(Zone::Pz), tz: summarize_zone(Zone::Tz) };
        Self { label: label.into(), patients, summary }
    }

    /// Present values of one cell across patients, in patient order.
    pub fn cell_values(&self, zone: Zone, subset: Subset) -> Vec<(String, f64)> {
        self.patients
            .iter()
            .filter_map(|p| p.zone(zone).get(subset).map(|v| (p.case_id.clone(), v)))
            .collect()
    }

    /// One row per zone with `mean±SD` cells (`NA` when absent), followed by
    /// one row per patient and zone.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,zone");
        for s in Subset::ALL {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for zone in Zone::ALL {
            let _ = write!(out, "mean±sd,{}", zone.name());
            for s in Subset::ALL {
                let cell = self.summary.get(zone, s).map_or_else(|| "NA".to_string(), |m| m.format(2));
                let _ = write!(out, ",{cell}");
            }
            out.push('\n');
        }
        for p in &self.patients {
            for zone in Zone::ALL {
                let _ = write!(out, "{},{}", p.case_id, zone.name());
                for s in Subset::ALL {
                    let cell = p.zone(zone).get(s).map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                    let _ = write!(out, ",{cell}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, labels: &[u8]) -> LabelMask {
        LabelMask::new(w, labels.len() / w, labels.to_vec()).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let a = mask(4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(dsc(std::slice::from_ref(&a), std::slice::from_ref(&a), Zone::Pz).unwrap(), Some(1.0));
        let b = mask(4, &[0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(dsc(std::slice::from_ref(&a), &[b], Zone::Pz).unwrap(), Some(0.0));
        let c = mask(4, &[0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(dsc(std::slice::from_ref(&a), &[c], Zone::Pz).unwrap(), Some(0.5));
        assert_eq!(dsc(std::slice::from_ref(&a), std::slice::from_ref(&a), Zone::Tz).unwrap(), None);
        let empty = LabelMask::zeros(4, 2);
        assert_eq!(dsc(&[a], &[empty], Zone::Pz).unwrap(), Some(0.0));
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = LabelMask::zeros(4, 2);
        let b = LabelMask::zeros(2, 4);
        assert!(dsc(std::slice::from_ref(&a), &[b], Zone::Pz).is_err());
        assert!(dsc(std::slice::from_ref(&a), &[a.clone(), a.clone()], Zone::Pz).is_err());
        assert!(LabelMask::new(2, 1, vec![0, 3]).is_err());
    }

    #[test]
    fn categories() {
        assert_eq!(categorize_slice(&mask(2, &[2, 0])), SliceCategory::BaseEnd);
        assert_eq!(categorize_slice(&mask(2, &[2, 1])), SliceCategory::Middle);
        assert_eq!(categorize_slice(&mask(2, &[0, 1])), SliceCategory::ApexEnd);
        assert_eq!(categorize_slice(&mask(2, &[0, 0])), SliceCategory::NonProstate);
    }

    fn volume() -> Vec<LabelMask> {
        vec![mask(2, &[0, 0]), mask(2, &[2, 2]), mask(2, &[1, 2]), mask(2, &[0, 0])]
    }

    #[test]
    fn perfect_prediction_scores_one_where_present() {
        let truth = volume();
        let row = stratified_report("case000", &truth, &truth).unwrap();
        assert_eq!(row.pz.apex_end, None);
        assert_eq!(row.pz.base_end, None);
        assert_eq!(row.tz.base_end, Some(1.0));
        for zone in Zone::ALL {
            for s in [Subset::AllSlices, Subset::ProstateSlices, Subset::Middle] {
                assert_eq!(row.zone(zone).get(s), Some(1.0));
            }
        }
    }

    #[test]
    fn false_positives_only_hurt_all_slices() {
        let truth = volume();
        let mut pred = truth.clone();
        pred[0] = mask(2, &[1, 2]);
        let row = stratified_report("case000", &pred, &truth).unwrap();
        for zone in Zone::ALL {
            assert!(row.zone(zone).all_slices.unwrap() < row.zone(zone).prostate_slices.unwrap());
            assert_eq!(row.zone(zone).prostate_slices, Some(1.0));
        }
    }

    #[test]
    fn report_formats() {
        let truth = volume();
        let mut pred = truth.clone();
        pred[2] = mask(2, &[1, 1]);
        let rows = vec![
            stratified_report("case000", &truth, &truth).unwrap(),
            stratified_report("case001", &pred, &truth).unwrap(),
        ];
        let report = SegReport::new("model vs reader 1", rows);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row,zone,all_slices,prostate_slices,base_end,middle,apex_end");
        assert!(lines[1].starts_with("mean±sd,PZ,0.83±0.24,"), "{}", lines[1]);
        assert!(lines[1].ends_with(",NA"));
        assert_eq!(lines.len(), 3 + 4);
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["patients"][1]["tz"]["base_end"], 1.0);
        assert!(json["patients"][1]["pz"]["apex_end"].is_null());
    }

    #[test]
    fn uniform_probabilities_give_closed_form_loss() {
        let mut tape = Tape::new();
        let p = tape.constant(crate::Tensor::full([1, 3, 2, 2], 1.0 / 3.0));
        let loss = cross_entropy_loss(&mut tape, p, &[LabelMask::zeros(2, 2)]).unwrap();
        let expected = (-(1.0f64 / 3.0).ln() - 2.0 * (2.0f64 / 3.0).ln()) / 3.0;
        assert!((f64::from(tape.value(loss).data()[0]) - expected).abs() < 1e-6);
        assert!(cross_entropy_loss(&mut tape, p, &[LabelMask::zeros(2, 3)]).is_err());
    }
}
