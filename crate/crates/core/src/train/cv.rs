use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{prepare_case, Case, PreparedCase};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

use super::checkpoint::{Checkpoint, EpochRecord};
use super::config::TrainConfig;
use super::eval::segment_slices;
use super::trainer::train;
use crate::metrics::{stratified_report, Zone};

const STREAM_FOLDS: u64 = 4;

/// Splits patients into `folds` validation groups. Ids are sorted first, so
/// the split depends only on the id set and the seed.
pub fn partition_folds(case_ids: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if case_ids.len() < folds {
        return Err(Error::Dataset(format!("{} patients cannot fill {folds} folds", case_ids.len())));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != case_ids.len() {
        return Err(Error::Dataset("duplicate case ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_FOLDS])));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    for fold in &mut out {
        fold.sort();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub validation_ids: Vec<String>,
    /// Cohort-mean prostate-slice DSC of the fold's selected checkpoint.
    pub pz: f64,
    pub tz: f64,
    pub history: Vec<EpochRecord>,
}

impl FoldResult {
    pub fn score(&self) -> f64 {
        (self.pz + self.tz) / 2.0
    }
}

pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    pub best_fold: usize,
    pub best_checkpoint: Checkpoint,
}

fn zone_means(model: &crate::net::ZonalNet, cases: &[PreparedCase]) -> Result<(f64, f64)> {
    let mut sums = [(0.0, 0usize); 2];
    for case in cases {
        let truth = case.masks.as_ref().ok_or_else(|| Error::Dataset(format!("{} has no mask", case.id)))?;
        let row = stratified_report(&case.id, &segment_slices(model, &case.images)?, truth)?;
        for (k, zone) in Zone::ALL.into_iter().enumerate() {
            if let Some(v) = row.zone(zone).prostate_slices {
                sums[k].0 += v;
                sums[k].1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((mean(sums[0]), mean(sums[1])))
}

/// Patient-level k-fold cross-validation; the fold whose checkpoint has the
/// highest mean of PZ and TZ validation DSC is selected.
pub fn cross_validate(config: &TrainConfig, cases: &[Case]) -> Result<CvOutcome> {
    config.validate()?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let folds = partition_folds(&ids, config.folds, config.seed)?;
    let prepared: Vec<PreparedCase> =
        cases.iter().map(|c| prepare_case(c, config.model.input_size, config.crop_mm)).collect::<Result<_>>()?;
    let mut results = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    for (k, val_ids) in folds.iter().enumerate() {
        let (val, train_set): (Vec<PreparedCase>, Vec<PreparedCase>) =
            prepared.iter().cloned().partition(|c| val_ids.contains(&c.id));
        info!("fold {}/{}: {} training, {} validation patients", k + 1, folds.len(), train_set.len(), val.len());
        let outcome = train(config, &train_set, &val)?;
        let model = outcome.best_checkpoint.model()?;
        let (pz, tz) = zone_means(&model, &val)?;
        let result =
            FoldResult { fold: k, validation_ids: val_ids.clone(), pz, tz, history: outcome.history().to_vec() };
        info!("fold {}: PZ {pz:.4}, TZ {tz:.4}", k + 1);
        if best.as_ref().is_none_or(|(s, _, _)| result.score() > *s) {
            best = Some((result.score(), k, outcome.best_checkpoint));
        }
        results.push(result);
    }
    let (_, best_fold, best_checkpoint) = best.expect("at least two folds");
    Ok(CvOutcome { folds: results, best_fold, best_checkpoint })
}
