use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{Case, PreparedCase};
use crate::error::Result;

use super::config::TrainConfig;
use super::eval::{compare_paired, evaluate, CellComparison, Evaluation};
use super::trainer::train;

/// The same training run with and without the stem max-pool, evaluated on
/// the same cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub without_maxpool: Evaluation,
    pub with_maxpool: Evaluation,
    /// Without-max-pool rows against with-max-pool rows, per cell.
    pub comparisons: Vec<CellComparison>,
}

pub fn run_maxpool_ablation(config: &TrainConfig, train_cases: &[PreparedCase], test_cases: &[Case]) -> Result<AblationOutcome> {
    let mut arms = Vec::with_capacity(2);
    for maxpool in [false, true] {
        let mut arm = config.clone();
        arm.model.include_initial_maxpool = maxpool;
        info!("training with include_initial_maxpool = {maxpool}");
        let outcome = train(&arm, train_cases, &[])?;
        arms.push(evaluate(&outcome.final_checkpoint.model()?, test_cases, arm.crop_mm)?);
    }
    let with_maxpool = arms.pop().expect("two arms");
    let without_maxpool = arms.pop().expect("two arms");
    let comparisons = compare_paired(&without_maxpool.model, &with_maxpool.model);
    Ok(AblationOutcome { without_maxpool, with_maxpool, comparisons })
}
