//! Training, skill evaluation and the experiment protocols built on them:
//! masked retraining, lead-time sweeps and seasonal grouping.

mod protocol;
mod report;
mod train;

pub use protocol::{
    derive_seed, lead_sweep, month_sweep, retrain_validate, seasonal_group, RetrainReport, SeasonalPair,
    SweepCell, NON_SPRING_MONTHS, SPRING_MONTHS,
};
pub use report::{config_hash, report_stem, skill_table_csv, Report, SkillRow};
pub use train::{correlation_skill, split_indices, train, Optimizer, SkillReport, TrainReport, TrainSpec};
