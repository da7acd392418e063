//! Adversarial texture optimization: expectation over sampled viewing
//! conditions, score-suppression losses and projected gradient descent.

mod check;
mod eot;
mod loss;
mod run;

pub use check::{pipeline_gradcheck, GradcheckReport, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use eot::{sample_views, EotDistribution, Range, SampledView};
pub use loss::{
    l2_term, sample_crops, sta_loss_rpn, sta_loss_symmetric, target_score, view_loss,
    visible_target_score, AttackStage, EotSample, ScoreMode,
};
pub use run::{
    continue_sta, loss_and_gradient, mean_target_score, mean_visible_score, pgd_step, round_seed,
    run_combined, run_sta, write_loss_csv, AttackConfig, AttackResult,
};
