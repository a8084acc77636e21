//! Evaluation measures: Dice overlap, MS-SSIM, test-retest ICC and
//! re-identification retrieval scores, plus the key=value report format.

pub mod dice;
pub mod icc;
pub mod report;
pub mod retrieval;
pub mod ssim;

pub use dice::{dice, dice_report, macro_dice, DiceReport};
pub use icc::{icc_a1, icc_test_retest, IccReport};
pub use report::{write_csv, MetricReport};
pub use retrieval::{reid_retrieval, similarity_matrix, RetrievalReport};
pub use ssim::{ms_ssim, ms_ssim_with, MsSsimConfig, MsSsimMode};
