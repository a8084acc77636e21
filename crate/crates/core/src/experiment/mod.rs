//! End-to-end studies on phantoms: segmentation table, ensemble-size curve and privacy suite.

mod config;
mod evaluate;
mod run;
mod study;

pub use config::{BackendKind, ExperimentConfig, PhantomSection, PrivacySection, Stage};
pub use evaluate::{
    inference_grid, raw_dice, reliability, run_fig3_analogue, run_privacy_suite, run_table1_analogue, tta_curves, PrivacySuite,
    Table1, TtaCurves,
};
pub use run::{run_experiment, sha256_hex, RunSummary};
pub use study::{Models, Study};
