//! Reordering metrics, BLEU, WER, and difficulty-binned evaluation.

mod align;
mod bins;
mod bleu;
mod report;
mod wer;

pub use align::{
    kendall_disagreement, kendall_disagreement_quadratic, max_reorder_correctness,
    random_permutation_baseline, reorder_correctness, reorder_difficulty, simplify_to_bijection,
    AlignError, AlignmentMap, EvalTriplet,
};
pub use bins::{bin_by_difficulty, BinError, DifficultyBin};
pub use bleu::{corpus_bleu, BleuError};
pub use report::{build_report, write_bins_csv, PerUtt, ReorderReport, Summary};
pub use wer::{corpus_wer, levenshtein, wer, WerError};
