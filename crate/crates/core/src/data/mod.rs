//! Prompt filtering and preference-pair construction.

pub mod pairs;
pub mod prompts;

pub use pairs::{
    admits, build_pairs, pairwise_margins, read_pairs, write_pairs, Candidate, CandidateSet, MarginStats, MedianScope,
    PairFileHeader, PairMargin, PairOptions, PreferencePair,
};
pub use prompts::{filter_prompts, prompt_similarity, Prompt, PromptSet, Provenance};
