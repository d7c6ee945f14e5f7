//! Task adapters: retrieval ranking, caption generation, answer
//! classification, and paired-image reasoning.

pub mod caption;
pub mod nlvr;
pub mod retrieval;
pub mod vqa;

pub use caption::{
    caption_mode_triple, generate_caption, generate_caption_hypothesis, generate_greedy,
    sample_caption_mask, sequence_log_prob, BeamHypothesis,
};
pub use nlvr::{make_nlvr_sample, nlvr_logit, nlvr_predict, NlvrSample, SENTENCE};
pub use retrieval::{
    make_retrieval_batch, recall_at_k, retrieval_score, score_matrix, scores_to_csv,
    RecallReport, RetrievalPair,
};
pub use vqa::{make_qa_sample, qa_logits, qa_loss, qa_predict, QaLossKind, QaSample, QUESTION};
