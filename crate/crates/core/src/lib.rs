//! Named entity recognition on historical text with chat-completion models.
//!
//! The pipeline runs page by page:
//!
//! 1. [`corpus`] loads gold pages and their character-offset annotations.
//! 2. [`promptkit`] builds a prompt from templates, context, feature toggles and few-shot examples.
//! 3. [`gateway`] sends it to a chat-completion endpoint, or replays a recorded transcript.
//! 4. [`tagspan`] parses the inline `<<PER … /PER>>` markup of the reply.
//! 5. [`grounding`] maps every tagged span back onto the source page with bounded Levenshtein search.
//! 6. [`evaluator`] scores the grounded spans against gold.
//!
//! [`harness`] drives whole experiments and renders result tables.

pub mod corpus;
pub mod evaluator;
pub mod gateway;
pub mod grounding;
pub mod harness;
pub mod par;
pub mod promptkit;
pub mod span;
pub mod tagspan;

pub use corpus::{Document, GoldCorpus};
pub use evaluator::{MatchCounts, Metrics, Scheme};
pub use span::{EntitySpan, Label, LabelSet};
