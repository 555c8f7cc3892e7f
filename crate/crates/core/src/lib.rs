//! Multi-granular prompt moderation for text-to-image generation.
//!
//! The crate is organised bottom-up:
//!
//! * [`rules`] loads the immutable rule bundle and labeled datasets;
//! * [`providers`] abstracts the embedder, chat rewriter, image generator and
//!   image safety checker, with deterministic mocks;
//! * [`detect`] and [`intent`] compute the word/semantic/value signals and the
//!   intention signal;
//! * [`moderate`] routes a prompt to a risk category and rewrites it;
//! * [`regen`] verifies generated images and regenerates once with a style
//!   suffix;
//! * [`pipeline`] runs the whole flow over a prompt batch;
//! * [`metrics`] scores decisions against labels.

pub mod detect;
pub mod intent;
pub mod metrics;
pub mod moderate;
pub mod pipeline;
pub mod providers;
pub mod regen;
pub mod rules;
pub mod text;
