//! Harness for cross-task visual in-context learning with vision-language
//! models.
//!
//! The pipeline pairs a demonstration from one low-level vision task with a
//! query from another, has a teacher model describe the difference without
//! naming either task, filters those descriptions for diversity, exports them
//! as student fine-tuning data, and at inference lets the student write the
//! prompt that a large generator follows. Each query is generated `k` times;
//! the candidate with the highest PSNR is kept and scored with SSIM and
//! VIEScore.

pub mod catalog;
pub mod corpus;
pub mod distill;
pub mod diversity;
pub mod gateway;
pub mod image;
pub mod metrics;
pub mod prompt;
pub mod report;
pub mod runner;
pub mod util;
pub mod vie;
