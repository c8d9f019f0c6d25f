pub mod annotation;
pub mod augment;
pub mod detect;
pub mod error;
mod filter;
pub mod phantom;
pub mod pipeline;
pub mod scan_io;
pub mod seeding;
pub mod segmenter;
pub mod stats;
pub mod triplanar;
pub mod volume;
