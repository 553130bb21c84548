//! Generalized category discovery over precomputed embeddings, guided by
//! textual category patterns from a chat-completion oracle.

pub mod alignment;
pub mod clustering;
pub mod data;
pub mod evaluation;
pub mod labels;
pub mod oracle;
pub mod pipeline;
pub mod ranking;
pub mod reassign;
pub mod text;
pub mod trainer;
pub mod vector;
