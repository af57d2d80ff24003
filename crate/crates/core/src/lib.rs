pub mod checklist;
pub mod cohort;
pub mod prompt;
pub mod inference;
pub mod response;
pub mod aggregate;
pub mod evaluation;
pub mod pipeline;
pub mod store;
pub mod synthetic;
pub mod config;
pub mod service;
pub mod server;
