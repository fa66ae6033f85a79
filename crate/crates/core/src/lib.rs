pub mod benchkit;
pub mod config;
pub mod extraction;
pub mod gateway;
pub mod hiermem;
pub mod management;
pub mod memstore;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod service;
pub mod text;
