pub mod catalog;
pub mod csv_io;
pub mod error;
pub mod exec;
pub mod optimizer;
pub mod plan;
pub mod predict;
pub mod predictors;
pub mod session;
pub mod sql;
pub mod storage;
pub mod types;
pub mod util;
