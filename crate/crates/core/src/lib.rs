pub mod model;
pub mod elliptic;
pub mod grid;
pub mod linalg;
pub mod diagnostics;
pub mod solver;
pub mod oracle;
pub mod config;
pub mod plot;
pub mod selftest;
pub mod cli;
