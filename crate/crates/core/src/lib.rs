//! Training engine for dense and graph-convolutional networks whose backward
//! pass is pluggable: exact backpropagation, direct feedback alignment with
//! an implicitly generated Gaussian feedback matrix, ternarized DFA, and a
//! simulated optical random-projection co-processor.

pub mod data;
pub mod feedback;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod train;
pub mod viz;
