pub mod basis;
pub mod design;
pub mod error;
pub mod family;
pub mod linalg;
pub mod solver;
pub mod select;
pub mod rng;
pub mod simlab;
pub mod twostep;
pub mod bands;
pub mod cli;
