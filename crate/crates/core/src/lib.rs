//! Distribution-system flexibility as a PQV feasible operating region.

pub mod caseio;
pub mod cases;
pub mod coordination;
pub mod evaluation;
pub mod fitting;
pub mod netmodel;
pub mod nlopt;
pub mod pflow;
pub mod sampling;
