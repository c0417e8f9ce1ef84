pub mod branchsim;
pub mod chain;
pub mod circuit;
pub mod cli;
pub mod costmodel;
pub mod fixedpoint;
pub mod grover_rudolph;
pub mod oracles;
pub mod randchain;
pub mod szegedy;
