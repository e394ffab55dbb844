pub mod cli;
pub mod contact;
pub mod geometry;
pub mod qp;
pub mod recovery;
pub mod replan;
pub mod sim;
