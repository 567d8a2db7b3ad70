pub mod cbf;
pub mod filters;
pub mod model;
pub mod parallel;
pub mod qp;
pub mod sim;
pub mod tuner;
