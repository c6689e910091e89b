pub mod attacks;
pub mod calibration;
pub mod detectors;
pub mod lti_sim;
pub mod numerics;
pub mod reachability;
