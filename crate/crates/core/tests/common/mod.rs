#![allow(dead_code)]

use wmbench_core::lti_sim::{derive_covariances, DerivedCovariances, SystemSpec};

pub const MURGUIA2D: &str = r#"{
  "A": [[0.84, 0.23], [-0.47, 0.12]],
  "B": [[0.07, -0.32], [0.23, 0.58]],
  "C": [[1.0, 0.0], [2.0, 1.0]],
  "K": [[1.404, -1.042], [1.842, 1.008]],
  "L": [[0.0276, 0.0448], [-0.01998, -0.0290]],
  "Sigma_w": [[0.035, -0.011], [-0.011, 0.02]],
  "Sigma_z": [[2.0, 0.0], [0.0, 2.0]],
  "Sigma_e": [[0.01, 0.0], [0.0, 0.01]]
}"#;

pub fn murguia2d() -> (SystemSpec, DerivedCovariances) {
    let spec: SystemSpec = serde_json::from_str(MURGUIA2D).unwrap();
    let derived = derive_covariances(&spec).unwrap();
    (spec, derived)
}
