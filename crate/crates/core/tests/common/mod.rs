#![allow(dead_code)]

pub mod grad_cases;
pub mod pose_checks;
pub mod snap_oracle;
