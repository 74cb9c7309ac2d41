//! Dynamic-behavior malware analytics: sandbox log parsing, feature
//! extraction, boosted-tree classification, family clustering, and
//! similarity-based coverage prediction over generated sample sets.

pub mod behavior_log;
pub mod featurize;
pub mod gbdt;
pub mod matrix;
pub mod similarity;
pub mod transform;
