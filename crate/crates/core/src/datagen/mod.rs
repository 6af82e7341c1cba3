//! Synthetic multi-label data with controllable covariate shift, partial
//! labels, uncertain labels and patient-grouped splits.

mod dataset;
mod domain;
mod ops;
mod tabular;

pub use dataset::Dataset;
pub use domain::{default_label_names, generate, normal_cdf, DomainSpec, LabelModel};
pub use ops::{apply_u_zeros, concat_naive, make_iid_halves, prune_labels, split_by_patient};
pub use tabular::{load_tabular, write_tabular, TabularSchema};
