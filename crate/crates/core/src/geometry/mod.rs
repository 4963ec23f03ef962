//! Loss-geometry diagnostics: Hessian eigenvalues, the dense MLP Hessian,
//! NTK conditioning, Gaussian flatness, landscapes, sparsity, linearity and
//! attention maps.
//!
//! Every function here takes the model by shared reference; diagnostics
//! never modify parameters.

pub mod activity;
pub mod attention;
pub mod dense_hessian;
pub mod eigen;
pub mod flatness;
pub mod landscape;
pub mod ntk;
pub mod power;
pub mod report;

pub use activity::{active_fraction, activation_norms, all_label_pairs, missing_rate, missing_rate_of_pairs, sample_label_pairs};
pub use attention::{attention_map, AttentionSummary};
pub use dense_hessian::{kron, mlp_hessian_dense, DenseHessian};
pub use eigen::{jacobi_eigen, SymEigen};
pub use flatness::{avg_flatness, FlatnessEstimate, FlatnessOptions, NoiseMode};
pub use landscape::{filter_normalize, grid_axis, landscape_from_directions, landscape_grid, random_direction, LandscapeGrid, LandscapeOptions};
pub use ntk::{condition_number, ntk_condition, ntk_from_jacobian_rows, ntk_jacobian_rows, NtkAggregation, NtkResult};
pub use power::{lambda_max_power, role_mask, PowerResult};
pub use report::{geometry_report, DiagnoseOptions, GeometryReport, REPORT_KEYS};
