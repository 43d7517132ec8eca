//! Decentralized small-signal stability certificates for droop-controlled grids.
//!
//! The crate covers the full chain from a case file to a verdict:
//!
//! - [`grid`] and [`case`]: topology, Laplacian, complex couplings, case files.
//! - [`powerflow`]: Newton power flow and reactive-power scenarios.
//! - [`models`]: nodal droop models and their linear realizations.
//! - [`phase`]: numerical ranges, matrix phases and small accretivity tests.
//! - [`certificate`]: the node- and edge-wise sufficient conditions.
//! - [`oracle`]: full linearization, eigenvalue verdicts and simulation.
//!
//! ```
//! use droopcert::case::bundled_case;
//! use droopcert::certificate::{alpha_theory_all, certify, CertifyOptions};
//! use droopcert::models::{GeneralizedDroop, NodeModel};
//! use droopcert::powerflow::{solve, PowerFlowSpec, SolverOptions};
//!
//! let case = bundled_case("four_bus")?;
//! let spec = PowerFlowSpec::new(case.p_set.clone(), case.q_set.clone(), case.slack)
//!     .with_v_init(case.v_set_or_unity());
//! let op = solve(&case.grid, &spec, SolverOptions::default())?.op;
//! let models: Vec<NodeModel> = alpha_theory_all(&case.grid.laplacian(), &op)?
//!     .into_iter()
//!     .map(|a| NodeModel::GeneralizedDroop(GeneralizedDroop::diagonal(1.0, 1.0, a + 0.1)))
//!     .collect();
//! let report = certify(&case.grid, &op, &models, &CertifyOptions::default())?;
//! assert!(report.is_certified());
//! # Ok::<(), droopcert::Error>(())
//! ```

pub mod case;
pub mod certificate;
pub mod error;
pub mod grid;
pub mod models;
pub mod oracle;
pub mod phase;
pub mod powerflow;

pub use error::{Error, Result};
