//! DAGs, linear SEMs with measurement error, their canonical representation,
//! equivalence classes and assumption audits.

mod assumptions;
mod canonical;
mod cpdag;
mod dag;
mod dsep;
pub mod io;
mod model;

pub use assumptions::{check_assumptions, check_assumptions_with, Applicable, AssumptionReport, AuditConfig, Verdict};
pub use canonical::{build_canonical, CanonicalRep};
pub use cpdag::{cpdag_of, cpdag_with_known_leaves, meek_closure, Cpdag, EdgeMark};
pub use dag::{default_labels, Dag};
pub use dsep::d_separated;
pub use model::{CammeModel, NoiseSpec, WeightedDag};
