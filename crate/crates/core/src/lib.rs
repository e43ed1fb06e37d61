//! Local solutions of the total differential equation `grad u = lambda * g`.
//!
//! Start from a [`FieldSpec`], check integrability with
//! [`check_integrability`], build a chart around a base point with
//! [`build_chart`] and evaluate the solution through
//! [`SolutionChart::eval_solution`]. Quasi-convexity of the solution is
//! read off the field by [`qc_classify`], and [`kkt_verify`] certifies
//! constrained minimisers of it.

// `!(a < b)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod expr;
pub mod field;
pub mod foliation;
pub mod gallery;
pub mod integrability;
pub mod kkt;
pub mod nnls;
pub mod ode;
pub mod parse;
pub mod quasiconvex;
pub mod ray;
pub mod sampling;

pub use chart::{
    build_chart, ChartConfig, ChartError, ChartMetadata, SolutionChart, SolutionValue,
};
pub use expr::{Cmp, Expr};
pub use field::{DerivMode, DomainBox, FieldError, FieldSpec, Point};
pub use foliation::{
    compare_solutions, monotone_section, tangent_orthogonality_residual, trace_level_set,
    Concordance, FoliationError, LevelSetTrace, SectionVerdict,
};
pub use gallery::{get_example, verify_example, Budget, ExampleCase, ExampleReport};
pub use integrability::{check_integrability, IntegrabilityError, IntegrabilityReport, Verdict};
pub use kkt::{
    kkt_search, kkt_verify, minimize_oracle, slater_check, ConstraintSet, KktCertificate, KktError,
    KktSearchConfig, KktSearchOutcome, KktTolerances, KktVerdict, OracleMinimum, QcGate,
    RejectReason,
};
pub use nnls::{nnls, NnlsSolution};
pub use ode::{integrate, Method, OdeConfig, OdeError, Termination, Trajectory};
pub use parse::{parse_expr, ParseError, ParseErrorKind};
pub use quasiconvex::{
    directional_limsup, pairwise_condition, qc_classify, quasiconvexity_bruteforce,
    quasiconvexity_grid, Condition, LimsupClass, LimsupEstimate, QcBundle, QcClass, QcConfig,
    QcError, QcReport, QcVerdict, Witness,
};
pub use ray::{ray_rhs, RayError, SolutionFunction};
pub use sampling::Grid;

/// Any error the library can return.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Integrability(#[from] IntegrabilityError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Foliation(#[from] FoliationError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
