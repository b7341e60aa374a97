//! Efficient influence functions of the three targets and a finite-difference
//! Gateaux oracle used to validate them.

pub mod gradient;
pub mod oracle;

pub use gradient::{
    eif_elasticity, eif_lambda, eif_log_lambda_s, eif_values, gradients, influence_tables, tables_from_gradients,
    Gradients, InfluenceEvaluation, InfluenceTables,
};
pub use oracle::{functional_value, gateaux_oracle, random_law, Atom, DiscreteLaw, Functional, OracleResult};
