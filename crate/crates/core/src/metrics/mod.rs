//! Cell statistics, tests and regressions over run logs.

mod ols;
mod stats;
mod summary;
mod table;

use thiserror::Error;

pub use ols::{
    centered_round, ols, ols_interaction, panel_rows, stars, Coefficient, OlsFit, Outcome, PanelRow, INTERACTION_TERMS,
};
pub use stats::{two_sided_p, welch_t, WelchTest};
pub use summary::{aggregate, efficiency, run_totals, Accumulator, MetricsSummary};
pub use table::{
    emit_comparison_table, human_reference, Cell, ComparisonTable, HumanReference, SimulationGroup, TablePanel,
    TableRow, TableValue, TABLE_ROWS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("singular design: columns {columns:?} are linearly dependent on earlier columns")]
    SingularDesign { columns: Vec<String> },
}
