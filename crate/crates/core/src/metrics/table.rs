use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::market::Institution;

use super::MetricsSummary;

/// The four human-comparison cells: institution (N = none, V = verifiability)
/// crossed with reputation (R).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    #[serde(rename = "C/N")]
    CN,
    #[serde(rename = "CR/N")]
    CRN,
    #[serde(rename = "C/V")]
    CV,
    #[serde(rename = "CR/V")]
    CRV,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::CN, Cell::CRN, Cell::CV, Cell::CRV];

    pub fn label(self) -> &'static str {
        match self {
            Cell::CN => "C/N",
            Cell::CRN => "CR/N",
            Cell::CV => "C/V",
            Cell::CRV => "CR/V",
        }
    }

    pub fn of(institution: Institution, reputation: bool) -> Option<Cell> {
        match (institution, reputation) {
            (Institution::NoInstitution, false) => Some(Cell::CN),
            (Institution::NoInstitution, true) => Some(Cell::CRN),
            (Institution::Verifiability, false) => Some(Cell::CV),
            (Institution::Verifiability, true) => Some(Cell::CRV),
            (Institution::Liability, _) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReference {
    pub version: u32,
    pub source: String,
    pub note: String,
    pub cells: Vec<String>,
    pub rows: BTreeMap<String, Vec<Option<f64>>>,
}

impl HumanReference {
    pub fn value(&self, key: &str, cell: Cell) -> Option<f64> {
        self.rows.get(key).and_then(|v| v.get(cell as usize).copied().flatten())
    }
}

const HUMAN_REFERENCE_JSON: &str = include_str!("../../data/human_reference.json");

/// Published human-subject values, shipped with the crate.
pub fn human_reference() -> HumanReference {
    serde_json::from_str(HUMAN_REFERENCE_JSON).expect("bundled reference data is valid")
}

/// Row order and labels of the comparison table.
pub const TABLE_ROWS: [(&str, &str); 15] = [
    ("trade_consumer_side", "Trade on consumer side"),
    ("avg_consumers_per_active_seller", "Avg # consumers (given seller has >= 1)"),
    ("trade_seller_side", "Trade on seller side"),
    ("efficiency", "Efficiency"),
    ("under_treatment_realized", "Undertreatment (realized)"),
    ("over_treatment_realized", "Overtreatment (realized)"),
    ("overcharging_realized", "Overcharging (realized)"),
    ("p_low_with_trade", "p_low with trade"),
    ("p_low_without_trade", "p_low without trade"),
    ("p_high_with_trade", "p_high with trade"),
    ("p_high_without_trade", "p_high without trade"),
    ("paid_price", "Actually paid price"),
    ("profit_seller_period", "Profits sellers (per seller-period)"),
    ("profit_consumer_period", "Profits consumers (per consumer-period)"),
    ("mean_total_income", "Mean total income per period (A+B)"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum TableValue {
    Value(f64),
    /// The metric's denominator was empty.
    Undefined,
    /// No summary was supplied for this cell.
    Missing,
}

impl TableValue {
    fn render(&self) -> String {
        match self {
            TableValue::Value(v) => format!("{v:.3}"),
            TableValue::Undefined => "---".to_string(),
            TableValue::Missing => "missing".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    pub label: String,
    pub values: Vec<TableValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePanel {
    pub title: String,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub cells: Vec<String>,
    pub panels: Vec<TablePanel>,
}

/// A named group of simulated cells, e.g. one objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationGroup {
    pub title: String,
    pub cells: BTreeMap<Cell, MetricsSummary>,
}

/// Humans first, then one panel per simulation group. Absent cells are
/// marked, never dropped.
pub fn emit_comparison_table(groups: &[SimulationGroup], human: &HumanReference) -> ComparisonTable {
    let mut panels = vec![TablePanel {
        title: "Humans".to_string(),
        rows: TABLE_ROWS
            .iter()
            .map(|(key, label)| TableRow {
                key: key.to_string(),
                label: label.to_string(),
                values: Cell::ALL
                    .iter()
                    .map(|&c| human.value(key, c).map_or(TableValue::Undefined, TableValue::Value))
                    .collect(),
            })
            .collect(),
    }];
    for g in groups {
        panels.push(TablePanel {
            title: format!("Simulations ({})", g.title),
            rows: TABLE_ROWS
                .iter()
                .map(|(key, label)| TableRow {
                    key: key.to_string(),
                    label: label.to_string(),
                    values: Cell::ALL
                        .iter()
                        .map(|c| match g.cells.get(c) {
                            None => TableValue::Missing,
                            Some(s) => s.get(key).map_or(TableValue::Undefined, TableValue::Value),
                        })
                        .collect(),
                })
                .collect(),
        });
    }
    ComparisonTable { cells: Cell::ALL.iter().map(|c| c.label().to_string()).collect(), panels }
}

impl ComparisonTable {
    pub fn render_text(&self) -> String {
        let width = TABLE_ROWS.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "");
        for c in &self.cells {
            let _ = write!(out, " {c:>9}");
        }
        out.push('\n');
        for p in &self.panels {
            let _ = writeln!(out, "{}", p.title);
            for r in &p.rows {
                let _ = write!(out, "{:width$}", r.label);
                for v in &r.values {
                    let _ = write!(out, " {:>9}", v.render());
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn human_constants_are_exact() {
        let h = human_reference();
        assert_eq!(h.value("paid_price", Cell::CN), Some(5.350));
        assert_eq!(h.value("efficiency", Cell::CN), Some(0.130));
        assert_eq!(h.value("under_treatment_realized", Cell::CRV), Some(0.360));
        assert_eq!(h.value("overcharging_realized", Cell::CV), None);
        assert!(TABLE_ROWS.iter().all(|(k, _)| h.rows.contains_key(*k)));
    }

    #[test]
    fn empty_simulation_set_gives_human_rows_only() {
        let t = emit_comparison_table(&[], &human_reference());
        assert_eq!(t.panels.len(), 1);
        assert!(t.render_text().contains("5.350"));
    }

    #[test]
    fn missing_cells_are_marked() {
        let g = SimulationGroup {
            title: "Scripted".into(),
            cells: BTreeMap::from([(Cell::CN, MetricsSummary { paid_price: Some(3.0), ..Default::default() })]),
        };
        let t = emit_comparison_table(&[g], &human_reference());
        let paid = t.panels[1].rows.iter().find(|r| r.key == "paid_price").unwrap();
        assert_eq!(paid.values[0], TableValue::Value(3.0));
        assert_eq!(paid.values[1], TableValue::Missing);
        assert!(t.render_text().contains("missing"));
    }
}
