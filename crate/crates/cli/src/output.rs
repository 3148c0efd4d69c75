//! Result tables. Rows are sorted before writing so the CSV does not
//! depend on worker scheduling.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Int(i64),
    Num(f64),
    Text(String),
    /// Metric not defined for this row (e.g. `F_avg` of a dissipative run).
    Missing,
}

impl Field {
    pub fn text(s: impl Into<String>) -> Self {
        Field::Text(s.into())
    }

    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(Field::Missing, Field::Num)
    }

    fn rank(&self) -> u8 {
        match self {
            Field::Missing => 0,
            Field::Int(_) => 1,
            Field::Num(_) => 2,
            Field::Text(_) => 3,
        }
    }

    /// Total order used for sorting rows.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Field::Int(a), Field::Int(b)) => a.cmp(b),
            (Field::Num(a), Field::Num(b)) => a.total_cmp(b),
            (Field::Text(a), Field::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

/// Shortest representation that round-trips; never uses exponents.
impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Int(v) => write!(f, "{v}"),
            Field::Num(v) => write!(f, "{v}"),
            Field::Text(s) => f.write_str(s),
            Field::Missing => Ok(()),
        }
    }
}

pub fn cmp_rows(a: &[Field], b: &[Field]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Writes `rows` under `columns`, sorted.
pub fn write_csv(path: &Path, columns: &[String], rows: &mut [Vec<Field>]) -> CliResult<()> {
    rows.sort_by(|a, b| cmp_rows(a, b));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for row in rows.iter() {
        w.write_record(row.iter().map(|f| f.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_print_without_exponents() {
        assert_eq!(Field::Num(1e-7).to_string(), "0.0000001");
        assert_eq!(Field::Num(0.1 + 0.2).to_string(), "0.30000000000000004");
        assert_eq!(Field::Int(-3).to_string(), "-3");
        assert_eq!(Field::Missing.to_string(), "");
    }

    #[test]
    fn rows_sort_lexicographically() {
        let mut rows = vec![
            vec![Field::Num(2.0), Field::text("b")],
            vec![Field::Num(1.0), Field::text("z")],
            vec![Field::Num(2.0), Field::text("a")],
        ];
        rows.sort_by(|a, b| cmp_rows(a, b));
        assert_eq!(rows[0][1], Field::text("z"));
        assert_eq!(rows[1][1], Field::text("a"));
    }
}
