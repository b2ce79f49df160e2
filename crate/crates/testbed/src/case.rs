//! Bus case files.
//!
//! A case is a small TOML document:
//!
//! ```toml
//! bus_count = 9
//! nominal_voltage = [1.04, 1.025, ...]
//! fault_coupling = [0.3, 0.3, ...]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use gabor_evasion_core::trace::BusCase;

/// The nine-bus case shipped with the crate.
pub const SHIPPED_CASE: &str = include_str!("../data/ieee9.case.toml");

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
}

/// 1-based line and column of a byte offset.
pub(crate) fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Parses case text; `origin` names the source in diagnostics.
pub fn parse_case(text: &str, origin: &str) -> Result<BusCase, CaseError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        CaseError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

pub fn load_case(path: &Path) -> Result<BusCase, CaseError> {
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_case(&text, &path.display().to_string())
}

pub fn shipped_case() -> BusCase {
    parse_case(SHIPPED_CASE, "ieee9.case.toml").expect("shipped case is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_case_matches_builtin() {
        let case = shipped_case();
        assert_eq!(case.bus_count(), 9);
        assert_eq!(case, BusCase::ieee9());
    }

    #[test]
    fn unit_voltages_round_trip() {
        let text = "bus_count = 9\nnominal_voltage = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]\nfault_coupling = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]\n";
        let case = parse_case(text, "t").unwrap();
        assert_eq!(case.nominal_voltage(), &[1.0; 9]);
    }

    #[test]
    fn out_of_range_voltage_names_field() {
        let text = "bus_count = 2\nnominal_voltage = [1.0, 1.5]\nfault_coupling = [0.1, 0.2]\n";
        let err = parse_case(text, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("nominal_voltage"), "{err}");
        assert!(err.contains("1.5"), "{err}");
        assert!(err.starts_with("bad.toml:"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "bus_count = 2\nnominal_voltage = [1.0, \nfault_coupling = oops\n";
        match parse_case(text, "x").unwrap_err() {
            CaseError::Parse { line, .. } => assert!(line >= 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_type_reports_field_line() {
        let text = "bus_count = 2\nnominal_voltage = \"high\"\nfault_coupling = [0.1, 0.2]\n";
        match parse_case(text, "x").unwrap_err() {
            CaseError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("sequence") || message.contains("array"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
