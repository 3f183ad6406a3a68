//! Result files: per-step table, run metadata, comparison summary.

use std::fmt::Write as _;
use std::path::Path;

use capnmpc::vehicle::wrap_angle;
use capnmpc::SimulationRecord;

use crate::error::CliError;

pub const STEP_COLUMNS: [&str; 15] = [
    "k",
    "x_p",
    "y_p",
    "nu",
    "psi",
    "a_applied",
    "delta_f_applied",
    "ref_x",
    "ref_y",
    "g1",
    "g2",
    "g3",
    "g4",
    "g5",
    "degenerate_flag",
];

/// Formats with 9 significant digits, like C's `%.9g`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| s.trim_end_matches('0').trim_end_matches('.').to_string();
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{v:.*}", (8 - exp) as usize))
    }
}

/// Per-step table as CSV text.
pub fn step_table(record: &SimulationRecord) -> String {
    let mut out = STEP_COLUMNS.join(",");
    out.push('\n');
    for s in &record.steps {
        let mut row = vec![s.k.to_string()];
        let x = &s.state;
        row.extend([x[0], x[1], x[2], wrap_angle(x[3])].map(sig9));
        row.extend(s.control.iter().map(|&u| sig9(u)));
        row.extend(s.reference.iter().map(|&r| sig9(r)));
        row.extend((0..5).map(|i| s.margins.get(i).map_or_else(String::new, |&g| sig9(g))));
        row.push(u8::from(s.degenerate).to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let fail = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(fail)?;
    std::fs::rename(&tmp, path).map_err(fail)
}

/// Mean and sample standard deviation; the deviation is 0 for fewer than two values.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub runs: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub violation_rate_mean: f64,
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out =
        String::from("algorithm,runs,rmse_mean,rmse_std,cost_mean,cost_std,violation_rate_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            r.runs,
            sig9(r.rmse_mean),
            sig9(r.rmse_std),
            sig9(r.cost_mean),
            sig9(r.cost_std),
            sig9(r.violation_rate_mean)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.1), "0.1");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(-2.0 / 3.0 * 100.0), "-66.6666667");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(sig9(1.5e-5), "1.5e-05");
        assert_eq!(sig9(0.000123), "0.000123");
        assert_eq!(sig9(9.9999999999), "10");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(f64::NAN), "NaN");
    }

    #[test]
    fn single_value_has_zero_spread() {
        assert_eq!(mean_std(&[2.5]), (2.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}
