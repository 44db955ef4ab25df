//! Plain-text metric tables.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub c2c: f64,
    pub c2p: f64,
}

/// `v` with `digits` significant digits; scientific notation outside `[1e-3, 1e4)`.
pub fn format_sig(v: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if v == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{:.*e}", digits - 1, v);
    }
    // the exponent after rounding, so 9.9996 becomes 10.00
    let rounded: f64 = format!("{:.*e}", digits - 1, v).parse().expect("valid float");
    let exp = rounded.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

/// Table with columns `name`, `C2C (x1e-3)` and `C2P (x1e-5)`.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| [r.name.clone(), format_sig(r.c2c * 1e3, 4), format_sig(r.c2p * 1e5, 4)])
        .collect();
    let head = ["name", "C2C (x1e-3)", "C2P (x1e-5)"];
    let width: Vec<usize> = (0..3)
        .map(|k| cells.iter().map(|c| c[k].len()).chain([head[k].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::from(
        "# C2C: mean distance from each reference point to its nearest candidate point\n\
         # C2P: mean squared distance from each reference point to the candidate's local plane\n\
         # both on clouds centred and scaled into the unit ball\n",
    );
    let mut line = |c: [&str; 3]| {
        let _ = writeln!(s, "{:<w0$}  {:>w1$}  {:>w2$}", c[0], c[1], c[2], w0 = width[0], w1 = width[1], w2 = width[2]);
    };
    line(head);
    for c in &cells {
        line([&c[0], &c[1], &c[2]]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        assert_eq!(format_sig(0.0, 4), "0.000");
        assert_eq!(format_sig(1.23456, 4), "1.235");
        assert_eq!(format_sig(12.3456, 4), "12.35");
        assert_eq!(format_sig(0.0123456, 4), "0.01235");
        assert_eq!(format_sig(9.99996, 4), "10.00");
        assert_eq!(format_sig(999.96, 4), "1000");
        assert_eq!(format_sig(-4.5, 4), "-4.500");
        assert_eq!(format_sig(123456.0, 4), "1.235e5");
        assert_eq!(format_sig(1.5e-7, 4), "1.500e-7");
    }

    #[test]
    fn table_scales_columns() {
        let t = metrics_table(&[
            MetricsRow { name: "same".into(), c2c: 0.0, c2p: 0.0 },
            MetricsRow { name: "enhanced".into(), c2c: 1.8e-3, c2p: 5.5e-6 },
        ]);
        let rows: Vec<&str> = t.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("name"));
        assert_eq!(rows[1].split_whitespace().collect::<Vec<_>>(), ["same", "0.000", "0.000"]);
        assert_eq!(rows[2].split_whitespace().collect::<Vec<_>>(), ["enhanced", "1.800", "0.5500"]);
    }
}
