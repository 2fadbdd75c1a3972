//! Clock-offset log statistics (e.g. `ptp4l` / `phc2sys` offsets).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper edges of the |offset| bins in ns; the last bin is open-ended.
pub const BIN_EDGES_NS: [i64; 4] = [1_000, 10_000, 100_000, 1_000_000];
pub const BIN_LABELS: [&str; 5] = ["lt_1us", "lt_10us", "lt_100us", "lt_1ms", "ge_1ms"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetRow {
    pub t_ns: i64,
    pub offset_ns: i64,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// Parses `t_ns,offset_ns,source` rows. A header line starting with `t_ns`
/// and `#` comments are skipped; malformed rows are collected, not fatal.
pub fn parse_offset_log<R: BufRead>(reader: R) -> Result<(Vec<OffsetRow>, Vec<RowError>)> {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with("t_ns") {
            continue;
        }
        let f: Vec<&str> = s.split(',').map(str::trim).collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse::<i64>().ok()?, f[1].parse::<i64>().ok()?)))
            .flatten();
        match parsed {
            Some((t_ns, offset_ns)) if !f[2].is_empty() => rows.push(OffsetRow { t_ns, offset_ns, source: f[2].to_string() }),
            _ => errors.push(RowError { line: i + 1, message: format!("malformed row `{s}`") }),
        }
    }
    Ok((rows, errors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceHistogram {
    pub source: String,
    pub count: usize,
    /// Fraction of samples per bin, see [`BIN_LABELS`].
    pub fractions: [f64; 5],
    pub max_abs_offset_ns: i64,
    pub span_s: f64,
    /// Mean and max of |Δoffset / Δt| between consecutive rows, ns/s.
    pub mean_abs_rate_ns_per_s: f64,
    pub max_abs_rate_ns_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtpReport {
    pub sources: Vec<SourceHistogram>,
    pub row_errors: Vec<RowError>,
}

fn bin_of(offset_ns: i64) -> usize {
    let a = offset_ns.unsigned_abs();
    BIN_EDGES_NS.iter().position(|&e| a < e as u64).unwrap_or(4)
}

/// Per-source |offset| histogram and rate-of-change statistics. Sources are
/// reported in lexical order; rows within a source are sorted by time.
pub fn ptp_report(rows: &[OffsetRow], row_errors: Vec<RowError>) -> Result<PtpReport> {
    if rows.is_empty() {
        return Err(Error::Data("offset log has no valid rows".into()));
    }
    let mut by_source: BTreeMap<&str, Vec<&OffsetRow>> = BTreeMap::new();
    for r in rows {
        by_source.entry(&r.source).or_default().push(r);
    }
    let sources = by_source
        .into_iter()
        .map(|(source, mut rs)| {
            rs.sort_by_key(|r| r.t_ns);
            let mut counts = [0usize; 5];
            for r in &rs {
                counts[bin_of(r.offset_ns)] += 1;
            }
            let n = rs.len();
            let rates: Vec<f64> = rs
                .windows(2)
                .filter(|w| w[1].t_ns > w[0].t_ns)
                .map(|w| ((w[1].offset_ns - w[0].offset_ns) as f64 / ((w[1].t_ns - w[0].t_ns) as f64 * 1e-9)).abs())
                .collect();
            SourceHistogram {
                source: source.to_string(),
                count: n,
                fractions: counts.map(|c| c as f64 / n as f64),
                max_abs_offset_ns: rs.iter().map(|r| r.offset_ns.abs()).max().unwrap_or(0),
                span_s: (rs[n - 1].t_ns - rs[0].t_ns) as f64 * 1e-9,
                mean_abs_rate_ns_per_s: if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 },
                max_abs_rate_ns_per_s: rates.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(PtpReport { sources, row_errors })
}

pub fn write_histogram_csv<W: Write>(report: &PtpReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "source,count,{},max_abs_offset_ns,span_s,mean_abs_rate_ns_per_s,max_abs_rate_ns_per_s",
        BIN_LABELS.join(",")
    )?;
    for s in &report.sources {
        let fr: Vec<String> = s.fractions.iter().map(|f| f.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.source,
            s.count,
            fr.join(","),
            s.max_abs_offset_ns,
            s.span_s,
            s.mean_abs_rate_ns_per_s,
            s.max_abs_rate_ns_per_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: i64, o: i64, s: &str) -> OffsetRow {
        OffsetRow { t_ns: t, offset_ns: o, source: s.into() }
    }

    #[test]
    fn four_decades() {
        let rows = [row(0, 500, "a"), row(1, -5_000, "a"), row(2, 50_000, "a"), row(3, 2_000_000, "a")];
        let r = ptp_report(&rows, vec![]).unwrap();
        assert_eq!(r.sources[0].fractions, [0.25, 0.25, 0.25, 0.0, 0.25]);
        assert_eq!(r.sources[0].max_abs_offset_ns, 2_000_000);
    }

    #[test]
    fn all_zero_offsets() {
        let rows: Vec<_> = (0..10).map(|k| row(k, 0, "phc2sys")).collect();
        let r = ptp_report(&rows, vec![]).unwrap();
        assert_eq!(r.sources[0].fractions, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.sources[0].max_abs_rate_ns_per_s, 0.0);
    }

    #[test]
    fn one_hour_at_1hz() {
        let rows: Vec<_> = (0..3600).map(|k| row(k * 1_000_000_000, (k % 37) * 400 - 7000, "ptp4l")).collect();
        let r = ptp_report(&rows, vec![]).unwrap();
        let s = &r.sources[0];
        assert_eq!(s.count, 3600);
        assert_eq!(s.span_s, 3599.0);
        assert!((s.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_rows_are_reported_and_skipped() {
        let text = "t_ns,offset_ns,source\n0,10,a\nnot,a,row\n2,20\n3,30,b\n";
        let (rows, errs) = parse_offset_log(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![3, 4]);
        let r = ptp_report(&rows, errs).unwrap();
        assert_eq!(r.sources.len(), 2);
        assert_eq!(r.row_errors.len(), 2);
        let mut out = Vec::new();
        write_histogram_csv(&r, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(ptp_report(&[], vec![]).is_err());
    }
}
