//! CSV, JSON and SVG output for comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{io_err, ComparisonRow, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown format {other:?} (expected csv, json or svg)")),
        }
    }
}

type Series = fn(&ComparisonRow) -> (f64, f64);

const CHARTS: [(&str, &str, Series, Series); 3] = [
    (
        "delay",
        "Average delay per vehicle (s)",
        |r| (r.off_delay_mean, r.off_delay_std),
        |r| (r.treatment_delay_mean, r.treatment_delay_std),
    ),
    (
        "served",
        "Vehicles served",
        |r| (r.off_served_mean, r.off_served_std),
        |r| (r.treatment_served_mean, r.treatment_served_std),
    ),
    (
        "travel_time",
        "Total travel time (veh-h)",
        |r| (r.off_tt_mean, r.off_tt_std),
        |r| (r.treatment_tt_mean, r.treatment_tt_std),
    ),
];

/// Writes `{stem}.csv`, `{stem}.json` and one `{stem}_{metric}.svg` chart
/// per metric into `dir`, as selected by `formats`. Everything is rendered
/// before the first file is written; on a write failure the files already
/// written are removed.
pub fn emit_report(
    rows: &[ComparisonRow],
    formats: &[ReportFormat],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| io_err(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&path, e))?;
        files.push((path, bytes));
    }
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join(format!("{stem}.json"));
        let mut bytes = serde_json::to_vec_pretty(rows).map_err(|e| io_err(&path, e))?;
        bytes.push(b'\n');
        files.push((path, bytes));
    }
    if formats.contains(&ReportFormat::Svg) {
        for (name, title, off, treat) in CHARTS {
            let path = dir.join(format!("{stem}_{name}.svg"));
            files.push((path, line_chart(rows, title, off, treat).into_bytes()));
        }
    }

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for (path, bytes) in files {
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(io_err(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Metric vs mp, one series per lane mode, error bars of one standard
/// deviation.
fn line_chart(rows: &[ComparisonRow], title: &str, off: Series, treat: Series) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let series = [
        ("off".to_string(), "#1f77b4", off),
        (rows[0].treatment.to_string(), "#d62728", treat),
    ];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in rows {
        for (_, _, f) in &series {
            let (m, s) = f(r);
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |mp: f64| left + mp * (w - left - right);
    let y = |v: f64| top + (hi - v) / (hi - lo) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} - {} {}</text>"#,
        w / 2.0,
        title,
        rows[0].testbed,
        rows[0].los
    );
    let (x0, x1, y0, y1) = (x(0.0), x(1.0), y(lo), y(hi));
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=10 {
        let mp = f64::from(k) / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x(mp),
            y0 + 18.0,
            k * 10
        );
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * f64::from(k) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Market penetration (%)</text>"#,
        w / 2.0,
        h - 10.0
    );
    for (idx, (label, color, f)) in series.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.mp), y(f(r).0)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for r in rows {
            let (m, sd) = f(r);
            let px = x(r.mp);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}"/>"#,
                y(m - sd),
                y(m + sd)
            );
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, y(m));
        }
        let ly = top + 10.0 + 16.0 * idx as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            w - 150.0,
            w - 130.0,
            w - 124.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ReservedLaneMode;
    use crate::reservation::LosClass;

    fn rows(n: usize) -> Vec<ComparisonRow> {
        (0..n)
            .map(|k| {
                let mp = k as f64 / 10.0;
                ComparisonRow {
                    testbed: "princeton".into(),
                    los: LosClass::AToC,
                    treatment: ReservedLaneMode::Auto,
                    mp,
                    seeds: 5,
                    treatment_reserved_count: usize::from(mp >= 0.1) + usize::from(mp >= 0.5),
                    off_delay_mean: 60.0 - 10.0 * mp,
                    off_delay_std: 1.5,
                    off_served_mean: 3000.0 + 50.0 * mp,
                    off_served_std: 10.0,
                    off_tt_mean: 400.0 - 30.0 * mp,
                    off_tt_std: 4.0,
                    treatment_delay_mean: 58.0 - 12.0 * mp,
                    treatment_delay_std: 1.0,
                    treatment_served_mean: 3010.0 + 60.0 * mp,
                    treatment_served_std: 9.0,
                    treatment_tt_mean: 395.0 - 35.0 * mp,
                    treatment_tt_std: 3.0,
                    off_tt_reduction_pct: 7.5 * mp,
                    treatment_tt_reduction_pct: 1.25 + 8.75 * mp,
                    off_delay_reduction_pct: mp / 3.0,
                    treatment_delay_reduction_pct: 0.1 + mp,
                    off_served_increase_pct: 0.1 * mp,
                    treatment_served_increase_pct: 0.2 * mp,
                    paired_tt_diff_pct: -1.0 / 3.0,
                    paired_delay_diff_pct: -0.7,
                    paired_served_diff_pct: 0.3,
                }
            })
            .collect()
    }

    const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];

    #[test]
    fn eleven_rows_make_csv_json_and_three_charts() {
        let dir = tempfile::tempdir().unwrap();
        let input = rows(11);
        let files = emit_report(&input, &ALL, dir.path(), "cmp").unwrap();
        assert_eq!(files.len(), 5);
        let csv_text = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
        assert_eq!(csv_text.lines().count(), 12);
        let header = csv_text.lines().next().unwrap();
        assert!(header.starts_with("testbed,los,treatment,mp,seeds,"));

        let back: Vec<ComparisonRow> = csv::Reader::from_reader(csv_text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, input);
        let json: Vec<ComparisonRow> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("cmp.json")).unwrap()).unwrap();
        assert_eq!(json, input);

        for name in ["delay", "served", "travel_time"] {
            let svg = fs::read_to_string(dir.path().join(format!("cmp_{name}.svg"))).unwrap();
            assert!(svg.starts_with("<svg"));
            assert_eq!(svg.matches("<polyline").count(), 2);
            assert_eq!(svg.matches("<circle").count(), 22);
        }
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        assert!(matches!(emit_report(&[], &ALL, &out, "cmp"), Err(HarnessError::EmptyRows)));
        assert!(!out.exists());
    }

    #[test]
    fn format_names() {
        assert_eq!("svg".parse::<ReportFormat>(), Ok(ReportFormat::Svg));
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
