use std::fmt::Write as _;

use dyson_cascade::stats::{EmpiricalMeasure, FractionalMomentCurve, SingularityReport};
use dyson_cascade::TestReport;

/// `cell,left,density,mass` with 1-based cells.
pub fn measure_csv(m: &EmpiricalMeasure) -> String {
    let mut s = String::from("cell,left,density,mass\n");
    for k in 0..m.density.len() {
        writeln!(s, "{},{},{},{}", k + 1, m.left(k), m.density[k], m.cell_mass(k)).unwrap();
    }
    s
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;
const MAX_BARS: usize = 1024;

/// Step plot of `ln` density against `x`. Deep levels are merged into at
/// most 1024 bars, each carrying the mean density of the cells it covers.
pub fn measure_svg(m: &EmpiricalMeasure) -> String {
    let bars = m.density.len().min(MAX_BARS);
    let per = m.density.len() / bars;
    let logs: Vec<f64> = m.density.chunks(per).map(|c| (c.iter().sum::<f64>() / per as f64).ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_w = SVG_WIDTH - 2.0 * MARGIN;
    let plot_h = SVG_HEIGHT - 2.0 * MARGIN;
    let x = |t: f64| MARGIN + t * plot_w;
    let y = |v: f64| MARGIN + (hi - v) / span * plot_h;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="13">ln density, depth {}</text>"#, m.depth).unwrap();
    let zero = y(0.0);
    writeln!(s, r#"<line x1="{:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="gray" stroke-dasharray="4 3"/>"#, x(0.0), x(1.0)).unwrap();
    for (v, label) in [(hi, hi), (lo, lo)] {
        writeln!(s, r#"<text x="2" y="{:.2}" font-family="sans-serif" font-size="10">{label:.2}</text>"#, y(v) + 4.0).unwrap();
    }
    let mut d = String::new();
    for (k, v) in logs.iter().enumerate() {
        let (x0, x1) = (x(k as f64 / bars as f64), x((k + 1) as f64 / bars as f64));
        let cmd = if k == 0 { 'M' } else { 'L' };
        write!(d, "{cmd}{x0:.2},{:.2} L{x1:.2},{:.2} ", y(*v), y(*v)).unwrap();
    }
    writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1"/>"#, d.trim_end()).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="10">0</text>"#, x(0.0), SVG_HEIGHT - 20.0).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="10">1</text>"#, x(1.0) - 6.0, SVG_HEIGHT - 20.0).unwrap();
    s.push_str("</svg>\n");
    s
}

pub fn reports_json(reports: &[TestReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn reports_csv(reports: &[TestReport]) -> String {
    let mut s = String::from("name,statistic,threshold,n_samples,standard_error,passed\n");
    for r in reports {
        writeln!(s, "{},{},{},{},{},{}", csv_field(&r.name), r.statistic, r.threshold, r.n_samples, r.standard_error, r.passed).unwrap();
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn moments_csv(curve: &FractionalMomentCurve) -> String {
    let mut s = String::from("level,mean,se,step_mean,step_se\n");
    for (k, p) in curve.points.iter().enumerate() {
        match k.checked_sub(1).and_then(|j| curve.steps.get(j)) {
            Some(d) => writeln!(s, "{},{},{},{},{}", p.level, p.mean, p.se, d.mean, d.se).unwrap(),
            None => writeln!(s, "{},{},{},,", p.level, p.mean, p.se).unwrap(),
        }
    }
    s
}

pub fn singularity_csv(rep: &SingularityReport) -> String {
    let mut s = String::from("level,q05,q25,median,q75,q95,fraction_below_floor\n");
    for q in &rep.levels {
        writeln!(s, "{},{},{},{},{},{},{}", q.level, q.q05, q.q25, q.median, q.q75, q.q95, q.fraction_below_floor).unwrap();
    }
    s
}

/// One console line per report.
pub fn report_line(r: &TestReport) -> String {
    format!(
        "{:<4} {:<40} stat={:.4e} threshold={:.4e} n={}",
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.statistic,
        r.threshold,
        r.n_samples
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(depth: u32) -> EmpiricalMeasure {
        let density = (0..1usize << depth).map(|k| 0.5 + (k % 3) as f64 * 0.5).collect();
        EmpiricalMeasure { depth, density }
    }

    #[test]
    fn csv_has_one_row_per_cell_and_sums_to_total() {
        let m = measure(5);
        let csv = measure_csv(&m);
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 32);
        let sum: f64 = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((sum - m.total_mass()).abs() < 1e-12);
        assert!(rows[0].starts_with("1,0,"));
    }

    #[test]
    fn svg_caps_bar_count() {
        let svg = measure_svg(&measure(12));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        let path = svg.lines().find(|l| l.starts_with("<path")).unwrap();
        assert_eq!(path.matches('L').count(), 2 * MAX_BARS - 1);
    }

    #[test]
    fn csv_quotes_names_with_commas() {
        let r = TestReport::new("a,b", 1.0, 2.0, 3, 0.5);
        assert!(reports_csv(&[r]).contains("\"a,b\",1,2,3,0.5,true"));
    }
}
