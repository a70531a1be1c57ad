use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::sim::Trajectory;

/// CSV header: `t`, the model's state columns, `P_c`, `sat_active`.
pub fn csv_header(traj: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(traj.columns.iter().cloned());
    h.push("P_c".into());
    h.push("sat_active".into());
    h
}

/// Render a trajectory as CSV. Numbers use the shortest representation that
/// reads back exactly, with `.` as decimal point.
pub fn to_csv(traj: &Trajectory) -> String {
    let mut o = csv_header(traj).join(",");
    o.push('\n');
    for s in &traj.samples {
        let _ = write!(o, "{:?}", s.t);
        for x in &s.state {
            let _ = write!(o, ",{x:?}");
        }
        let _ = writeln!(o, ",{:?},{}", s.p_c, u8::from(s.sat_active));
    }
    o
}

pub fn write_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, to_csv(traj))?;
    Ok(())
}

const WIDTH: f64 = 900.0;
const PANEL: f64 = 170.0;
const MARGIN_L: f64 = 110.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 30.0;
/// Buckets per panel; each keeps its min and max so spikes survive.
const BUCKETS: usize = 1500;

fn label(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) {
        format!("{x:.4e}")
    } else {
        format!("{x:.5}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series_points(ts: &[f64], xs: &[f64]) -> Vec<(f64, f64)> {
    if ts.len() <= 2 * BUCKETS {
        return ts.iter().copied().zip(xs.iter().copied()).collect();
    }
    let (t0, t1) = (ts[0], ts[ts.len() - 1]);
    let mut out = Vec::with_capacity(2 * BUCKETS + 2);
    let mut i = 0;
    for b in 0..BUCKETS {
        let end_t = t0 + (t1 - t0) * (b + 1) as f64 / BUCKETS as f64;
        let start = i;
        while i < ts.len() && (ts[i] <= end_t || b + 1 == BUCKETS) {
            i += 1;
        }
        if start == i {
            continue;
        }
        let chunk = start..i;
        let lo = chunk.clone().min_by(|&a, &b| xs[a].total_cmp(&xs[b])).unwrap();
        let hi = chunk.clone().max_by(|&a, &b| xs[a].total_cmp(&xs[b])).unwrap();
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        out.push((ts[a], xs[a]));
        if b != a {
            out.push((ts[b], xs[b]));
        }
    }
    out
}

/// Stacked line plots, one panel per state column plus P_c.
pub fn to_svg(traj: &Trajectory, title: &str) -> String {
    let ts = traj.times();
    let mut names: Vec<String> = traj.columns.clone();
    names.push("P_c".into());
    let height = MARGIN_T + names.len() as f64 * (PANEL + GAP) + 20.0;
    let mut o = String::new();
    let _ = writeln!(
        o,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(o, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(o, "<text x=\"{}\" y=\"22\" font-size=\"14\">{}</text>", MARGIN_L, escape(title));
    if ts.is_empty() {
        o.push_str("</svg>\n");
        return o;
    }
    let (t0, t1) = (ts[0], ts[ts.len() - 1].max(ts[0] + f64::MIN_POSITIVE));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    for (k, name) in names.iter().enumerate() {
        let xs: Vec<f64> = match traj.series(name) {
            Some(v) => v,
            None => traj.samples.iter().map(|s| s.p_c).collect(),
        };
        let top = MARGIN_T + k as f64 * (PANEL + GAP);
        let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !(hi > lo) {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 1e-6 };
            lo -= pad;
            hi += pad;
        }
        let _ = writeln!(
            o,
            "<rect x=\"{MARGIN_L}\" y=\"{top}\" width=\"{pw}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#888\"/>"
        );
        let _ = writeln!(o, "<text x=\"8\" y=\"{}\">{}</text>", top + PANEL / 2.0, escape(name));
        let _ = writeln!(o, "<text x=\"8\" y=\"{}\">{}</text>", top + 10.0, label(hi));
        let _ = writeln!(o, "<text x=\"8\" y=\"{}\">{}</text>", top + PANEL, label(lo));
        let pts: String = series_points(&ts, &xs)
            .iter()
            .map(|&(t, x)| {
                let px = MARGIN_L + (t - t0) / (t1 - t0) * pw;
                let py = top + PANEL - (x - lo) / (hi - lo) * PANEL;
                format!("{px:.2},{py:.2} ")
            })
            .collect();
        let _ = writeln!(
            o,
            "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.2\" points=\"{}\"/>",
            pts.trim_end()
        );
    }
    let base = MARGIN_T + names.len() as f64 * (PANEL + GAP) - GAP + 14.0;
    let _ = writeln!(o, "<text x=\"{MARGIN_L}\" y=\"{base}\">t = {} s</text>", label(t0));
    let _ = writeln!(
        o,
        "<text x=\"{}\" y=\"{base}\" text-anchor=\"end\">t = {} s</text>",
        WIDTH - MARGIN_R,
        label(t1)
    );
    o.push_str("</svg>\n");
    o
}

pub fn write_svg(traj: &Trajectory, title: &str, path: &Path) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, to_svg(traj, title))?;
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p)?;
        }
    }
    Ok(())
}
