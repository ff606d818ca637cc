//! Benchmark artifacts: CSV rows, JSON summary and SVG strip plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::bench::{reverb_label, BenchmarkReport};
use crate::error::Result;
use crate::spectra::{Condition, Method};

pub const CSV_HEADER: &str = "scenario,pair,doa1_deg,doa2_deg,snr_db,reverb,emic,emic_x,emic_y,emic_z,method,condition,acc,frames,no_estimate_frames,correct,ill_conditioned_bins,degenerate_rtf_prototypes,degenerate_estimates";

pub fn csv_string(report: &BenchmarkReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &report.results {
        let k = &r.key;
        let d = &r.diagnostics.spectra;
        for a in &r.accuracies {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{},{},{},{},{}",
                k.id,
                k.pair_index,
                k.doas_deg[0],
                k.doas_deg[1],
                k.snr_db,
                reverb_label(&k.reverb),
                k.emic_index,
                k.emic_position[0],
                k.emic_position[1],
                k.emic_position[2],
                a.method,
                a.condition,
                a.result.acc,
                a.result.frames,
                a.result.no_estimate_frames,
                a.result.correct,
                d.ill_conditioned_bins,
                d.degenerate_rtf_prototypes,
                d.degenerate_estimates,
            );
        }
    }
    s
}

const COLORS: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];

/// One panel per method; per condition, one dot per scenario at its eMic
/// column plus a bar for each eMic mean.
pub fn strip_plot_svg(report: &BenchmarkReport, method: Method) -> String {
    let n_emic = report.emic_positions.len().max(1);
    let (w, h) = (120.0 + 60.0 * n_emic as f64, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let y_of = |acc: f64| top + plot_h * (1.0 - acc);
    let col_w = plot_w / n_emic as f64;
    let x_of = |e: usize, c: usize| left + col_w * (e as f64 + 0.2 + 0.3 * c as f64);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, method_title(method));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, left - 6.0, y + 4.0, v);
    }
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">ACC</text>"#, top + plot_h / 2.0, top + plot_h / 2.0);
    for e in 0..n_emic {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">P{}</text>"#, left + col_w * (e as f64 + 0.5), h - bottom + 16.0, e + 1);
    }
    for (c, cond) in Condition::ALL.iter().enumerate() {
        for e in 0..n_emic {
            let accs: Vec<f64> = report
                .results
                .iter()
                .filter(|r| r.key.emic_index == e)
                .filter_map(|r| r.acc(method, *cond))
                .collect();
            let x = x_of(e, c);
            for (i, a) in accs.iter().enumerate() {
                let jitter = ((i * 7919) % 11) as f64 / 10.0 - 0.5;
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="{}" fill-opacity="0.45"/>"#, x + jitter * 6.0, y_of(*a), COLORS[c]);
            }
            if !accs.is_empty() {
                let m = accs.iter().sum::<f64>() / accs.len() as f64;
                let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2.5"/>"#, x - 7.0, y_of(m), x + 7.0, y_of(m), COLORS[c]);
            }
        }
        let lx = left + 10.0 + 110.0 * c as f64;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/>"#, h - 22.0, COLORS[c]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 14.0, h - 13.0, cond.label());
    }
    s.push_str("</svg>\n");
    s
}

fn method_title(method: Method) -> &'static str {
    match method {
        Method::Music => "MUSIC",
        Method::RtfMatch => "RTF matching",
    }
}

/// Writes `results.csv`, `summary.json` and one SVG per method into `dir`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv = dir.join("results.csv");
    fs::write(&csv, csv_string(report))?;
    written.push(csv);
    let json = dir.join("summary.json");
    fs::write(&json, serde_json::to_string_pretty(&report.summary)?)?;
    written.push(json);
    for method in Method::ALL {
        let p = dir.join(format!("accuracy_{method}.svg"));
        fs::write(&p, strip_plot_svg(report, method))?;
        written.push(p);
    }
    Ok(written)
}
