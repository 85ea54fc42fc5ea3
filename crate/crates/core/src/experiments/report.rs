use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ConvergenceReport, Mode};
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_errors_csv(report: &ConvergenceReport) -> String {
    let mut s = String::from("mode,N,replica,t,error,component_besov,component_binf,seed\n");
    for r in &report.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.mode,
            r.n,
            r.replica.map(|x| x.to_string()).unwrap_or_default(),
            r.t,
            r.error,
            opt(r.component_besov),
            opt(r.component_binf),
            r.seed
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, lx: f64) -> f64 {
        PAD + (lx - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, ly: f64) -> f64 {
        H - PAD - (ly - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

/// Log-log plot: per-N points, the fitted line (`class="fit"`) and a guide
/// with the theoretical slope through the first point.
pub fn render_svg(report: &ConvergenceReport) -> String {
    let scaling = report.mode == Mode::MollifierScaling;
    let lambdas = &report.diagnostics.lambdas;
    let xs: Vec<f64> = if scaling && lambdas.len() == report.per_n.len() {
        lambdas.iter().map(|l| l.ln()).collect()
    } else {
        report.per_n.iter().map(|p| (p.n as f64).ln()).collect()
    };
    let mut ys: Vec<f64> = report.per_n.iter().map(|p| p.mean.ln()).collect();
    for s in &report.series {
        ys.extend(s.per_n.iter().map(|p| p.mean.ln()));
    }
    let (mut x0, mut x1) = min_max(&xs);
    let (mut y0, mut y1) = min_max(&ys);
    let fit_y = |x: f64| report.fit.intercept + report.fit.slope * x;
    y0 = y0.min(fit_y(x0)).min(fit_y(x1));
    y1 = y1.max(fit_y(x0)).max(fit_y(x1));
    let pad_x = 0.05 * (x1 - x0).max(1e-9);
    let pad_y = 0.08 * (y1 - y0).max(1e-9);
    x0 -= pad_x;
    x1 += pad_x;
    y0 -= pad_y;
    y1 += pad_y;
    let ax = Axes { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{} mode: slope {:.3} [{:.3}, {:.3}]</text>"##,
        W / 2.0,
        report.mode,
        report.fit.slope,
        report.fit.interval[0],
        report.fit.interval[1]
    );
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444444"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let xlabel = if scaling { "log lambda" } else { "log N" };
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{xlabel}</text>"##,
        W / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">log error</text>"##,
        H / 2.0,
        H / 2.0
    );
    for (x, p) in xs.iter().zip(&report.per_n) {
        let _ = writeln!(
            s,
            r##"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="#1f5fa8"><title>N = {}, error = {:e} ± {:e}</title></circle>"##,
            ax.px(*x),
            ax.py(p.mean.ln()),
            p.n,
            p.mean,
            p.se
        );
    }
    let palette = ["#b0522a", "#3d8b3d", "#7a4ca0", "#a08a22"];
    for (i, series) in report.series.iter().enumerate() {
        let c = palette[i % palette.len()];
        for p in &series.per_n {
            let _ = writeln!(
                s,
                r##"<rect class="series" x="{:.2}" y="{:.2}" width="6" height="6" fill="{c}"><title>{}: N = {}, error = {:e}</title></rect>"##,
                ax.px((p.n as f64).ln()) - 3.0,
                ax.py(p.mean.ln()) - 3.0,
                series.label,
                p.n,
                p.mean
            );
        }
    }
    let (fx0, fx1) = min_max(&xs);
    let _ = writeln!(
        s,
        r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f5fa8" stroke-width="2"/>"##,
        ax.px(fx0),
        ax.py(fit_y(fx0)),
        ax.px(fx1),
        ax.py(fit_y(fx1))
    );
    if let (Some(th), Some(first)) = (report.theory_exponent, report.per_n.first()) {
        let slope = if scaling { th } else { -th };
        let y_start = first.mean.ln();
        let _ = writeln!(
            s,
            r##"<line class="theory" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="6 4"/>"##,
            ax.px(fx0),
            ax.py(y_start),
            ax.px(fx1),
            ax.py(y_start + slope * (fx1 - fx0))
        );
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `errors.csv`, `report.json` and `rate.svg` into `out_dir`.
pub fn emit_report(report: &ConvergenceReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = [
        ("errors.csv", write_errors_csv(report)),
        ("report.json", serde_json::to_string_pretty(report)? + "\n"),
        ("rate.svg", render_svg(report)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        write(p.clone(), &body)?;
        out.push(p);
    }
    Ok(out)
}
