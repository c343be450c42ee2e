use std::io::Write;
use std::path::{Path, PathBuf};

use super::svg::{boxplot, Axes, Canvas, GRAY, GREEN, RED};
use super::{aggregate, plant_features, StudyResult, DESIGN_NAMES};
use crate::error::{Error, Result};
use crate::signals::multisine_sequence;
use crate::spacefill::build_anchor_grid;

/// Scale of the RMSE columns in `table1.csv`.
pub const TABLE_SCALE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub study: PathBuf,
    pub table: PathBuf,
    pub designs: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub fn read_study(path: &Path) -> Result<StudyResult> {
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes `study.json`, `table1.csv`, `designs.csv` and the SVG plots.
/// Aggregates are recomputed from the records.
pub fn write_report(result: &StudyResult, out_dir: &Path) -> Result<ReportFiles> {
    if result.realizations.is_empty() && result.failures.is_empty() {
        return Err(Error::Precondition("study has no realizations".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut result = result.clone();
    result.aggregate = aggregate(&result.realizations).ok();

    let study = out_dir.join("study.json");
    let mut json = serde_json::to_string_pretty(&result)?;
    json.push('\n');
    write_text(&study, &json)?;

    let table = out_dir.join("table1.csv");
    write_table(&result, &table)?;
    let designs = out_dir.join("designs.csv");
    write_designs(&result, &designs)?;

    let mut plots = Vec::new();
    if !result.realizations.is_empty() {
        let p = out_dir.join("rmse_boxplots.svg");
        write_text(&p, &rmse_plot(&result))?;
        plots.push(p);
        let p = out_dir.join("power_boxplot.svg");
        write_text(&p, &power_plot(&result))?;
        plots.push(p);
        let p = out_dir.join("signals.svg");
        write_text(&p, &signal_plot(&result)?)?;
        plots.push(p);
        let p = out_dir.join("features.svg");
        write_text(&p, &feature_plot(&result)?)?;
        plots.push(p);
    }
    Ok(ReportFiles { study, table, designs, plots })
}

fn write_table(result: &StudyResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "test",
        "initial_median_rmse_1e-5_m",
        "classical_median_rmse_1e-5_m",
        "least_costly_median_rmse_1e-5_m",
    ])?;
    if let Some(agg) = &result.aggregate {
        let cols = agg.rmse_median.as_array();
        for (j, label) in result.test_labels().iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(cols.iter().map(|c| format!("{:e}", c[j] / TABLE_SCALE)));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["average".to_string()];
        rec.extend(cols.iter().map(|c| format!("{:e}", c.iter().sum::<f64>() / c.len() as f64 / TABLE_SCALE)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_designs(result: &StudyResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["realization".to_string(), "seed".into(), "gamma".into()];
    for d in DESIGN_NAMES {
        for m in ["power", "v_cost", "covering_radius"] {
            header.push(format!("{d}_{m}"));
        }
    }
    w.write_record(&header)?;
    for r in &result.realizations {
        let mut rec = vec![r.index.to_string(), r.seed.to_string(), format!("{:e}", r.gamma)];
        for d in r.designs.as_array() {
            rec.extend([format!("{:e}", d.power), format!("{:e}", d.v_cost), format!("{:e}", d.covering_radius)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn minmax(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn legend(c: &mut Canvas, x: f64, y: f64, entries: &[(&str, &str)]) {
    for (i, (color, label)) in entries.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        c.rect(x, yy - 8.0, 10.0, 10.0, color, color, 0.8);
        c.text(x + 14.0, yy + 1.0, "start", label);
    }
}

fn rmse_plot(result: &StudyResult) -> String {
    let labels = result.test_labels();
    let n = labels.len().max(1);
    let (pw, ph) = (220.0, 260.0);
    let mut c = Canvas::new(70.0 + n as f64 * (pw + 60.0), ph + 110.0);
    let colors = [GRAY, GREEN, RED];
    for (j, label) in labels.iter().enumerate() {
        let vals: Vec<Vec<f64>> =
            (0..3).map(|d| result.realizations.iter().map(|r| r.rmse.as_array()[d][j]).collect()).collect();
        let (lo, hi) = minmax(vals.iter().flatten().copied());
        let ax = Axes::new(70.0 + j as f64 * (pw + 60.0), 40.0, pw, ph, (0.0, 3.0), (lo * 0.8, hi * 1.25), true);
        ax.frame(&mut c, label, "initial / classical / least costly", "RMSE (m)");
        for d in 0..3 {
            boxplot(&mut c, &ax, d as f64 + 0.5, 0.3, &vals[d], colors[d]);
        }
    }
    legend(&mut c, 75.0, ph + 90.0, &[(GRAY, "initial"), (GREEN, "classical"), (RED, "least costly")]);
    c.finish()
}

fn power_plot(result: &StudyResult) -> String {
    let vals: Vec<Vec<f64>> =
        (0..3).map(|d| result.realizations.iter().map(|r| r.designs.as_array()[d].power).collect()).collect();
    let (lo, hi) = minmax(vals.iter().flatten().copied());
    let mut c = Canvas::new(420.0, 360.0);
    let ax = Axes::new(80.0, 40.0, 300.0, 260.0, (0.0, 3.0), (lo * 0.8, hi * 1.25), true);
    ax.frame(&mut c, "input power per design", "initial / classical / least costly", "power (N²)");
    for (d, color) in [GRAY, GREEN, RED].iter().enumerate() {
        boxplot(&mut c, &ax, d as f64 + 0.5, 0.3, &vals[d], color);
    }
    c.finish()
}

fn signal_plot(result: &StudyResult) -> Result<String> {
    let r = &result.realizations[0];
    let cfg = &result.config.signal;
    let u_cl = multisine_sequence(&r.designs.classical.theta, cfg, cfg.n)?;
    let u_lc = multisine_sequence(&r.designs.least_costly.theta, cfg, cfg.n)?;
    let mut c = Canvas::new(760.0, 620.0);
    let t_end = cfg.n as f64 / cfg.fs;
    let (lo, hi) = minmax(u_cl.iter().chain(&u_lc).copied());
    let ax = Axes::new(70.0, 40.0, 640.0, 220.0, (0.0, t_end), (lo, hi), false);
    ax.frame(&mut c, &format!("realization {}: one period of the designed inputs", r.index), "time (s)", "u (N)");
    for (u, color) in [(&u_cl, GREEN), (&u_lc, RED)] {
        let pts: Vec<(f64, f64)> = u.iter().enumerate().map(|(k, v)| (ax.px(k as f64 / cfg.fs), ax.py(*v))).collect();
        c.polyline(&pts, color, 1.0);
    }
    let freqs: Vec<f64> = cfg.lines().iter().map(|&l| l as f64 * cfg.f0()).collect();
    let (_, amax) =
        minmax(r.designs.classical.theta.amplitudes.iter().chain(&r.designs.least_costly.theta.amplitudes).copied());
    let fmax = freqs.last().copied().unwrap_or(1.0) * 1.05;
    let ax = Axes::new(70.0, 340.0, 640.0, 200.0, (0.0, fmax), (0.0, amax.max(1e-9) * 1.1), false);
    ax.frame(&mut c, "line amplitudes", "frequency (Hz)", "A (N)");
    let off = 0.15 * cfg.f0();
    for (theta, color, sign) in [(&r.designs.classical.theta, GREEN, -1.0), (&r.designs.least_costly.theta, RED, 1.0)] {
        for (f, a) in freqs.iter().zip(&theta.amplitudes) {
            let x = ax.px(f + sign * off);
            c.line((x, ax.py(0.0)), (x, ax.py(*a)), color, 2.0);
        }
    }
    legend(&mut c, 80.0, 590.0, &[(GREEN, "classical"), (RED, "least costly")]);
    Ok(c.finish())
}

fn feature_plot(result: &StudyResult) -> Result<String> {
    let r = &result.realizations[0];
    let cfg = &result.config;
    let f_cl = plant_features(cfg, &r.designs.classical.theta)?;
    let f_lc = plant_features(cfg, &r.designs.least_costly.theta)?;
    let region = &cfg.region;
    let (bx, by) = (region.bounds[0], region.bounds[1]);
    let (xlo, xhi) = minmax(f_cl.rows().chain(f_lc.rows()).map(|p| p[0]).chain(bx));
    let (ylo, yhi) = minmax(f_cl.rows().chain(f_lc.rows()).map(|p| p[1]).chain(by));
    let mut c = Canvas::new(620.0, 560.0);
    let ax = Axes::new(80.0, 40.0, 500.0, 440.0, (xlo * 1.05, xhi * 1.05), (ylo * 1.05, yhi * 1.05), false);
    ax.frame(&mut c, &format!("realization {}: plant datasets in feature space", r.index), "y (m)", "dy (scaled)");
    c.rect(ax.px(bx[0]), ax.py(by[1]), ax.px(bx[1]) - ax.px(bx[0]), ax.py(by[0]) - ax.py(by[1]), GRAY, GRAY, 0.15);
    for (pts, color) in [(&f_cl, GREEN), (&f_lc, RED)] {
        for p in pts.rows() {
            c.circle(ax.px(p[0]), ax.py(p[1]), 1.6, color, 0.6);
        }
    }
    for a in build_anchor_grid(region, &cfg.anchor_counts)?.points.rows() {
        let (x, y) = (ax.px(a[0]), ax.py(a[1]));
        c.line((x - 4.0, y - 4.0), (x + 4.0, y + 4.0), "#000", 1.2);
        c.line((x - 4.0, y + 4.0), (x + 4.0, y - 4.0), "#000", 1.2);
    }
    legend(&mut c, 90.0, 525.0, &[(GREEN, "classical"), (RED, "least costly"), (GRAY, "region of interest")]);
    Ok(c.finish())
}
