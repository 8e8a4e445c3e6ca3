use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::compare::Comparison;
use super::record::{Dispersion, Evaluation, RunRecord};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Axis-aligned chart that maps data coordinates onto the canvas.
struct Chart {
    title: String,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        Chart {
            title: title.to_string(),
            x,
            y,
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let p: Vec<String> = pts
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y)))
            .collect();
        let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
            p.join(" ")
        );
    }

    /// Filled band between `lo` and `hi`.
    fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: &str) {
        let mut p: Vec<String> = xs.iter().zip(hi).map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        p.extend(xs.iter().zip(lo).rev().map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))));
        let _ = writeln!(
            self.body,
            "<polygon fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\" points=\"{}\"/>",
            p.join(" ")
        );
    }

    fn boxplot(&mut self, x: f64, half: f64, d: &Dispersion, color: &str) {
        let (l, r) = (self.px(x - half), self.px(x + half));
        let c = self.px(x);
        let (q1, q3, med) = (self.py(d.q1), self.py(d.q3), self.py(d.median));
        let (lo, hi) = (self.py(d.min), self.py(d.max));
        let _ = writeln!(
            self.body,
            "<line x1=\"{c:.2}\" y1=\"{lo:.2}\" x2=\"{c:.2}\" y2=\"{hi:.2}\" stroke=\"{color}\"/>\n\
             <rect x=\"{l:.2}\" y=\"{q3:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"white\" stroke=\"{color}\"/>\n\
             <line x1=\"{l:.2}\" y1=\"{med:.2}\" x2=\"{r:.2}\" y2=\"{med:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            r - l,
            (q1 - q3).max(0.0)
        );
    }

    fn hline(&mut self, y: f64) {
        let py = self.py(y);
        let _ = writeln!(
            self.body,
            "<line x1=\"{MARGIN}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#888\" stroke-dasharray=\"2 2\"/>",
            W - MARGIN
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN + 14.0 * i as f64;
            let _ = writeln!(
                self.body,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
                 <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
                W - MARGIN - 140.0,
                y - 9.0,
                W - MARGIN - 125.0,
                y,
                escape(label)
            );
        }
    }

    fn render(&self, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <text x=\"{:.2}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
            W / 2.0,
            escape(&self.title)
        );
        let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
        let _ = writeln!(
            s,
            "<path d=\"M{x0} {y1} L{x0} {y0} L{x1} {y0}\" fill=\"none\" stroke=\"black\"/>\n\
             <text x=\"{x0}\" y=\"{:.2}\" font-size=\"10\">{:.4}</text>\n\
             <text x=\"{x1}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n\
             <text x=\"4\" y=\"{:.2}\" font-size=\"10\">{:.4}</text>\n\
             <text x=\"4\" y=\"{:.2}\" font-size=\"10\">{:.4}</text>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"14\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">{}</text>",
            y0 + 14.0,
            self.x.0,
            y0 + 14.0,
            self.x.1,
            y0,
            self.y.0,
            y1 + 10.0,
            self.y.1,
            W / 2.0,
            H - 10.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn dispersion_cells(d: &Dispersion) -> Vec<String> {
    [d.min, d.q1, d.median, d.q3, d.max, d.mean, d.std].iter().map(|v| num(*v)).collect()
}

const DISPERSION_HEADER: [&str; 7] = ["min", "q1", "median", "q3", "max", "mean", "std"];

fn prepare(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let probe = out_dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(probe)?;
    Ok(())
}

fn save(out_dir: &Path, stem: &str, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = out_dir.join(format!("{stem}.svg"));
    fs::write(&p, svg)?;
    written.push(p);
    written.push(out_dir.join(format!("{stem}.csv")));
    Ok(())
}

fn action_plot(out_dir: &Path, evals: &[(&str, &[Dispersion])], title: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut header = strs(&["policy", "dim"]);
    header.extend(strs(&DISPERSION_HEADER));
    let mut rows = vec![];
    for (label, disp) in evals {
        for (d, s) in disp.iter().enumerate() {
            let mut r = vec![label.to_string(), d.to_string()];
            r.extend(dispersion_cells(s));
            rows.push(r);
        }
    }
    write_csv(&out_dir.join("action_disp.csv"), &header, &rows)?;
    let n_boxes = evals.iter().map(|e| e.1.len()).sum::<usize>();
    let y = range(evals.iter().flat_map(|e| e.1.iter().flat_map(|d| [d.min, d.max])));
    let mut chart = Chart::new(title, (0.0, n_boxes as f64 + 1.0), y);
    let mut pos = 1.0;
    let mut legend = vec![];
    for (i, (label, disp)) in evals.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        legend.push((*label, color));
        for d in disp.iter() {
            chart.boxplot(pos, 0.3, d, color);
            pos += 1.0;
        }
    }
    chart.legend(&legend);
    save(out_dir, "action_disp", chart.render("policy / action dimension", "action"), written)
}

fn band_plots(out_dir: &Path, evals: &[&Evaluation], t: usize, written: &mut Vec<PathBuf>) -> Result<()> {
    let n_s = evals[0].state_mean.len();
    let xs: Vec<f64> = (1..=t).map(|k| k as f64).collect();
    for dim in 0..n_s {
        let mut header = strs(&["k"]);
        for e in evals {
            header.push(format!("{}_mean", e.label));
            header.push(format!("{}_std", e.label));
        }
        // row k holds the state after the k-th action
        let rows: Vec<Vec<String>> = (1..=t)
            .map(|k| {
                let mut r = vec![k.to_string()];
                for e in evals {
                    r.push(num(e.state_mean[dim][k]));
                    r.push(num(e.state_std[dim][k]));
                }
                r
            })
            .collect();
        let stem = format!("traj_band_dim{dim}");
        write_csv(&out_dir.join(format!("{stem}.csv")), &header, &rows)?;
        let y = range(evals.iter().flat_map(|e| {
            (1..=t).flat_map(move |k| [e.state_mean[dim][k] - e.state_std[dim][k], e.state_mean[dim][k] + e.state_std[dim][k]])
        }));
        let mut chart = Chart::new(&format!("state {dim}: mean ± std"), (1.0, t.max(2) as f64), y);
        let mut legend = vec![];
        for (i, e) in evals.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let m: Vec<f64> = (1..=t).map(|k| e.state_mean[dim][k]).collect();
            let s: Vec<f64> = (1..=t).map(|k| e.state_std[dim][k]).collect();
            let lo: Vec<f64> = m.iter().zip(&s).map(|(a, b)| a - b).collect();
            let hi: Vec<f64> = m.iter().zip(&s).map(|(a, b)| a + b).collect();
            chart.band(&xs, &lo, &hi, color);
            chart.polyline(&xs.iter().copied().zip(m).collect::<Vec<_>>(), color, false);
            legend.push((e.label.as_str(), color));
        }
        chart.legend(&legend);
        save(out_dir, &stem, chart.render("step", &format!("state {dim}")), written)?;
    }
    Ok(())
}

/// Cost box plots per iteration, mean ± std state bands per dimension and
/// action dispersion, each with the CSV it was drawn from.
pub fn emit_plots(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if record.iterations.is_empty() {
        return Err(Error::Empty(format!("record '{}' has no iterations to plot", record.name)));
    }
    prepare(out_dir)?;
    let mut written = vec![];

    let mut header = strs(&["iteration", "phase", "phase_iteration"]);
    header.extend(strs(&DISPERSION_HEADER));
    let rows: Vec<Vec<String>> = record
        .iterations
        .iter()
        .map(|it| {
            let mut r = vec![it.index.to_string(), it.phase.label().to_string(), it.phase_iteration.to_string()];
            r.extend(dispersion_cells(&it.cost));
            r
        })
        .collect();
    write_csv(&out_dir.join("cost_curve.csv"), &header, &rows)?;
    let n = record.iterations.len();
    let y = range(record.iterations.iter().flat_map(|i| [i.cost.min, i.cost.max]));
    let mut chart = Chart::new(&format!("{}: cost per iteration", record.name), (-0.5, n as f64 - 0.5), y);
    for it in &record.iterations {
        let color = match it.phase.label() {
            "baseline" => COLORS[0],
            "em" => COLORS[1],
            _ => COLORS[2],
        };
        chart.boxplot(it.index as f64, 0.3, &it.cost, color);
    }
    let means: Vec<(f64, f64)> = record.iterations.iter().map(|i| (i.index as f64, i.cost.mean)).collect();
    chart.polyline(&means, "#444", true);
    chart.legend(&[("baseline", COLORS[0]), ("em", COLORS[1]), ("refine", COLORS[2])]);
    save(out_dir, "cost_curve", chart.render("iteration", "cumulative cost"), &mut written)?;

    let evals: Vec<&Evaluation> = [&record.baseline_eval, &record.final_eval].into_iter().flatten().collect();
    if !evals.is_empty() {
        band_plots(out_dir, &evals, record.horizon(), &mut written)?;
        let disp: Vec<(&str, &[Dispersion])> = evals.iter().map(|e| (e.label.as_str(), e.actions.as_slice())).collect();
        action_plot(out_dir, &disp, "action dispersion", &mut written)?;
    }
    Ok(written)
}

/// Cost curves of both runs, the per-step spread ratio and both action
/// dispersions.
pub fn emit_comparison_plots(cmp: &Comparison, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if cmp.aligned_iterations == 0 {
        return Err(Error::Empty("comparison has no aligned iterations to plot".into()));
    }
    prepare(out_dir)?;
    let mut written = vec![];

    let header = vec![
        "iteration".to_string(),
        format!("{}_mean", cmp.a),
        format!("{}_std", cmp.a),
        format!("{}_mean", cmp.b),
        format!("{}_std", cmp.b),
    ];
    let rows: Vec<Vec<String>> = (0..cmp.aligned_iterations)
        .map(|i| {
            vec![
                i.to_string(),
                num(cmp.curve_a.mean[i]),
                num(cmp.curve_a.std[i]),
                num(cmp.curve_b.mean[i]),
                num(cmp.curve_b.std[i]),
            ]
        })
        .collect();
    write_csv(&out_dir.join("cost_curve.csv"), &header, &rows)?;
    let n = cmp.aligned_iterations;
    let y = range(cmp.curve_a.mean.iter().chain(&cmp.curve_b.mean).copied());
    let mut chart = Chart::new("mean cost per iteration", (0.0, (n.max(2) - 1) as f64), y);
    for (i, c) in [&cmp.curve_a, &cmp.curve_b].iter().enumerate() {
        let pts: Vec<(f64, f64)> = c.mean.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect();
        chart.polyline(&pts, COLORS[i], false);
    }
    chart.legend(&[(&cmp.a, COLORS[0]), (&cmp.b, COLORS[1])]);
    save(out_dir, "cost_curve", chart.render("iteration", "mean cumulative cost"), &mut written)?;

    let rows: Vec<Vec<String>> = cmp.std_ratio.iter().enumerate().map(|(k, r)| vec![(k + 1).to_string(), num(*r)]).collect();
    write_csv(&out_dir.join("std_ratio.csv"), &strs(&["k", "std_ratio"]), &rows)?;
    let y = range(cmp.std_ratio.iter().copied().chain([1.0]));
    let mut chart = Chart::new(&format!("state spread {} / {}", cmp.a, cmp.b), (1.0, cmp.horizon.max(2) as f64), y);
    chart.hline(1.0);
    let pts: Vec<(f64, f64)> = cmp.std_ratio.iter().enumerate().map(|(k, r)| ((k + 1) as f64, *r)).collect();
    chart.polyline(&pts, COLORS[0], false);
    save(out_dir, "std_ratio", chart.render("step", "std ratio"), &mut written)?;

    action_plot(
        out_dir,
        &[(&cmp.a, cmp.actions_a.as_slice()), (&cmp.b, cmp.actions_b.as_slice())],
        "action dispersion",
        &mut written,
    )?;
    Ok(written)
}
