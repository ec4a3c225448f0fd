//! Trace CSV output and SVG plots.

use plotters::prelude::*;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simulator::TraceRow;

pub const CSV_COLUMNS: [&str; 17] = [
    "t", "q1", "q2", "qd1", "qd2", "e1", "e2", "r1", "r2", "tau1", "tau2", "E_hat", "E_tilde", "err_M", "err_C",
    "err_F", "f_tilde_norm",
];

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn row_values(r: &TraceRow) -> [f64; 17] {
    [
        r.t,
        r.q[0],
        r.q[1],
        r.q_d[0],
        r.q_d[1],
        r.e[0],
        r.e[1],
        r.r[0],
        r.r[1],
        r.tau[0],
        r.tau[1],
        r.e_hat,
        r.e_tilde,
        r.err_m,
        r.err_c,
        r.err_f,
        r.f_tilde_norm,
    ]
}

/// One row per sample, 17 significant digits, fixed column order.
pub fn write_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(row_values(r).iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(rows, std::fs::File::create(path)?)
}

/// Read a trace written by [`write_csv`]. `q̇` is not stored and comes back as zero.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("unexpected trace columns: {:?}", headers)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(TraceRow {
            t: v[0],
            q: [v[1], v[2]],
            q_dot: [0.0, 0.0],
            q_d: [v[3], v[4]],
            e: [v[5], v[6]],
            r: [v[7], v[8]],
            tau: [v[9], v[10]],
            e_hat: v[11],
            e_tilde: v[12],
            err_m: v[13],
            err_c: v[14],
            err_f: v[15],
            f_tilde_norm: v[16],
        });
    }
    Ok(rows)
}

pub fn load_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// A named trace to draw.
pub struct Series<'a> {
    pub label: &'a str,
    pub rows: &'a [TraceRow],
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("plot: {e}"))
}

const COLORS: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), BLACK];

fn line_panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    series: &[Series<'_>],
    value: fn(&TraceRow) -> f64,
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    let t_max = series
        .iter()
        .filter_map(|s| s.rows.last().map(|r| r.t))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y_max = series
        .iter()
        .flat_map(|s| s.rows.iter().map(value))
        .filter(|v| v.is_finite())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-12)
        * 1.05;
    let y_min = if series.iter().flat_map(|s| s.rows.iter().map(value)).any(|v| v < 0.0) {
        -y_max
    } else {
        0.0
    };
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_max, y_min..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .light_line_style(WHITE)
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        // keep the SVG small: at most ~4000 points per line
        let stride = (s.rows.len() / 4000).max(1);
        chart
            .draw_series(LineSeries::new(
                s.rows.iter().step_by(stride).map(|r| (r.t, value(r))),
                color.stroke_width(1),
            ))
            .map_err(plot_err)?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

/// Write `approximation_errors.svg` (M, C, F panels), `f_tilde.svg` and
/// `tracking.svg` into `dir`. Returns the written paths.
pub fn export_svg_plots(series: &[Series<'_>], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("approximation_errors.svg");
    {
        let root = SVGBackend::new(&path, (900, 900)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((3, 1));
        line_panel(&panels[0], "‖M − Φ̂_M‖_F", series, |r| r.err_m)?;
        line_panel(&panels[1], "‖C − Φ̂_C‖_F", series, |r| r.err_c)?;
        line_panel(&panels[2], "‖F − Φ̂_F‖", series, |r| r.err_f)?;
        root.present().map_err(plot_err)?;
    }
    written.push(path);

    let path = dir.join("f_tilde.svg");
    {
        let root = SVGBackend::new(&path, (900, 400)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        line_panel(&root, "‖f̃‖", series, |r| r.f_tilde_norm)?;
        root.present().map_err(plot_err)?;
    }
    written.push(path);

    let path = dir.join("tracking.svg");
    {
        let root = SVGBackend::new(&path, (900, 600)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((2, 1));
        line_panel(&panels[0], "e₁ [rad]", series, |r| r.e[0])?;
        line_panel(&panels[1], "e₂ [rad]", series, |r| r.e[1])?;
        root.present().map_err(plot_err)?;
    }
    written.push(path);
    Ok(written)
}
