//! EF regression metrics and scatter export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub file_name: String,
    /// Reference EF in percent.
    pub truth: f64,
    /// Raw model output in percent, never clamped.
    pub prediction: f64,
}

impl EvalPair {
    pub fn new(file_name: impl Into<String>, truth: f64, prediction: f64) -> Self {
        Self {
            file_name: file_name.into(),
            truth,
            prediction,
        }
    }
}

/// `mae`/`rmse` in EF points, `mape`/`rmspe` in percent of the reference,
/// all with population denominators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub rmspe: f64,
    pub mape: f64,
    pub r2: f64,
}

pub fn compute_report(pairs: &[EvalPair]) -> Result<EvalReport> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 pairs, got {n}"
        )));
    }
    for p in pairs {
        if !p.truth.is_finite() || !p.prediction.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite value for `{}`",
                p.file_name
            )));
        }
        if p.truth <= 0.0 {
            return Err(Error::Validation(format!(
                "reference EF must be positive, `{}` has {}",
                p.file_name, p.truth
            )));
        }
    }
    let nf = n as f64;
    let mean_truth = pairs.iter().map(|p| p.truth).sum::<f64>() / nf;
    let (mut abs, mut sq, mut rel_abs, mut rel_sq, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        let e = p.truth - p.prediction;
        abs += e.abs();
        sq += e * e;
        rel_abs += (e / p.truth).abs();
        rel_sq += (e / p.truth) * (e / p.truth);
        total += (p.truth - mean_truth) * (p.truth - mean_truth);
    }
    if total == 0.0 {
        return Err(Error::InsufficientData(
            "reference EF has zero variance; r2 is undefined".into(),
        ));
    }
    Ok(EvalReport {
        n,
        rmse: (sq / nf).sqrt(),
        mae: abs / nf,
        rmspe: 100.0 * (rel_sq / nf).sqrt(),
        mape: 100.0 * rel_abs / nf,
        r2: 1.0 - sq / total,
    })
}

impl EvalReport {
    fn rows(&self) -> [(&'static str, f64, &'static str); 5] {
        [
            ("rmse", self.rmse, ""),
            ("mae", self.mae, ""),
            ("rmspe", self.rmspe, "%"),
            ("mape", self.mape, "%"),
            ("r2", self.r2, ""),
        ]
    }

    /// Aligned human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<6} {:>10}\n", "n", self.n);
        for (k, v, unit) in self.rows() {
            let _ = writeln!(s, "{k:<6} {:>10.4}{unit}", v);
        }
        s
    }

    /// One `key=value` line per metric.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("n={}\n", self.n);
        for (k, v, _) in self.rows() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

pub const SCATTER_HEADER: [&str; 3] = ["FileName", "Truth", "Prediction"];

pub fn write_scatter_csv(pairs: &[EvalPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SCATTER_HEADER)?;
    for p in pairs {
        w.write_record([
            p.file_name.clone(),
            p.truth.to_string(),
            p.prediction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scatter_csv(path: impl AsRef<Path>) -> Result<Vec<EvalPair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    if r.headers()?.iter().ne(SCATTER_HEADER) {
        return Err(Error::Format {
            field: "header",
            reason: format!("expected {}", SCATTER_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize, field: &'static str| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Format {
                field,
                reason: format!("`{}` is not a number", &rec[i]),
            })
        };
        out.push(EvalPair::new(
            &rec[0],
            num(1, "Truth")?,
            num(2, "Prediction")?,
        ));
    }
    Ok(out)
}

/// Static scatter plot: one circle per pair and a dashed `y = x` line.
pub fn scatter_svg(pairs: &[EvalPair]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let values = pairs.iter().flat_map(|p| [p.truth, p.prediction]);
    let (lo, hi) = values.fold((0.0f64, 100.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = SIZE - 2.0 * PAD;
    let x = |v: f64| PAD + (v - lo) / (hi - lo) * span;
    let y = |v: f64| SIZE - PAD - (v - lo) / (hi - lo) * span;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
        x(lo),
        y(lo),
        x(hi),
        y(hi)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">Reference EF (%)</text>",
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">Predicted EF (%)</text>",
        SIZE / 2.0,
        SIZE / 2.0
    );
    for p in pairs {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>",
            x(p.truth),
            y(p.prediction)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the scatter CSV and, when `svg_path` is given, the plot.
pub fn export_scatter(
    pairs: &[EvalPair],
    csv_path: impl AsRef<Path>,
    svg_path: Option<&Path>,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to export".into()));
    }
    write_scatter_csv(pairs, csv_path)?;
    if let Some(p) = svg_path {
        std::fs::write(p, scatter_svg(pairs)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
