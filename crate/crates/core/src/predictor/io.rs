//! Text checkpoint and CSV dataset formats.
//!
//! Checkpoint layout, one item per line:
//!
//! ```text
//! hrc-predictor 1
//! horizon <H>
//! kernel <k>
//! losses <trajectory> <classification>
//! trend <rows> <cols>
//! <row 0 values>
//! ...
//! seasonal <rows> <cols>
//! ...
//! classifier <rows> <cols>
//! ...
//! bias <n>
//! <values>
//! ```
//!
//! Dataset rows hold the `WINDOW * FRAME_DIM` window values, then the
//! `horizon * FRAME_DIM` future values, then the action label. No header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Losses, PoseWindow, PredictorModel, Sample, FRAME_DIM, WINDOW};
use crate::error::{Error, Result};
use crate::planner::ActionLabel;

const MAGIC: &str = "hrc-predictor";
const VERSION: u32 = 1;

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn write_matrix(w: &mut impl Write, name: &str, m: &Array2<f64>) -> Result<()> {
    writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        writeln!(w, "{}", join(row.iter().copied()))?;
    }
    Ok(())
}

pub fn write_checkpoint(model: &PredictorModel, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "horizon {}", model.horizon)?;
    writeln!(w, "kernel {}", model.ma_kernel)?;
    writeln!(w, "losses {} {}", model.losses.trajectory, model.losses.classification)?;
    write_matrix(w, "trend", &model.trend_weights)?;
    write_matrix(w, "seasonal", &model.seasonal_weights)?;
    write_matrix(w, "classifier", &model.classifier_weights)?;
    writeln!(w, "bias {}", model.classifier_bias.len())?;
    writeln!(w, "{}", join(model.classifier_bias.iter().copied()))?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of checkpoint")),
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("checkpoint line {}: {msg}", self.line))
    }

    /// A line `<key> <values...>`, returning the values.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(&format!("expected `{key}`")));
        }
        Ok(parts.map(str::to_owned).collect())
    }

    fn numbers<T: std::str::FromStr>(&self, parts: &[String], n: usize) -> Result<Vec<T>> {
        if parts.len() != n {
            return Err(self.err(&format!("expected {n} values, found {}", parts.len())));
        }
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| self.err(&format!("bad number `{p}`"))))
            .collect()
    }

    fn keyed_numbers<T: std::str::FromStr>(&mut self, key: &str, n: usize) -> Result<Vec<T>> {
        let parts = self.keyed(key)?;
        self.numbers(&parts, n)
    }

    fn matrix(&mut self, key: &str) -> Result<Array2<f64>> {
        let head = self.keyed(key)?;
        let dims: Vec<usize> = self.numbers(&head, 2)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for _ in 0..dims[0] {
            let l = self.next()?;
            let row: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
            data.extend(self.numbers::<f64>(&row, dims[1])?);
        }
        Ok(Array2::from_shape_vec((dims[0], dims[1]), data).expect("row lengths checked"))
    }
}

pub fn read_checkpoint(r: impl BufRead) -> Result<PredictorModel> {
    let mut lines = Lines { inner: r.lines(), line: 0 };
    let head = lines.keyed(MAGIC)?;
    let version: Vec<u32> = lines.numbers(&head, 1)?;
    if version[0] != VERSION {
        return Err(lines.err(&format!("unsupported version {}", version[0])));
    }
    let horizon = lines.keyed_numbers::<usize>("horizon", 1)?[0];
    let ma_kernel = lines.keyed_numbers::<usize>("kernel", 1)?[0];
    let l = lines.keyed_numbers::<f64>("losses", 2)?;
    let trend_weights = lines.matrix("trend")?;
    let seasonal_weights = lines.matrix("seasonal")?;
    let classifier_weights = lines.matrix("classifier")?;
    let n = lines.keyed_numbers::<usize>("bias", 1)?[0];
    let row: Vec<String> = lines.next()?.split_whitespace().map(str::to_owned).collect();
    let classifier_bias = Array1::from(lines.numbers::<f64>(&row, n)?);
    let model = PredictorModel {
        trend_weights,
        seasonal_weights,
        classifier_weights,
        classifier_bias,
        horizon,
        ma_kernel,
        losses: Losses {
            trajectory: l[0],
            classification: l[1],
        },
    };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(model: &PredictorModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

pub fn write_dataset(samples: &[Sample], w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for s in samples {
        let mut rec: Vec<String> = s.window.flat().iter().map(f64::to_string).collect();
        rec.extend(s.future.iter().map(f64::to_string));
        rec.push(s.label.as_str().to_owned());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(r: impl std::io::Read) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Parse(format!("dataset row {}: {m}", i + 1));
        let n = rec.len();
        if n < WINDOW * FRAME_DIM + FRAME_DIM + 1 || (n - 1) % FRAME_DIM != 0 {
            return Err(bad(format!("unexpected field count {n}")));
        }
        let values = rec
            .iter()
            .take(n - 1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let label = ActionLabel::parse(rec[n - 1].trim()).ok_or_else(|| bad(format!("unknown label `{}`", &rec[n - 1])))?;
        let split = WINDOW * FRAME_DIM;
        let horizon = (n - 1 - split) / FRAME_DIM;
        let window = PoseWindow::new(Array2::from_shape_vec((WINDOW, FRAME_DIM), values[..split].to_vec()).expect("sized"))?;
        let future = Array2::from_shape_vec((horizon, FRAME_DIM), values[split..].to_vec()).expect("sized");
        if let Some(h) = out.first().map(|s: &Sample| s.future.nrows()) {
            if h != horizon {
                return Err(bad(format!("horizon {horizon} differs from earlier rows ({h})")));
            }
        }
        out.push(Sample { window, future, label });
    }
    Ok(out)
}

pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    write_dataset(samples, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_dataset(BufReader::new(File::open(path)?))
}
