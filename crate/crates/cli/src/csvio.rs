//! CSV readers and writers. Floats are written with `Display`, which prints
//! the shortest decimal that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dcd_core::dcd::DcdLog;
use dcd_core::eval::LevelGrid;
use dcd_core::numcore::Tensor;
use dcd_core::sampler::ChainState;
use dcd_core::wgan::TrainLog;

use crate::error::CliError;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.into(),
                source,
            },
            kind => CliError::Csv {
                path: path.into(),
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    let mut inner = w.into_inner().map_err(|e| CliError::Io {
        path: path.into(),
        source: e.into_error(),
    })?;
    inner.flush().map_err(CliError::io(path))
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["iteration", "critic_loss", "generator_loss", "wall_seconds"])
        .map_err(&err)?;
    for r in &log.records {
        w.write_record([
            r.iteration.to_string(),
            r.critic_loss.to_string(),
            r.generator_loss.to_string(),
            opt(r.wall_seconds),
        ])
        .map_err(&err)?;
    }
    finish(path, w)
}

pub fn write_dcd_log(path: &Path, log: &DcdLog) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["iteration", "objective", "mean_real", "mean_chain", "acceptance"])
        .map_err(&err)?;
    for r in &log.records {
        w.write_record([
            r.iteration.to_string(),
            r.objective.to_string(),
            r.mean_real.to_string(),
            r.mean_chain.to_string(),
            opt(r.acceptance),
        ])
        .map_err(&err)?;
    }
    finish(path, w)
}

pub fn write_samples(path: &Path, x: &Tensor) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["x0", "x1"]).map_err(&err)?;
    for i in 0..x.rows() {
        w.write_record([x.get(i, 0).to_string(), x.get(i, 1).to_string()])
            .map_err(&err)?;
    }
    finish(path, w)
}

/// One row per chain and recorded step.
pub fn write_trajectory(path: &Path, state: &ChainState) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["chain", "step", "x0", "x1", "d_value", "accepted"])
        .map_err(&err)?;
    let chains = state.positions.first().map_or(0, Tensor::rows);
    for c in 0..chains {
        for (k, &step) in state.recorded_steps.iter().enumerate() {
            let p = &state.positions[k];
            let accepted = state.accepted_flags[k]
                .as_ref()
                .map(|f| f[c].to_string())
                .unwrap_or_default();
            w.write_record([
                c.to_string(),
                step.to_string(),
                p.get(c, 0).to_string(),
                p.get(c, 1).to_string(),
                state.values[k][c].to_string(),
                accepted,
            ])
            .map_err(&err)?;
        }
    }
    finish(path, w)
}

pub fn write_level_grid(path: &Path, grid: &LevelGrid) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["i", "j", "x", "y", "d_value"]).map_err(&err)?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            w.write_record([
                i.to_string(),
                j.to_string(),
                grid.x(i).to_string(),
                grid.y(j).to_string(),
                grid.value(i, j).to_string(),
            ])
            .map_err(&err)?;
        }
    }
    finish(path, w)
}

/// Reads a two-column sample file with an `x0,x1` header.
pub fn read_samples(path: &Path) -> Result<Tensor, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let err = csv_err(path);
    let headers = r.headers().map_err(&err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x0", "x1"] {
        return Err(CliError::Csv {
            path: path.into(),
            line: 1,
            message: format!(
                "expected header x0,x1, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut data = Vec::new();
    for record in r.records() {
        let record = record.map_err(&err)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| CliError::Csv {
            path: path.into(),
            line,
            message,
        };
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {v}")));
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(CliError::Csv {
            path: path.into(),
            line: 1,
            message: "no sample rows".into(),
        });
    }
    let n = data.len() / 2;
    Ok(Tensor::matrix(n, 2, data).expect("two fields per record"))
}
