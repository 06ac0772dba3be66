//! StateSequence CSV: header `t,k,mu_x,mu_y,l11,l21,l22`, one row per
//! (frame, landmark) sorted by `(t, k)`, LF endings. Values are written with
//! 17 significant digits so a read-back reproduces every bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::state::{PoseState, StateSequence, PARAMS_PER_LANDMARK};

pub const HEADER: [&str; 7] = ["t", "k", "mu_x", "mu_y", "l11", "l21", "l22"];

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_sequence<W: Write>(seq: &StateSequence, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for (t, frame) in seq.frames().iter().enumerate() {
        for k in 0..frame.landmarks() {
            let mut row = vec![t.to_string(), k.to_string()];
            row.extend(frame.landmark(k).iter().map(|&v| format_value(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequence<R: Read>(input: R) -> Result<StateSequence> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != HEADER {
        return Err(Error::Parse { line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != HEADER.len() {
            return Err(Error::Parse { line, message: format!("expected 7 fields, got {}", record.len()) });
        }
        let index = |j: usize| -> Result<usize> {
            record[j].trim().parse().map_err(|e| Error::Parse { line, message: format!("{}: {e}", HEADER[j]) })
        };
        let (t, k) = (index(0)?, index(1)?);
        if t == frames.len() && k == 0 {
            frames.push(Vec::new());
        }
        let expected_k = frames.last().map_or(0, |f| f.len() / PARAMS_PER_LANDMARK);
        if t + 1 != frames.len() || k != expected_k {
            return Err(Error::Parse { line, message: format!("rows out of order at t={t}, k={k}") });
        }
        let frame = frames.last_mut().expect("frame pushed above");
        for j in 2..7 {
            let v: f64 =
                record[j].trim().parse().map_err(|e| Error::Parse { line, message: format!("{}: {e}", HEADER[j]) })?;
            frame.push(v);
        }
    }
    let frames = frames.into_iter().map(PoseState::from_vec).collect::<Result<Vec<_>>>()?;
    StateSequence::new(frames)
}

pub fn write_sequence_file(seq: &StateSequence, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_sequence(seq, std::io::BufWriter::new(file))
}

pub fn read_sequence_file(path: &Path) -> Result<StateSequence> {
    let file = File::open(path)?;
    read_sequence(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => {
            Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") }
        }
        other => other,
    })
}
