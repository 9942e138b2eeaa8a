use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;

use crate::{CliError, CliResult};

/// Destination of one artifact.
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn new(path: Option<PathBuf>) -> Self {
        path.map_or(Sink::Stdout, Sink::File)
    }

    fn label(&self) -> String {
        match self {
            Sink::Stdout => "<stdout>".into(),
            Sink::File(p) => p.display().to_string(),
        }
    }

    fn open(&self) -> CliResult<Box<dyn Write>> {
        match self {
            Sink::Stdout => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
            Sink::File(p) => {
                let f = File::create(p).map_err(|e| self.error(&e, Some(e.kind())))?;
                Ok(Box::new(BufWriter::new(f)))
            }
        }
    }

    /// A closed stdout (for example `| head`) ends the run quietly.
    fn error(&self, e: impl ToString, kind: Option<io::ErrorKind>) -> CliError {
        if matches!(self, Sink::Stdout) && kind == Some(io::ErrorKind::BrokenPipe) {
            return CliError::StdoutClosed;
        }
        CliError::Io { path: self.label(), message: e.to_string() }
    }
}

/// Compact JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(sink: &Sink, value: &T) -> CliResult<()> {
    let mut out = sink.open()?;
    serde_json::to_writer(&mut out, value).map_err(|e| sink.error(&e, e.io_error_kind()))?;
    writeln!(out).and_then(|()| out.flush()).map_err(|e| sink.error(&e, Some(e.kind())))
}

/// Streams numeric rows as CSV under `header`.
pub fn write_csv(sink: &Sink, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink.open()?);
    w.write_record(header).map_err(|e| csv_error(sink, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(sink, e))?;
    }
    w.flush().map_err(|e| sink.error(&e, Some(e.kind())))
}

fn csv_error(sink: &Sink, e: csv::Error) -> CliError {
    let kind = match e.kind() {
        csv::ErrorKind::Io(io) => Some(io.kind()),
        _ => None,
    };
    sink.error(&e, kind)
}
