//! Experiment runner behind the `bata` binary: method dispatch, `key = value`
//! configuration, synthetic sweeps and the planar toy studies.

pub mod config;
pub mod method;
pub mod sweep;
pub mod toy;

use bata_core::Error;

pub use method::{run_method, InitChoice, Method, SolverOptions};
pub use sweep::{run_sweep, write_csv, Column, SweepGrid, SweepRow};

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } => 2,
        Error::Graph(_) | Error::Disconnected => 3,
        Error::Singular(_) | Error::Degenerate(_) | Error::Domain(_) => 4,
        Error::Config(_) | Error::Io(_) => 5,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Graph(_) => "graph",
        Error::Disconnected => "disconnected",
        Error::Singular(_) => "singular",
        Error::Degenerate(_) => "degenerate",
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    }
}

/// Single machine-readable line: `error kind=<k> code=<c> [line=<n>] msg="<text>"`.
pub fn error_line(e: &Error) -> String {
    let line = match e {
        Error::Parse { line, .. } => format!(" line={line}"),
        _ => String::new(),
    };
    let msg = e.to_string().replace('"', "'");
    format!("error kind={} code={}{line} msg=\"{msg}\"", error_kind(e), exit_code(e))
}
