use std::io;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("no kernel named {name:?} (searched {})", display_dirs(.searched))]
    KernelNotFound {
        name: String,
        searched: Vec<PathBuf>,
    },
    #[error("invalid kernel spec {}: {reason}", .path.display())]
    InvalidKernelSpec { path: PathBuf, reason: String },
    #[error("failed to launch kernel {program:?}: {source}")]
    SpawnFailure {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("kernel did not answer kernel_info within {:.1}s", .0.as_secs_f64())]
    StartupTimeout(Duration),
    #[error("kernel exited during startup ({0})")]
    DiedDuringStartup(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("zmq: {0}")]
    Zmq(#[from] zmq::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn display_dirs(dirs: &[PathBuf]) -> String {
    if dirs.is_empty() {
        return "no directories".to_owned();
    }
    dirs.iter()
        .map(|d| d.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
