use std::time::Duration;

use crate::notebook::CellOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecutionStatus {
    Ok,
    Error,
    Timeout,
    KernelDied,
}

/// What the kernel produced for one executed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecutionStatus,
    /// Broadcast outputs in arrival order, bookkeeping messages excluded.
    pub outputs: Vec<CellOutput>,
    pub ename: Option<String>,
    pub evalue: Option<String>,
    pub traceback: Vec<String>,
    pub duration: Duration,
}

impl ExecutionOutcome {
    pub fn ok(outputs: Vec<CellOutput>) -> Self {
        Self {
            status: ExecutionStatus::Ok,
            outputs,
            ename: None,
            evalue: None,
            traceback: Vec::new(),
            duration: Duration::ZERO,
        }
    }

    pub fn error(
        outputs: Vec<CellOutput>,
        ename: impl Into<String>,
        evalue: impl Into<String>,
    ) -> Self {
        Self {
            status: ExecutionStatus::Error,
            outputs,
            ename: Some(ename.into()),
            evalue: Some(evalue.into()),
            traceback: Vec::new(),
            duration: Duration::ZERO,
        }
    }

    pub fn with_status(status: ExecutionStatus, outputs: Vec<CellOutput>) -> Self {
        Self {
            status,
            ..Self::ok(outputs)
        }
    }

    /// Exception type name, from the reply or the first error output.
    pub fn error_name(&self) -> Option<&str> {
        self.ename.as_deref().or_else(|| {
            self.outputs.iter().find_map(|o| match o {
                CellOutput::Error { ename, .. } => Some(ename.as_str()),
                _ => None,
            })
        })
    }
}
