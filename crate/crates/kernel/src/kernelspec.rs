//! Kernel spec discovery in the standard Jupyter data directories.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::KernelError;

pub const CONNECTION_FILE_PLACEHOLDER: &str = "{connection_file}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterruptMode {
    #[default]
    Signal,
    Message,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    pub name: String,
    pub display_name: String,
    /// Command template; contains `{connection_file}` exactly once.
    pub argv: Vec<String>,
    pub language: String,
    pub resource_dir: PathBuf,
    pub interrupt_mode: InterruptMode,
    pub env: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct KernelJson {
    argv: Vec<String>,
    #[serde(default)]
    display_name: String,
    #[serde(default)]
    language: String,
    #[serde(default)]
    interrupt_mode: Option<String>,
    #[serde(default)]
    env: BTreeMap<String, String>,
}

impl KernelSpec {
    /// Loads `<resource_dir>/kernel.json`.
    pub fn load(name: &str, resource_dir: &Path) -> Result<Self, KernelError> {
        let path = resource_dir.join("kernel.json");
        let invalid = |reason: String| KernelError::InvalidKernelSpec {
            path: path.clone(),
            reason,
        };
        let text = fs::read_to_string(&path).map_err(|e| invalid(e.to_string()))?;
        let raw: KernelJson = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        let placeholders = raw
            .argv
            .iter()
            .filter(|arg| arg.contains(CONNECTION_FILE_PLACEHOLDER))
            .count();
        if placeholders != 1 {
            return Err(invalid(format!(
                "argv must contain {CONNECTION_FILE_PLACEHOLDER} exactly once, found {placeholders}"
            )));
        }
        let interrupt_mode = match raw.interrupt_mode.as_deref() {
            None | Some("signal") => InterruptMode::Signal,
            Some("message") => InterruptMode::Message,
            Some(other) => return Err(invalid(format!("unknown interrupt_mode {other:?}"))),
        };
        Ok(Self {
            name: name.to_owned(),
            display_name: raw.display_name,
            argv: raw.argv,
            language: raw.language,
            resource_dir: resource_dir.to_path_buf(),
            interrupt_mode,
            env: raw.env,
        })
    }

    /// argv with the connection file and resource dir filled in.
    pub fn command_line(&self, connection_file: &Path) -> Vec<String> {
        let connection_file = connection_file.to_string_lossy();
        let resource_dir = self.resource_dir.to_string_lossy();
        self.argv
            .iter()
            .map(|arg| {
                arg.replace(CONNECTION_FILE_PLACEHOLDER, &connection_file)
                    .replace("{resource_dir}", &resource_dir)
            })
            .collect()
    }
}

/// Looks kernels up by name in an ordered list of `kernels/` directories.
#[derive(Debug, Clone)]
pub struct KernelSpecResolver {
    dirs: Vec<PathBuf>,
    default_kernel: String,
}

impl KernelSpecResolver {
    /// Searches `dirs` in order (each one is a `.../kernels` directory).
    pub fn with_dirs(dirs: Vec<PathBuf>, default_kernel: impl Into<String>) -> Self {
        Self {
            dirs,
            default_kernel: default_kernel.into(),
        }
    }

    /// The standard Jupyter search path: `JUPYTER_PATH`, the user data dir,
    /// then environment and system prefixes.
    pub fn from_env(default_kernel: impl Into<String>) -> Self {
        let mut roots: Vec<PathBuf> = Vec::new();
        if let Some(paths) = env::var_os("JUPYTER_PATH") {
            roots.extend(env::split_paths(&paths).filter(|p| !p.as_os_str().is_empty()));
        }
        if let Some(user) = user_data_dir() {
            roots.push(user);
        }
        for var in ["VIRTUAL_ENV", "CONDA_PREFIX"] {
            if let Some(prefix) = env::var_os(var) {
                roots.push(PathBuf::from(prefix).join("share").join("jupyter"));
            }
        }
        roots.push(PathBuf::from("/usr/local/share/jupyter"));
        roots.push(PathBuf::from("/usr/share/jupyter"));

        let mut dirs: Vec<PathBuf> = Vec::new();
        for root in roots {
            let kernels = root.join("kernels");
            if !dirs.contains(&kernels) {
                dirs.push(kernels);
            }
        }
        Self::with_dirs(dirs, default_kernel)
    }

    pub fn search_dirs(&self) -> &[PathBuf] {
        &self.dirs
    }

    pub fn default_kernel(&self) -> &str {
        &self.default_kernel
    }

    /// Finds `kernels/<name>/kernel.json`; an empty name means the default kernel.
    pub fn resolve(&self, name: &str) -> Result<KernelSpec, KernelError> {
        let name = if name.is_empty() {
            self.default_kernel.as_str()
        } else {
            name
        };
        for dir in &self.dirs {
            let candidate = dir.join(name);
            if candidate.join("kernel.json").is_file() {
                return KernelSpec::load(name, &candidate);
            }
        }
        Err(KernelError::KernelNotFound {
            name: name.to_owned(),
            searched: self.dirs.clone(),
        })
    }
}

fn user_data_dir() -> Option<PathBuf> {
    if let Some(dir) = env::var_os("JUPYTER_DATA_DIR") {
        return Some(PathBuf::from(dir));
    }
    let home = env::var_os("HOME").map(PathBuf::from)?;
    if cfg!(target_os = "macos") {
        return Some(home.join("Library").join("Jupyter"));
    }
    let data_home = env::var_os("XDG_DATA_HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| home.join(".local").join("share"));
    Some(data_home.join("jupyter"))
}
