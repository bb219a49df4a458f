use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

const CHECKPOINTS: &str = ".ipynb_checkpoints";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathNotFound(pub PathBuf);

impl fmt::Display for PathNotFound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "path not found: {}", self.0.display())
    }
}

impl std::error::Error for PathNotFound {}

fn is_checkpoint_dir(path: &Path) -> bool {
    path.file_name().is_some_and(|n| n == CHECKPOINTS)
}

/// Explicit files are taken as given; directories are searched recursively
/// for `*.ipynb`, skipping `.ipynb_checkpoints`. Sorted and de-duplicated.
pub fn discover_notebooks(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PathNotFound> {
    let mut found = BTreeSet::new();
    for path in paths {
        if !path.exists() {
            return Err(PathNotFound(path.clone()));
        }
        if !path.is_dir() {
            found.insert(path.clone());
            continue;
        }
        let walker = WalkDir::new(path)
            .follow_links(true)
            .into_iter()
            .filter_entry(|e| !(e.file_type().is_dir() && is_checkpoint_dir(e.path())));
        for entry in walker.filter_map(Result::ok) {
            let is_notebook = entry.path().extension().is_some_and(|e| e == "ipynb");
            if entry.file_type().is_file() && is_notebook {
                found.insert(entry.into_path());
            }
        }
    }
    Ok(found.into_iter().collect())
}
