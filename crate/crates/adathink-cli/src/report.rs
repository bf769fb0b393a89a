//! Output-file helpers: atomic writes, JSONL headers, and comment-style
//! headers for CSV and id-list files. Every output carries a header block
//! recording the full resolved configuration.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ResolvedConfig;

/// Header block shared by all output files.
#[derive(Debug, Serialize)]
pub struct Header<'a> {
    pub command: &'a str,
    pub config: &'a ResolvedConfig,
    pub overrides: &'a [String],
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    header: &'a Header<'a>,
}

impl Header<'_> {
    /// The header as the first line of a JSONL file.
    pub fn jsonl_line(&self) -> String {
        serde_json::to_string(&HeaderLine { header: self }).expect("header serialization")
    }

    /// The header as `#`-prefixed comment lines for CSV and id lists.
    pub fn comment_block(&self) -> String {
        let config = serde_json::to_string(self.config).expect("config serialization");
        let overrides = serde_json::to_string(self.overrides).expect("override serialization");
        format!(
            "# command: {}\n# config: {}\n# overrides: {}\n",
            self.command, config, overrides
        )
    }
}

/// Writes a file atomically: the contents land in a sibling temp file
/// which is then renamed over the target.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

/// Creates the output directory if needed and returns it.
pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output dir {}", dir.display()))
}
