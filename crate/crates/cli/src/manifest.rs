use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to replay a run: the exact command line, the resolved
/// options and digests of the inputs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, A: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: u64,
    pub args: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
}

impl<'a, A: Serialize> Manifest<'a, A> {
    pub fn new(command: &'static str, args: &'a A, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            seed,
            args,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")
    }
}

/// `<file>.manifest.json` next to a file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
