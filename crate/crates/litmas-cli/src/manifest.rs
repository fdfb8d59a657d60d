//! Run manifests.
//!
//! Every command writes a `.manifest` file next to its outputs. The body
//! is the fully resolved configuration in the same `key = value` syntax
//! the tool reads, so a manifest can be fed back as the config of a
//! fresh run. Comment lines record the command, tool version, input
//! digests, and output paths. Nothing in the file depends on wall time,
//! so re-running a command reproduces its manifest byte for byte.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

pub struct RunManifest {
    command: String,
    seed: Option<u64>,
    config: Vec<(String, String)>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            seed: None,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, pairs: Vec<(String, String)>) {
        self.config = pairs;
    }

    /// Records an input file together with its SHA-256 digest.
    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        let digest = sha256_hex(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# litmas {} run manifest", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command: {}", self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed: {seed}");
        }
        for (path, digest) in &self.inputs {
            let _ = writeln!(out, "# input: {} sha256={digest}", path.display());
        }
        for path in &self.outputs {
            let _ = writeln!(out, "# output: {}", path.display());
        }
        if !self.config.is_empty() {
            let _ = writeln!(
                out,
                "# resolved configuration; this file can be passed back as a config"
            );
            for (key, value) in &self.config {
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn sha256_hex(path: &Path) -> io::Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Manifest path for a single-file output: the output path with
/// `.manifest` appended.
pub fn beside(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_comments_then_config_body() {
        let mut m = RunManifest::new("gen-synth");
        m.seed(7);
        m.config(vec![("seed".into(), "7".into()), ("tag".into(), "t".into())]);
        m.output(Path::new("out.features"));
        let text = m.render();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# litmas "));
        assert_eq!(lines.next().unwrap(), "# command: gen-synth");
        assert_eq!(lines.next().unwrap(), "# seed: 7");
        assert_eq!(lines.next().unwrap(), "# output: out.features");
        assert!(text.ends_with("seed = 7\ntag = t\n"));
    }

    #[test]
    fn digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_hex(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn beside_appends_extension() {
        assert_eq!(
            beside(Path::new("a/b.scores")),
            PathBuf::from("a/b.scores.manifest")
        );
    }
}
