//! Output directory bookkeeping: every artifact carries the config hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, hash: String) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        // fail early on read-only locations
        let probe = dir.join(".subdiff-write-probe");
        File::create(&probe)?;
        fs::remove_file(&probe)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Pretty JSON `{"config_sha256": .., "report": ..}`.
    pub fn json<T: Serialize>(&mut self, name: &str, report: &T) -> subdiff::Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_sha256: &'a str,
            report: &'a T,
        }
        let mut out = self.open(name)?;
        serde_json::to_writer_pretty(
            &mut out,
            &Wrapped {
                config_sha256: &self.hash,
                report,
            },
        )?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// CSV whose first line is `# config_sha256: <hash>`.
    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> subdiff::Result<()>,
    ) -> subdiff::Result<()> {
        let mut out = self.open(name)?;
        writeln!(out, "# config_sha256: {}", self.hash)?;
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// The run manifest; it holds the wall time and is therefore not reproducible.
    pub fn manifest<T: Serialize>(&mut self, manifest: &T) -> subdiff::Result<()> {
        let mut out = BufWriter::new(File::create(self.dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut out, manifest)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    fn open(&mut self, name: &str) -> subdiff::Result<BufWriter<File>> {
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }
}

/// File-name fragment for a control label such as `u*+1`.
pub fn file_label(label: &str) -> String {
    let mut s = String::new();
    for c in label.chars() {
        match c {
            '*' => s.push_str("_star"),
            '+' => s.push_str("_plus"),
            '-' => s.push_str("_minus"),
            '.' => s.push('p'),
            c if c.is_ascii_alphanumeric() || c == '_' => s.push(c),
            _ => s.push('_'),
        }
    }
    s
}
