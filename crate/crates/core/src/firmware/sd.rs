//! In-memory stand-in for the device's SD card.

use std::fs;
use std::io;
use std::path::Path;

pub const PARAMS_FILE: &str = "params.json";
pub const CACHE_LOG: &str = "cache_log.txt";
pub const PERM_LOG: &str = "perm_log.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VirtualSd {
    pub params: Option<String>,
    cache_log: Option<Vec<String>>,
    perm_log: Option<Vec<String>>,
    cache_recreations: u64,
}

impl VirtualSd {
    pub fn with_params(params: impl Into<String>) -> Self {
        VirtualSd {
            params: Some(params.into()),
            ..VirtualSd::default()
        }
    }

    /// Creates either log if it is missing. Existing content is kept.
    pub fn ensure_logs(&mut self) {
        self.cache_log.get_or_insert_with(Vec::new);
        self.perm_log.get_or_insert_with(Vec::new);
    }

    pub fn cache_exists(&self) -> bool {
        self.cache_log.is_some()
    }

    pub fn perm_exists(&self) -> bool {
        self.perm_log.is_some()
    }

    pub fn cache_lines(&self) -> &[String] {
        self.cache_log.as_deref().unwrap_or(&[])
    }

    pub fn perm_lines(&self) -> &[String] {
        self.perm_log.as_deref().unwrap_or(&[])
    }

    /// Appends one row to both logs.
    pub fn append_reading(&mut self, line: &str) {
        debug_assert!(!line.contains('\n'));
        self.cache_log
            .get_or_insert_with(Vec::new)
            .push(line.to_string());
        self.perm_log
            .get_or_insert_with(Vec::new)
            .push(line.to_string());
    }

    /// Deletes the cache file and creates it again, empty.
    pub fn recreate_cache(&mut self) {
        self.cache_log = None;
        self.cache_log = Some(Vec::new());
        self.cache_recreations += 1;
    }

    pub fn cache_recreations(&self) -> u64 {
        self.cache_recreations
    }

    pub fn cache_text(&self) -> String {
        lines_to_text(self.cache_lines())
    }

    pub fn perm_text(&self) -> String {
        lines_to_text(self.perm_lines())
    }

    /// Writes the card's files into `dir`.
    pub fn save_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        if let Some(p) = &self.params {
            fs::write(dir.join(PARAMS_FILE), p)?;
        }
        if self.cache_exists() {
            fs::write(dir.join(CACHE_LOG), self.cache_text())?;
        }
        if self.perm_exists() {
            fs::write(dir.join(PERM_LOG), self.perm_text())?;
        }
        Ok(())
    }

    pub fn load_from_dir(dir: &Path) -> io::Result<VirtualSd> {
        let read_opt = |name: &str| match fs::read_to_string(dir.join(name)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        };
        let to_lines = |s: String| s.lines().map(str::to_string).collect::<Vec<_>>();
        Ok(VirtualSd {
            params: read_opt(PARAMS_FILE)?,
            cache_log: read_opt(CACHE_LOG)?.map(to_lines),
            perm_log: read_opt(PERM_LOG)?.map(to_lines),
            cache_recreations: 0,
        })
    }
}

fn lines_to_text(lines: &[String]) -> String {
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}
