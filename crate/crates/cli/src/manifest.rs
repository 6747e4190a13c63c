use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{CommonArgs, RunArgs};

/// Everything one command needs. Loaded from an optional TOML file whose
/// relative paths resolve against the file's directory; flags override.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub network: Option<PathBuf>,
    pub arch: Option<PathBuf>,
    pub energy: Option<PathBuf>,
    pub seed: u64,
    pub pool_mode: Option<String>,
    pub max_chips: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: bool,
    pub oracle: bool,
    pub symbolic_verify: bool,
    pub strict_capacity: bool,
    pub max_cycles: u64,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            network: None,
            arch: None,
            energy: None,
            seed: 0,
            pool_mode: None,
            max_chips: None,
            out: None,
            trace: false,
            oracle: true,
            symbolic_verify: false,
            strict_capacity: false,
            max_cycles: 10_000_000,
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        let mut m: Self = toml::from_str(&text).map_err(|e| format!("manifest {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.network, &mut m.arch, &mut m.energy, &mut m.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for (name, p) in [("network", &m.network), ("arch", &m.arch), ("energy", &m.energy)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(format!("manifest {}: {name} file {} does not exist", path.display(), p.display()));
                }
            }
        }
        Ok(m)
    }

    pub fn apply(&mut self, c: &CommonArgs, run: Option<&RunArgs>) {
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut self.network, &c.network);
        set(&mut self.arch, &c.arch);
        set(&mut self.out, &c.out);
        if c.pool_mode.is_some() {
            self.pool_mode.clone_from(&c.pool_mode);
        }
        if c.max_chips.is_some() {
            self.max_chips = c.max_chips;
        }
        if let Some(r) = run {
            set(&mut self.energy, &r.energy);
            if let Some(s) = r.seed {
                self.seed = s;
            }
            if let Some(m) = r.max_cycles {
                self.max_cycles = m;
            }
            self.trace |= r.trace;
            self.symbolic_verify |= r.symbolic_verify;
            self.strict_capacity |= r.strict_capacity;
            if r.no_oracle {
                self.oracle = false;
            }
        }
    }
}
