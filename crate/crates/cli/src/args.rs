//! Minimal argument parsing: `--key value` flags, `--key` booleans, strict
//! against unknown flags.

use std::collections::{BTreeMap, BTreeSet};

pub struct Args {
    flags: BTreeMap<String, String>,
    switches: BTreeSet<String>,
}

impl Args {
    /// `spec` lists valued flags, `switch_spec` boolean switches.
    pub fn parse(
        raw: &[String],
        spec: &[&str],
        switch_spec: &[&str],
    ) -> Result<Args, String> {
        let mut flags = BTreeMap::new();
        let mut switches = BTreeSet::new();
        let mut it = raw.iter().peekable();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(format!("unexpected argument {arg:?}"));
            };
            if switch_spec.contains(&name) {
                switches.insert(name.to_string());
            } else if spec.contains(&name) {
                let value = it
                    .next()
                    .ok_or_else(|| format!("flag --{name} needs a value"))?;
                flags.insert(name.to_string(), value.clone());
            } else {
                return Err(format!("unknown flag --{name}"));
            }
        }
        Ok(Args { flags, switches })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(|s| s.as_str())
    }

    pub fn has(&self, name: &str) -> bool {
        self.switches.contains(name)
    }
}

/// Worker count: ASR_NUM_WORKERS, else available parallelism capped at 8.
pub fn num_workers() -> usize {
    if let Ok(v) = std::env::var("ASR_NUM_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}
