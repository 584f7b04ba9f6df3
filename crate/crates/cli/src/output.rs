//! Output directory handling and the run manifest.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

/// Collects the files written by one run so the manifest can list them.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json` with the resolved config and crate versions.
    pub fn finish(mut self, subcommand: &str, config: &RunConfig) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            subcommand: &'a str,
            cli_version: &'a str,
            core_version: &'a str,
            config: &'a RunConfig,
            outputs: Vec<String>,
        }
        let mut outputs = self.written.clone();
        outputs.sort();
        let manifest = Manifest {
            subcommand,
            cli_version: env!("CARGO_PKG_VERSION"),
            core_version: fastdiff::VERSION,
            config,
            outputs,
        };
        self.write_json("manifest.json", &manifest)
    }
}

/// Number of worker threads: `FASTDIFF_WORKERS` if set, else the available
/// parallelism.
pub fn worker_count() -> usize {
    std::env::var("FASTDIFF_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `items` on at most [`worker_count`] threads, keeping order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(workers) {
        let results: Vec<R> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|item| scope.spawn(|| f(item))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        out.extend(results);
    }
    out
}
