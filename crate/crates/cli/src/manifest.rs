//! Run manifest written next to every command's outputs.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub canonical_config: String,
    pub config_hash: u64,
    pub seed: u64,
    pub workers: usize,
    pub started: String,
    pub finished: String,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub status: String,
}

/// Start time captured before a command runs.
pub struct Clock {
    started: String,
    instant: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock { started: now(), instant: Instant::now() }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        clock: Clock,
        command: &str,
        config_path: Option<PathBuf>,
        canonical_config: String,
        config_hash: u64,
        seed: u64,
        workers: usize,
        outputs: Vec<PathBuf>,
        status: &str,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path,
            canonical_config,
            config_hash,
            seed,
            workers,
            started: clock.started,
            finished: now(),
            wall_seconds: clock.instant.elapsed().as_secs_f64(),
            outputs,
            status: status.to_string(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = trimlstat {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(
            s,
            "config_path = {}",
            self.config_path.as_ref().map_or("(defaults)".to_string(), |p| p.display().to_string())
        );
        let _ = writeln!(s, "config_hash = {:016x}", self.config_hash);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "started = {}", self.started);
        let _ = writeln!(s, "finished = {}", self.finished);
        let _ = writeln!(s, "wall_seconds = {:.3}", self.wall_seconds);
        let _ = writeln!(s, "status = {}", self.status);
        for o in &self.outputs {
            let _ = writeln!(s, "output = {}", o.display());
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.canonical_config);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_lists_every_field() {
        let m = RunManifest::finish(
            Clock::start(),
            "tails",
            None,
            "mc.seed = 4\n".to_string(),
            0xabc,
            4,
            2,
            vec![PathBuf::from("out/tails.csv")],
            "PASS",
        );
        let text = m.render();
        for needle in [
            "command = tails",
            "config_hash = 0000000000000abc",
            "seed = 4",
            "workers = 2",
            "output = out/tails.csv",
            "status = PASS",
            "[config]\nmc.seed = 4\n",
        ] {
            assert!(text.contains(needle), "missing {needle:?} in\n{text}");
        }
        assert!(m.started <= m.finished);
    }
}
