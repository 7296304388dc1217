//! Experiment plumbing: parameters, reproducible per-trial randomness,
//! parallel trial execution and result files.

mod experiments;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub use experiments::*;

/// Experiment parameters as `key = value` strings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Params {
    map: BTreeMap<String, String>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines; blank lines and lines starting with `#`
    /// are skipped.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut p = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key=value, got {line:?}", no + 1)))?;
            p.set(k.trim(), v.trim());
        }
        Ok(p)
    }

    pub fn load_config(path: &Path) -> Result<Self> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    /// Normalizes `c-prime` and `c_prime` to one spelling.
    fn key(k: &str) -> String {
        k.trim_start_matches("--").replace('-', "_")
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.map.insert(Self::key(key), value.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.set(key, value);
        self
    }

    /// Entries of `over` replace entries of `self`.
    pub fn merged(mut self, over: &Params) -> Self {
        for (k, v) in &over.map {
            self.map.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(&Self::key(key))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(&Self::key(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::param_owned(Self::key(key), format!("cannot parse {v:?}: {e}"))),
        }
    }

    /// A comma-separated list.
    pub fn get_list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().map_err(|e| Error::param_owned(Self::key(key), format!("cannot parse {s:?}: {e}"))))
                .collect(),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed", 0)
    }

    /// Fails on keys outside `allowed` (plus `seed`).
    pub fn check_keys(&self, experiment: &str, allowed: &[&str]) -> Result<()> {
        for k in self.map.keys() {
            if k != "seed" && !allowed.contains(&k.as_str()) {
                return Err(Error::param_owned(
                    k.clone(),
                    format!("not a parameter of {experiment}; expected one of: seed, {}", allowed.join(", ")),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.map.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }
}

/// The random stream for trial `trial` under root seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs `f` for every trial in parallel; results come back in trial order
/// and do not depend on scheduling.
pub fn run_trials<Rec, F>(trials: usize, seed: u64, f: F) -> Result<Vec<Rec>>
where
    Rec: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Rec> + Sync,
{
    (0..trials).into_par_iter().map(|t| f(t, &mut trial_rng(seed, t as u64))).collect()
}

/// Standard deviation of a binomial proportion.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Output of one experiment.
#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: String,
    pub pass: bool,
    pub summary: Map<String, Value>,
    pub csv: Vec<u8>,
}

impl Report {
    pub fn new<R: Serialize>(experiment: &str, pass: bool, summary: Value, records: &[R]) -> Result<Self> {
        let summary = match summary {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        let mut wr = csv::Writer::from_writer(Vec::new());
        for r in records {
            wr.serialize(r)?;
        }
        let csv = wr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(Self { experiment: experiment.to_string(), pass, summary, csv })
    }

    /// Writes `<dir>/<name>.summary.json` and `<dir>/<name>.trials.csv`.
    pub fn write(&self, dir: &Path, name: &str, params: &Params, wall_clock_secs: f64) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let summary_path = dir.join(format!("{name}.summary.json"));
        let csv_path = dir.join(format!("{name}.trials.csv"));
        let doc = json!({
            "experiment": self.experiment,
            "config": params.to_json(),
            "pass": self.pass,
            "summary": Value::Object(self.summary.clone()),
            "wall_clock_secs": wall_clock_secs,
        });
        std::fs::write(&summary_path, serde_json::to_string_pretty(&doc)? + "\n")?;
        std::fs::write(&csv_path, &self.csv)?;
        Ok((summary_path, csv_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn config_file_then_flags() {
        let file = Params::parse_config("# comment\nd = 8\nepsilon=0.25\n\nc-prime = 40\n").unwrap();
        let flags = Params::new().with("--epsilon", 0.5);
        let p = file.merged(&flags);
        assert_eq!(p.get::<usize>("d", 0).unwrap(), 8);
        assert_eq!(p.get::<f64>("epsilon", 0.0).unwrap(), 0.5);
        assert_eq!(p.get::<f64>("c_prime", 0.0).unwrap(), 40.0);
        assert_eq!(p.get_list::<usize>("ds", &[1, 2]).unwrap(), vec![1, 2]);
        assert!(Params::parse_config("oops").is_err());
        assert!(p.check_keys("x", &["d", "epsilon"]).is_err());
        assert!(p.check_keys("x", &["d", "epsilon", "c_prime"]).is_ok());
        assert!(Params::new().with("d", "eight").get::<usize>("d", 0).is_err());
    }

    #[test]
    fn trials_are_reproducible_and_ordered() {
        let a = run_trials(64, 9, |t, rng| Ok((t, rng.gen::<u64>()))).unwrap();
        let b = run_trials(64, 9, |t, rng| Ok((t, rng.gen::<u64>()))).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, (t, _))| i == *t));
        assert_ne!(a[0].1, a[1].1);
    }

    #[test]
    fn report_files() {
        #[derive(Serialize)]
        struct Row {
            trial: usize,
            ok: bool,
        }
        let r = Report::new("demo", true, json!({"rate": 1.0}), &[Row { trial: 0, ok: true }]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (s, c) = r.write(dir.path(), "demo", &Params::new().with("seed", 3), 0.1).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(s).unwrap()).unwrap();
        assert_eq!(v["config"]["seed"], "3");
        assert_eq!(v["pass"], true);
        assert_eq!(std::fs::read_to_string(c).unwrap(), "trial,ok\n0,true\n");
    }
}
