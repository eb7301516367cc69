//! `key=value` configuration files. Keys are the long flag names without the
//! leading dashes; a flag given on the command line replaces the file value.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use inmap_core::{InmapParams, Mode};

use crate::args::PipelineArgs;
use crate::failure::Failure;

pub const KEYS: &[&str] = &[
    "images",
    "text-proxies",
    "labels",
    "proxy-train-images",
    "tau-t",
    "tau-i",
    "alpha",
    "gamma",
    "sinkhorn-iters",
    "pgd-iters",
    "lr",
    "stop-tolerance",
    "mode",
    "seed",
    "out-dir",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, Failure> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{}:{}", path.display(), n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("{}: expected key=value", at())))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Failure::config(format!("{}: unknown key {key:?}", at())));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Failure::config(format!("{}: duplicate key {key:?}", at())));
            }
        }
        Ok(Self {
            path: path.to_owned(),
            entries,
        })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse().map_err(|e| {
                    Failure::config(format!("{}: bad value for {key}: {e}", self.path.display()))
                })
            })
            .transpose()
    }
}

/// Flags and file merged into concrete settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub images: Option<PathBuf>,
    pub text_proxies: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub proxy_train_images: Option<PathBuf>,
    pub params: InmapParams,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(args: &PipelineArgs) -> Result<Self, Failure> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, Failure>
        where
            T::Err: Display,
        {
            match flag {
                Some(v) => Ok(Some(v)),
                None => file.get(key),
            }
        }

        let proxy_train_images = pick(args.proxy_train_images.clone(), &file, "proxy-train-images")?;
        let defaults = if proxy_train_images.is_some() {
            InmapParams::for_separate_train_set()
        } else {
            InmapParams::default()
        };
        let mode = match pick(args.mode.clone(), &file, "mode")? {
            Some(name) => name.parse::<Mode>().map_err(|e| Failure::at("config", e))?,
            None => defaults.mode,
        };
        let params = InmapParams {
            tau_t: pick(args.tau_t, &file, "tau-t")?.unwrap_or(defaults.tau_t),
            tau_i: pick(args.tau_i, &file, "tau-i")?.unwrap_or(defaults.tau_i),
            alpha: pick(args.alpha, &file, "alpha")?.unwrap_or(defaults.alpha),
            gamma: pick(args.gamma, &file, "gamma")?.unwrap_or(defaults.gamma),
            sinkhorn_iters: pick(args.sinkhorn_iters, &file, "sinkhorn-iters")?
                .unwrap_or(defaults.sinkhorn_iters),
            pgd_iters: pick(args.pgd_iters, &file, "pgd-iters")?.unwrap_or(defaults.pgd_iters),
            lr: pick(args.lr, &file, "lr")?.unwrap_or(defaults.lr),
            stop_tolerance: pick(args.stop_tolerance, &file, "stop-tolerance")?
                .or(defaults.stop_tolerance),
            mode,
        };
        Ok(Self {
            images: pick(args.images.clone(), &file, "images")?,
            text_proxies: pick(args.text_proxies.clone(), &file, "text-proxies")?,
            labels: pick(args.labels.clone(), &file, "labels")?,
            proxy_train_images,
            params,
            seed: pick(args.seed, &file, "seed")?.unwrap_or(0),
            out_dir: pick(args.out_dir.clone(), &file, "out-dir")?,
        })
    }
}

/// Unwraps a setting every caller of a subcommand must supply.
pub fn required<T: Clone>(value: &Option<T>, key: &str) -> Result<T, Failure> {
    value
        .clone()
        .ok_or_else(|| Failure::config(format!("--{key} is required (flag or config key)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spaces() {
        let f = ConfigFile::parse(Path::new("c"), "# run\n tau-i = 0.05\n\nmode=sinkhorn\n").unwrap();
        assert_eq!(f.get::<f64>("tau-i").unwrap(), Some(0.05));
        assert_eq!(f.get::<String>("mode").unwrap().as_deref(), Some("sinkhorn"));
        assert_eq!(f.get::<f64>("alpha").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in ["tau=1", "lr=1\nlr=2", "just words"] {
            let err = ConfigFile::parse(Path::new("c"), text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
        let f = ConfigFile::parse(Path::new("c"), "lr=fast").unwrap();
        assert!(f.get::<f64>("lr").is_err());
    }
}
