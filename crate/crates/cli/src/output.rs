use std::path::Path;

use inmap_core::{InmapParams, LabelRole};
use serde::Serialize;

use crate::config::Settings;
use crate::failure::Failure;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub path: String,
    /// Role of a label-distribution file; the file format does not carry it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<LabelRole>,
}

/// Record of one pipeline run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub params: InmapParams,
    pub inputs: Vec<FileEntry>,
    /// Output paths relative to the manifest's directory.
    pub outputs: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, s: &Settings) -> Self {
        let mut m = Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seed: s.seed,
            params: s.params,
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        let given = [
            ("images", &s.images),
            ("text_proxies", &s.text_proxies),
            ("labels", &s.labels),
            ("proxy_train_images", &s.proxy_train_images),
        ];
        for (name, path) in given {
            if let Some(p) = path {
                let role = (name == "labels").then_some(LabelRole::GroundTruth);
                m.input(name, p, role);
            }
        }
        m
    }

    pub fn input(&mut self, name: &str, path: &Path, role: Option<LabelRole>) {
        self.inputs.push(FileEntry {
            name: name.into(),
            path: path.display().to_string(),
            role,
        });
    }

    pub fn output(&mut self, name: &str, file: &str, role: Option<LabelRole>) {
        self.outputs.push(FileEntry {
            name: name.into(),
            path: file.into(),
            role,
        });
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        write_json(self, &dir.join("manifest.json"))
    }
}

/// Pretty JSON with keys in declaration order, newline-terminated.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| {
        Failure::at(
            "write-outputs",
            inmap_core::Error::Data(format!("{}: {e}", path.display())),
        )
    })
}
