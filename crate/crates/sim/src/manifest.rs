//! Line-oriented scenario manifests.
//!
//! ```text
//! module FaceDetector face_detector period=0.1
//! param HAND_REACHABLE 0.4
//! connect FaceDetector.face HeadControl.target label=C1 monitor=c1.mon
//! world ("human" 1)@2.0
//! mode advisory
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use portkit::{decode_value, Value};

use crate::world::{WorldError, WorldEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Strict,
    #[default]
    Advisory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleDecl {
    pub name: String,
    pub kind: String,
    pub options: BTreeMap<String, String>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorRef {
    /// Monitor definition file, relative paths resolved against the
    /// manifest's directory.
    File(PathBuf),
    /// Plug-in registered under this name.
    Native(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub module: String,
    pub port: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectDecl {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub label: Option<String>,
    pub monitor: Option<MonitorRef>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldDecl {
    pub at: f64,
    pub event: WorldEvent,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    /// Where the manifest was read from; used in diagnostics.
    pub source: String,
    pub base_dir: PathBuf,
    pub modules: Vec<ModuleDecl>,
    pub params: BTreeMap<String, f64>,
    pub connections: Vec<ConnectDecl>,
    pub world: Vec<WorldDecl>,
    pub mode: Mode,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, &path.display().to_string(), &base)
    }

    pub fn parse(text: &str, source: &str, base_dir: &Path) -> Result<Manifest, ManifestError> {
        let mut m = Manifest {
            source: source.to_owned(),
            base_dir: base_dir.to_path_buf(),
            ..Manifest::default()
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |reason: String| ManifestError::Parse {
                file: source.to_owned(),
                line,
                reason,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (directive, rest) = content
                .split_once(char::is_whitespace)
                .map(|(d, r)| (d, r.trim()))
                .unwrap_or((content, ""));
            let words: Vec<&str> = rest.split_whitespace().collect();
            match directive {
                "module" => {
                    let [name, kind, opts @ ..] = words.as_slice() else {
                        return Err(err("expected `module <name> <kind> [key=value ...]`".into()));
                    };
                    if !portkit::value::is_identifier(name) {
                        return Err(err(format!("`{name}` is not a valid module name")));
                    }
                    if m.modules.iter().any(|d| d.name == *name) {
                        return Err(err(format!("module `{name}` declared twice")));
                    }
                    let mut options = BTreeMap::new();
                    for o in opts {
                        let (k, v) = o
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, found `{o}`")))?;
                        options.insert(k.to_owned(), v.to_owned());
                    }
                    m.modules.push(ModuleDecl {
                        name: name.to_string(),
                        kind: kind.to_string(),
                        options,
                        line,
                    });
                }
                "param" => {
                    let [name, value] = words.as_slice() else {
                        return Err(err("expected `param <NAME> <number>`".into()));
                    };
                    if !portkit::value::is_identifier(name) {
                        return Err(err(format!("`{name}` is not a valid parameter name")));
                    }
                    let v = value
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(format!("`{value}` is not a number")))?;
                    m.params.insert(name.to_string(), v);
                }
                "connect" => {
                    let [src, dst, opts @ ..] = words.as_slice() else {
                        return Err(err("expected `connect <module>.<port> <module>.<port> [label=..] [monitor=..]`".into()));
                    };
                    let endpoint = |t: &str| {
                        t.split_once('.')
                            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                            .map(|(a, b)| Endpoint {
                                module: a.to_owned(),
                                port: b.to_owned(),
                            })
                            .ok_or_else(|| err(format!("`{t}` is not <module>.<port>")))
                    };
                    let mut decl = ConnectDecl {
                        src: endpoint(src)?,
                        dst: endpoint(dst)?,
                        label: None,
                        monitor: None,
                        line,
                    };
                    for o in opts {
                        match o.split_once('=') {
                            Some(("label", l)) if !l.is_empty() => decl.label = Some(l.to_owned()),
                            Some(("monitor", spec)) if !spec.is_empty() => {
                                decl.monitor = Some(match spec.strip_prefix("native:") {
                                    Some(name) => MonitorRef::Native(name.to_owned()),
                                    None => MonitorRef::File(base_dir.join(spec)),
                                });
                            }
                            _ => return Err(err(format!("unknown connect option `{o}`"))),
                        }
                    }
                    m.connections.push(decl);
                }
                "world" => {
                    let (event, at) = rest
                        .rsplit_once('@')
                        .ok_or_else(|| err("expected `world <event>@<time>`".into()))?;
                    let at = at
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|t| t.is_finite() && *t >= 0.0)
                        .ok_or_else(|| err(format!("`{}` is not a valid time", at.trim())))?;
                    let value: Value = decode_value(event.trim()).map_err(|e| err(e.to_string()))?;
                    let event = WorldEvent::from_value(&value).map_err(|e: WorldError| err(e.to_string()))?;
                    m.world.push(WorldDecl { at, event, line });
                }
                "mode" => {
                    m.mode = match words.as_slice() {
                        ["strict"] => Mode::Strict,
                        ["advisory"] => Mode::Advisory,
                        _ => return Err(err("expected `mode strict` or `mode advisory`".into())),
                    };
                }
                "duration" => {
                    let d = match words.as_slice() {
                        [d] => d.parse::<f64>().ok().filter(|d| d.is_finite() && *d >= 0.0),
                        _ => None,
                    };
                    m.duration = Some(d.ok_or_else(|| err("expected `duration <seconds>`".into()))?);
                }
                "seed" => {
                    let s = match words.as_slice() {
                        [s] => s.parse::<u64>().ok(),
                        _ => None,
                    };
                    m.seed = Some(s.ok_or_else(|| err("expected `seed <integer>`".into()))?);
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        Ok(m)
    }
}
