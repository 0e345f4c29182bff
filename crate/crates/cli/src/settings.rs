//! Settings file and layering: flag, then environment, then file, then
//! built-in default.
//!
//! The file is TOML. Post-processing keys sit at the top level, evaluation
//! keys under `[eval]`, service keys under `[server]`:
//!
//! ```toml
//! score_threshold = 0.7
//! laplace_ci = 0.99
//!
//! [eval]
//! pooled_mape = false
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! data_dir = "cfu-data"
//! ```

use std::path::{Path, PathBuf};

use cfu_core::evaluation::EvalConfig;
use cfu_core::PostProcConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "cfu-data";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub bind: Option<String>,
    pub data_dir: Option<PathBuf>,
}

/// Parsed settings file, before flags and environment are applied.
#[derive(Debug, Clone, Default)]
pub struct FileSettings {
    postproc: toml::Table,
    eval: toml::Table,
    pub server: ServerSection,
}

/// Loads `path`. `None` and the literal `default` mean no file.
pub fn load(path: Option<&Path>) -> Result<FileSettings, CliError> {
    let Some(path) = path.filter(|p| *p != Path::new("default")) else {
        return Ok(FileSettings::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn parse(text: &str) -> Result<FileSettings, String> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut section = |name: &str| -> Result<toml::Table, String> {
        match table.remove(name) {
            None => Ok(toml::Table::new()),
            Some(toml::Value::Table(t)) => Ok(t),
            Some(_) => Err(format!("[{name}] must be a table")),
        }
    };
    let eval = section("eval")?;
    let server = section("server")?;
    let server: ServerSection =
        toml::Value::Table(server).try_into().map_err(|e: toml::de::Error| format!("[server]: {e}"))?;
    let s = FileSettings { postproc: table, eval, server };
    // Surface unknown keys and bad values now rather than at first use.
    s.postproc(&PostProcOverrides::default())?;
    s.eval()?;
    Ok(s)
}

fn layered<T: Serialize + DeserializeOwned>(
    default: &T,
    file: &toml::Table,
    overrides: impl IntoIterator<Item = (&'static str, Value)>,
) -> Result<T, String> {
    let mut v = serde_json::to_value(default).expect("defaults serialize");
    let obj = v.as_object_mut().expect("struct serializes to an object");
    for (k, val) in file {
        obj.insert(k.clone(), serde_json::to_value(val).map_err(|e| e.to_string())?);
    }
    for (k, val) in overrides {
        obj.insert(k.to_string(), val);
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct PostProcOverrides {
    #[arg(long, env = "CFU_SCORE_THRESHOLD")]
    pub score_threshold: Option<f64>,
    #[arg(long, env = "CFU_DUP_IOU_THRESHOLD")]
    pub dup_iou_threshold: Option<f64>,
    #[arg(long, env = "CFU_ELLIPSE_SHRINK")]
    pub ellipse_shrink: Option<f64>,
    #[arg(long, env = "CFU_LAPLACE_CI")]
    pub laplace_ci: Option<f64>,
    #[arg(long, env = "CFU_MIN_INSTANCES_FOR_AREA_FILTER")]
    pub min_instances_for_area_filter: Option<usize>,
}

impl FileSettings {
    pub fn postproc(&self, o: &PostProcOverrides) -> Result<PostProcConfig, String> {
        let mut over: Vec<(&'static str, Value)> = Vec::new();
        let mut put = |k, v: Option<f64>| {
            if let Some(v) = v {
                over.push((k, Value::from(v)));
            }
        };
        put("score_threshold", o.score_threshold);
        put("dup_iou_threshold", o.dup_iou_threshold);
        put("ellipse_shrink", o.ellipse_shrink);
        put("laplace_ci", o.laplace_ci);
        if let Some(n) = o.min_instances_for_area_filter {
            over.push(("min_instances_for_area_filter", Value::from(n)));
        }
        let cfg: PostProcConfig = layered(&PostProcConfig::default(), &self.postproc, over)?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn eval(&self) -> Result<EvalConfig, String> {
        let cfg: EvalConfig = layered(&EvalConfig::default(), &self.eval, [])?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
