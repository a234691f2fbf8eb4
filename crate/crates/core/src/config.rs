//! Run configuration: a TOML file with `[dataset]`, `[field]`, `[render]`,
//! `[train]`, `[anneal]`, `[sh]` and `[output]` sections, plus dotted-key
//! overrides such as `anneal.f_s=0.2` that win over the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::anneal::AnnealSchedule;
use crate::dataio::{
    even_selection, procedural_dataset, select_fewshot, BlenderSplit, Dataset, ProceduralScene, RigConfig, EVAL_VIEWS,
    FEWSHOT_IDS,
};
use crate::field::FieldConfig;
use crate::render::RenderConfig;
use crate::train::TrainConfig;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Procedural,
    Blender,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Blender scene directory, or a procedural scene TOML file (the
    /// built-in toy scene when absent).
    pub path: Option<PathBuf>,
    pub fewshot_ids: Vec<usize>,
    pub downsample: u32,
    pub eval_views: usize,
    pub rig: RigConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Procedural,
            path: None,
            fewshot_ids: FEWSHOT_IDS.to_vec(),
            downsample: 2,
            eval_views: EVAL_VIEWS,
            rig: RigConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShConfig {
    /// Degrees kept (`n²` components).
    pub n_trunc: usize,
}

impl Default for ShConfig {
    fn default() -> Self {
        Self { n_trunc: 2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub field: FieldConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub anneal: AnnealSchedule,
    pub sh: ShConfig,
    pub output: OutputConfig,
}

/// Keys that are valid even though they have no default value.
const OPTIONAL_KEYS: [&str; 2] = ["dataset.path", "output.dir"];

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string (`precision=f64`).
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn lookup<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Config {
    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, origin: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string().replace('\n', " "),
        })?;
        let defaults = Table::try_from(Config::default()).expect("defaults serialize");
        for (key, raw) in overrides {
            let known = OPTIONAL_KEYS.contains(&key.as_str())
                || lookup(&defaults, key).is_some_and(|v| !v.is_table());
            if !known {
                return Err(config_err(key, "unknown configuration key"));
            }
            set_path(&mut table, key, parse_value(raw))?;
        }
        let cfg: Config = Config::deserialize(Value::Table(table)).map_err(|e| {
            let msg = e.to_string().replace('\n', " ");
            let key = overrides
                .iter()
                .map(|(k, _)| k.as_str())
                .find(|k| msg.contains(k.rsplit('.').next().unwrap_or(k)))
                .unwrap_or("<file>")
                .to_string();
            Error::Config { key, msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults plus overrides, no file.
    pub fn from_overrides(overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str("", Path::new("<defaults>"), overrides)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Input(msg) => config_err(key, msg),
                other => other,
            })
        };
        wrap("field", self.field.validate())?;
        wrap("render", self.render.validate())?;
        wrap("anneal", self.anneal.validate())?;
        wrap("train", self.train_config().validate())?;
        if self.sh.n_trunc > self.field.max_sh_degree + 1 {
            return Err(config_err(
                "sh.n_trunc",
                format!("must be <= field.max_sh_degree + 1 = {}", self.field.max_sh_degree + 1),
            ));
        }
        if self.dataset.downsample == 0 {
            return Err(config_err("dataset.downsample", "must be >= 1"));
        }
        if self.dataset.kind == DatasetKind::Blender && self.dataset.path.is_none() {
            return Err(config_err("dataset.path", "required for blender datasets"));
        }
        Ok(())
    }

    /// Training settings with the `[anneal]` and `[sh]` sections folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            anneal: self.anneal,
            sh_trunc: self.sh.n_trunc,
            ..self.train.clone()
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads the configured dataset restricted to the few-shot training
    /// views and the evenly selected evaluation views.
    pub fn load_dataset<T: Scalar>(&self) -> Result<Dataset<T>> {
        let d = &self.dataset;
        let (near, far, bg) = (self.render.near, self.render.far, self.render.background);
        if let Some(p) = &d.path {
            if !p.exists() {
                return Err(config_err("dataset.path", format!("{} does not exist", p.display())));
            }
        }
        match d.kind {
            DatasetKind::Procedural => {
                let scene = match &d.path {
                    Some(p) => ProceduralScene::from_toml_file(p)?,
                    None => ProceduralScene::toy(),
                };
                let full = procedural_dataset(&scene, &d.rig, d.downsample, near, far)?;
                select_fewshot(&full, &d.fewshot_ids, d.eval_views)
                    .map_err(|e| config_err("dataset.fewshot_ids", e.to_string()))
            }
            DatasetKind::Blender => {
                let root = d.path.as_ref().expect("validated");
                let train = BlenderSplit::open(root, "train")?;
                if let Some(&bad) = d.fewshot_ids.iter().find(|&&i| i >= train.len()) {
                    return Err(config_err(
                        "dataset.fewshot_ids",
                        format!("id {bad} out of range ({} training frames)", train.len()),
                    ));
                }
                let test = BlenderSplit::open(root, "test")?;
                let eval = even_selection(test.len(), d.eval_views);
                Ok(Dataset {
                    name: root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    train: train.load(Some(&d.fewshot_ids), d.downsample, near, far, bg)?,
                    val: Vec::new(),
                    test: test.load(Some(&eval), d.downsample, near, far, bg)?,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = Config::from_overrides(&[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.train.iterations, 2500);
        assert_eq!(cfg.anneal.f_s, 0.15);
        assert_eq!(cfg.train_config().sh_trunc, 2);
    }

    #[test]
    fn file_then_flags() {
        let text = "[anneal]\nf_s = 0.3\ntheta = 0.1\n[train]\niterations = 10\nprecision = \"f64\"\n";
        let cfg = Config::from_toml_str(text, Path::new("x.toml"), &ov(&[("anneal.f_s", "0.2"), ("anneal.enabled", "false")])).unwrap();
        assert_eq!(cfg.anneal.f_s, 0.2);
        assert_eq!(cfg.anneal.theta, 0.1);
        assert!(!cfg.anneal.enabled);
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.train.precision, crate::train::Precision::F64);
        let cfg = Config::from_overrides(&ov(&[("train.precision", "f64"), ("render.samples", "16")])).unwrap();
        assert_eq!(cfg.render.samples, 16);
        let cfg = Config::from_overrides(&ov(&[("dataset.fewshot_ids", "[1, 2]"), ("dataset.path", "scene.toml")])).unwrap();
        assert_eq!(cfg.dataset.fewshot_ids, vec![1, 2]);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::from_overrides(&ov(&[("anneal.fs", "0.2")])).unwrap_err().to_string();
        assert!(e.contains("anneal.fs"), "{e}");
        let e = Config::from_overrides(&ov(&[("sh.n_trunc", "9")])).unwrap_err().to_string();
        assert!(e.contains("sh.n_trunc"), "{e}");
        let e = Config::from_overrides(&ov(&[("dataset.kind", "blender")])).unwrap_err().to_string();
        assert!(e.contains("dataset.path"), "{e}");
        let e = Config::from_overrides(&ov(&[("train.lr", "-1")])).unwrap_err().to_string();
        assert!(e.contains("train"), "{e}");
        let e = Config::from_toml_str("[train]\niterations = \"x\"\n", Path::new("c.toml"), &[]).unwrap_err().to_string();
        assert!(e.contains("iterations"), "{e}");
        let e = Config::from_toml_str("[train\n", Path::new("c.toml"), &[]).unwrap_err().to_string();
        assert!(e.contains("c.toml") && !e.contains('\n'), "{e}");
    }

    #[test]
    fn missing_dataset_path_names_key() {
        let cfg = Config::from_overrides(&ov(&[("dataset.kind", "blender"), ("dataset.path", "/nonexistent/scene")])).unwrap();
        let e = cfg.load_dataset::<f32>().unwrap_err().to_string();
        assert!(e.contains("dataset.path"), "{e}");
    }

    #[test]
    fn serialized_config_round_trips() {
        let cfg = Config::from_overrides(&ov(&[("anneal.theta", "0.05")])).unwrap();
        let again = Config::from_toml_str(&cfg.to_toml_string(), Path::new("echo.toml"), &[]).unwrap();
        assert_eq!(again, cfg);
    }
}
