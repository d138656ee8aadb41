use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    List(Vec<f64>),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "number",
            Value::Bool(_) => "boolean",
            Value::Text(_) => "string",
            Value::List(_) => "comma-separated number list",
        }
    }

    /// Parses `raw` as the same kind as `self`.
    fn parse_like(&self, raw: &str) -> Option<Value> {
        let raw = raw.trim();
        match self {
            Value::Int(_) => raw.parse().ok().map(Value::Int),
            Value::Float(_) => raw.parse().ok().filter(|v: &f64| v.is_finite()).map(Value::Float),
            Value::Bool(_) => raw.parse().ok().map(Value::Bool),
            Value::Text(_) => Some(Value::Text(raw.trim_matches('"').to_string())),
            Value::List(_) => {
                if raw.is_empty() {
                    return Some(Value::List(Vec::new()));
                }
                raw.split(',')
                    .map(|s| s.trim().parse().ok().filter(|v: &f64| v.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .map(Value::List)
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(v) => write!(f, "{v}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Every tunable with its default.
fn defaults() -> Vec<(&'static str, Value)> {
    use Value::*;
    vec![
        ("seed", Int(0)),
        ("scene.kind", Text("tabletop".into())),
        ("scene.pattern", Text("arc".into())),
        ("scene.n_train", Int(3)),
        ("scene.n_heldout", Int(4)),
        ("scene.image_size", Int(32)),
        ("scene.radius", Float(4.0)),
        ("scene.fov_deg", Float(40.0)),
        ("scene.elevation_deg", Float(20.0)),
        ("scene.arc_span_deg", Float(30.0)),
        ("data.transforms", Text(String::new())),
        ("data.near", Float(2.0)),
        ("data.far", Float(6.0)),
        ("data.bound", Float(1.5)),
        ("render.samples", Int(32)),
        ("render.chunk", Int(2048)),
        ("coarse.width", Int(128)),
        ("coarse.hidden_layers", Int(6)),
        ("coarse.feature_dim", Int(64)),
        ("coarse.color_width", Int(64)),
        ("coarse.pe_levels", Int(7)),
        ("coarse.pe_identity", Bool(true)),
        ("fine.width", Int(256)),
        ("fine.hidden_layers", Int(2)),
        ("fine.input", Text("hash".into())),
        ("fine.pe_levels", Int(10)),
        ("grid.levels", Int(8)),
        ("grid.n_min", Int(128)),
        ("grid.n_max", Int(512)),
        ("grid.feature_dim", Int(4)),
        ("grid.table_log2", Int(19)),
        ("stage1.iterations", Int(5000)),
        ("stage1.lr", Float(5e-4)),
        ("stage1.batch_rays", Int(256)),
        ("stage1.stratified", Bool(true)),
        ("stage1.checkpoint_every", Int(1000)),
        ("stage2.iterations", Int(150)),
        ("stage2.lr", Float(5e-3)),
        ("stage2.decay_at", List(vec![50.0, 100.0])),
        ("stage2.decay_factor", Float(0.33)),
        ("stage2.novel_poses", Int(6)),
        ("stage2.image_size", Int(32)),
        ("stage2.checkpoint_every", Int(50)),
        ("stage2.no_residual", Bool(false)),
        ("anneal.lambda0", Float(10.0)),
        ("anneal.alpha", Float(0.01)),
        ("anneal.period", Float(100.0)),
        ("anneal.constant", List(Vec::new())),
        ("style.image", Text(String::new())),
        ("style.texture", Text("stripes".into())),
        ("style.size", Int(64)),
        ("extractor.weights", Text(String::new())),
        ("extractor.seed", Int(0xC0FFEE)),
        ("metrics.path_poses", Int(60)),
        ("metrics.z_tol_frac", Float(0.01)),
    ]
}

/// Flat `key = value` run configuration: defaults, then a file, then
/// command-line overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: defaults().into_iter().collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid by `path` (if any) and then by `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io("sceneio", p, e))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.clone(),
                msg: "override must look like key=value".into(),
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                msg: format!("line {}: expected `key = value`", n + 1),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let Some((&k, current)) = self.values.get_key_value(key) else {
            return Err(Error::Config {
                key: key.to_string(),
                msg: "unknown key".into(),
            });
        };
        let v = current.parse_like(raw).ok_or_else(|| Error::Config {
            key: key.to_string(),
            msg: format!("expected {}, got `{}`", current.kind(), raw.trim()),
        })?;
        self.values.insert(k, v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&Value> {
        self.values.get(key).ok_or_else(|| Error::Config {
            key: key.to_string(),
            msg: "unknown key".into(),
        })
    }

    pub fn int(&self, key: &str) -> Result<i64> {
        match self.get(key)? {
            Value::Int(v) => Ok(*v),
            v => Err(type_err(key, "integer", v)),
        }
    }

    /// A nonnegative integer.
    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.int(key)?;
        usize::try_from(v).map_err(|_| Error::Config {
            key: key.to_string(),
            msg: format!("must be nonnegative, got {v}"),
        })
    }

    pub fn float(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            Value::Float(v) => Ok(*v),
            v => Err(type_err(key, "number", v)),
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            Value::Bool(v) => Ok(*v),
            v => Err(type_err(key, "boolean", v)),
        }
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.get(key)? {
            Value::Text(v) => Ok(v),
            v => Err(type_err(key, "string", v)),
        }
    }

    pub fn list(&self, key: &str) -> Result<&[f64]> {
        match self.get(key)? {
            Value::List(v) => Ok(v),
            v => Err(type_err(key, "list", v)),
        }
    }

    /// Resolved configuration, one `key = value` line per key in sorted order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.values.keys().copied()
    }
}

fn type_err(key: &str, want: &str, got: &Value) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: format!("is a {}, not a {want}", got.kind()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_keeps_defaults() {
        let mut c = RunConfig::default();
        c.apply_text("").unwrap();
        c.apply_text("# only a comment\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn hash_grid_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.usize("grid.levels").unwrap(), 8);
        assert_eq!(c.usize("grid.n_min").unwrap(), 128);
        assert_eq!(c.usize("grid.n_max").unwrap(), 512);
        assert_eq!(c.usize("grid.feature_dim").unwrap(), 4);
        assert_eq!(c.usize("grid.table_log2").unwrap(), 19);
        assert_eq!(c.float("anneal.lambda0").unwrap(), 10.0);
    }

    #[test]
    fn unknown_key_and_type_mismatch_name_the_key() {
        let mut c = RunConfig::default();
        let err = c.apply_text("foo = 1").unwrap_err().to_string();
        assert!(err.contains("`foo`") && err.contains("unknown"), "{err}");
        let err = c.set("grid.levels", "eight").unwrap_err().to_string();
        assert!(err.contains("grid.levels") && err.contains("integer"), "{err}");
        assert!(c.set("stage1.lr", "nan").is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "grid.levels = 6  # fewer\nstage1.lr = 1e-3\nstage2.decay_at = 10, 20\n").unwrap();
        let c = RunConfig::load(Some(&p), &["grid.levels=4".into()]).unwrap();
        assert_eq!(c.usize("grid.levels").unwrap(), 4);
        assert_eq!(c.float("stage1.lr").unwrap(), 1e-3);
        assert_eq!(c.list("stage2.decay_at").unwrap(), &[10.0, 20.0]);
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.set("stage1.lr", "0.1").unwrap();
        c.set("style.image", "a b.png").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }
}
