//! Name-keyed registries of interchangeable implementations.
//!
//! Metrics, convex bodies and tangential solvers are selected at runtime by
//! name (from a config file or the command line). Each registry maps a name
//! to a builder taking free-form parameters.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Free-form parameters handed to a builder, usually a TOML table.
#[derive(Debug, Clone, Default)]
pub struct Params(pub toml::Table);

impl Params {
    pub fn new() -> Self {
        Params(toml::Table::new())
    }

    pub fn with(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        match self.0.get(key)? {
            toml::Value::Float(v) => Some(*v),
            toml::Value::Integer(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> f64 {
        self.f64(key).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        match self.0.get(key) {
            Some(toml::Value::Integer(v)) if *v >= 0 => *v as usize,
            _ => default,
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key)?.as_str()
    }

    pub fn vec_f64(&self, key: &str) -> Option<Vec<f64>> {
        let arr = self.0.get(key)?.as_array()?;
        arr.iter()
            .map(|v| match v {
                toml::Value::Float(f) => Some(*f),
                toml::Value::Integer(i) => Some(*i as f64),
                _ => None,
            })
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<&toml::Value> {
        self.0.get(key)
    }
}

pub type Builder<T> = fn(&Params) -> Result<Arc<T>>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Builder<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, builder: Builder<T>) -> &mut Self {
        self.entries.insert(name, builder);
        self
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str, params: &Params) -> Result<Arc<T>> {
        let builder = self.entries.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::Config(format!(
                "unknown {} `{name}` (known: {})",
                self.kind,
                known.join(", ")
            ))
        })?;
        builder(params)
    }
}
