//! Layer kinds looked up by name at config-parse time.

use std::collections::BTreeMap;

use super::layers::{Conv, FullyConnected, Layer, MaxPool, Relu};
use super::{LayerSpec, NetError};

pub type LayerCtor = fn(&str, &super::Params) -> Result<Box<dyn Layer>, NetError>;

struct Entry {
    keys: &'static [&'static str],
    ctor: LayerCtor,
}

pub struct LayerRegistry {
    entries: BTreeMap<String, Entry>,
}

impl LayerRegistry {
    pub fn empty() -> Self {
        LayerRegistry { entries: BTreeMap::new() }
    }

    /// `conv`, `relu`, `maxpool` and `fc` (alias `fullyconnected`).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("conv", &["out", "k", "stride", "pad"], Conv::from_params);
        r.register("relu", &[], Relu::from_params);
        r.register("maxpool", &["k", "stride"], MaxPool::from_params);
        r.register("fc", &["out"], FullyConnected::from_params);
        r.register("fullyconnected", &["out"], FullyConnected::from_params);
        r
    }

    /// Registers `kind`, replacing any previous entry. `keys` lists the accepted
    /// settings besides `name`.
    pub fn register(&mut self, kind: &str, keys: &'static [&'static str], ctor: LayerCtor) {
        self.entries.insert(kind.to_string(), Entry { keys, ctor });
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.entries.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &LayerSpec) -> Result<Box<dyn Layer>, NetError> {
        let entry = self.entries.get(&spec.kind).ok_or_else(|| NetError::UnknownLayerKind {
            line: spec.params.line,
            kind: spec.kind.clone(),
        })?;
        let mut allowed = entry.keys.to_vec();
        allowed.push("name");
        spec.params.only(&allowed)?;
        (entry.ctor)(&spec.name, &spec.params)
    }
}

impl Default for LayerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
