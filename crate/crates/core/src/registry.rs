//! Name-keyed registries of interchangeable strategies.
//!
//! Every family of swappable algorithms in the crate (renderers, mask
//! sources, reconstructors, optimization objectives) sits behind a trait and
//! is looked up here by the name given on the command line or in a config.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, entry: Arc<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::State(format!(
                "{} '{name}' is already registered",
                self.kind
            )));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, entry: Arc<T>) -> Self {
        self.register(name, entry)
            .expect("duplicate name in built-in registry");
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_duplicates() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", Arc::new(Hello)).unwrap();
        assert_eq!(reg.get("hello").unwrap().greet(), "hello");
        assert!(reg.register("hello", Arc::new(Hello)).is_err());
        let err = reg.get("bye").err().unwrap().to_string();
        assert!(err.contains("unknown greeter 'bye'"), "{err}");
        assert!(err.contains("hello"));
    }
}
