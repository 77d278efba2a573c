use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::client::{RegistryClient, RegistryClientError};
use crate::plugin::{parse_descriptor, PluginDescriptor, PluginError};

#[derive(Debug, thiserror::Error)]
pub enum AcquireError {
    #[error("plugin fetch failed: {0}")]
    Fetch(#[from] RegistryClientError),
    #[error("plugin {id} is corrupt: {source}")]
    Parse { id: String, source: PluginError },
    #[error("registry served plugin {got} for id {wanted}")]
    WrongId { wanted: String, got: String },
}

/// Installed plugins keyed by id. Readers share the map; a refetch
/// replaces the entry.
#[derive(Debug, Default)]
pub struct PluginCache {
    entries: RwLock<HashMap<String, Arc<PluginDescriptor>>>,
    fetches: AtomicU64,
}

impl PluginCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<Arc<PluginDescriptor>> {
        self.entries.read().unwrap().get(id).cloned()
    }

    pub fn insert(&self, plugin: Arc<PluginDescriptor>) {
        self.entries.write().unwrap().insert(plugin.id.clone(), plugin);
    }

    pub fn evict(&self, id: &str) -> bool {
        self.entries.write().unwrap().remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registry downloads performed so far.
    pub fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }

    /// Cached descriptor, or a verified download from the registry. A
    /// document that fails to parse leaves no entry behind.
    pub async fn acquire(&self, id: &str, client: &RegistryClient) -> Result<Arc<PluginDescriptor>, AcquireError> {
        if let Some(hit) = self.get(id) {
            return Ok(hit);
        }
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let text = client.fetch_plugin(id).await?;
        let plugin = match parse_descriptor(&text) {
            Ok(p) => Arc::new(p),
            Err(source) => {
                self.evict(id);
                return Err(AcquireError::Parse { id: id.to_string(), source });
            }
        };
        if plugin.id != id {
            self.evict(id);
            return Err(AcquireError::WrongId { wanted: id.to_string(), got: plugin.id.clone() });
        }
        self.insert(plugin.clone());
        Ok(plugin)
    }
}
