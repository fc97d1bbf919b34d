//! Replica location: which federation servers host which logical tables.

use std::collections::BTreeMap;
use std::sync::{PoisonError, RwLock};
use std::time::SystemTime;

use url::Url;

use crate::error::{Error, Result};
use crate::remote::ReplicaLocator;

/// Checks that `server_url` is an absolute URL with a host.
pub fn check_server_url(server_url: &str) -> Result<()> {
    let parsed = Url::parse(server_url).map_err(|e| Error::MalformedUrl(format!("{server_url}: {e}")))?;
    if !parsed.has_host() {
        return Err(Error::MalformedUrl(format!("{server_url}: no host")));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicaMapping {
    entries: BTreeMap<String, BTreeMap<String, SystemTime>>,
}

impl ReplicaMapping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the number of tables acknowledged. Re-publishing only
    /// refreshes the publication time.
    pub fn publish(&mut self, server_url: &str, tables: &[String]) -> Result<usize> {
        check_server_url(server_url)?;
        if let Some(t) = tables.iter().find(|t| t.is_empty()) {
            return Err(Error::BadRequest(format!("empty table name in {t:?}")));
        }
        let now = SystemTime::now();
        for t in tables {
            self.entries.entry(t.clone()).or_default().insert(server_url.to_string(), now);
        }
        Ok(tables.len())
    }

    /// Returns how many (server, table) pairs were actually removed.
    pub fn unpublish(&mut self, server_url: &str, tables: &[String]) -> usize {
        let mut removed = 0;
        for t in tables {
            if let Some(servers) = self.entries.get_mut(t) {
                if servers.remove(server_url).is_some() {
                    removed += 1;
                }
                if servers.is_empty() {
                    self.entries.remove(t);
                }
            }
        }
        removed
    }

    /// Hosting servers in lexicographic order.
    pub fn lookup(&self, table: &str) -> Vec<String> {
        self.entries.get(table).map(|s| s.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn published_at(&self, table: &str, server_url: &str) -> Option<SystemTime> {
        self.entries.get(table)?.get(server_url).copied()
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// A mapping shared between threads. Mutations are serialized; lookups see
/// a consistent state.
#[derive(Debug, Default)]
pub struct SharedReplicaMapping(RwLock<ReplicaMapping>);

impl SharedReplicaMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> ReplicaMapping {
        self.0.read().unwrap_or_else(PoisonError::into_inner).clone()
    }
}

impl ReplicaLocator for SharedReplicaMapping {
    fn publish(&self, server_url: &str, tables: &[String]) -> Result<usize> {
        self.0.write().unwrap_or_else(PoisonError::into_inner).publish(server_url, tables)
    }

    fn unpublish(&self, server_url: &str, tables: &[String]) -> Result<usize> {
        Ok(self.0.write().unwrap_or_else(PoisonError::into_inner).unpublish(server_url, tables))
    }

    fn lookup(&self, table: &str) -> Result<Vec<String>> {
        Ok(self.0.read().unwrap_or_else(PoisonError::into_inner).lookup(table))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str = "http://s1.example:8080";
    const S2: &str = "http://s2.example:8080";

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn publish_and_lookup() {
        let mut m = ReplicaMapping::new();
        assert_eq!(m.lookup("events"), Vec::<String>::new());
        assert_eq!(m.publish(S1, &names(&["events", "runs"])).unwrap(), 2);
        assert_eq!(m.publish(S1, &names(&["events"])).unwrap(), 1);
        assert_eq!(m.lookup("events"), vec![S1.to_string()]);
        m.publish(S2, &names(&["events"])).unwrap();
        assert_eq!(m.lookup("events"), vec![S1.to_string(), S2.to_string()]);
        assert_eq!(m.unpublish(S1, &names(&["events"])), 1);
        assert_eq!(m.lookup("events"), vec![S2.to_string()]);
    }

    #[test]
    fn unpublish_semantics() {
        let mut m = ReplicaMapping::new();
        assert_eq!(m.unpublish(S1, &names(&["x"])), 0);
        m.publish(S1, &names(&["x"])).unwrap();
        m.unpublish(S1, &names(&["x"]));
        assert!(m.lookup("x").is_empty());
        assert_eq!(m, ReplicaMapping::new());
    }

    #[test]
    fn malformed_urls() {
        let mut m = ReplicaMapping::new();
        for bad in ["", "not a url", "s1:8080/x", "mailto:a@b"] {
            assert!(matches!(m.publish(bad, &names(&["t"])), Err(Error::MalformedUrl(_))), "{bad}");
        }
        assert!(m.lookup("t").is_empty());
    }

    #[test]
    fn publish_order_does_not_change_choice() {
        let urls = ["http://c:1", "http://a:1", "http://b:1"];
        let mut first = Vec::new();
        for rot in 0..urls.len() {
            let mut m = ReplicaMapping::new();
            for i in 0..urls.len() {
                m.publish(urls[(i + rot) % urls.len()], &names(&["t"])).unwrap();
            }
            first.push(m.lookup("t")[0].clone());
        }
        assert!(first.iter().all(|u| u == "http://a:1"));
    }
}
