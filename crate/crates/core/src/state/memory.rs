//! Long-term dual memory: per-user memory and per-persona agent memory.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::error::{Error, Result};
use crate::ids::SessionId;
use crate::text;

const SESSION_REF_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuggetScope {
    User,
    Agent,
}

/// A distilled, provenance-carrying memory fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeNugget {
    pub nugget_id: String,
    pub statement: String,
    pub scope: NuggetScope,
    /// Episode the statement was distilled from.
    pub provenance: String,
    pub created_at: Millis,
}

/// Append-only user history fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFact {
    pub statement: String,
    pub provenance: Option<String>,
    pub recorded_at: Millis,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserMemory {
    /// Static attributes such as `Hobby` or `Dislikes`.
    pub profile: BTreeMap<String, String>,
    pub history: Vec<HistoryFact>,
    pub session_refs: VecDeque<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub descriptor: String,
    pub traits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub persona: Persona,
    pub knowledge_base: Vec<Document>,
    pub nuggets: Vec<KnowledgeNugget>,
}

impl AgentMemory {
    pub fn new(persona: Persona) -> Result<Self> {
        if persona.name.trim().is_empty() || persona.descriptor.trim().is_empty() {
            return Err(Error::Config("persona must have a name and descriptor".into()));
        }
        Ok(Self { persona, knowledge_base: Vec::new(), nuggets: Vec::new() })
    }

    pub fn with_documents(mut self, docs: Vec<Document>) -> Self {
        self.knowledge_base = docs;
        self
    }
}

/// Who a nugget is committed to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemoryOwner {
    User(String),
    Agent(String),
}

/// Registry of user and agent memories. Reads are concurrent; each commit
/// takes the write lock for its owner's map.
#[derive(Debug, Default)]
pub struct MemoryStore {
    users: RwLock<HashMap<String, UserMemory>>,
    agents: RwLock<BTreeMap<String, AgentMemory>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_persona(&self, persona_id: impl Into<String>, memory: AgentMemory) {
        self.agents.write().insert(persona_id.into(), memory);
    }

    pub fn has_persona(&self, persona_id: &str) -> bool {
        self.agents.read().contains_key(persona_id)
    }

    pub fn persona_ids(&self) -> Vec<String> {
        self.agents.read().keys().cloned().collect()
    }

    pub fn agent(&self, persona_id: &str) -> Option<AgentMemory> {
        self.agents.read().get(persona_id).cloned()
    }

    pub fn user(&self, user_id: &str) -> UserMemory {
        self.users.read().get(user_id).cloned().unwrap_or_default()
    }

    pub fn set_profile(&self, user_id: &str, key: impl Into<String>, value: impl Into<String>) {
        self.users.write().entry(user_id.to_string()).or_default().profile.insert(key.into(), value.into());
    }

    pub fn add_history(&self, user_id: &str, fact: HistoryFact) {
        self.users.write().entry(user_id.to_string()).or_default().history.push(fact);
    }

    pub fn touch_session(&self, user_id: &str, session: &SessionId) {
        let mut users = self.users.write();
        let refs = &mut users.entry(user_id.to_string()).or_default().session_refs;
        refs.retain(|s| s != session);
        refs.push_back(session.clone());
        while refs.len() > SESSION_REF_CAP {
            refs.pop_front();
        }
    }

    /// Commit a nugget. Statements are deduplicated on their normalized text
    /// so the store grows in density rather than volume; returns whether the
    /// nugget was new.
    pub fn commit_nugget(&self, owner: &MemoryOwner, nugget: KnowledgeNugget) -> bool {
        let key = text::normalize(&nugget.statement);
        match owner {
            MemoryOwner::User(user_id) => {
                let mut users = self.users.write();
                let mem = users.entry(user_id.clone()).or_default();
                if mem.history.iter().any(|f| text::normalize(&f.statement) == key) {
                    return false;
                }
                mem.history.push(HistoryFact {
                    statement: nugget.statement,
                    provenance: Some(nugget.provenance),
                    recorded_at: nugget.created_at,
                });
                true
            }
            MemoryOwner::Agent(persona_id) => {
                let mut agents = self.agents.write();
                let Some(mem) = agents.get_mut(persona_id) else {
                    return false;
                };
                let dup =
                    mem.nuggets.iter().any(|n| n.nugget_id == nugget.nugget_id || text::normalize(&n.statement) == key);
                if dup {
                    return false;
                }
                mem.nuggets.push(nugget);
                true
            }
        }
    }

    /// Number of distinct statements held for an owner.
    pub fn density(&self, owner: &MemoryOwner) -> usize {
        match owner {
            MemoryOwner::User(u) => self
                .users
                .read()
                .get(u)
                .map(|m| m.history.iter().map(|f| text::normalize(&f.statement)).collect::<BTreeSet<_>>().len())
                .unwrap_or(0),
            MemoryOwner::Agent(p) => self.agents.read().get(p).map(|m| m.nuggets.len()).unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nugget(id: &str, statement: &str) -> KnowledgeNugget {
        KnowledgeNugget {
            nugget_id: id.into(),
            statement: statement.into(),
            scope: NuggetScope::User,
            provenance: "ep-1".into(),
            created_at: 0,
        }
    }

    #[test]
    fn commit_is_idempotent_on_statement() {
        let store = MemoryStore::new();
        let owner = MemoryOwner::User("u1".into());
        assert!(store.commit_nugget(&owner, nugget("n1", "User is a vegetarian")));
        assert!(!store.commit_nugget(&owner, nugget("n2", "  user IS a vegetarian ")));
        assert_eq!(store.density(&owner), 1);
    }

    #[test]
    fn distinct_nuggets_grow_density() {
        let store = MemoryStore::new();
        let owner = MemoryOwner::User("u1".into());
        store.commit_nugget(&owner, nugget("n1", "User is a vegetarian"));
        store.commit_nugget(&owner, nugget("n2", "User prefers visual data over text"));
        assert_eq!(store.density(&owner), 2);
    }

    #[test]
    fn agent_nuggets_require_registered_persona() {
        let store = MemoryStore::new();
        let owner = MemoryOwner::Agent("companion".into());
        assert!(!store.commit_nugget(&owner, nugget("n1", "x")));
        store.register_persona(
            "companion",
            AgentMemory::new(Persona { name: "Mia".into(), descriptor: "warm companion".into(), traits: vec![] })
                .unwrap(),
        );
        assert!(store.commit_nugget(&owner, nugget("n1", "x")));
        assert!(!store.commit_nugget(&owner, nugget("n1", "y")));
    }

    #[test]
    fn empty_persona_rejected() {
        assert!(AgentMemory::new(Persona { name: "".into(), descriptor: "x".into(), traits: vec![] }).is_err());
    }
}
