use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TermVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub profile_id: String,
    pub description: String,
    pub capability_tags: Vec<String>,
    #[serde(default)]
    pub knowledge_refs: Vec<String>,
    #[serde(default)]
    pub embedder_key: Option<String>,
}

impl AgentProfile {
    pub fn new(id: &str, description: &str, tags: &[&str]) -> Self {
        Self {
            profile_id: id.into(),
            description: description.into(),
            capability_tags: tags.iter().map(|t| t.to_string()).collect(),
            knowledge_refs: Vec::new(),
            embedder_key: None,
        }
    }

    /// Content-term vector over description and tags.
    pub fn vector(&self) -> TermVector {
        TermVector::content(&format!("{} {}", self.description, self.capability_tags.join(" ")))
    }
}

/// Ordered registry of agent profiles; registration order breaks ties.
#[derive(Debug, Clone, Default)]
pub struct ProfileRegistry {
    profiles: Vec<AgentProfile>,
}

impl ProfileRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, profile: AgentProfile) -> Result<()> {
        if self.get(&profile.profile_id).is_some() {
            return Err(Error::Registration(format!("profile '{}' is already registered", profile.profile_id)));
        }
        self.profiles.push(profile);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&AgentProfile> {
        self.profiles.iter().find(|p| p.profile_id == id)
    }

    pub fn profiles(&self) -> &[AgentProfile] {
        &self.profiles
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        for p in default_profiles() {
            r.register(p).expect("default profile ids are unique");
        }
        r
    }
}

pub fn default_profiles() -> Vec<AgentProfile> {
    vec![
        AgentProfile::new(
            "TravelPlanner",
            "plans trips itineraries flights hotels vacations and activities at a travel destination",
            &["travel", "trip", "plan", "itinerary", "flight", "hotel", "vacation"],
        ),
        AgentProfile::new(
            "MedicalExpert",
            "medical guidance about symptoms illness health and when to see a doctor",
            &["medical", "health", "symptoms", "symptom", "doctor", "consult"],
        ),
        AgentProfile::new(
            "LegalAdvisor",
            "legal advice on contracts tenant rights disputes and finding a lawyer",
            &["legal", "law", "lawyer", "contract", "rights", "advice"],
        ),
        AgentProfile::new(
            "FoodExpert",
            "restaurant dining and cuisine recommendations with dietary preferences",
            &["food", "dining", "restaurant", "cuisine"],
        ),
        AgentProfile::new(
            "Generalist",
            "general assistant for everyday requests combining weather calendar stock search images and music",
            &["general", "weather", "calendar", "stock", "search", "schedule", "draw", "picture", "song"],
        ),
    ]
}

/// Pick the profile whose description and tags are most similar to the
/// query. Ties go to the earliest registered profile; zero similarity falls
/// back to `generalist_id`.
pub fn dispatch(query: &str, registry: &ProfileRegistry, generalist_id: &str) -> Result<AgentProfile> {
    if registry.is_empty() {
        return Err(Error::Dispatch("no agent profiles registered".into()));
    }
    let q = TermVector::content(query);
    let mut best: Option<(&AgentProfile, f64)> = None;
    for p in registry.profiles() {
        let s = q.cosine(&p.vector());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((p, s));
        }
    }
    let (profile, score) = best.expect("registry is non-empty");
    if score > 0.0 {
        return Ok(profile.clone());
    }
    registry
        .get(generalist_id)
        .cloned()
        .ok_or_else(|| Error::Dispatch(format!("generalist profile '{generalist_id}' is not registered")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trip_goes_to_travel_planner() {
        let r = ProfileRegistry::with_defaults();
        assert_eq!(dispatch("plan a trip to Tokyo", &r, "Generalist").unwrap().profile_id, "TravelPlanner");
        assert_eq!(
            dispatch("I have flu symptoms, should I see a doctor", &r, "Generalist").unwrap().profile_id,
            "MedicalExpert"
        );
        assert_eq!(
            dispatch("check the weather in Paris and my calendar", &r, "Generalist").unwrap().profile_id,
            "Generalist"
        );
        assert_eq!(
            dispatch("What's on my calendar saturday, and draw a picture of a lake", &r, "Generalist")
                .unwrap()
                .profile_id,
            "Generalist"
        );
    }

    #[test]
    fn zero_overlap_falls_back() {
        let r = ProfileRegistry::with_defaults();
        assert_eq!(dispatch("zzz qqq", &r, "Generalist").unwrap().profile_id, "Generalist");
        assert!(dispatch("x", &ProfileRegistry::new(), "Generalist").is_err());
    }

    #[test]
    fn duplicate_profile_rejected() {
        let mut r = ProfileRegistry::with_defaults();
        assert!(r.register(default_profiles().remove(0)).is_err());
    }

    proptest! {
        // Scaling one profile's term counts never changes the argmax.
        #[test]
        fn argmax_invariant_under_scaling(
            query in "[a-f ]{1,20}",
            docs in proptest::collection::vec("[a-f ]{1,30}", 1..6),
            which in 0usize..6,
            factor in 1u32..20,
        ) {
            let q = TermVector::content(&query);
            let vecs: Vec<TermVector> = docs.iter().map(|d| TermVector::content(d)).collect();
            let argmax = |vs: &[TermVector]| {
                let mut best = (0usize, f64::MIN);
                for (i, v) in vs.iter().enumerate() {
                    let s = q.cosine(v);
                    if s > best.1 + 1e-12 { best = (i, s); }
                }
                best.0
            };
            let before = argmax(&vecs);
            let mut scaled = vecs.clone();
            let w = which % scaled.len();
            scaled[w] = scaled[w].scaled(factor as f64);
            prop_assert_eq!(before, argmax(&scaled));

            // And the registry agrees with brute force on the unscaled set.
            let mut reg = ProfileRegistry::new();
            for (i, d) in docs.iter().enumerate() {
                reg.register(AgentProfile::new(&format!("p{i}"), d, &[])).unwrap();
            }
            reg.register(AgentProfile::new("Generalist", "", &[])).unwrap();
            let got = dispatch(&query, &reg, "Generalist").unwrap();
            if q.cosine(&vecs[before]) > 0.0 {
                let s_got = q.cosine(&got.vector());
                prop_assert!((s_got - q.cosine(&vecs[before])).abs() < 1e-9);
            } else {
                prop_assert_eq!(got.profile_id, "Generalist");
            }
        }
    }
}
