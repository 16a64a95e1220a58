//! Prompt sets, trigram similarity, and near-duplicate filtering.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Training,
    Generated,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
    pub class: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptSet {
    prompts: Vec<Prompt>,
}

impl PromptSet {
    pub fn new(prompts: Vec<Prompt>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &prompts {
            if !seen.insert(p.prompt_id.as_str()) {
                return invalid(format!("duplicate prompt id {}", p.prompt_id));
            }
        }
        Ok(Self { prompts })
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.prompts.iter().find(|p| p.prompt_id == id)
    }

    pub fn with_provenance(&self, provenance: Provenance) -> PromptSet {
        PromptSet { prompts: self.prompts.iter().filter(|p| p.provenance == provenance).cloned().collect() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        jsonl::write(path, None::<&()>, &self.prompts)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(jsonl::read_all(path)?)
    }
}

fn trigram_counts(text: &str) -> HashMap<[char; 3], u64> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = HashMap::new();
    for w in chars.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
    }
    counts
}

/// Cosine similarity of lowercased character-trigram count vectors.
///
/// Texts too short to contain a trigram compare equal only to themselves.
pub fn prompt_similarity(a: &str, b: &str) -> f64 {
    let (ca, cb) = (trigram_counts(a), trigram_counts(b));
    if ca.is_empty() || cb.is_empty() {
        return if a.to_lowercase() == b.to_lowercase() { 1.0 } else { 0.0 };
    }
    let dot: u64 = ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0)).sum();
    let na: u64 = ca.values().map(|v| v * v).sum();
    let nb: u64 = cb.values().map(|v| v * v).sum();
    (dot as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(0.0, 1.0)
}

/// Keeps a generated prompt iff its similarity to every existing prompt and
/// every previously kept generated prompt is below `tau`.
pub fn filter_prompts(generated: &PromptSet, existing: &PromptSet, tau: f64) -> Result<PromptSet> {
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("filter threshold must be in (0, 1], got {tau}"));
    }
    let mut kept: Vec<Prompt> = Vec::new();
    for cand in generated.prompts() {
        let too_close = existing
            .prompts()
            .iter()
            .chain(kept.iter())
            .any(|other| prompt_similarity(&cand.text, &other.text) >= tau);
        if !too_close {
            kept.push(cand.clone());
        }
    }
    Ok(PromptSet { prompts: kept })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(texts: &[&str], prov: Provenance) -> PromptSet {
        PromptSet::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Prompt { prompt_id: format!("{prov:?}-{i}"), text: t.to_string(), class: 0, provenance: prov })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(prompt_similarity("a dog running", "a dog running"), 1.0);
        assert_eq!(prompt_similarity("aaaa", "zzzz"), 0.0);
        assert_eq!(prompt_similarity("A Dog", "a dog"), 1.0);
        let (a, b) = ("a dog wagging its tail", "a dog wagging its tails");
        // Hand count: `a` has 20 distinct trigrams, each once. `b` adds "ail" -> "ils"
        // chain: trigrams "ils" is new and "ail" stays. So b = a + {"ils"}.
        let oracle = 20.0 / (20.0f64 * 21.0).sqrt();
        assert!((prompt_similarity(a, b) - oracle).abs() < 1e-15);
        assert_eq!(prompt_similarity(a, b), prompt_similarity(b, a));
    }

    #[test]
    fn filter_cases() {
        let eval = set(&["a panda eating bamboo in the snow"], Provenance::Evaluation);
        let gen = set(&["a panda eating bamboo in the snow", "a red car on a highway"], Provenance::Generated);
        let out = filter_prompts(&gen, &eval, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.prompts()[0].text, "a red car on a highway");
        let distinct = set(&["one thing", "another idea", "third option"], Provenance::Generated);
        assert_eq!(filter_prompts(&distinct, &PromptSet::default(), 1.0).unwrap(), distinct);
        assert!(filter_prompts(&distinct, &eval, 0.0).is_err());
        assert!(PromptSet::new(vec![gen.prompts()[0].clone(), gen.prompts()[0].clone()]).is_err());
    }

    fn brute_force(gen: &PromptSet, existing: &PromptSet, tau: f64) -> Vec<String> {
        let mut kept: Vec<String> = Vec::new();
        for i in 0..gen.len() {
            let t = &gen.prompts()[i].text;
            let mut max = 0.0f64;
            for e in existing.prompts() {
                max = max.max(prompt_similarity(t, &e.text));
            }
            for k in &kept {
                max = max.max(prompt_similarity(t, k));
            }
            if max < tau {
                kept.push(t.clone());
            }
        }
        kept
    }

    #[test]
    fn planted_duplicates_match_brute_force() {
        let eval = set(&["a dog wagging its tail", "a city street at night"], Provenance::Evaluation);
        let gen = set(
            &[
                "a dog wagging its tails",
                "a sailboat on a calm lake",
                "a sailboat on a calm lake.",
                "fireworks over a harbor",
                "a city street at night, cinematic",
                "fireworks over the harbor",
                "a panda climbing a tree",
                "a panda climbing trees",
                "an astronaut riding a horse",
                "a waterfall in a jungle",
            ],
            Provenance::Generated,
        );
        for tau in [0.5, 0.7, 0.85, 0.95, 1.0] {
            let out: Vec<String> = filter_prompts(&gen, &eval, tau).unwrap().prompts().iter().map(|p| p.text.clone()).collect();
            assert_eq!(out, brute_force(&gen, &eval, tau), "tau {tau}");
            // idempotent
            let once = filter_prompts(&gen, &eval, tau).unwrap();
            assert_eq!(filter_prompts(&once, &eval, tau).unwrap(), once);
        }
        assert!(filter_prompts(&gen, &eval, 0.85).unwrap().len() < gen.len());
    }
}
