//! Candidate scoring margins and preference-pair admission.
//!
//! Every unordered pair of candidates for a prompt has a video margin
//! `|v_a - v_b|` and one patch margin per grid cell. Medians `m_V` and `m_P`
//! are taken over the whole corpus (or per prompt, for ablation); a pair is
//! kept when its video margin exceeds `m_V` or any patch margin exceeds
//! `m_P`. The winner is the side with the higher video reward, ties going
//! to the lexicographically smaller video id.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::stats::median;
use crate::error::{invalid, shape_err, HaloError, Result};
use crate::jsonl;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub video_id: String,
    pub video_reward: f64,
    /// Scalarized patch rewards, row-major.
    pub patch_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub prompt_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMargin {
    pub a: usize,
    pub b: usize,
    pub video: f64,
    pub patches: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub m_v: f64,
    pub m_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub v_w: f64,
    pub v_l: f64,
    pub p_w: Vec<f64>,
    pub p_l: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianScope {
    #[default]
    Global,
    PerPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairOptions {
    pub median_scope: MedianScope,
}

/// All unordered candidate pairs with absolute reward margins.
pub fn pairwise_margins(set: &CandidateSet) -> Result<Vec<PairMargin>> {
    let c = &set.candidates;
    if c.len() < 2 {
        return invalid(format!("prompt {} has {} candidates, need 2", set.prompt_id, c.len()));
    }
    let cells = c[0].patch_rewards.len();
    if c.iter().any(|x| x.patch_rewards.len() != cells) {
        return shape_err(format!("prompt {}: candidates disagree on patch count", set.prompt_id));
    }
    if c.iter().any(|x| !x.video_reward.is_finite() || x.patch_rewards.iter().any(|p| !p.is_finite())) {
        return Err(HaloError::NonFinite(format!("rewards of prompt {}", set.prompt_id)));
    }
    let mut out = Vec::with_capacity(c.len() * (c.len() - 1) / 2);
    for a in 0..c.len() {
        for b in a + 1..c.len() {
            out.push(PairMargin {
                a,
                b,
                video: (c[a].video_reward - c[b].video_reward).abs(),
                patches: c[a].patch_rewards.iter().zip(&c[b].patch_rewards).map(|(x, y)| (x - y).abs()).collect(),
            });
        }
    }
    Ok(out)
}

fn stats_of(margins: &[&PairMargin]) -> Result<MarginStats> {
    let videos: Vec<f64> = margins.iter().map(|m| m.video).collect();
    let patches: Vec<f64> = margins.iter().flat_map(|m| m.patches.iter().copied()).collect();
    Ok(MarginStats { m_v: median(&videos)?, m_p: median(&patches)? })
}

pub fn admits(m: &PairMargin, stats: &MarginStats) -> bool {
    m.video > stats.m_v || m.patches.iter().any(|&p| p > stats.m_p)
}

/// `true` when candidate `a` beats `b`.
fn a_wins(a: &Candidate, b: &Candidate) -> bool {
    match a.video_reward.total_cmp(&b.video_reward) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.video_id < b.video_id,
    }
}

pub fn orient(a: &Candidate, b: &Candidate, prompt_id: &str) -> PreferencePair {
    let (w, l) = if a_wins(a, b) { (a, b) } else { (b, a) };
    PreferencePair {
        prompt_id: prompt_id.to_string(),
        winner_id: w.video_id.clone(),
        loser_id: l.video_id.clone(),
        v_w: w.video_reward,
        v_l: l.video_reward,
        p_w: w.patch_rewards.clone(),
        p_l: l.patch_rewards.clone(),
    }
}

/// Builds the preference dataset. Returned stats are always corpus-global.
pub fn build_pairs(
    sets: &[CandidateSet],
    opts: &PairOptions,
    exec: Exec,
) -> Result<(Vec<PreferencePair>, MarginStats)> {
    let usable: Vec<&CandidateSet> = sets.iter().filter(|s| s.candidates.len() >= 2).collect();
    if usable.is_empty() {
        return Err(HaloError::EmptyDataset("no prompt has two or more candidates".into()));
    }
    let margins: Vec<Vec<PairMargin>> = exec.map(&usable, |s| pairwise_margins(s)).into_iter().collect::<Result<_>>()?;
    let cells = usable[0].candidates[0].patch_rewards.len();
    if usable.iter().any(|s| s.candidates[0].patch_rewards.len() != cells) {
        return shape_err("candidate sets disagree on patch count");
    }
    let all: Vec<&PairMargin> = margins.iter().flatten().collect();
    let global = stats_of(&all)?;

    let mut pairs = Vec::new();
    for (set, ms) in usable.iter().zip(&margins) {
        let stats = match opts.median_scope {
            MedianScope::Global => global,
            MedianScope::PerPrompt => stats_of(&ms.iter().collect::<Vec<_>>())?,
        };
        let mut kept: Vec<PreferencePair> = ms
            .iter()
            .filter(|m| admits(m, &stats))
            .map(|m| orient(&set.candidates[m.a], &set.candidates[m.b], &set.prompt_id))
            .collect();
        kept.sort_by(|x, y| (&x.winner_id, &x.loser_id).cmp(&(&y.winner_id, &y.loser_id)));
        pairs.extend(kept);
    }
    if pairs.is_empty() {
        return Err(HaloError::EmptyDataset(format!(
            "no pair clears the margin medians (m_V = {}, m_P = {})",
            global.m_v, global.m_p
        )));
    }
    Ok((pairs, global))
}

/// Leading line of a pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFileHeader {
    pub m_v: f64,
    pub m_p: f64,
    pub config_digest: String,
}

pub fn write_pairs(path: &Path, header: &PairFileHeader, pairs: &[PreferencePair]) -> Result<()> {
    jsonl::write(path, Some(header), pairs)
}

pub fn read_pairs(path: &Path) -> Result<(PairFileHeader, Vec<PreferencePair>)> {
    jsonl::read_with_header(path)
}
