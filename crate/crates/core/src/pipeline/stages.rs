use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{emit_report, Correlation, ReportInput};
use crate::bundle::Bundle;
use crate::config::{PatchSource, RunConfig, SamplerKind};
use crate::data::{
    build_pairs as build_preference_pairs, filter_prompts, read_pairs, write_pairs, Candidate, CandidateSet,
    MarginStats, PairFileHeader, PairOptions, Prompt, PromptSet, Provenance,
};
use crate::diffusion::{
    ancestral_sample, ddim_sample, train_base as fit_base, Checkpoint, Condition, Denoiser, DiffusionSchedule,
};
use crate::dpo::{read_trend_csv, train as align_policy, write_trend_csv, LossSetup, TrainingPair};
use crate::error::{HaloError, Result};
use crate::reward::{
    distill_patch_rm, read_raw_labels, read_records, write_records, LabeledVideo, OracleReward, PatchRegressor,
    RewardModel, RewardRecord,
};
use crate::rng::SeededRng;
use crate::synthetic::{annotation_video, make_targets, prompt_text, real_video};
use crate::tensor::Tensor;

use super::files::*;
use super::Pipeline;

pub(super) struct Ctx<'a> {
    pub p: &'a Pipeline,
    pub inputs: &'a BTreeMap<String, String>,
}

impl Ctx<'_> {
    fn cfg(&self) -> &RunConfig {
        &self.p.config
    }

    fn root(&self) -> SeededRng {
        SeededRng::new(self.cfg().seed)
    }

    fn path(&self, file: &str) -> std::path::PathBuf {
        self.p.path(file)
    }

    fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.cfg().schedule)
    }

    /// Embedded in model files; deliberately free of timing so reruns are byte-identical.
    fn provenance(&self) -> Value {
        json!({ "config_digest": self.p.digest(), "seed": self.cfg().seed, "inputs": self.inputs })
    }

    fn oracle(&self) -> Result<OracleReward> {
        OracleReward::new(read_tensors(&self.path(TARGETS))?.into_iter().map(|(_, t)| t).collect(), self.cfg().oracle.lambda)
    }
}

fn read_tensors(path: &std::path::Path) -> Result<Vec<(String, Tensor)>> {
    Ok(Bundle::load(path)?.tensors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoMeta {
    prompt_id: String,
    video_id: String,
    class: usize,
}

/// A bundle of videos whose header lists each video's prompt and class.
struct VideoSet {
    meta: Vec<VideoMeta>,
    videos: Vec<Tensor>,
}

impl VideoSet {
    fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut b = Bundle::new(json!({ "videos": self.meta }));
        for (m, v) in self.meta.iter().zip(&self.videos) {
            b.push(m.video_id.clone(), v.clone());
        }
        b.save(path)
    }

    fn load(path: &std::path::Path) -> Result<Self> {
        let b = Bundle::load(path)?;
        let meta: Vec<VideoMeta> = serde_json::from_value(b.header["videos"].clone())?;
        let videos = meta.iter().map(|m| b.require(&m.video_id).cloned()).collect::<Result<Vec<_>>>()?;
        Ok(Self { meta, videos })
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.meta.iter().enumerate().map(|(i, m)| (m.video_id.as_str(), i)).collect()
    }
}

fn prompt_id(k: usize) -> String {
    format!("p{k:03}")
}

pub(super) fn gen_data(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let root = ctx.root();
    fs::create_dir_all(ctx.p.dir())?;

    // Draw templated prompts one at a time, keeping those the similarity filter admits.
    let mut rng = root.derive("prompts");
    let mut kept = PromptSet::default();
    let mut attempts = 0;
    while kept.len() < cfg.data.prompts {
        attempts += 1;
        if attempts > 1000 * cfg.data.prompts {
            return Err(HaloError::InvalidArgument(format!(
                "only {} prompts pass the similarity filter at tau = {}",
                kept.len(),
                cfg.data.tau
            )));
        }
        let class = kept.len() % cfg.classes;
        let cand = Prompt {
            prompt_id: prompt_id(kept.len()),
            text: prompt_text(class, &mut rng),
            class,
            provenance: Provenance::Generated,
        };
        let admitted = filter_prompts(&PromptSet::new(vec![cand])?, &kept, cfg.data.tau)?;
        if let Some(p) = admitted.prompts().first() {
            let mut all = kept.prompts().to_vec();
            all.push(Prompt { provenance: Provenance::Training, ..p.clone() });
            kept = PromptSet::new(all)?;
        }
    }
    kept.write(&ctx.path(PROMPTS))?;

    let targets = make_targets(cfg.latent, cfg.classes, &root.derive("targets"));
    let mut tb = Bundle::new(json!({ "classes": cfg.classes, "latent": cfg.latent }));
    for (k, t) in targets.iter().enumerate() {
        tb.push(format!("class-{k}"), t.clone());
    }
    tb.save(&ctx.path(TARGETS))?;

    let grid = cfg.grid_spec()?;
    let mut vr = root.derive("train-videos");
    let mut set = VideoSet { meta: Vec::new(), videos: Vec::new() };
    for i in 0..cfg.data.train_videos {
        let class = i % cfg.classes;
        set.videos.push(real_video(&targets[class], &grid, &cfg.world, &mut vr)?);
        set.meta.push(VideoMeta { prompt_id: "train".into(), video_id: format!("t{i:04}"), class });
    }
    set.save(&ctx.path(TRAIN_VIDEOS))?;

    let mut lr = root.derive("label-videos");
    let mut set = VideoSet { meta: Vec::new(), videos: Vec::new() };
    for i in 0..cfg.data.label_videos {
        let class = i % cfg.classes;
        set.videos.push(annotation_video(&targets[class], &grid, &cfg.world, &mut lr)?);
        set.meta.push(VideoMeta { prompt_id: "label".into(), video_id: format!("l{i:04}"), class });
    }
    set.save(&ctx.path(LABEL_VIDEOS))
}

pub(super) fn train_base(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let root = ctx.root();
    let sched = ctx.schedule()?;
    let set = VideoSet::load(&ctx.path(TRAIN_VIDEOS))?;
    let data: Vec<(usize, Tensor)> = set.meta.iter().map(|m| m.class).zip(set.videos).collect();
    let mut d = Denoiser::init(cfg.arch(), &mut root.derive("base-init"))?;
    let losses = fit_base(&mut d, &data, &sched, &cfg.base, &root.derive("base-train"))?;
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(HaloError::NonFinite("base training loss".into()));
    }
    Checkpoint { denoiser: d, schedule: cfg.schedule, steps: cfg.base.steps, provenance: ctx.provenance() }
        .save(&ctx.path(BASE))?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(ctx.path(BASE_LOSS))?));
    w.write_record(["step", "mean_loss"])?;
    for (k, chunk) in losses.chunks(100).enumerate() {
        let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
        w.write_record([(k * 100 + chunk.len()).to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn draw_video(cfg: &RunConfig, d: &Denoiser, class: usize, rng: &mut SeededRng, sched: &DiffusionSchedule) -> Result<Tensor> {
    match cfg.sampler.kind {
        SamplerKind::Ancestral => ancestral_sample(d, cfg.latent, Condition::new(class), rng, sched),
        SamplerKind::Ddim => ddim_sample(d, cfg.latent, Condition::new(class), rng, sched, cfg.sampler.ddim_steps),
    }
}

pub(super) fn sample(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let root = ctx.root().derive("sample");
    let sched = ctx.schedule()?;
    let base = Checkpoint::load(&ctx.path(BASE))?.denoiser;
    let prompts = PromptSet::read(&ctx.path(PROMPTS))?;
    let per = cfg.data.samples_per_prompt;
    let meta: Vec<VideoMeta> = prompts
        .prompts()
        .iter()
        .flat_map(|p| {
            (0..per).map(move |k| VideoMeta {
                prompt_id: p.prompt_id.clone(),
                video_id: format!("{}-v{k}", p.prompt_id),
                class: p.class,
            })
        })
        .collect();
    let videos = ctx.p.exec.try_map_range(meta.len(), |i| {
        draw_video(cfg, &base, meta[i].class, &mut root.derive(&meta[i].video_id), &sched)
    })?;
    VideoSet { meta, videos }.save(&ctx.path(SAMPLES))
}

fn score_all(ctx: &Ctx, oracle: &OracleReward, set: &VideoSet) -> Result<Vec<RewardRecord>> {
    let grid = ctx.cfg().grid_spec()?;
    ctx.p.exec.try_map_range(set.meta.len(), |i| {
        let (m, v) = (&set.meta[i], &set.videos[i]);
        Ok(RewardRecord {
            prompt_id: m.prompt_id.clone(),
            video_id: m.video_id.clone(),
            video: oracle.score_video(m.class, v)?,
            patches: oracle.score_patches(m.class, v, &grid)?.cells,
        })
    })
}

pub(super) fn reward(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let oracle = ctx.oracle()?;
    let samples = VideoSet::load(&ctx.path(SAMPLES))?;
    write_records(&ctx.path(REWARDS), &score_all(ctx, &oracle, &samples)?)?;

    let annotated = VideoSet::load(&ctx.path(LABEL_VIDEOS))?;
    let labels = match &cfg.paths.external_labels {
        Some(path) => {
            let labels = read_raw_labels(path, cfg.paths.external_label_scale)?;
            let known = annotated.index();
            if let Some(bad) = labels.iter().find(|r| !known.contains_key(r.video_id.as_str())) {
                return Err(HaloError::Format(format!("external label for unknown video {}", bad.video_id)));
            }
            labels
        }
        None => score_all(ctx, &oracle, &annotated)?,
    };
    write_records(&ctx.path(LABELS), &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSummary {
    pub heldout_loss: Option<f64>,
    pub heldout_spearman: Option<f64>,
    pub train_videos: usize,
    pub heldout_videos: usize,
    pub final_train_loss: f64,
}

pub(super) fn distill_rm(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let grid = cfg.grid_spec()?;
    let cells = grid.cells();
    let mut dataset = Vec::new();
    for (videos, records) in [(LABEL_VIDEOS, LABELS), (SAMPLES, REWARDS)] {
        let set = VideoSet::load(&ctx.path(videos))?;
        let index = set.index();
        for r in read_records(&ctx.path(records), cells)? {
            let i = *index
                .get(r.video_id.as_str())
                .ok_or_else(|| HaloError::Format(format!("{records}: unknown video {}", r.video_id)))?;
            dataset.push(LabeledVideo {
                class: set.meta[i].class,
                video: set.videos[i].clone(),
                labels: r.patch_grid(grid.rows, grid.cols)?,
            });
        }
    }
    let report = distill_patch_rm(&dataset, cfg.latent, &grid, cfg.classes, &cfg.distill, &ctx.root().derive("distill"))?;
    report.regressor.to_bundle(ctx.provenance())?.save(&ctx.path(REGRESSOR))?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(ctx.path(DISTILL_LOG))?));
    w.write_record(["epoch", "train_loss"])?;
    for (k, l) in report.epoch_losses.iter().enumerate() {
        w.write_record([(k + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    let finite = |x: f64| x.is_finite().then_some(x);
    let summary = DistillSummary {
        heldout_loss: finite(report.heldout_loss),
        heldout_spearman: finite(report.heldout_spearman),
        train_videos: report.train_videos,
        heldout_videos: report.heldout_videos,
        final_train_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
    };
    fs::write(ctx.path(DISTILL_REPORT), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

pub(super) fn build_pairs(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let grid = cfg.grid_spec()?;
    let samples = VideoSet::load(&ctx.path(SAMPLES))?;
    let teacher = read_records(&ctx.path(REWARDS), grid.cells())?;
    let index = samples.index();
    let (regressor, _) = PatchRegressor::from_bundle(&Bundle::load(&ctx.path(REGRESSOR))?)?;

    // Video scores come from the teacher; patch scores from the configured source.
    let scored: Vec<RewardRecord> = ctx.p.exec.try_map_range(teacher.len(), |k| {
        let r = &teacher[k];
        let i = *index
            .get(r.video_id.as_str())
            .ok_or_else(|| HaloError::Format(format!("reward record for unknown video {}", r.video_id)))?;
        let patches = match cfg.pairs.patch_source {
            PatchSource::Distilled => regressor.score_patches(samples.meta[i].class, &samples.videos[i], &grid)?.cells,
            PatchSource::Oracle => r.patches.clone(),
        };
        Ok::<_, HaloError>(RewardRecord { patches, ..r.clone() })
    })?;
    write_records(&ctx.path(SCORED), &scored)?;

    let mut sets: Vec<CandidateSet> = Vec::new();
    for r in &scored {
        let cand = Candidate {
            video_id: r.video_id.clone(),
            video_reward: r.video.scalarize()?,
            patch_rewards: r.patch_grid(grid.rows, grid.cols)?.scalarized(),
        };
        match sets.last_mut() {
            Some(s) if s.prompt_id == r.prompt_id => s.candidates.push(cand),
            _ => sets.push(CandidateSet { prompt_id: r.prompt_id.clone(), candidates: vec![cand] }),
        }
    }
    let opts = PairOptions { median_scope: cfg.pairs.median_scope };
    let (pairs, stats) = build_preference_pairs(&sets, &opts, ctx.p.exec)?;
    let header = PairFileHeader { m_v: stats.m_v, m_p: stats.m_p, config_digest: ctx.p.digest().to_string() };
    write_pairs(&ctx.path(PAIRS), &header, &pairs)
}

pub(super) fn align(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let sched = ctx.schedule()?;
    let (header, pairs) = read_pairs(&ctx.path(PAIRS))?;
    let samples = VideoSet::load(&ctx.path(SAMPLES))?;
    let index = samples.index();
    let lookup = |id: &str| {
        index.get(id).copied().ok_or_else(|| HaloError::Format(format!("pair references unknown video {id}")))
    };
    let training: Vec<TrainingPair> = pairs
        .iter()
        .map(|p| {
            let (w, l) = (lookup(&p.winner_id)?, lookup(&p.loser_id)?);
            Ok(TrainingPair {
                class: samples.meta[w].class,
                winner: samples.videos[w].clone(),
                loser: samples.videos[l].clone(),
                v_w: p.v_w,
                v_l: p.v_l,
                p_w: p.p_w.clone(),
                p_l: p.p_l.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let base = Checkpoint::load(&ctx.path(BASE))?;
    let setup = LossSetup {
        beta_t: cfg.dpo.beta * sched.steps() as f64,
        grid: cfg.grid_spec()?,
        stats: MarginStats { m_v: header.m_v, m_p: header.m_p },
        video_median: cfg.dpo.video_weight_median,
    };
    let out = align_policy(&training, &base.denoiser, &sched, &setup, &cfg.dpo, &ctx.root().derive("dpo"), ctx.p.exec)?;
    Checkpoint { denoiser: out.denoiser, schedule: cfg.schedule, steps: cfg.dpo.steps, provenance: ctx.provenance() }
        .save(&ctx.path(ALIGNED))?;
    write_trend_csv(BufWriter::new(File::create(ctx.path(TREND))?), &out.trend)
}

pub(super) fn analyze(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg();
    let grid = cfg.grid_spec()?;
    let sched = ctx.schedule()?;
    let oracle = ctx.oracle()?;
    let corpus = read_records(&ctx.path(SCORED), grid.cells())?;
    let trend = read_trend_csv(File::open(ctx.path(TREND))?)?;
    let distill: DistillSummary = serde_json::from_str(&fs::read_to_string(ctx.path(DISTILL_REPORT))?)?;

    // Both models start from the same noise for each evaluation video.
    let eval = ctx.root().derive("eval");
    let score = |ck: &Checkpoint| -> Result<(Vec<f64>, Vec<crate::reward::PatchRewardGrid>)> {
        let rows = ctx.p.exec.try_map_range(cfg.analysis.eval_videos, |k| {
            let class = k % cfg.classes;
            let v = draw_video(cfg, &ck.denoiser, class, &mut eval.derive(&format!("video-{k}")), &sched)?;
            Ok::<_, HaloError>((oracle.score_video(class, &v)?.scalarize()?, oracle.score_patches(class, &v, &grid)?))
        })?;
        Ok(rows.into_iter().unzip())
    };
    let (video_before, before) = score(&Checkpoint::load(&ctx.path(BASE))?)?;
    let (video_after, after) = score(&Checkpoint::load(&ctx.path(ALIGNED))?)?;

    let mut correlations = Vec::new();
    if let Some(rho) = distill.heldout_spearman {
        correlations.push(Correlation {
            comparison: "regressor_vs_teacher_heldout".into(),
            n: distill.heldout_videos * grid.cells(),
            spearman: rho,
        });
    }
    let notes = vec![
        ("config_digest".to_string(), ctx.p.digest().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("oracle_lambda".to_string(), cfg.oracle.lambda.to_string()),
        ("eval_videos".to_string(), cfg.analysis.eval_videos.to_string()),
    ];
    let input = ReportInput {
        corpus: &corpus,
        rows: grid.rows,
        cols: grid.cols,
        before: &before,
        after: &after,
        video_before: &video_before,
        video_after: &video_after,
        trend: &trend,
        correlations: &correlations,
        notes: &notes,
    };
    emit_report(&input, &ctx.path(REPORT_DIR))?;
    Ok(())
}
