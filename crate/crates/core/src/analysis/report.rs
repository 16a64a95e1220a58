//! Report assembly: CSV tables, one SVG figure and a plain-text summary.
//!
//! Every file is rendered in memory first and then written under a
//! temporary name and renamed, so a failed run leaves no partial report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dpo::{write_trend_csv, TrendPoint};
use crate::error::{HaloError, Result};
use crate::reward::{PatchRewardGrid, RewardRecord, SCORE_MAX, SCORE_MIN};

use super::consistency::{consistency_distribution, patch_mean_scalar, ConsistencyCounts, ConsistencyLabel};
use super::levels::{inner_variance, sorted_levels, LevelStats, HIST_BINS};
use super::stats::{mean, spearman};

pub const REPORT_FILES: [&str; 8] = [
    "consistency.csv",
    "variance.csv",
    "levels_before.csv",
    "levels_after.csv",
    "trend.csv",
    "spearman.csv",
    "report.svg",
    "summary.txt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub comparison: String,
    pub n: usize,
    pub spearman: f64,
}

/// Everything the report is computed from.
#[derive(Debug, Clone, Copy)]
pub struct ReportInput<'a> {
    /// Scored videos, several per prompt, for the consistency and variance analyses.
    pub corpus: &'a [RewardRecord],
    pub rows: usize,
    pub cols: usize,
    /// Patch rewards of videos sampled before and after alignment.
    pub before: &'a [PatchRewardGrid],
    pub after: &'a [PatchRewardGrid],
    /// Scalar video rewards of the same samples.
    pub video_before: &'a [f64],
    pub video_after: &'a [f64],
    pub trend: &'a [TrendPoint],
    /// Correlations computed elsewhere, e.g. the distilled model against its teacher.
    pub correlations: &'a [Correlation],
    /// Extra `key: value` lines for the summary.
    pub notes: &'a [(String, String)],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub prompt_id: String,
    pub video_id: String,
    pub patch_mean: f64,
    pub inner_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub consistency: ConsistencyCounts,
    pub variance: Vec<VarianceRow>,
    pub levels_before: LevelStats,
    pub levels_after: LevelStats,
    pub video_mean_before: f64,
    pub video_mean_after: f64,
    pub trend: Vec<TrendPoint>,
    pub correlations: Vec<Correlation>,
    pub notes: Vec<(String, String)>,
}

impl Report {
    pub fn compute(input: &ReportInput<'_>) -> Result<Self> {
        if input.video_before.is_empty() || input.video_after.is_empty() {
            return Err(HaloError::EmptyDataset("no before/after video rewards".into()));
        }
        let consistency = consistency_distribution(input.corpus, input.rows, input.cols)?;
        let mut variance = Vec::with_capacity(input.corpus.len());
        let (mut videos, mut patch_means) = (Vec::new(), Vec::new());
        for r in input.corpus {
            let g = r.patch_grid(input.rows, input.cols)?;
            let pm = patch_mean_scalar(&g);
            videos.push(r.video.scalarize()?);
            patch_means.push(pm);
            variance.push(VarianceRow {
                prompt_id: r.prompt_id.clone(),
                video_id: r.video_id.clone(),
                patch_mean: pm,
                inner_variance: inner_variance(&g),
            });
        }
        let mut correlations = input.correlations.to_vec();
        // undefined on a constant corpus; the row is simply left out then
        if let Ok(rho) = spearman(&videos, &patch_means) {
            correlations.push(Correlation { comparison: "video_vs_patch_mean".into(), n: videos.len(), spearman: rho });
        }
        Ok(Self {
            consistency,
            variance,
            levels_before: sorted_levels(input.before)?,
            levels_after: sorted_levels(input.after)?,
            video_mean_before: mean(input.video_before),
            video_mean_after: mean(input.video_after),
            trend: input.trend.to_vec(),
            correlations,
            notes: input.notes.to_vec(),
        })
    }

    fn consistency_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "count", "proportion"])?;
        for l in ConsistencyLabel::ALL {
            w.write_record([
                l.name().to_string(),
                self.consistency.count(l).to_string(),
                self.consistency.proportion(l).to_string(),
            ])?;
        }
        finish(w)
    }

    fn variance_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.variance {
            w.serialize(row)?;
        }
        finish(w)
    }

    fn spearman_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["comparison", "n", "spearman"])?;
        for c in &self.correlations {
            w.write_record([c.comparison.clone(), c.n.to_string(), c.spearman.to_string()])?;
        }
        finish(w)
    }

    fn trend_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_trend_csv(&mut buf, &self.trend)?;
        Ok(buf)
    }

    fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.consistency;
        let _ = writeln!(s, "videos: {}", self.variance.len());
        let _ = writeln!(s, "same-prompt pairs: {}", c.total());
        for l in ConsistencyLabel::ALL {
            let _ = writeln!(s, "  {:<10} {:>6}  {:.4}", l.name(), c.count(l), c.proportion(l));
        }
        let vars: Vec<f64> = self.variance.iter().map(|r| r.inner_variance).collect();
        let _ = writeln!(s, "mean inner-video patch variance: {:.6}", mean(&vars));
        let _ = writeln!(s, "level means (before -> after):");
        for (k, (b, a)) in self.levels_before.levels.iter().zip(&self.levels_after.levels).enumerate() {
            let _ = writeln!(s, "  L{k}  {:.4} -> {:.4}  ({:+.4})", b.mean, a.mean, a.mean - b.mean);
        }
        let _ = writeln!(
            s,
            "mean video reward: {:.4} -> {:.4}  ({:+.4})",
            self.video_mean_before,
            self.video_mean_after,
            self.video_mean_after - self.video_mean_before
        );
        if let Some(last) = self.trend.last() {
            let _ = writeln!(
                s,
                "final implicit reward at step {}: winner {:.6}, loser {:.6}",
                last.step, last.winner_reward, last.loser_reward
            );
        }
        for c in &self.correlations {
            let _ = writeln!(s, "spearman {} (n = {}): {:.4}", c.comparison, c.n, c.spearman);
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    fn render(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        Ok(vec![
            ("consistency.csv", self.consistency_csv()?),
            ("variance.csv", self.variance_csv()?),
            ("levels_before.csv", levels_csv(&self.levels_before)?),
            ("levels_after.csv", levels_csv(&self.levels_after)?),
            ("trend.csv", self.trend_csv()?),
            ("spearman.csv", self.spearman_csv()?),
            ("report.svg", svg::render(self).into_bytes()),
            ("summary.txt", self.summary().into_bytes()),
        ])
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| HaloError::Io(e.into_error()))
}

fn levels_csv(stats: &LevelStats) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["level".to_string(), "count".into(), "mean".into(), "std".into()];
    header.extend((0..HIST_BINS).map(|k| format!("bin_{k:02}")));
    w.write_record(&header)?;
    for (k, l) in stats.levels.iter().enumerate() {
        let mut row = vec![format!("L{k}"), l.count.to_string(), l.mean.to_string(), l.std.to_string()];
        row.extend(l.histogram.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Computes the report and writes [`REPORT_FILES`] into `dir`.
pub fn emit_report(input: &ReportInput<'_>, dir: &Path) -> Result<Report> {
    let report = Report::compute(input)?;
    let files = report.render()?;
    fs::create_dir_all(dir)?;
    let staged: Vec<(PathBuf, PathBuf)> =
        files.iter().map(|(name, _)| (dir.join(format!(".{name}.partial")), dir.join(name))).collect();
    let written = files.iter().zip(&staged).try_for_each(|((_, bytes), (tmp, _))| fs::write(tmp, bytes));
    if let Err(e) = written {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e.into());
    }
    for (tmp, dst) in &staged {
        fs::rename(tmp, dst)?;
    }
    Ok(report)
}

mod svg {
    use std::fmt::Write as _;

    use super::*;

    const PANEL_W: f64 = 440.0;
    const PANEL_H: f64 = 280.0;
    const MARGIN: f64 = 44.0;

    struct Frame {
        x0: f64,
        y0: f64,
    }

    impl Frame {
        fn inner_w(&self) -> f64 {
            PANEL_W - 2.0 * MARGIN
        }

        fn inner_h(&self) -> f64 {
            PANEL_H - 2.0 * MARGIN
        }

        /// Maps unit coordinates (origin bottom-left) into the panel.
        fn at(&self, u: f64, v: f64) -> (f64, f64) {
            (self.x0 + MARGIN + u * self.inner_w(), self.y0 + PANEL_H - MARGIN - v * self.inner_h())
        }

        fn axes(&self, s: &mut String, title: &str, lo: f64, hi: f64) {
            let (l, b) = self.at(0.0, 0.0);
            let (r, t) = self.at(1.0, 1.0);
            let _ = write!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
                l,
                t,
                r - l,
                b - t
            );
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{title}</text>"#,
                (l + r) / 2.0,
                t - 14.0
            );
            let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{lo:.3}</text>"#, l - 4.0, b);
            let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{hi:.3}</text>"#, l - 4.0, t + 8.0);
        }
    }

    fn unit(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    fn polyline(s: &mut String, points: &[(f64, f64)], color: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = write!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#, pts.join(" "));
    }

    fn legend(s: &mut String, f: &Frame, entries: &[(&str, &str)]) {
        let (x, y) = f.at(0.02, 0.97);
        for (k, (label, color)) in entries.iter().enumerate() {
            let yy = y + 13.0 * k as f64;
            let _ = write!(s, r#"<rect x="{x:.1}" y="{:.1}" width="9" height="9" fill="{color}"/>"#, yy);
            let _ = write!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10">{label}</text>"#, x + 13.0, yy + 8.5);
        }
    }

    fn consistency(s: &mut String, f: &Frame, c: &ConsistencyCounts) {
        f.axes(s, "Preference consistency", 0.0, 1.0);
        let colors = ["#4c72b0", "#bbbbbb", "#c44e52"];
        for (k, (l, color)) in ConsistencyLabel::ALL.iter().zip(colors).enumerate() {
            let p = c.proportion(*l);
            let (x, top) = f.at(0.1 + 0.3 * k as f64, p);
            let (_, base) = f.at(0.0, 0.0);
            let w = 0.2 * f.inner_w();
            let _ = write!(
                s,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{w:.1}" height="{:.1}" fill="{color}"/>"#,
                base - top
            );
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{} {:.3}</text>"#,
                x + w / 2.0,
                base + 14.0,
                l.name(),
                p
            );
        }
    }

    fn variance(s: &mut String, f: &Frame, rows: &[VarianceRow]) {
        // the largest possible variance of values in [1, 4] is 2.25
        let hi = 0.25 * (SCORE_MAX - SCORE_MIN).powi(2);
        let mut bins = vec![0usize; HIST_BINS];
        for r in rows {
            let k = ((r.inner_variance / hi * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            bins[k] += 1;
        }
        let top = *bins.iter().max().unwrap_or(&1).max(&1) as f64;
        f.axes(s, "Inner-video patch reward variance", 0.0, top);
        for (k, &n) in bins.iter().enumerate() {
            let (x, y) = f.at(k as f64 / HIST_BINS as f64, n as f64 / top);
            let (_, base) = f.at(0.0, 0.0);
            let w = f.inner_w() / HIST_BINS as f64 - 1.0;
            let _ = write!(s, r##"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="#55a868"/>"##, base - y);
        }
        let (r, b) = f.at(1.0, 0.0);
        let _ = write!(s, r#"<text x="{r:.1}" y="{:.1}" font-size="10" text-anchor="end">{hi:.2}</text>"#, b + 14.0);
    }

    fn levels(s: &mut String, f: &Frame, before: &LevelStats, after: &LevelStats) {
        let (lo, hi) = bounds(before.means().into_iter().chain(after.means()));
        f.axes(s, "Sorted patch reward levels L0-L8", lo, hi);
        let n = before.levels.len().max(2) as f64 - 1.0;
        for (stats, color) in [(before, "#999999"), (after, "#4c72b0")] {
            let pts: Vec<(f64, f64)> =
                stats.means().iter().enumerate().map(|(k, m)| f.at(k as f64 / n, unit(*m, lo, hi))).collect();
            polyline(s, &pts, color);
        }
        legend(s, f, &[("before", "#999999"), ("after", "#4c72b0")]);
    }

    fn trend(s: &mut String, f: &Frame, trend: &[TrendPoint]) {
        let (lo, hi) = bounds(trend.iter().flat_map(|p| [p.winner_reward, p.loser_reward]));
        f.axes(s, "Implicit reward during alignment", lo, hi);
        let last = trend.last().map_or(1, |p| p.step.max(1)) as f64;
        for (pick, color) in [(true, "#4c72b0"), (false, "#c44e52")] {
            let pts: Vec<(f64, f64)> = trend
                .iter()
                .map(|p| {
                    let v = if pick { p.winner_reward } else { p.loser_reward };
                    f.at(p.step as f64 / last, unit(v, lo, hi))
                })
                .collect();
            polyline(s, &pts, color);
        }
        legend(s, f, &[("winner", "#4c72b0"), ("loser", "#c44e52")]);
    }

    pub(super) fn render(report: &Report) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
            w = 2.0 * PANEL_W,
            h = 2.0 * PANEL_H
        );
        s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
        consistency(&mut s, &Frame { x0: 0.0, y0: 0.0 }, &report.consistency);
        variance(&mut s, &Frame { x0: PANEL_W, y0: 0.0 }, &report.variance);
        levels(&mut s, &Frame { x0: 0.0, y0: PANEL_H }, &report.levels_before, &report.levels_after);
        if !report.trend.is_empty() {
            trend(&mut s, &Frame { x0: PANEL_W, y0: PANEL_H }, &report.trend);
        }
        s.push_str("</svg>\n");
        s
    }
}
