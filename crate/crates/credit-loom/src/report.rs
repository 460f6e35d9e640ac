//! Log analysis: overall statistics, per-round and per-pattern breakdowns,
//! prediction-shift tables, and CSV export of credit/accuracy series.
//!
//! All counting is exact integer arithmetic; percentages render half-up at
//! one decimal and mean scores at two decimals.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::critic::FailurePattern;
use crate::datastore::LogRecord;
use crate::error::{Error, Result};
use crate::optimizer::RunManifest;

/// Half-up rounding at `decimals` places (positive values).
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    (value * factor + 0.5).floor() / factor
}

fn pct1(count: usize, total: usize) -> f64 {
    round_half_up(count as f64 * 100.0 / total as f64, 1)
}

fn mean2(sum: u64, count: usize) -> f64 {
    round_half_up(sum as f64 / count as f64, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Cell {
    count: usize,
    score_sum: u64,
}

/// Aggregate statistics of one run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total: usize,
    pub correct: usize,
    score_sum: u64,
    rounds: BTreeMap<u32, Cell>,
    patterns: BTreeMap<FailurePattern, Cell>,
    cross: BTreeMap<(u32, FailurePattern), usize>,
    categories: BTreeMap<String, (usize, usize)>,
}

impl RunSummary {
    pub fn accuracy_pct(&self) -> f64 {
        pct1(self.correct, self.total)
    }

    pub fn incorrect(&self) -> usize {
        self.total - self.correct
    }

    pub fn mean_score(&self) -> f64 {
        mean2(self.score_sum, self.total)
    }

    pub fn round_count(&self, round: u32) -> usize {
        self.rounds.get(&round).map_or(0, |c| c.count)
    }

    pub fn round_share_pct(&self, round: u32) -> f64 {
        pct1(self.round_count(round), self.total)
    }

    pub fn round_mean_score(&self, round: u32) -> f64 {
        let cell = self.rounds.get(&round).copied().unwrap_or_default();
        if cell.count == 0 {
            0.0
        } else {
            mean2(cell.score_sum, cell.count)
        }
    }

    pub fn pattern_count(&self, pattern: FailurePattern) -> usize {
        self.patterns.get(&pattern).map_or(0, |c| c.count)
    }

    pub fn pattern_share_pct(&self, pattern: FailurePattern) -> f64 {
        pct1(self.pattern_count(pattern), self.total)
    }

    pub fn pattern_mean_score(&self, pattern: FailurePattern) -> f64 {
        let cell = self.patterns.get(&pattern).copied().unwrap_or_default();
        if cell.count == 0 {
            0.0
        } else {
            mean2(cell.score_sum, cell.count)
        }
    }

    pub fn cross_count(&self, round: u32, pattern: FailurePattern) -> usize {
        self.cross.get(&(round, pattern)).copied().unwrap_or(0)
    }

    pub fn rounds_present(&self) -> Vec<u32> {
        self.rounds.keys().copied().collect()
    }

    /// Patterns ordered by descending count, ties by label.
    pub fn patterns_by_count(&self) -> Vec<FailurePattern> {
        let mut out: Vec<(FailurePattern, usize)> =
            self.patterns.iter().map(|(p, c)| (*p, c.count)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.label().cmp(b.0.label())));
        out.into_iter().map(|(p, _)| p).collect()
    }

    /// Per-category (count, correct); present only when records carried one.
    pub fn categories(&self) -> &BTreeMap<String, (usize, usize)> {
        &self.categories
    }
}

/// Exact-count summary of `records`.
pub fn report_summary(records: &[LogRecord]) -> Result<RunSummary> {
    if records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut summary = RunSummary {
        total: records.len(),
        correct: 0,
        score_sum: 0,
        rounds: BTreeMap::new(),
        patterns: BTreeMap::new(),
        cross: BTreeMap::new(),
        categories: BTreeMap::new(),
    };
    for record in records {
        if record.correct {
            summary.correct += 1;
        }
        summary.score_sum += u64::from(record.score);
        let round = summary.rounds.entry(record.decided_round).or_default();
        round.count += 1;
        round.score_sum += u64::from(record.score);
        let pattern = summary.patterns.entry(record.pattern).or_default();
        pattern.count += 1;
        pattern.score_sum += u64::from(record.score);
        *summary
            .cross
            .entry((record.decided_round, record.pattern))
            .or_default() += 1;
        if let Some(category) = &record.category {
            let entry = summary.categories.entry(category.clone()).or_default();
            entry.0 += 1;
            entry.1 += usize::from(record.correct);
        }
    }
    Ok(summary)
}

/// Before/after transition counts over paired instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftTable {
    /// wrong before, wrong after
    pub stay_wrong: usize,
    /// correct before, wrong after
    pub regress: usize,
    /// wrong before, correct after
    pub repair: usize,
    /// correct before, correct after
    pub stay_right: usize,
}

impl ShiftTable {
    pub fn total(&self) -> usize {
        self.stay_wrong + self.regress + self.repair + self.stay_right
    }

    pub fn cells(&self) -> [(&'static str, usize); 4] {
        [
            ("wrong -> wrong", self.stay_wrong),
            ("correct -> wrong", self.regress),
            ("wrong -> correct", self.repair),
            ("correct -> correct", self.stay_right),
        ]
    }

    pub fn pct(&self, count: usize) -> f64 {
        pct1(count, self.total())
    }
}

/// Pairs the two logs by instance id and counts the four outcome shifts.
/// The logs must cover the same instance set.
pub fn report_shift(before: &[LogRecord], after: &[LogRecord]) -> Result<ShiftTable> {
    let index = |records: &[LogRecord]| -> Result<BTreeMap<String, bool>> {
        let mut map = BTreeMap::new();
        for r in records {
            if map.insert(r.instance_id.clone(), r.correct).is_some() {
                return Err(Error::DuplicateId(r.instance_id.clone()));
            }
        }
        Ok(map)
    };
    let before = index(before)?;
    let after = index(after)?;

    let only_before: Vec<String> = before
        .keys()
        .filter(|k| !after.contains_key(*k))
        .cloned()
        .collect();
    let only_after: Vec<String> = after
        .keys()
        .filter(|k| !before.contains_key(*k))
        .cloned()
        .collect();
    if !only_before.is_empty() || !only_after.is_empty() {
        return Err(Error::IdMismatch {
            only_before,
            only_after,
        });
    }

    let mut table = ShiftTable {
        stay_wrong: 0,
        regress: 0,
        repair: 0,
        stay_right: 0,
    };
    for (id, was_correct) in &before {
        let is_correct = after[id];
        match (was_correct, is_correct) {
            (false, false) => table.stay_wrong += 1,
            (true, false) => table.regress += 1,
            (false, true) => table.repair += 1,
            (true, true) => table.stay_right += 1,
        }
    }
    Ok(table)
}

/// Mean and sample standard deviation of per-seed accuracies (in percent or
/// fraction, the caller's choice of unit). A single run has zero deviation.
pub fn accuracy_mean_std(accuracies: &[f64]) -> Result<(f64, f64)> {
    if accuracies.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    if accuracies.len() == 1 {
        return Ok((mean, 0.0));
    }
    let variance = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, variance.sqrt()))
}

/// Writes `accuracy.csv` (one row per iteration) and `credit.csv` (one row
/// per role and per round per iteration) under `out_dir`. Deterministic
/// ordering, LF line endings; re-export is byte-identical.
pub fn export_series(manifest: &RunManifest, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if manifest.snapshots.is_empty() {
        return Err(Error::MissingSnapshots);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut accuracy = String::from("iteration,accuracy\n");
    for snapshot in &manifest.snapshots {
        let measured = manifest
            .history
            .iter()
            .find(|h| h.iteration == snapshot.iteration && h.phase == "roles")
            .map(|h| h.accuracy)
            .unwrap_or(0.0);
        accuracy.push_str(&format!("{},{:.4}\n", snapshot.iteration, measured));
    }
    let accuracy_path = out_dir.join("accuracy.csv");
    std::fs::write(&accuracy_path, accuracy)
        .map_err(|e| Error::io(accuracy_path.display().to_string(), e))?;

    let mut credit = String::from("iteration,kind,id,credit,buffer_count\n");
    for snapshot in &manifest.snapshots {
        for (role, value) in &snapshot.role_credits {
            credit.push_str(&format!("{},role,{role},{value:.6},\n", snapshot.iteration));
        }
        for (round, alpha) in &snapshot.round_alpha {
            let buffered = snapshot.round_buffer.get(round).copied().unwrap_or(0);
            credit.push_str(&format!(
                "{},round,{round},{alpha:.6},{buffered}\n",
                snapshot.iteration
            ));
        }
    }
    let credit_path = out_dir.join("credit.csv");
    std::fs::write(&credit_path, credit)
        .map_err(|e| Error::io(credit_path.display().to_string(), e))?;

    Ok((accuracy_path, credit_path))
}

/// Plain-text rendering of a summary, aligned for terminals.
pub fn render_summary(summary: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24} {}\n", "Total predictions", summary.total));
    out.push_str(&format!(
        "{:<24} {} ({:.1}%)\n",
        "Correct predictions",
        summary.correct,
        summary.accuracy_pct()
    ));
    out.push_str(&format!(
        "{:<24} {} ({:.1}%)\n",
        "Incorrect predictions",
        summary.incorrect(),
        round_half_up(100.0 - summary.accuracy_pct(), 1)
    ));
    out.push_str(&format!(
        "{:<24} {:.2}\n",
        "Mean evaluation score",
        summary.mean_score()
    ));

    out.push_str("\nRound  Count  Share   Mean score\n");
    for round in summary.rounds_present() {
        out.push_str(&format!(
            "{:>5}  {:>5}  {:>5.1}%  {:>10.2}\n",
            round,
            summary.round_count(round),
            summary.round_share_pct(round),
            summary.round_mean_score(round)
        ));
    }

    out.push_str(&format!(
        "\n{:<28} Count  Share   Mean score\n",
        "Failure pattern"
    ));
    for pattern in summary.patterns_by_count() {
        out.push_str(&format!(
            "{:<28} {:>5}  {:>5.1}%  {:>10.2}\n",
            pattern.label(),
            summary.pattern_count(pattern),
            summary.pattern_share_pct(pattern),
            summary.pattern_mean_score(pattern)
        ));
    }

    out.push_str("\nRound x pattern counts\n");
    out.push_str(&format!("{:<7}", "Round"));
    let patterns = summary.patterns_by_count();
    for pattern in &patterns {
        out.push_str(&format!(" {:>10}", shorten(pattern.label())));
    }
    out.push('\n');
    for round in summary.rounds_present() {
        out.push_str(&format!("{round:<7}"));
        for pattern in &patterns {
            out.push_str(&format!(" {:>10}", summary.cross_count(round, *pattern)));
        }
        out.push('\n');
    }

    if !summary.categories().is_empty() {
        out.push_str(&format!("\n{:<24} Count  Accuracy\n", "Category"));
        for (category, (count, correct)) in summary.categories() {
            out.push_str(&format!(
                "{category:<24} {count:>5}  {:>7.1}%\n",
                pct1(*correct, *count)
            ));
        }
    }
    out
}

fn shorten(label: &str) -> String {
    if label.len() <= 10 {
        label.to_string()
    } else {
        label.chars().take(9).collect::<String>() + "."
    }
}

/// Plain-text rendering of a shift table.
pub fn render_shift(table: &ShiftTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<20} Count  Share\n", "Shift"));
    for (name, count) in table.cells() {
        out.push_str(&format!(
            "{name:<20} {count:>5}  {:>5.1}%\n",
            table.pct(count)
        ));
    }
    out.push_str(&format!("{:<20} {:>5}\n", "Total pairs", table.total()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::OptionLabel;
    use crate::datastore::VersionStamp;

    fn record(id: &str, correct: bool, round: u32, score: u8) -> LogRecord {
        LogRecord {
            instance_id: id.into(),
            final_answer: OptionLabel::A,
            correct,
            decided_round: round,
            pattern: if correct {
                FailurePattern::None
            } else {
                FailurePattern::KnowledgeDeficit
            },
            score,
            versions: VersionStamp::default(),
            category: None,
        }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(1.375, 2), 1.38);
        assert_eq!(round_half_up(2.2666667, 2), 2.27);
        assert_eq!(round_half_up(3.378, 2), 3.38);
        assert_eq!(round_half_up(0.25, 1), 0.3);
        assert_eq!(round_half_up(55.8, 1), 55.8);
        assert_eq!(round_half_up(1.5, 0), 2.0);
    }

    #[test]
    fn summary_counts_exactly() {
        let records = vec![
            record("a", true, 1, 5),
            record("b", false, 1, 1),
            record("c", false, 2, 2),
        ];
        let summary = report_summary(&records).unwrap();
        assert_eq!(summary.total, 3);
        assert_eq!(summary.correct, 1);
        assert_eq!(summary.accuracy_pct(), 33.3);
        assert_eq!(summary.mean_score(), 2.67);
        assert_eq!(summary.round_count(1), 2);
        assert_eq!(summary.round_mean_score(1), 3.0);
        assert_eq!(summary.pattern_count(FailurePattern::KnowledgeDeficit), 2);
        assert_eq!(summary.cross_count(1, FailurePattern::None), 1);
    }

    #[test]
    fn single_correct_record() {
        let summary = report_summary(&[record("a", true, 1, 5)]).unwrap();
        assert_eq!(summary.accuracy_pct(), 100.0);
        assert_eq!(summary.mean_score(), 5.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(report_summary(&[]), Err(Error::EmptyLog)));
    }

    #[test]
    fn cross_marginals_match_one_dimensional_tables() {
        let records: Vec<LogRecord> = (0..60)
            .map(|i| {
                record(
                    &format!("i{i}"),
                    i % 3 == 0,
                    1 + (i % 3) as u32,
                    (i % 6) as u8,
                )
            })
            .collect();
        let summary = report_summary(&records).unwrap();
        for round in summary.rounds_present() {
            let row_total: usize = summary
                .patterns_by_count()
                .iter()
                .map(|p| summary.cross_count(round, *p))
                .sum();
            assert_eq!(row_total, summary.round_count(round));
        }
        for pattern in summary.patterns_by_count() {
            let col_total: usize = summary
                .rounds_present()
                .iter()
                .map(|r| summary.cross_count(*r, pattern))
                .sum();
            assert_eq!(col_total, summary.pattern_count(pattern));
        }
    }

    #[test]
    fn shift_counts_four_quadrants() {
        let before = vec![
            record("a", true, 1, 5),
            record("b", true, 1, 5),
            record("c", false, 1, 1),
            record("d", false, 1, 1),
        ];
        let after = vec![
            record("a", true, 1, 5),
            record("b", false, 1, 1),
            record("c", true, 1, 5),
            record("d", false, 1, 1),
        ];
        let table = report_shift(&before, &after).unwrap();
        assert_eq!(table.stay_right, 1);
        assert_eq!(table.regress, 1);
        assert_eq!(table.repair, 1);
        assert_eq!(table.stay_wrong, 1);
        assert_eq!(table.pct(table.repair), 25.0);
    }

    #[test]
    fn identical_logs_have_no_movement() {
        let log = vec![record("a", true, 1, 5), record("b", false, 1, 0)];
        let table = report_shift(&log, &log).unwrap();
        assert_eq!(table.regress, 0);
        assert_eq!(table.repair, 0);
        assert_eq!(table.total(), 2);
    }

    #[test]
    fn mean_and_std_over_seed_runs() {
        let (mean, std) = accuracy_mean_std(&[0.54, 0.56, 0.58]).unwrap();
        assert!((mean - 0.56).abs() < 1e-12);
        assert!((std - 0.02).abs() < 1e-12);
        let (mean, std) = accuracy_mean_std(&[0.7]).unwrap();
        assert_eq!((mean, std), (0.7, 0.0));
        assert!(accuracy_mean_std(&[]).is_err());
    }

    #[test]
    fn categories_appear_only_when_present() {
        let plain = report_summary(&[record("a", true, 1, 5)]).unwrap();
        assert!(plain.categories().is_empty());
        assert!(!render_summary(&plain).contains("Category"));

        let mut tagged = record("a", true, 1, 5);
        tagged.category = Some("algebra".into());
        let mut other = record("b", false, 1, 1);
        other.category = Some("algebra".into());
        let summary = report_summary(&[tagged, other]).unwrap();
        assert_eq!(summary.categories()["algebra"], (2, 1));
        let rendered = render_summary(&summary);
        assert!(rendered.contains("algebra"));
        assert!(rendered.contains("50.0%"));
    }

    fn manifest_with(iterations: u32, roles: usize, rounds: u32) -> RunManifest {
        use crate::credit::CreditSnapshot;
        use crate::optimizer::{HistoryEntry, StopReason};
        let snapshots = (1..=iterations)
            .map(|k| CreditSnapshot {
                iteration: k,
                role_credits: (0..roles).map(|i| (format!("r{i}"), 0.5)).collect(),
                round_alpha: (1..=rounds).map(|t| (t, 0.9)).collect(),
                round_buffer: (1..=rounds).map(|t| (t, 0)).collect(),
            })
            .collect();
        let history = (1..=iterations)
            .flat_map(|k| {
                ["roles", "aggregators"].map(|phase| HistoryEntry {
                    iteration: k,
                    phase: phase.to_string(),
                    targets: vec![],
                    accuracy: 0.5,
                })
            })
            .collect();
        RunManifest {
            schema: crate::datastore::LOG_SCHEMA.to_string(),
            config: crate::config::Config::default(),
            asset_hashes: BTreeMap::new(),
            seeds: BTreeMap::new(),
            split_generator: "chacha8".into(),
            history,
            snapshots,
            final_versions: crate::datastore::VersionStamp::default(),
            stop_reason: StopReason::MaxIterations,
        }
    }

    #[test]
    fn export_emits_one_accuracy_row_per_iteration_and_n_plus_r_credit_rows() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = manifest_with(3, 2, 2);
        let (accuracy_path, credit_path) = export_series(&manifest, dir.path()).unwrap();
        let accuracy = std::fs::read_to_string(accuracy_path).unwrap();
        assert_eq!(accuracy.lines().count(), 1 + 3);
        let credit = std::fs::read_to_string(credit_path).unwrap();
        assert_eq!(credit.lines().count(), 1 + (2 + 2) * 3);
        assert!(!credit.contains('\r'), "LF line endings only");
    }

    #[test]
    fn export_without_snapshots_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = manifest_with(0, 2, 2);
        assert!(matches!(
            export_series(&manifest, dir.path()),
            Err(Error::MissingSnapshots)
        ));
    }

    #[test]
    fn mismatched_instance_sets_are_rejected() {
        let before = vec![record("a", true, 1, 5)];
        let after = vec![record("b", true, 1, 5)];
        match report_shift(&before, &after) {
            Err(Error::IdMismatch {
                only_before,
                only_after,
            }) => {
                assert_eq!(only_before, vec!["a"]);
                assert_eq!(only_after, vec!["b"]);
            }
            other => panic!("expected IdMismatch, got {other:?}"),
        }
    }
}
