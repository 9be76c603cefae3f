//! Confidence-ranked pseudo-label selection and noise-rate diagnostics.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ConfidenceScore;
use crate::weaklabel::{Entry, PseudoLabeledDataset};

/// `floor(fraction * n + 0.5)`, at least 1 and at most `n` for non-empty input.
pub fn selection_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub selection_fraction: f64,
    /// Selected ids by descending confidence.
    pub selected_ids: Vec<String>,
    /// Entry positions (into the dataset) of the selected ids, same order.
    #[serde(skip)]
    pub selected_entries: Vec<usize>,
    /// Entry positions left out, in dataset order.
    #[serde(skip)]
    pub unselected_entries: Vec<usize>,
    pub noise_rate_in_selection: Option<f64>,
    /// Selected count per pseudo-label, indexed by class id.
    pub per_class_selected: Vec<usize>,
}

impl SelectionReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn validate_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("selection fraction {fraction} outside (0, 1]")))
    }
}

/// Entry positions ranked by descending confidence, ties by ascending id.
fn rank(dataset: &PseudoLabeledDataset, scores: &[ConfidenceScore]) -> Result<Vec<(usize, f64)>> {
    let by_id: HashMap<&str, &ConfidenceScore> = scores.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut ranked = Vec::with_capacity(dataset.len());
    for (i, e) in dataset.entries().iter().enumerate() {
        let id = dataset.id(e);
        let s = by_id.get(id).ok_or_else(|| Error::MissingScore(id.to_owned()))?;
        ranked.push((i, s.probability));
    }
    let entries = dataset.entries();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| dataset.id(&entries[a.0]).cmp(dataset.id(&entries[b.0])))
    });
    Ok(ranked)
}

fn noise_rate(dataset: &PseudoLabeledDataset, picked: impl Iterator<Item = usize>) -> Option<f64> {
    let entries = dataset.entries();
    let mut total = 0usize;
    let mut wrong = 0usize;
    for i in picked {
        let e: &Entry = &entries[i];
        total += 1;
        if dataset.gold(e)? != e.label {
            wrong += 1;
        }
    }
    (total > 0).then(|| wrong as f64 / total as f64)
}

fn report(dataset: &PseudoLabeledDataset, fraction: f64, mut selected: Vec<usize>) -> SelectionReport {
    let entries = dataset.entries();
    let mut is_selected = vec![false; entries.len()];
    let mut per_class = vec![0usize; dataset.num_classes()];
    for &i in &selected {
        is_selected[i] = true;
        per_class[entries[i].label] += 1;
    }
    let unselected = (0..entries.len()).filter(|&i| !is_selected[i]).collect();
    let noise = noise_rate(dataset, selected.iter().copied());
    selected.shrink_to_fit();
    SelectionReport {
        selection_fraction: fraction,
        selected_ids: selected.iter().map(|&i| dataset.id(&entries[i]).to_owned()).collect(),
        selected_entries: selected,
        unselected_entries: unselected,
        noise_rate_in_selection: noise,
        per_class_selected: per_class,
    }
}

/// Keep the `selection_count(fraction, N)` most confident pseudo-labels.
pub fn select_top(dataset: &PseudoLabeledDataset, scores: &[ConfidenceScore], fraction: f64) -> Result<SelectionReport> {
    validate_fraction(fraction)?;
    let ranked = rank(dataset, scores)?;
    let take = selection_count(fraction, ranked.len());
    let selected = ranked.into_iter().take(take).map(|(i, _)| i).collect();
    Ok(report(dataset, fraction, selected))
}

/// Keep exactly the pseudo-labels that agree with gold. Diagnostic only.
pub fn select_oracle(dataset: &PseudoLabeledDataset) -> Result<SelectionReport> {
    let missing = dataset.missing_gold();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    let selected: Vec<usize> = dataset
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| dataset.gold(e) == Some(e.label))
        .map(|(i, _)| i)
        .collect();
    let fraction = if dataset.is_empty() { 0.0 } else { selected.len() as f64 / dataset.len() as f64 };
    Ok(report(dataset, fraction, selected))
}

/// Noise rate of the top-`f` selection for each fraction `f`.
pub fn noise_curve(dataset: &PseudoLabeledDataset, scores: &[ConfidenceScore], fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::InvalidConfig("empty fraction list".into()));
    }
    let missing = dataset.missing_gold();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    for &f in fractions {
        validate_fraction(f)?;
    }
    let ranked = rank(dataset, scores)?;
    Ok(fractions
        .iter()
        .map(|&f| {
            let take = selection_count(f, ranked.len());
            let rate = noise_rate(dataset, ranked.iter().take(take).map(|&(i, _)| i)).unwrap_or(0.0);
            (f, rate)
        })
        .collect())
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fraction", "noise_rate"])?;
    for (f, r) in curve {
        w.write_record([format!("{f}"), format!("{r:.6}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClassSet, Corpus, Document};
    use crate::weaklabel::{noise_stats, Provenance};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dataset(golds: &[usize], pseudo: &[usize]) -> PseudoLabeledDataset {
        let docs = golds
            .iter()
            .enumerate()
            .map(|(i, &g)| Document::new(format!("d{i:03}"), "t", Some(g)))
            .collect();
        let corpus = Arc::new(Corpus::new(docs, ClassSet::new(["A", "B"]).unwrap()).unwrap());
        let entries = pseudo
            .iter()
            .enumerate()
            .map(|(doc, &label)| Entry { doc, label, provenance: Provenance::SeedMatch })
            .collect();
        PseudoLabeledDataset::new(corpus, entries).unwrap()
    }

    fn scores(ds: &PseudoLabeledDataset, probs: &[f64]) -> Vec<ConfidenceScore> {
        ds.entries()
            .iter()
            .zip(probs)
            .map(|(e, &p)| ConfidenceScore {
                id: ds.id(e).to_owned(),
                pseudo_label: e.label,
                probability: p,
                posterior: vec![],
            })
            .collect()
    }

    #[test]
    fn select_examples() {
        let ds = dataset(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        let s = scores(&ds, &[0.9, 0.8, 0.1, 0.2]);
        let r = select_top(&ds, &s, 0.5).unwrap();
        assert_eq!(r.selected_ids, ["d000", "d001"]);
        assert_eq!(r.noise_rate_in_selection, Some(0.5));
        assert_eq!(r.per_class_selected, [1, 1]);
        assert_eq!(r.unselected_entries, [2, 3]);

        let all = select_top(&ds, &s, 1.0).unwrap();
        assert_eq!(all.selected_ids.len(), 4);

        let flat = scores(&ds, &[0.5; 4]);
        let r = select_top(&ds, &flat, 0.5).unwrap();
        assert_eq!(r.selected_ids, ["d000", "d001"]);
    }

    #[test]
    fn selection_errors() {
        let ds = dataset(&[0, 1], &[0, 1]);
        let s = scores(&ds, &[0.3]);
        assert!(matches!(select_top(&ds, &s, 0.5), Err(Error::MissingScore(id)) if id == "d001"));
        let s = scores(&ds, &[0.3, 0.4]);
        assert!(select_top(&ds, &s, 0.0).is_err());
        assert!(select_top(&ds, &s, 1.5).is_err());
        assert!(noise_curve(&ds, &s, &[]).is_err());
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(selection_count(0.5, 4), 2);
        assert_eq!(selection_count(0.5, 5), 3);
        assert_eq!(selection_count(0.01, 10), 1);
        assert_eq!(selection_count(1.0, 7), 7);
        assert_eq!(selection_count(0.1, 100), 10);
        assert_eq!(selection_count(0.1, 90), 9);
    }

    #[test]
    fn curve_edges() {
        let clean = dataset(&[0, 1, 0, 1], &[0, 1, 0, 1]);
        let s = scores(&clean, &[0.1, 0.7, 0.3, 0.2]);
        let c = noise_curve(&clean, &s, &[0.25, 0.5, 1.0]).unwrap();
        assert!(c.iter().all(|&(_, r)| r == 0.0));

        let ds = dataset(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        let s = scores(&ds, &[0.1, 0.9, 0.3, 0.2]);
        let c = noise_curve(&ds, &s, &[1.0]).unwrap();
        assert_eq!(c[0].1, noise_stats(&ds).unwrap().overall_noise_rate());
    }

    #[test]
    fn random_scores_give_flat_curve() {
        use rand::seq::SliceRandom;
        let n = 400;
        let golds: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let pseudo: Vec<usize> = (0..n).map(|i| if i % 4 == 0 { 1 - golds[i] } else { golds[i] }).collect();
        let ds = dataset(&golds, &pseudo);
        let fractions: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let mut avg = vec![0.0; fractions.len()];
        let runs = 20;
        for seed in 0..runs {
            let mut perm: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            perm.shuffle(&mut crate::rng::stream(seed, &["perm".into()]));
            let curve = noise_curve(&ds, &scores(&ds, &perm), &fractions).unwrap();
            for (a, (_, r)) in avg.iter_mut().zip(curve) {
                *a += r / runs as f64;
            }
        }
        for r in avg {
            assert!((r - 0.25).abs() <= 0.05, "{r}");
        }
    }

    #[test]
    fn oracle_keeps_correct_labels() {
        let ds = dataset(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        let r = select_oracle(&ds).unwrap();
        assert_eq!(r.selected_ids, ["d000", "d002", "d003"]);
        assert_eq!(r.noise_rate_in_selection, Some(0.0));
    }

    #[test]
    fn curve_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_curve_csv(&path, &[(0.5, 0.125), (1.0, 1.0 / 3.0)]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "fraction,noise_rate\n0.5,0.125000\n1,0.333333\n"
        );
    }

    proptest! {
        #[test]
        fn coverage_is_monotone(probs in prop::collection::vec(0u8..5, 1..40), f1 in 0.01f64..=1.0, f2 in 0.01f64..=1.0) {
            let n = probs.len();
            let ds = dataset(&vec![0; n], &vec![0; n]);
            let s = scores(&ds, &probs.iter().map(|&p| p as f64 / 4.0).collect::<Vec<_>>());
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = select_top(&ds, &s, lo).unwrap();
            let b = select_top(&ds, &s, hi).unwrap();
            prop_assert!(a.selected_ids.iter().all(|id| b.selected_ids.contains(id)));
            prop_assert_eq!(select_top(&ds, &s, lo).unwrap(), a);
        }
    }
}
