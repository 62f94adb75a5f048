//! Interaction logs, behavior sequences, and dataset splits.
//!
//! A dataset is a chronological log of `(user, item, scenario,
//! timestamp, click)` rows. Each row becomes one training example whose
//! histories are built strictly from earlier clicked rows: the mixed
//! history spans all scenarios, the current history is its restriction
//! to the row's own scenario.

mod ingest;
mod synthetic;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

pub use ingest::{read_events_csv, write_events_csv, write_vocab_csv, CsvSchema, Vocab, Vocabularies};
pub use synthetic::{generate_synthetic, generate_synthetic_records, SyntheticConfig, SyntheticWorld};

/// Default history caps `(L_h, L_s)`: mixed and current-scenario.
pub const DEFAULT_CAPS: (usize, usize) = (50, 20);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: click value {value} outside {{0,1}}")]
    InvalidClick { line: usize, value: String },
    #[error("missing column `{name}` in header")]
    MissingColumn { name: String },
    #[error("empty dataset")]
    Empty,
    #[error("multi-scenario filter removed every record")]
    FilterEmptied,
    #[error("test fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("synthetic probability became non-finite")]
    NonFiniteProbability,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One interaction log row with dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: u32,
    pub item_id: u32,
    pub scenario_id: u32,
    pub timestamp: i64,
    pub click: bool,
    /// Ground-truth interest, present only for synthetic data.
    pub interest: Option<f64>,
}

/// Cross-scenario and current-scenario click histories of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSequences {
    /// Most recent clicked `(item, scenario)` pairs across all
    /// scenarios, oldest first, at most `L_h` long.
    pub mixed: Vec<(u32, u32)>,
    /// Item ids of the mixed entries in the example's own scenario,
    /// oldest first, at most `L_s` long.
    pub current: Vec<u32>,
}

impl BehaviorSequences {
    pub fn empty() -> Self {
        BehaviorSequences {
            mixed: Vec::new(),
            current: Vec::new(),
        }
    }

    pub fn n_mixed(&self) -> usize {
        self.mixed.len()
    }

    pub fn n_current(&self) -> usize {
        self.current.len()
    }
}

/// One supervised example: a candidate interaction plus the user's
/// behavior histories at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub user_id: u32,
    pub item_id: u32,
    pub scenario_id: u32,
    pub timestamp: i64,
    pub sequences: BehaviorSequences,
    pub label: bool,
    pub ground_truth_interest: Option<f64>,
}

/// Keeps only users active in at least two distinct scenarios.
pub fn filter_multi_scenario_users(
    records: &[InteractionRecord],
) -> Result<Vec<InteractionRecord>, DataError> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    let mut scenarios: HashMap<u32, HashSet<u32>> = HashMap::new();
    for r in records {
        scenarios.entry(r.user_id).or_default().insert(r.scenario_id);
    }
    let kept: Vec<InteractionRecord> = records
        .iter()
        .filter(|r| scenarios[&r.user_id].len() >= 2)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(DataError::FilterEmptied);
    }
    Ok(kept)
}

/// Sorts by timestamp (stable, so equal stamps keep input order) and
/// holds out the most recent `ceil(test_fraction * n)` records.
pub fn chronological_split(
    mut records: Vec<InteractionRecord>,
    test_fraction: f64,
) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>), DataError> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    records.sort_by_key(|r| r.timestamp);
    let n = records.len();
    let n_test = ((test_fraction * n as f64).ceil() as usize).min(n);
    let test = records.split_off(n - n_test);
    Ok((records, test))
}

/// Builds one example per record.
///
/// The mixed history is the user's most recent clicked interactions
/// strictly before the record's timestamp (capped at `caps.0`); the
/// current history filters those to the record's scenario (capped at
/// `caps.1`, most recent kept). Records are processed in chronological
/// order with stable tie-breaks, and rows sharing a timestamp never
/// see each other.
pub fn build_sequences(records: &[InteractionRecord], caps: (usize, usize)) -> Vec<Example> {
    let (cap_mixed, cap_current) = caps;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].timestamp);

    // Per-user clicked history plus rows waiting for the clock to move.
    let mut history: HashMap<u32, Vec<(i64, u32, u32)>> = HashMap::new();
    let mut pending: HashMap<u32, Vec<(i64, u32, u32)>> = HashMap::new();
    let mut examples: Vec<(usize, Example)> = Vec::with_capacity(records.len());

    for &idx in &order {
        let r = &records[idx];
        let hist = history.entry(r.user_id).or_default();
        // Flush clicks that are now strictly in the past.
        if let Some(p) = pending.get_mut(&r.user_id) {
            let mut kept = Vec::new();
            for e in p.drain(..) {
                if e.0 < r.timestamp {
                    hist.push(e);
                } else {
                    kept.push(e);
                }
            }
            *p = kept;
        }

        let start = hist.len().saturating_sub(cap_mixed);
        let window = &hist[start..];
        let mixed: Vec<(u32, u32)> = window.iter().map(|&(_, item, scen)| (item, scen)).collect();
        let in_scenario: Vec<u32> = mixed
            .iter()
            .filter(|&&(_, scen)| scen == r.scenario_id)
            .map(|&(item, _)| item)
            .collect();
        let cur_start = in_scenario.len().saturating_sub(cap_current);
        let current = in_scenario[cur_start..].to_vec();

        examples.push((
            idx,
            Example {
                user_id: r.user_id,
                item_id: r.item_id,
                scenario_id: r.scenario_id,
                timestamp: r.timestamp,
                sequences: BehaviorSequences { mixed, current },
                label: r.click,
                ground_truth_interest: r.interest,
            },
        ));

        if r.click {
            pending
                .entry(r.user_id)
                .or_default()
                .push((r.timestamp, r.item_id, r.scenario_id));
        }
    }

    // Return examples in the input record order.
    examples.sort_by_key(|(idx, _)| *idx);
    examples.into_iter().map(|(_, e)| e).collect()
}

/// Splits already-built examples chronologically, mirroring
/// [`chronological_split`] on their source records.
pub fn split_examples(
    mut examples: Vec<Example>,
    test_fraction: f64,
) -> Result<(Vec<Example>, Vec<Example>), DataError> {
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    examples.sort_by_key(|e| e.timestamp);
    let n = examples.len();
    let n_test = ((test_fraction * n as f64).ceil() as usize).min(n);
    let test = examples.split_off(n - n_test);
    Ok((examples, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: u32, item: u32, scen: u32, ts: i64, click: bool) -> InteractionRecord {
        InteractionRecord {
            user_id: user,
            item_id: item,
            scenario_id: scen,
            timestamp: ts,
            click,
            interest: None,
        }
    }

    #[test]
    fn filter_keeps_only_multi_scenario_users() {
        let records = vec![
            rec(0, 1, 1, 0, true),
            rec(0, 2, 2, 1, true),
            rec(1, 3, 1, 2, true),
        ];
        let kept = filter_multi_scenario_users(&records).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|r| r.user_id == 0));
    }

    #[test]
    fn filter_is_noop_when_all_users_qualify() {
        let records = vec![rec(0, 1, 1, 0, true), rec(0, 2, 2, 1, false)];
        let kept = filter_multi_scenario_users(&records).unwrap();
        assert_eq!(kept, records);
    }

    #[test]
    fn filter_errors_when_everything_is_removed() {
        let records = vec![rec(0, 1, 1, 0, true), rec(1, 2, 1, 1, true)];
        assert!(matches!(
            filter_multi_scenario_users(&records),
            Err(DataError::FilterEmptied)
        ));
    }

    #[test]
    fn split_ten_records_at_point4() {
        let records: Vec<_> = (0..10).map(|i| rec(0, i, 0, i as i64, true)).collect();
        let (train, test) = chronological_split(records, 0.4).unwrap();
        assert_eq!((train.len(), test.len()), (6, 4));
        assert!(test.iter().map(|r| r.timestamp).min().unwrap() >= 6);
    }

    #[test]
    fn split_two_records_at_half() {
        let records = vec![rec(0, 0, 0, 5, true), rec(0, 1, 0, 3, false)];
        let (train, test) = chronological_split(records, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
        assert_eq!(test[0].timestamp, 5);
    }

    #[test]
    fn split_orders_test_after_train() {
        let mut rng = crate::rng::Prng::new(17);
        for _ in 0..20 {
            let n = 1 + rng.index(40);
            let records: Vec<_> = (0..n)
                .map(|i| rec(0, i as u32, 0, rng.index(20) as i64, true))
                .collect();
            let (train, test) = chronological_split(records, 0.4).unwrap();
            assert_eq!(test.len(), (0.4 * n as f64).ceil() as usize);
            let max_train = train.iter().map(|r| r.timestamp).max();
            let max_test = test.iter().map(|r| r.timestamp).max();
            if let (Some(a), Some(b)) = (max_train, max_test) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn split_rejects_empty_and_bad_fraction() {
        assert!(matches!(
            chronological_split(vec![], 0.4),
            Err(DataError::Empty)
        ));
        assert!(matches!(
            chronological_split(vec![rec(0, 0, 0, 0, true)], 1.0),
            Err(DataError::BadFraction(_))
        ));
    }

    #[test]
    fn first_record_has_empty_histories() {
        let examples = build_sequences(&[rec(0, 7, 1, 10, true)], DEFAULT_CAPS);
        assert_eq!(examples[0].sequences.n_mixed(), 0);
        assert_eq!(examples[0].sequences.n_current(), 0);
    }

    #[test]
    fn hand_traced_ten_event_log() {
        // User 0: ten interactions; 7 prior clicks in scenario 2 of 10
        // total events before the target. Caps (5, 5): the mixed window
        // is the last five clicks, current keeps those in scenario 2.
        let mut records = Vec::new();
        // Events at t = 0..9: clicks in scenario 2 at t=0,1,2,3,4,6,8,
        // clicks in scenario 1 at t=5,7, a non-click at t=9.
        for (t, (scen, click)) in [
            (2, true),
            (2, true),
            (2, true),
            (2, true),
            (2, true),
            (1, true),
            (2, true),
            (1, true),
            (2, true),
            (1, false),
        ]
        .iter()
        .enumerate()
        {
            records.push(rec(0, t as u32, *scen, t as i64, *click));
        }
        // Target in scenario 2 at t=10.
        records.push(rec(0, 99, 2, 10, true));

        let examples = build_sequences(&records, (5, 5));
        let target = examples.last().unwrap();
        // Last five clicks before t=10 were items 4,5,6,7,8.
        assert_eq!(
            target.sequences.mixed,
            vec![(4, 2), (5, 1), (6, 2), (7, 1), (8, 2)]
        );
        // Scenario-2 subsequence of the window.
        assert_eq!(target.sequences.current, vec![4, 6, 8]);
        assert_eq!(target.sequences.n_mixed(), 5);
    }

    #[test]
    fn histories_never_leak_future_or_same_timestamp() {
        let mut rng = crate::rng::Prng::new(23);
        let records: Vec<_> = (0..200)
            .map(|i| {
                rec(
                    rng.index(5) as u32,
                    i,
                    rng.index(3) as u32,
                    rng.index(40) as i64, // many timestamp ties
                    rng.bernoulli(0.7),
                )
            })
            .collect();
        let examples = build_sequences(&records, DEFAULT_CAPS);
        // Rebuild per-example: every history entry must come from a
        // strictly earlier clicked record of the same user.
        for e in &examples {
            for &(item, scen) in &e.sequences.mixed {
                let ok = records.iter().any(|r| {
                    r.user_id == e.user_id
                        && r.item_id == item
                        && r.scenario_id == scen
                        && r.click
                        && r.timestamp < e.timestamp
                });
                assert!(ok, "leaked history entry {item}/{scen}");
            }
        }
    }

    #[test]
    fn current_is_scenario_filtered_mixed() {
        let mut rng = crate::rng::Prng::new(31);
        let records: Vec<_> = (0..300)
            .map(|i| {
                rec(
                    rng.index(4) as u32,
                    rng.index(50) as u32,
                    rng.index(3) as u32,
                    i as i64,
                    rng.bernoulli(0.6),
                )
            })
            .collect();
        let examples = build_sequences(&records, (10, 4));
        for e in &examples {
            let filtered: Vec<u32> = e
                .sequences
                .mixed
                .iter()
                .filter(|&&(_, s)| s == e.scenario_id)
                .map(|&(i, _)| i)
                .collect();
            let start = filtered.len().saturating_sub(4);
            assert_eq!(e.sequences.current, filtered[start..].to_vec());
        }
    }

    #[test]
    fn split_examples_matches_ceil_rule_for_all_small_n() {
        for n in 1..40usize {
            let examples: Vec<Example> = (0..n)
                .map(|i| Example {
                    user_id: 0,
                    item_id: i as u32,
                    scenario_id: 0,
                    timestamp: i as i64,
                    sequences: BehaviorSequences::empty(),
                    label: true,
                    ground_truth_interest: None,
                })
                .collect();
            let (_, test) = split_examples(examples, 0.4).unwrap();
            assert_eq!(test.len(), (0.4 * n as f64).ceil() as usize, "n={n}");
        }
    }
}
