use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};

use super::{Mode, UrlVerdictRecord, Verdict};
use crate::records::{Label, RecordId};
use crate::retrieval::{CaseStore, StoreError};

/// The three runs of one URL.
#[derive(Debug, Clone, Copy)]
pub struct ModeRuns<'a> {
    pub parrot: &'a UrlVerdictRecord,
    pub standard: &'a UrlVerdictRecord,
    pub typical: &'a UrlVerdictRecord,
}

/// Which runs to store, and with which label.
///
/// Parrot reaching phishing content that both baselines missed marks
/// Parrot's run a success and the baselines' runs failures. Parrot missing
/// a URL known to be phishing marks Parrot's run a failure.
pub fn feedback_labels(parrot: Verdict, standard: Verdict, typical: Verdict, truth: Option<Verdict>) -> Vec<(Mode, Label)> {
    use Verdict::*;
    match (parrot, standard, typical, truth) {
        (Phishing, NonPhishing, NonPhishing, _) => vec![
            (Mode::Parrot, Label::Success),
            (Mode::Standard, Label::Failed),
            (Mode::TypicalUser, Label::Failed),
        ],
        (NonPhishing, _, _, Some(Phishing)) => vec![(Mode::Parrot, Label::Failed)],
        _ => Vec::new(),
    }
}

/// Applies the feedback rules to a store. Each (url, mode, fetch time) is
/// inserted at most once.
#[derive(Debug)]
pub struct FeedbackLoop {
    store: Arc<CaseStore>,
    applied: Mutex<HashSet<(String, Mode, DateTime<Utc>)>>,
}

impl FeedbackLoop {
    pub fn new(store: Arc<CaseStore>) -> Self {
        Self {
            store,
            applied: Mutex::new(HashSet::new()),
        }
    }

    /// Inserts what the rules call for and returns the new record ids.
    /// Runs that never received a response carry no evidence and are
    /// skipped.
    pub async fn apply(&self, runs: ModeRuns<'_>, truth: Option<Verdict>) -> Result<Vec<(RecordId, Label)>, StoreError> {
        let mut inserted = Vec::new();
        for (mode, label) in feedback_labels(runs.parrot.verdict, runs.standard.verdict, runs.typical.verdict, truth) {
            let run = match mode {
                Mode::Parrot => runs.parrot,
                Mode::Standard => runs.standard,
                Mode::TypicalUser => runs.typical,
            };
            let record = &run.final_record;
            if record.network.responses.is_empty() {
                tracing::debug!(url = %run.url, %mode, "feedback skipped: no response captured");
                continue;
            }
            let key = (record.url.clone(), mode, record.fetched_at);
            if !self.applied.lock().expect("feedback poisoned").insert(key) || self.store.contains(record.id) {
                continue;
            }
            self.store.insert(record.clone(), label).await?;
            inserted.push((record.id, label));
        }
        Ok(inserted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Verdict::*;

    #[test]
    fn insert_rules() {
        assert_eq!(feedback_labels(Phishing, NonPhishing, NonPhishing, None).len(), 3);
        assert!(feedback_labels(Phishing, Phishing, Phishing, Some(Phishing)).is_empty());
        assert!(feedback_labels(Phishing, NonPhishing, Phishing, None).is_empty());
        assert!(feedback_labels(NonPhishing, NonPhishing, NonPhishing, None).is_empty());
        assert!(feedback_labels(NonPhishing, NonPhishing, NonPhishing, Some(NonPhishing)).is_empty());
        assert_eq!(
            feedback_labels(NonPhishing, Phishing, NonPhishing, Some(Phishing)),
            vec![(Mode::Parrot, Label::Failed)]
        );
    }
}
