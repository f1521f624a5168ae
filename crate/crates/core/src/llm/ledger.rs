use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl LedgerEntry {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Append-only token accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    entries: Vec<LedgerEntry>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: &str, prompt_tokens: u64, completion_tokens: u64) {
        self.entries.push(LedgerEntry {
            stage: stage.to_string(),
            prompt_tokens,
            completion_tokens,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Sum of prompt and completion tokens over all entries.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(LedgerEntry::total).sum()
    }

    pub fn total_for(&self, stage: &str) -> u64 {
        self.entries.iter().filter(|e| e.stage == stage).map(LedgerEntry::total).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_ledger_is_zero() {
        assert_eq!(UsageLedger::new().total(), 0);
    }

    #[test]
    fn single_combined_entry() {
        let mut l = UsageLedger::new();
        l.record("run", 24_000, 673);
        assert_eq!(l.total(), 24673);
    }

    proptest! {
        #[test]
        fn total_matches_independent_sum(entries in prop::collection::vec((0u64..1_000_000, 0u64..1_000_000), 0..50)) {
            let mut l = UsageLedger::new();
            let mut running = Vec::new();
            for (p, c) in &entries {
                l.record("s", *p, *c);
                running.push(l.total());
            }
            let mut expected = 0u64;
            for (p, c) in &entries {
                expected += p;
                expected += c;
            }
            prop_assert_eq!(l.total(), expected);
            // monotone
            prop_assert!(running.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
