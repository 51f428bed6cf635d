use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Call accounting shared by every worker using one provider.
///
/// Three counters: all completions, the temperature > 0 subset
/// (instruction generation), and embedded texts. Cache hits are free.
#[derive(Debug)]
pub struct ProviderBudget {
    max_completions: u64,
    max_generations: u64,
    max_embeddings: u64,
    used_completions: AtomicU64,
    used_generations: AtomicU64,
    used_embeddings: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSnapshot {
    pub max_completions: u64,
    pub used_completions: u64,
    pub max_generations: u64,
    pub used_generations: u64,
    pub max_embeddings: u64,
    pub used_embeddings: u64,
}

impl Default for ProviderBudget {
    fn default() -> Self {
        Self::unlimited()
    }
}

impl ProviderBudget {
    pub fn new(max_completions: u64, max_generations: u64, max_embeddings: u64) -> Self {
        Self {
            max_completions,
            max_generations,
            max_embeddings,
            used_completions: AtomicU64::new(0),
            used_generations: AtomicU64::new(0),
            used_embeddings: AtomicU64::new(0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX, u64::MAX, u64::MAX)
    }

    pub fn with_generation_limit(max_generations: u64) -> Self {
        Self::new(u64::MAX, max_generations, u64::MAX)
    }

    /// Reserves one completion, and one generation if `generation`.
    /// Nothing is charged when the reservation fails.
    pub(crate) fn charge_completion(&self, generation: bool) -> Result<(), ProviderError> {
        reserve(&self.used_completions, 1, self.max_completions, "completion")?;
        if generation {
            if let Err(e) = reserve(&self.used_generations, 1, self.max_generations, "generation") {
                self.used_completions.fetch_sub(1, Ordering::SeqCst);
                return Err(e);
            }
        }
        Ok(())
    }

    pub(crate) fn charge_embeddings(&self, n: u64) -> Result<(), ProviderError> {
        reserve(&self.used_embeddings, n, self.max_embeddings, "embedding")
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        BudgetSnapshot {
            max_completions: self.max_completions,
            used_completions: self.used_completions.load(Ordering::SeqCst),
            max_generations: self.max_generations,
            used_generations: self.used_generations.load(Ordering::SeqCst),
            max_embeddings: self.max_embeddings,
            used_embeddings: self.used_embeddings.load(Ordering::SeqCst),
        }
    }

    pub fn used_completions(&self) -> u64 {
        self.used_completions.load(Ordering::SeqCst)
    }

    pub fn used_generations(&self) -> u64 {
        self.used_generations.load(Ordering::SeqCst)
    }

    pub fn used_embeddings(&self) -> u64 {
        self.used_embeddings.load(Ordering::SeqCst)
    }
}

fn reserve(counter: &AtomicU64, n: u64, max: u64, kind: &'static str) -> Result<(), ProviderError> {
    counter
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
            used.checked_add(n).filter(|&next| next <= max)
        })
        .map(|_| ())
        .map_err(|_| ProviderError::BudgetExhausted { kind, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn second_call_over_the_limit_fails() {
        let b = ProviderBudget::new(1, u64::MAX, u64::MAX);
        b.charge_completion(false).unwrap();
        assert!(matches!(
            b.charge_completion(false),
            Err(ProviderError::BudgetExhausted { kind: "completion", max: 1 })
        ));
        assert_eq!(b.used_completions(), 1);
    }

    #[test]
    fn failed_generation_refunds_the_completion() {
        let b = ProviderBudget::with_generation_limit(0);
        assert!(b.charge_completion(true).is_err());
        assert_eq!(b.snapshot().used_completions, 0);
        b.charge_completion(false).unwrap();
        assert_eq!(b.used_completions(), 1);
    }

    #[test]
    fn embeddings_count_texts() {
        let b = ProviderBudget::new(u64::MAX, u64::MAX, 3);
        b.charge_embeddings(2).unwrap();
        assert!(b.charge_embeddings(2).is_err());
        assert_eq!(b.used_embeddings(), 2);
    }

    #[test]
    fn concurrent_charges_never_exceed_the_limit() {
        let b = Arc::new(ProviderBudget::new(100, u64::MAX, u64::MAX));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let b = Arc::clone(&b);
                std::thread::spawn(move || (0..50).filter(|_| b.charge_completion(false).is_ok()).count())
            })
            .collect();
        let ok: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(ok, 100);
        assert_eq!(b.used_completions(), 100);
    }
}
