use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Next {
    Char(char),
    End,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("scorer failed: {0}")]
pub struct ScorerError(pub String);

/// Autoregressive character scorer used to rank lattice paths.
pub trait Scorer {
    /// `ln P(next | prefix)`, never positive.
    fn score(&self, prefix: &[char], next: Next) -> Result<f64, ScorerError>;

    /// Sum of the per-step scores including the end marker.
    fn score_sequence(&self, seq: &[char]) -> Result<f64, ScorerError> {
        let mut total = 0.0;
        for i in 0..seq.len() {
            total += self.score(&seq[..i], Next::Char(seq[i]))?;
        }
        Ok(total + self.score(seq, Next::End)?)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, prefix: &[char], next: Next) -> Result<f64, ScorerError> {
        (**self).score(prefix, next)
    }
}

/// Same log-probability for every step.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub log_prob: f64,
}

impl UniformScorer {
    /// Uniform over `outcomes` symbols.
    pub fn over(outcomes: usize) -> Self {
        Self {
            log_prob: -(outcomes.max(1) as f64).ln(),
        }
    }
}

impl Scorer for UniformScorer {
    fn score(&self, _prefix: &[char], _next: Next) -> Result<f64, ScorerError> {
        Ok(self.log_prob)
    }
}
