use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::round_half_up;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    /// Band of one integer score: 1-3, 4-6, 7-10.
    pub fn band(score: u8) -> Difficulty {
        match score {
            0..=3 => Difficulty::Easy,
            4..=6 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Medium => "Medium",
            Difficulty::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMethod {
    Mean,
    MajorityVote,
    /// No majority band; a person has to decide.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub level: Option<Difficulty>,
    pub method: ScoringMethod,
    pub mean: f64,
}

/// Largest spread between raw scores that is still settled by the mean.
pub const MEAN_SPREAD: u8 = 4;

pub fn score_difficulty(raw: &[u8]) -> Result<DifficultyScore, BenchError> {
    if raw.len() < 3 {
        return Err(BenchError::TooFewScores(raw.len()));
    }
    if let Some(bad) = raw.iter().find(|s| !(1..=10).contains(*s)) {
        return Err(BenchError::OutOfRangeScore(*bad));
    }
    let mean = raw.iter().map(|&s| s as f64).sum::<f64>() / raw.len() as f64;
    let spread = raw.iter().max().unwrap() - raw.iter().min().unwrap();
    if spread <= MEAN_SPREAD {
        let rounded = round_half_up(mean, 0) as u8;
        return Ok(DifficultyScore { level: Some(Difficulty::band(rounded)), method: ScoringMethod::Mean, mean });
    }
    let mut votes: BTreeMap<Difficulty, usize> = BTreeMap::new();
    for &s in raw {
        *votes.entry(Difficulty::band(s)).or_default() += 1;
    }
    let top = votes.values().copied().max().unwrap_or(0);
    let leaders: Vec<Difficulty> = votes.iter().filter(|(_, &n)| n == top).map(|(d, _)| *d).collect();
    if leaders.len() == 1 {
        Ok(DifficultyScore { level: Some(leaders[0]), method: ScoringMethod::MajorityVote, mean })
    } else {
        Ok(DifficultyScore { level: None, method: ScoringMethod::Manual, mean })
    }
}
