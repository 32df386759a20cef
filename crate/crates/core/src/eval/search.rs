use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDist {
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    Choice { values: Vec<f64> },
}

impl ParamDist {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamDist::LogUniform { lo, hi } => *lo > 0.0 && lo <= hi && hi.is_finite(),
            ParamDist::Uniform { lo, hi } => lo <= hi && lo.is_finite() && hi.is_finite(),
            ParamDist::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(name, format!("invalid distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ParamDist::LogUniform { lo, hi } if lo == hi => *lo,
            ParamDist::LogUniform { lo, hi } => rng.random_range(lo.ln()..=hi.ln()).exp(),
            ParamDist::Uniform { lo, hi } if lo == hi => *lo,
            ParamDist::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            ParamDist::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }
}

/// Named parameters, sampled in name order.
pub type SearchSpace = BTreeMap<String, ParamDist>;
pub type Configuration = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: Configuration,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Configuration,
    pub best_score: f64,
    pub trace: Vec<Trial>,
}

/// Evaluates `budget` i.i.d. configurations and keeps the highest score (the
/// earliest on ties). Objective errors abort the search.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    mut objective: impl FnMut(&Configuration) -> Result<f64>,
    seed: u64,
) -> Result<SearchResult> {
    if space.is_empty() {
        return Err(Error::param("search space is empty"));
    }
    if budget == 0 {
        return Err(Error::param("search budget must be at least 1"));
    }
    for (name, d) in space {
        d.validate(name)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace: Vec<Trial> = Vec::with_capacity(budget);
    let mut best: Option<usize> = None;
    for i in 0..budget {
        let config: Configuration = space.iter().map(|(k, d)| (k.clone(), d.sample(&mut rng))).collect();
        let score = objective(&config)?;
        if best.is_none_or(|b| score > trace[b].score) {
            best = Some(i);
        }
        trace.push(Trial { config, score });
    }
    let b = &trace[best.expect("budget >= 1")];
    Ok(SearchResult {
        best: b.config.clone(),
        best_score: b.score,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        let mut s = SearchSpace::new();
        s.insert("lr".into(), ParamDist::LogUniform { lo: 1e-5, hi: 1e-2 });
        s.insert("filters".into(), ParamDist::Choice { values: vec![4.0, 8.0, 16.0] });
        s
    }

    #[test]
    fn single_budget_and_determinism() {
        let r = random_search(&space(), 1, |c| Ok(c["lr"]), 3).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best, r.trace[0].config);
        let a = random_search(&space(), 20, |c| Ok(-c["lr"]), 7).unwrap();
        let b = random_search(&space(), 20, |c| Ok(-c["lr"]), 7).unwrap();
        assert_eq!(a, b);
        for t in &a.trace {
            assert!((1e-5..=1e-2).contains(&t.config["lr"]));
        }
        assert!(a.trace.iter().all(|t| t.score <= a.best_score));
    }

    #[test]
    fn finds_discrete_optimum() {
        let mut s = SearchSpace::new();
        s.insert("k".into(), ParamDist::Choice { values: vec![1.0, 2.0, 3.0] });
        let objective = |c: &Configuration| Ok(-(c["k"] - 2.0).powi(2));
        let best_exhaustive = [1.0, 2.0, 3.0]
            .into_iter()
            .max_by(|a: &f64, b: &f64| (-(a - 2.0).powi(2)).total_cmp(&(-(b - 2.0).powi(2))))
            .unwrap();
        let r = random_search(&s, 50, objective, 1).unwrap();
        assert_eq!(r.best["k"], best_exhaustive);
    }

    #[test]
    fn log_uniform_spreads_over_decades() {
        let mut s = SearchSpace::new();
        s.insert("lr".into(), ParamDist::LogUniform { lo: 1e-6, hi: 1.0 });
        let r = random_search(&s, 2000, |_| Ok(0.0), 2).unwrap();
        let below: usize = r.trace.iter().filter(|t| t.config["lr"] < 1e-3).count();
        // Half the log-range lies below 1e-3.
        assert!((below as f64 / 2000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn invalid_spaces() {
        assert!(random_search(&SearchSpace::new(), 3, |_| Ok(0.0), 0).is_err());
        let mut s = SearchSpace::new();
        s.insert("x".into(), ParamDist::LogUniform { lo: 0.0, hi: 1.0 });
        assert!(random_search(&s, 3, |_| Ok(0.0), 0).is_err());
        assert!(random_search(&space(), 0, |_| Ok(0.0), 0).is_err());
    }
}
