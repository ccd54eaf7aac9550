use rand::Rng;

use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-9;
const CUTOFF_SLACK: f64 = 1e-12;

/// The renormalized top-p candidate set of `dist`.
///
/// Tokens are ranked by descending probability, ties broken by ascending
/// token order, and the shortest prefix whose cumulative mass reaches
/// `top_p` is kept.
pub fn nucleus_candidates<T: Ord + Clone>(dist: &[(T, f64)], top_p: f64) -> Result<Vec<(T, f64)>> {
    if dist.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid(format!("top_p must lie in (0, 1], got {top_p}")));
    }
    let mut total = 0.0;
    for (_, p) in dist {
        if !p.is_finite() || *p < 0.0 {
            return Err(Error::invalid(format!("invalid probability {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::invalid(format!("distribution mass {total} is not 1")));
    }

    let mut ranked: Vec<&(T, f64)> = dist.iter().filter(|(_, p)| *p > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut cumulative = 0.0;
    let mut keep = ranked.len();
    for (i, (_, p)) in ranked.iter().enumerate() {
        cumulative += p;
        if cumulative >= top_p - CUTOFF_SLACK {
            keep = i + 1;
            break;
        }
    }
    ranked.truncate(keep);
    let mass: f64 = ranked.iter().map(|(_, p)| p).sum();
    Ok(ranked.into_iter().map(|(t, p)| (t.clone(), p / mass)).collect())
}

/// Draws one entry from an already-normalized candidate list using a single
/// uniform variate.
pub fn sample_candidates<T: Clone, R: Rng + ?Sized>(candidates: &[(T, f64)], rng: &mut R) -> (T, f64) {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (token, p) in candidates {
        cumulative += p;
        if u < cumulative {
            return (token.clone(), *p);
        }
    }
    candidates.last().cloned().expect("candidate set is never empty")
}

pub fn nucleus_sample<T: Ord + Clone, R: Rng + ?Sized>(dist: &[(T, f64)], top_p: f64, rng: &mut R) -> Result<T> {
    let candidates = nucleus_candidates(dist, top_p)?;
    Ok(sample_candidates(&candidates, rng).0)
}
