//! Evaluation metrics: mean absolute percentage error and Kendall's tau.

use crate::rational::Rat;

/// Mean absolute percentage error of predictions against measurements, as a
/// fraction (multiply by 100 for percent). Measured values must be positive;
/// returns `None` for an empty set.
pub fn mape(pairs: &[(Rat, Rat)]) -> Option<Rat> {
    if pairs.is_empty() {
        return None;
    }
    let n = Rat::from_integer(pairs.len() as i128);
    let sum: Rat = pairs
        .iter()
        .map(|(measured, predicted)| {
            let diff = *measured - *predicted;
            let abs = if diff < Rat::from_integer(0) {
                -diff
            } else {
                diff
            };
            abs / *measured
        })
        .sum();
    Some(sum / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauVariant {
    /// Plain tau: (concordant - discordant) / all pairs.
    A,
    /// Tie-corrected tau.
    B,
}

impl std::str::FromStr for TauVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(TauVariant::A),
            "b" => Ok(TauVariant::B),
            other => Err(format!(
                "unknown tau variant '{}' (expected 'a' or 'b')",
                other
            )),
        }
    }
}

/// Kendall rank correlation between the two coordinates of `pairs`,
/// computed with the O(n log n) merge-sort counting method. Returns 0 for
/// degenerate inputs (fewer than two pairs, or a denominator of zero under
/// ties).
pub fn kendall_tau(pairs: &[(Rat, Rat)], variant: TauVariant) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let mut sorted: Vec<(Rat, Rat)> = pairs.to_vec();
    sorted.sort();

    let n0 = n as i128 * (n as i128 - 1) / 2;
    let tied_x = tie_count(sorted.iter().map(|p| p.0));
    let tied_xy = {
        let mut count = 0i128;
        let mut run = 1i128;
        for i in 1..sorted.len() {
            if sorted[i] == sorted[i - 1] {
                run += 1;
            } else {
                count += run * (run - 1) / 2;
                run = 1;
            }
        }
        count + run * (run - 1) / 2
    };

    let mut ys: Vec<Rat> = sorted.iter().map(|p| p.1).collect();
    let swaps = count_inversions(&mut ys);
    ys.sort();
    let tied_y = tie_count(ys.iter().copied());

    let concordant_minus_discordant = n0 - tied_x - tied_y + tied_xy - 2 * swaps;

    match variant {
        TauVariant::A => concordant_minus_discordant as f64 / n0 as f64,
        TauVariant::B => {
            let denom = ((n0 - tied_x) as f64) * ((n0 - tied_y) as f64);
            if denom <= 0.0 {
                0.0
            } else {
                concordant_minus_discordant as f64 / denom.sqrt()
            }
        }
    }
}

fn tie_count<I: Iterator<Item = Rat>>(sorted: I) -> i128 {
    let mut count = 0i128;
    let mut run = 1i128;
    let mut prev: Option<Rat> = None;
    for v in sorted {
        match prev {
            Some(p) if p == v => run += 1,
            Some(_) => {
                count += run * (run - 1) / 2;
                run = 1;
            }
            None => {}
        }
        prev = Some(v);
    }
    count + run * (run - 1) / 2
}

/// Counts strict inversions (i < j with v[i] > v[j]) while sorting.
fn count_inversions(values: &mut [Rat]) -> i128 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mut buf = values.to_vec();
    merge_count(values, &mut buf)
}

fn merge_count(values: &mut [Rat], buf: &mut [Rat]) -> i128 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let (lbuf, rbuf) = buf.split_at_mut(mid);
    let mut inversions = merge_count(left, lbuf) + merge_count(right, rbuf);

    let mut i = 0;
    let mut j = 0;
    for slot in buf.iter_mut().take(n) {
        if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            if i < left.len() {
                inversions += (left.len() - i) as i128;
            }
            *slot = right[j];
            j += 1;
        }
    }
    values.copy_from_slice(&buf[..n]);
    inversions
}
