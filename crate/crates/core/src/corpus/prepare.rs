use std::collections::{BTreeMap, HashSet};

use crate::data::{PreparedDataset, Role, TrialPair};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Subset fractions used by the preparation stage, including the 18-hour row.
pub const SUPPORTED_FRACTIONS: [f64; 8] = [0.01, 0.02, 0.03, 0.06, 0.12, 0.18, 0.25, 1.0];

/// Drops every speaker with fewer than `min_per_speaker` segments.
/// Segments with no speaker ID are kept.
pub fn filter_min_segments(dataset: &PreparedDataset, min_per_speaker: usize) -> PreparedDataset {
    let counts = dataset.by_speaker();
    let segments = dataset
        .segments
        .iter()
        .filter(|s| match &s.speaker_id {
            Some(spk) => counts[spk.as_str()].len() >= min_per_speaker,
            None => true,
        })
        .cloned()
        .collect();
    PreparedDataset::new(segments, dataset.role, dataset.channel.clone())
}

/// Selects `target_count` segments, balancing segments per speaker by
/// round-robin: speakers are visited in a random order and each pass draws
/// one unused segment (at random) from every speaker that still has one.
pub fn build_training_set(
    pool: &PreparedDataset,
    target_count: usize,
    rng: &mut Rng,
) -> Result<PreparedDataset> {
    let by_speaker = pool.by_speaker();
    let available: usize = by_speaker.values().map(Vec::len).sum();
    if target_count > available {
        return Err(Error::Infeasible(format!(
            "requested {target_count} training segments, only {available} available"
        )));
    }
    let mut queues: Vec<Vec<usize>> = by_speaker.into_values().collect();
    rng.shuffle(&mut queues);
    for q in queues.iter_mut() {
        rng.shuffle(q);
    }
    let mut chosen = Vec::with_capacity(target_count);
    'outer: while chosen.len() < target_count {
        for q in queues.iter_mut() {
            if chosen.len() == target_count {
                break 'outer;
            }
            if let Some(i) = q.pop() {
                chosen.push(i);
            }
        }
    }
    chosen.sort_unstable();
    let segments = chosen
        .into_iter()
        .map(|i| pool.segments[i].clone())
        .collect();
    Ok(PreparedDataset::new(
        segments,
        Role::Train,
        pool.channel.clone(),
    ))
}

/// Keeps the `ceil(fraction * n_speakers)` lowest-ID speakers with all their
/// segments.
pub fn select_subset(train: &PreparedDataset, fraction: f64) -> Result<PreparedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "subset fraction {fraction} outside (0, 1]"
        )));
    }
    let speakers = train.speakers();
    // fraction * n can land a hair above an integer (0.03 * 100)
    let keep = ((fraction * speakers.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep: HashSet<&str> = speakers.into_iter().take(keep).collect();
    let segments = train
        .segments
        .iter()
        .filter(|s| {
            s.speaker_id
                .as_deref()
                .is_some_and(|spk| keep.contains(spk))
        })
        .cloned()
        .collect();
    Ok(PreparedDataset::new(
        segments,
        train.role,
        train.channel.clone(),
    ))
}

/// Partitions speakers into two halves. The validation half gets the extra
/// speaker when the count is odd.
pub fn split_dev_speakers(
    dev: &PreparedDataset,
    rng: &mut Rng,
) -> Result<(PreparedDataset, PreparedDataset)> {
    let mut speakers = dev.speakers();
    if speakers.len() < 2 {
        return Err(Error::Infeasible(format!(
            "dev split needs at least 2 speakers, found {}",
            speakers.len()
        )));
    }
    rng.shuffle(&mut speakers);
    let n_val = speakers.len().div_ceil(2);
    let val: HashSet<&str> = speakers[..n_val].iter().copied().collect();
    let (mut v, mut t) = (Vec::new(), Vec::new());
    for s in &dev.segments {
        match s.speaker_id.as_deref() {
            Some(spk) if val.contains(spk) => v.push(s.clone()),
            Some(_) => t.push(s.clone()),
            None => {}
        }
    }
    Ok((
        PreparedDataset::new(v, Role::DevValidation, dev.channel.clone()),
        PreparedDataset::new(t, Role::DevTest, dev.channel.clone()),
    ))
}

/// Exactly `n_pairs / 2` target and `n_pairs / 2` non-target trials, with no
/// self-pairs and no repeated unordered pair. Rejection sampling is capped at
/// `100 * n_pairs` draws.
pub fn generate_pairs(
    dataset: &PreparedDataset,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<Vec<TrialPair>> {
    if n_pairs == 0 || !n_pairs.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "n_pairs must be even and positive, got {n_pairs}"
        )));
    }
    let half = n_pairs / 2;
    let by_speaker: BTreeMap<&str, Vec<usize>> = dataset.by_speaker();
    let groups: Vec<&Vec<usize>> = by_speaker.values().collect();
    let multi: Vec<&Vec<usize>> = groups.iter().copied().filter(|g| g.len() >= 2).collect();

    let target_capacity: u128 = multi
        .iter()
        .map(|g| (g.len() as u128) * (g.len() as u128 - 1) / 2)
        .sum();
    let total: u128 = groups.iter().map(|g| g.len() as u128).sum();
    let nontarget_capacity = total * total.saturating_sub(1) / 2 - target_capacity;
    let mut deficits = Vec::new();
    if target_capacity < half as u128 {
        deficits.push(format!(
            "target trials: need {half}, only {target_capacity} distinct same-speaker pairs exist"
        ));
    }
    if nontarget_capacity < half as u128 {
        deficits.push(format!(
            "non-target trials: need {half}, only {nontarget_capacity} distinct cross-speaker pairs exist"
        ));
    }
    if !deficits.is_empty() {
        return Err(Error::Infeasible(deficits.join("; ")));
    }

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    let cap = 100 * n_pairs;
    let mut n_target = 0;
    let mut n_non = 0;
    while n_target < half || n_non < half {
        attempts += 1;
        if attempts > cap {
            let class = if n_target < half {
                "target"
            } else {
                "non-target"
            };
            return Err(Error::Infeasible(format!(
                "{class} trials: gave up after {cap} draws ({n_target} target, {n_non} non-target)"
            )));
        }
        let want_target = n_target < half && (n_non >= half || rng.uniform() < 0.5);
        let (a, b) = if want_target {
            let g = multi[rng.index(multi.len())];
            let i = rng.index(g.len());
            let mut j = rng.index(g.len() - 1);
            if j >= i {
                j += 1;
            }
            (g[i], g[j])
        } else {
            let gi = rng.index(groups.len());
            let mut gj = rng.index(groups.len() - 1);
            if gj >= gi {
                gj += 1;
            }
            let (ga, gb) = (groups[gi], groups[gj]);
            (ga[rng.index(ga.len())], gb[rng.index(gb.len())])
        };
        if !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        pairs.push(TrialPair {
            seg_a: dataset.segments[a].segment_id.clone(),
            seg_b: dataset.segments[b].segment_id.clone(),
            target: want_target,
        });
        if want_target {
            n_target += 1;
        } else {
            n_non += 1;
        }
    }
    Ok(pairs)
}
