//! Channel allocation auctions over the idle channels of one stage.
//!
//! Channels are indexed locally, `0..m` over the current idle set; the caller
//! maps them back to physical channel ids.

/// `a[i][j][k]`: value of SU `i` for idle channel `j` when channel `k` is jammed.
#[derive(Debug, Clone, PartialEq)]
pub struct BidCube {
    sus: usize,
    channels: usize,
    data: Vec<f64>,
}

impl BidCube {
    pub fn new(sus: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), sus * channels * channels, "bid cube has the wrong length");
        assert!(
            data.iter().all(|v| v.is_finite() && *v >= 0.0),
            "bids must be finite and non-negative"
        );
        Self { sus, channels, data }
    }

    pub fn from_fn(sus: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(sus * channels * channels);
        for i in 0..sus {
            for j in 0..channels {
                for k in 0..channels {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(sus, channels, data)
    }

    pub fn sus(&self) -> usize {
        self.sus
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, su: usize, channel: usize, jam: usize) -> f64 {
        self.data[(su * self.channels + channel) * self.channels + jam]
    }

    /// Bids conditional on `jam` being the attacked channel.
    pub fn given_jam(&self, jam: usize) -> EffectiveBids {
        EffectiveBids::from_fn(self.sus, self.channels, |i, j| self.get(i, j, jam))
    }

    /// `a′[i][j] = Σ_k q2[k]·a[i][j][k]`.
    pub fn effective(&self, q2: &[f64]) -> EffectiveBids {
        assert_eq!(q2.len(), self.channels);
        EffectiveBids::from_fn(self.sus, self.channels, |i, j| {
            q2.iter().enumerate().map(|(k, &w)| w * self.get(i, j, k)).sum()
        })
    }

    /// Total bid value of an allocation when `jam` is attacked.
    pub fn allocation_value(&self, alloc: &Allocation, jam: usize) -> f64 {
        alloc.pairs().map(|(i, j)| self.get(i, j, jam)).sum()
    }

    /// Same cube with SU `su`'s values replaced by `f(j, k, value)`.
    pub fn map_su(&self, su: usize, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        Self::from_fn(self.sus, self.channels, |i, j, k| {
            let v = self.get(i, j, k);
            if i == su {
                f(j, k, v)
            } else {
                v
            }
        })
    }
}

/// `a′[i][j]`: expected value of SU `i` for idle channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveBids {
    sus: usize,
    channels: usize,
    data: Vec<f64>,
}

impl EffectiveBids {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        let channels = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == channels), "ragged bid matrix");
        let sus = rows.len();
        Self::from_fn(sus, channels, |i, j| rows[i][j])
    }

    pub fn from_fn(sus: usize, channels: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(sus * channels);
        for i in 0..sus {
            for j in 0..channels {
                let v = f(i, j);
                assert!(v.is_finite() && v >= 0.0, "bids must be finite and non-negative");
                data.push(v);
            }
        }
        Self { sus, channels, data }
    }

    pub fn sus(&self) -> usize {
        self.sus
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, su: usize, channel: usize) -> f64 {
        self.data[su * self.channels + channel]
    }

    pub fn row(&self, su: usize) -> &[f64] {
        &self.data[su * self.channels..(su + 1) * self.channels]
    }

    pub fn welfare(&self, alloc: &Allocation) -> f64 {
        alloc.pairs().map(|(i, j)| self.get(i, j)).sum()
    }
}

/// Per-SU assigned channel; `None` means no channel this stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation(Vec<Option<usize>>);

impl Allocation {
    pub fn empty(sus: usize) -> Self {
        Self(vec![None; sus])
    }

    pub fn from_vec(v: Vec<Option<usize>>) -> Self {
        Self(v)
    }

    pub fn sus(&self) -> usize {
        self.0.len()
    }

    pub fn channel_of(&self, su: usize) -> Option<usize> {
        self.0[su]
    }

    pub fn su_of(&self, channel: usize) -> Option<usize> {
        self.0.iter().position(|&c| c == Some(channel))
    }

    pub fn assign(&mut self, su: usize, channel: Option<usize>) {
        self.0[su] = channel;
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }

    /// `(su, channel)` pairs in SU order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }

    pub fn assigned(&self) -> usize {
        self.0.iter().flatten().count()
    }

    /// No channel outside `0..channels` and no channel used twice.
    pub fn is_feasible(&self, channels: usize) -> bool {
        let mut used = vec![false; channels];
        self.pairs().all(|(_, c)| c < channels && !std::mem::replace(&mut used[c], true))
    }

    /// Union of two allocations over disjoint SU and channel sets.
    pub fn merge(&self, other: &Allocation) -> Allocation {
        assert_eq!(self.sus(), other.sus());
        Allocation(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| match (a, b) {
                    (Some(_), Some(_)) => panic!("SU allocated at both levels"),
                    _ => a.or(*b),
                })
                .collect(),
        )
    }
}

/// Minimum-cost perfect assignment of a square cost matrix (row-major).
/// Returns the column assigned to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // potentials method on a 1-based layout; column 0 is a virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best welfare over SUs `sus` and channels `channels`, and the matching.
fn best_matching(bids: &EffectiveBids, sus: &[usize], channels: &[usize]) -> (f64, Vec<(usize, usize)>) {
    if sus.is_empty() || channels.is_empty() {
        return (0.0, Vec::new());
    }
    let n = sus.len().max(channels.len());
    let mut cost = vec![0.0; n * n];
    for (x, &i) in sus.iter().enumerate() {
        for (y, &j) in channels.iter().enumerate() {
            cost[x * n + y] = -bids.get(i, j);
        }
    }
    let assignment = hungarian(&cost, n);
    let mut pairs = Vec::new();
    let mut total = 0.0;
    for (x, &y) in assignment.iter().enumerate() {
        if x < sus.len() && y < channels.len() {
            pairs.push((sus[x], channels[y]));
            total += bids.get(sus[x], channels[y]);
        }
    }
    (total, pairs)
}

fn welfare_tolerance(w: f64) -> f64 {
    1e-9 * w.abs().max(1.0)
}

/// Welfare-maximizing allocation of all idle channels (`0..bids.channels()`)
/// among the `eligible` SUs, assigning `min(|eligible|, channels)` pairs.
///
/// Among optimal allocations the lexicographically smallest is returned:
/// SU by SU in index order, the lowest channel that can still be completed
/// to an optimum, with "no channel" ranked last.
pub fn max_weight_allocation(bids: &EffectiveBids, eligible: &[usize]) -> (Allocation, f64) {
    let m = bids.channels();
    let mut sus: Vec<usize> = eligible.to_vec();
    sus.sort_unstable();
    sus.dedup();
    let all_channels: Vec<usize> = (0..m).collect();
    let (best, _) = best_matching(bids, &sus, &all_channels);
    let tol = welfare_tolerance(best);
    let required = sus.len().min(m);

    let mut alloc = Allocation::empty(bids.sus());
    let mut free = vec![true; m];
    let mut gained = 0.0;
    let mut placed = 0;
    for (pos, &i) in sus.iter().enumerate() {
        let rest = &sus[pos + 1..];
        let mut choice = None;
        for j in (0..m).filter(|&j| free[j]) {
            let channels: Vec<usize> = (0..m).filter(|&c| free[c] && c != j).collect();
            if placed + 1 + rest.len().min(channels.len()) < required {
                continue;
            }
            let (w, _) = best_matching(bids, rest, &channels);
            if gained + bids.get(i, j) + w >= best - tol {
                choice = Some(j);
                break;
            }
        }
        if let Some(j) = choice {
            free[j] = false;
            gained += bids.get(i, j);
            placed += 1;
            alloc.assign(i, Some(j));
        }
    }
    let welfare = bids.welfare(&alloc);
    (alloc, welfare)
}

/// Pivot payments: for each eligible SU, the best welfare the other eligible
/// SUs could reach without it, minus their welfare under `alloc`. Clamped at 0.
pub fn pivot_payment(bids: &EffectiveBids, alloc: &Allocation, eligible: &[usize]) -> Vec<f64> {
    let channels: Vec<usize> = (0..bids.channels()).collect();
    let mut payments = vec![0.0; bids.sus()];
    for &i in eligible {
        let others: Vec<usize> = eligible.iter().copied().filter(|&k| k != i).collect();
        let (without, _) = best_matching(bids, &others, &channels);
        let others_with: f64 = alloc
            .pairs()
            .filter(|&(k, _)| k != i && others.contains(&k))
            .map(|(k, j)| bids.get(k, j))
            .sum();
        let p = without - others_with;
        payments[i] = if p > welfare_tolerance(without) { p } else { 0.0 };
    }
    payments
}

/// One preference auction level: each channel goes to the highest bidder
/// among `participants` naming it (lowest SU index on ties), restricted to
/// `channels`.
fn preference_winners(
    participants: &[usize],
    channels: &[usize],
    prefs: &[Option<usize>],
    bids: &[f64],
) -> Allocation {
    let mut alloc = Allocation::empty(prefs.len());
    for &j in channels {
        let winner = participants
            .iter()
            .copied()
            .filter(|&i| prefs[i] == Some(j))
            .fold(None::<usize>, |best, i| match best {
                Some(b) if bids[b] >= bids[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = winner {
            alloc.assign(i, Some(j));
        }
    }
    alloc
}

/// First auction level over all SUs and all `channels` idle channels.
pub fn first_preference_allocation(prefs: &[Option<usize>], bids: &[f64], channels: usize) -> Allocation {
    let participants: Vec<usize> = (0..prefs.len()).collect();
    let channels: Vec<usize> = (0..channels).collect();
    preference_winners(&participants, &channels, prefs, bids)
}

/// Later auction level over the SUs and channels left unassigned.
pub fn second_auction(
    remaining_sus: &[usize],
    remaining_channels: &[usize],
    prefs: &[Option<usize>],
    bids: &[f64],
) -> Allocation {
    preference_winners(remaining_sus, remaining_channels, prefs, bids)
}

/// Pivot payments of one preference level. Each participant's single bid is
/// placed on its named channel, so the payment of a winner is the highest
/// competing bid for the same channel.
pub fn preference_payments(
    participants: &[usize],
    channels: usize,
    prefs: &[Option<usize>],
    bids: &[f64],
    alloc: &Allocation,
) -> Vec<f64> {
    let matrix = EffectiveBids::from_fn(prefs.len(), channels, |i, j| {
        if participants.contains(&i) && prefs[i] == Some(j) {
            bids[i]
        } else {
            0.0
        }
    });
    pivot_payment(&matrix, alloc, participants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;

    fn bids(rows: &[&[f64]]) -> EffectiveBids {
        EffectiveBids::new(rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn two_by_two_welfare() {
        let b = bids(&[&[3.0, 1.0], &[1.0, 2.0]]);
        let (a, w) = max_weight_allocation(&b, &[0, 1]);
        assert_eq!(a.as_slice(), &[Some(0), Some(1)]);
        assert_eq!(w, 5.0);
    }

    #[test]
    fn single_channel_argmax() {
        let b = bids(&[&[3.0], &[1.0]]);
        let (a, w) = max_weight_allocation(&b, &[0, 1]);
        assert_eq!(a.as_slice(), &[Some(0), None]);
        assert_eq!(w, 3.0);
    }

    #[test]
    fn zero_bids_tie_break() {
        let b = bids(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let (a, w) = max_weight_allocation(&b, &[0, 1]);
        assert_eq!(a.as_slice(), &[Some(0), Some(1)]);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn empty_idle_set() {
        let b = EffectiveBids::from_fn(3, 0, |_, _| 0.0);
        let (a, w) = max_weight_allocation(&b, &[0, 1, 2]);
        assert_eq!(a.assigned(), 0);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn fewer_sus_than_channels() {
        let b = bids(&[&[1.0, 5.0, 2.0]]);
        let (a, _) = max_weight_allocation(&b, &[0]);
        assert_eq!(a.as_slice(), &[Some(1)]);
    }

    #[test]
    fn ineligible_sus_are_skipped() {
        let b = bids(&[&[9.0], &[1.0]]);
        let (a, _) = max_weight_allocation(&b, &[1]);
        assert_eq!(a.as_slice(), &[None, Some(0)]);
    }

    #[test]
    fn second_price_single_channel() {
        let b = bids(&[&[3.0], &[1.0]]);
        let (a, _) = max_weight_allocation(&b, &[0, 1]);
        assert_eq!(pivot_payment(&b, &a, &[0, 1]), vec![1.0, 0.0]);
    }

    #[test]
    fn lone_bidder_pays_nothing() {
        let b = bids(&[&[4.0, 2.0]]);
        let (a, _) = max_weight_allocation(&b, &[0]);
        assert_eq!(pivot_payment(&b, &a, &[0]), vec![0.0]);
    }

    #[test]
    fn pivot_without_externality() {
        let b = bids(&[&[3.0, 1.0], &[1.0, 2.0]]);
        let (a, _) = max_weight_allocation(&b, &[0, 1]);
        // without SU 0, SU 1 takes channel 1 for 2, which it gets anyway
        assert_eq!(pivot_payment(&b, &a, &[0, 1]), vec![0.0, 0.0]);
    }

    #[test]
    fn first_level_per_channel_argmax() {
        let prefs = [Some(0), Some(0), Some(1)];
        let a = first_preference_allocation(&prefs, &[5.0, 3.0, 4.0], 2);
        assert_eq!(a.as_slice(), &[Some(0), None, Some(1)]);
        let p = preference_payments(&[0, 1, 2], 2, &prefs, &[5.0, 3.0, 4.0], &a);
        assert_eq!(p, vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn first_level_distinct_and_single() {
        let a = first_preference_allocation(&[Some(1), Some(0)], &[1.0, 1.0], 2);
        assert_eq!(a.as_slice(), &[Some(1), Some(0)]);
        let a = first_preference_allocation(&[Some(1)], &[0.0], 2);
        assert_eq!(a.as_slice(), &[Some(1)]);
    }

    #[test]
    fn first_level_tie_goes_to_lowest_index() {
        let a = first_preference_allocation(&[Some(0), Some(0)], &[2.0, 2.0], 1);
        assert_eq!(a.as_slice(), &[Some(0), None]);
    }

    #[test]
    fn second_level_cases() {
        assert_eq!(second_auction(&[], &[], &[None, None], &[0.0, 0.0]).assigned(), 0);
        let a = second_auction(&[1], &[0], &[None, Some(0)], &[0.0, 0.5]);
        assert_eq!(a.as_slice(), &[None, Some(0)]);
        let a = second_auction(&[0, 1], &[1], &[Some(1), Some(1)], &[2.0, 7.0]);
        assert_eq!(a.as_slice(), &[None, Some(1)]);
    }

    #[test]
    fn cube_effective_average() {
        let cube = BidCube::from_fn(1, 2, |_, j, k| if j == k { 0.0 } else { 2.0 });
        let e = cube.effective(&[0.25, 0.75]);
        assert!((e.get(0, 0) - 1.5).abs() < 1e-15);
        assert!((e.get(0, 1) - 0.5).abs() < 1e-15);
    }

    fn instance() -> impl Strategy<Value = (EffectiveBids, Vec<usize>)> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..5.0], n * m),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(d, mask)| {
                    let b = EffectiveBids::from_fn(n, m, |i, j| d[i * m + j]);
                    let eligible = (0..n).filter(|&i| mask[i]).collect();
                    (b, eligible)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((b, eligible) in instance()) {
            let (a, w) = max_weight_allocation(&b, &eligible);
            let restricted: Vec<Vec<f64>> = (0..b.sus())
                .map(|i| if eligible.contains(&i) { b.row(i).to_vec() } else { vec![0.0; b.channels()] })
                .collect();
            prop_assert!((w - oracle::brute_force_max_weight(&restricted)).abs() < 1e-9);
            prop_assert!(a.is_feasible(b.channels()));
            prop_assert_eq!(a.assigned(), eligible.len().min(b.channels()));
            prop_assert!(a.pairs().all(|(i, _)| eligible.contains(&i)));
        }

        #[test]
        fn payments_are_individually_rational((b, eligible) in instance()) {
            let (a, w) = max_weight_allocation(&b, &eligible);
            let p = pivot_payment(&b, &a, &eligible);
            for i in 0..b.sus() {
                prop_assert!(p[i] >= 0.0);
                let value = a.channel_of(i).map_or(0.0, |j| b.get(i, j));
                prop_assert!(value - p[i] >= -1e-9);
                // profit equals total welfare minus the optimum without i
                if eligible.contains(&i) {
                    let others: Vec<usize> = eligible.iter().copied().filter(|&k| k != i).collect();
                    let (_, without) = max_weight_allocation(&b, &others);
                    prop_assert!((value - p[i] - (w - without)).abs() < 1e-9);
                }
            }
        }
    }
}
