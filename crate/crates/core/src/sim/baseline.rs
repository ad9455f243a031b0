//! Greedy comparator: each relay serves its circuit queues round-robin up to
//! its outgoing capacity, with no admission control.

/// Splits `budget` packets over queues of the given lengths, one packet per
/// non-empty queue per round starting at `start`. Returns the per-queue
/// counts and the position to start from next time.
pub fn round_robin(lens: &[usize], budget: usize, start: usize) -> (Vec<usize>, usize) {
    let p = lens.len();
    let mut take = vec![0; p];
    if p == 0 {
        return (take, 0);
    }
    let mut left = budget;
    let mut pos = start % p;
    // Full rounds first, then the partial round from `pos`.
    loop {
        let active: Vec<usize> = (0..p).filter(|&i| take[i] < lens[i]).collect();
        if active.is_empty() || left == 0 {
            break;
        }
        if left >= active.len() {
            let rounds = (left / active.len()).min(active.iter().map(|&i| lens[i] - take[i]).min().unwrap_or(0));
            for &i in &active {
                take[i] += rounds;
            }
            left -= rounds * active.len();
            if rounds > 0 {
                continue;
            }
        }
        let base = pos;
        for k in 0..p {
            let i = (base + k) % p;
            if left == 0 {
                break;
            }
            if take[i] < lens[i] {
                take[i] += 1;
                left -= 1;
                pos = (i + 1) % p;
            }
        }
    }
    (take, pos)
}
