//! Replay buffer of solver-derived transitions with partial costs-to-go.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::ddp::Trajectory;
use crate::error::{Error, Result};
use crate::task::AugmentedState;

pub const DEFAULT_CAPACITY: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AugmentedState,
    /// Partial cost-to-go over the lookahead window.
    pub value: f64,
    /// Physical-state value gradient from the solver's backward pass.
    pub value_grad: Vec<f64>,
    pub next: AugmentedState,
    /// The window reached the end of the episode; no bootstrap.
    pub terminal: bool,
}

/// Builds the transitions of one solved episode.
///
/// With `T = start_time + horizon`, a step at absolute time `t` covers stages
/// `t..t+L-1` and bootstraps from `x_{t+L}` when `t + L < T`. Otherwise it sums
/// every remaining stage including the terminal cost and is terminal. One
/// transition is produced per time `t0..=T`.
pub fn trajectory_transitions(traj: &Trajectory, lookahead: usize) -> Result<Vec<Transition>> {
    if lookahead < 1 {
        return Err(Error::InvalidArgument("lookahead L must be at least 1".into()));
    }
    let h = traj.horizon();
    if traj.states.len() != h + 1 || traj.stage_costs.len() != h + 1 || traj.value_grads.len() != h + 1 {
        return Err(Error::InvalidArgument(format!(
            "incomplete trajectory: {} states, {} costs, {} gradients for horizon {h}",
            traj.states.len(),
            traj.stage_costs.len(),
            traj.value_grads.len()
        )));
    }
    let t0 = traj.start_time;
    let mut out = Vec::with_capacity(h + 1);
    for k in 0..=h {
        let (end, terminal) = if k.saturating_add(lookahead) >= h {
            (h + 1, true)
        } else {
            (k + lookahead, false)
        };
        let value: f64 = traj.stage_costs[k..end].iter().sum();
        let next_k = end.min(h);
        out.push(Transition {
            state: AugmentedState {
                x: traj.states[k].as_slice().to_vec(),
                t: t0 + k,
            },
            value,
            value_grad: traj.value_grads[k].as_slice().to_vec(),
            next: AugmentedState {
                x: traj.states[next_k].as_slice().to_vec(),
                t: t0 + next_k,
            },
            terminal,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
    }

    /// Inserts one transition per step of `traj`; returns how many.
    pub fn insert_trajectory(&mut self, traj: &Trajectory, lookahead: usize) -> Result<usize> {
        let trs = trajectory_transitions(traj, lookahead)?;
        let count = trs.len();
        for tr in trs {
            self.push(tr);
        }
        Ok(count)
    }

    /// `size` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if size == 0 || self.items.len() < size {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {size} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        let len = self.items.len();
        Ok((0..size).map(|_| &self.items[rng.gen_range(0..len)]).collect())
    }

    /// Flat binary snapshot: `"CSLB"`, u32 state dim, u64 count, then per
    /// transition `x, t (u32), V, V_x, x_next, t_next (u32), terminal (u8)`,
    /// and a CRC32 footer. Little-endian throughout.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.items.front().map_or(0, |t| t.state.x.len());
        let mut out = Vec::new();
        out.extend_from_slice(b"CSLB");
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u64).to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[f64]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for tr in &self.items {
            put(&mut out, &tr.state.x);
            out.extend_from_slice(&(tr.state.t as u32).to_le_bytes());
            put(&mut out, &[tr.value]);
            put(&mut out, &tr.value_grad);
            put(&mut out, &tr.next.x);
            out.extend_from_slice(&(tr.next.t as u32).to_le_bytes());
            out.push(tr.terminal as u8);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses [`encode`](Self::encode) output into a buffer of the given capacity.
    pub fn decode(bytes: &[u8], capacity: usize) -> std::result::Result<Self, String> {
        if bytes.len() < 20 {
            return Err("truncated buffer dump".into());
        }
        let (body, footer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body).to_le_bytes() != footer {
            return Err("CRC mismatch".into());
        }
        if &body[..4] != b"CSLB" {
            return Err("bad magic".into());
        }
        let n = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let record = 8 * (3 * n + 1) + 9;
        if body.len() != 16 + count * record {
            return Err("buffer dump length does not match its header".into());
        }
        let mut cur = Cursor { bytes: body, pos: 16 };
        let mut buf = ReplayBuffer::new(capacity.max(1)).map_err(|e| e.to_string())?;
        for _ in 0..count {
            let x = cur.f64s(n);
            let t = cur.u32() as usize;
            let value = cur.f64s(1)[0];
            let value_grad = cur.f64s(n);
            let next_x = cur.f64s(n);
            let next_t = cur.u32() as usize;
            let terminal = cur.byte() != 0;
            buf.push(Transition {
                state: AugmentedState { x, t },
                value,
                value_grad,
                next: AugmentedState { x: next_x, t: next_t },
                terminal,
            });
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Reads fixed-width fields; callers check the total length up front.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn f64s(&mut self, k: usize) -> Vec<f64> {
        let v = self.bytes[self.pos..self.pos + 8 * k]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * k;
        v
    }

    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn byte(&mut self) -> u8 {
        self.pos += 1;
        self.bytes[self.pos - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Scalar-state trajectory with x_k = k and the given stage costs.
    fn synthetic(costs: &[f64], start_time: usize) -> Trajectory {
        let h = costs.len() - 1;
        Trajectory {
            start_time,
            states: (0..=h).map(|k| DVector::from_element(1, k as f64)).collect(),
            controls: vec![DVector::zeros(1); h],
            stage_costs: costs.to_vec(),
            total_cost: costs.iter().sum(),
            value_grads: (0..=h).map(|k| DVector::from_element(1, -(k as f64))).collect(),
        }
    }

    #[test]
    fn horizon_three_long_lookahead_is_all_terminal() {
        let traj = synthetic(&[1.0, 2.0, 4.0, 8.0], 0);
        for l in [3, 4, 50] {
            let trs = trajectory_transitions(&traj, l).unwrap();
            let values: Vec<f64> = trs.iter().map(|t| t.value).collect();
            assert_eq!(values, vec![15.0, 14.0, 12.0, 8.0]);
            assert!(trs.iter().all(|t| t.terminal && t.next.t == 3 && t.next.x == vec![3.0]));
        }
    }

    #[test]
    fn unit_lookahead() {
        let traj = synthetic(&[1.0, 2.0, 4.0, 8.0], 0);
        let trs = trajectory_transitions(&traj, 1).unwrap();
        let values: Vec<f64> = trs.iter().map(|t| t.value).collect();
        assert_eq!(values, vec![1.0, 2.0, 12.0, 8.0]);
        assert_eq!(trs.iter().map(|t| t.terminal).collect::<Vec<_>>(), vec![false, false, true, true]);
        assert_eq!(trs[0].next, AugmentedState { x: vec![1.0], t: 1 });
        assert_eq!(trs[1].next, AugmentedState { x: vec![2.0], t: 2 });
        assert_eq!(trs[1].value_grad, vec![-1.0]);
    }

    #[test]
    fn long_trajectory_window_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let costs: Vec<f64> = (0..=200).map(|_| rng.gen_range(0.0..10.0)).collect();
        let traj = synthetic(&costs, 0);
        let trs = trajectory_transitions(&traj, 50).unwrap();
        assert_eq!(trs.len(), 201);
        // Independent window sums by prefix differences.
        let mut prefix = vec![0.0];
        for c in &costs {
            prefix.push(prefix.last().unwrap() + c);
        }
        for (k, tr) in trs.iter().enumerate() {
            let end = if k + 50 >= 200 { 201 } else { k + 50 };
            assert!((tr.value - (prefix[end] - prefix[k])).abs() < 1e-9);
        }
        assert!(!trs[0].terminal);
        assert_eq!(trs[0].next.t, 50);
        assert!(trs[150].terminal);
    }

    #[test]
    fn start_time_offsets_absolute_times() {
        let traj = synthetic(&[1.0, 1.0, 1.0], 7);
        let trs = trajectory_transitions(&traj, 1).unwrap();
        assert_eq!(trs.iter().map(|t| t.state.t).collect::<Vec<_>>(), vec![7, 8, 9]);
        assert_eq!(trs[0].next.t, 8);
    }

    #[test]
    fn zero_lookahead_rejected() {
        let traj = synthetic(&[1.0, 1.0], 0);
        assert!(trajectory_transitions(&traj, 0).is_err());
        assert!(ReplayBuffer::new(4).unwrap().insert_trajectory(&traj, 0).is_err());
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        buf.insert_trajectory(&synthetic(&[0.0, 1.0, 2.0, 3.0], 0), 1).unwrap();
        buf.insert_trajectory(&synthetic(&[0.0, 1.0, 2.0], 10), 1).unwrap();
        assert_eq!(buf.len(), 5);
        let times: Vec<usize> = buf.iter().map(|t| t.state.t).collect();
        assert_eq!(times, vec![2, 3, 10, 11, 12]);
    }

    #[test]
    fn sampling_contract() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(1, &mut rng).is_err());
        buf.insert_trajectory(&synthetic(&[5.0], 0), 1).unwrap();
        let s = buf.sample(1, &mut rng).unwrap();
        assert_eq!(s[0].value, 5.0);
        assert!(buf.sample(2, &mut rng).is_err());

        let mut big = ReplayBuffer::new(100).unwrap();
        big.insert_trajectory(&synthetic(&vec![1.0; 30], 0), 2).unwrap();
        let a: Vec<usize> = big.sample(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().iter().map(|t| t.state.t).collect();
        let b: Vec<usize> = big.sample(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().iter().map(|t| t.state.t).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(1000).unwrap();
        buf.insert_trajectory(&synthetic(&vec![1.0; 100], 0), 1).unwrap();
        assert_eq!(buf.len(), 100);
        let mut counts = [0u32; 100];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        for _ in 0..draws / 100 {
            for tr in buf.sample(100, &mut rng).unwrap() {
                counts[tr.state.t] += 1;
            }
        }
        let expect = draws as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn dump_roundtrip_and_corruption() {
        let mut buf = ReplayBuffer::new(50).unwrap();
        buf.insert_trajectory(&synthetic(&[1.5, 2.5, 3.5, 4.5], 3), 2).unwrap();
        let bytes = buf.encode();
        let back = ReplayBuffer::decode(&bytes, 50).unwrap();
        assert_eq!(back.iter().collect::<Vec<_>>(), buf.iter().collect::<Vec<_>>());
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(ReplayBuffer::decode(&bad, 50).is_err());
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(cap in 1usize..40, lens in proptest::collection::vec(1usize..15, 1..8), l in 1usize..6) {
            let mut buf = ReplayBuffer::new(cap).unwrap();
            for h in lens {
                let traj = synthetic(&vec![1.0; h + 1], 0);
                for tr in trajectory_transitions(&traj, l).unwrap() {
                    prop_assert_eq!(tr.terminal, tr.state.t + l >= h);
                    prop_assert_eq!(tr.value_grad.len(), 1);
                    let expect = if tr.terminal { (h + 1 - tr.state.t) as f64 } else { l as f64 };
                    prop_assert_eq!(tr.value, expect);
                }
                buf.insert_trajectory(&traj, l).unwrap();
                prop_assert!(buf.len() <= cap);
            }
        }
    }
}
