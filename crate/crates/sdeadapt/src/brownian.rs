//! Seeded, extendable, bridge-queryable Wiener paths.
//!
//! A path stores every sample it has produced, keyed by time. Queries past the
//! last stored time draw fresh scaled increments; queries between stored times
//! draw from the Brownian bridge conditioned on the two neighbours. Given the
//! same seed and the same sequence of query times, a path reproduces the same
//! sample set bit for bit, which is what lets adaptive, fixed-step, reference,
//! and coupled runs all consume one realisation of the noise.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::rng::{derive_seed, standard_normal};

/// One m-dimensional Wiener path with memoised samples.
pub struct BrownianPath {
    seed: u64,
    dim: usize,
    rng: ChaCha12Rng,
    samples: BTreeMap<u64, Vec<f64>>,
}

/// Validates a query time and returns its map key.
///
/// Finite non-negative times order correctly under their IEEE bit patterns
/// once negative zero is folded into positive zero.
fn time_key(t: f64) -> u64 {
    assert!(
        t.is_finite() && t >= 0.0,
        "Wiener path queried at invalid time {t}"
    );
    if t == 0.0 {
        0.0f64.to_bits()
    } else {
        t.to_bits()
    }
}

impl BrownianPath {
    /// Creates a fresh path with `W(0) = 0` in `dim` components.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "path dimension must be positive");
        let mut samples = BTreeMap::new();
        samples.insert(time_key(0.0), vec![0.0; dim]);
        Self {
            seed,
            dim,
            rng: ChaCha12Rng::seed_from_u64(seed),
            samples,
        }
    }

    /// Creates the `index`-th child path of a base seed, e.g. one per
    /// simulated realisation.
    pub fn derive(base_seed: u64, index: u64, dim: usize) -> Self {
        Self::new(derive_seed(base_seed, index), dim)
    }

    /// Seed this path was built from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of components.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct times sampled so far, including t = 0.
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Writes `W(t)` into `out`, drawing and memoising it if unseen.
    ///
    /// New times beyond the current frontier extend the path with a
    /// `sqrt(t - t_last) * xi` increment; times inside the sampled range draw
    /// the Brownian bridge between the nearest stored neighbours. Re-querying
    /// a stored time returns the stored value exactly.
    pub fn sample_into(&mut self, t: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "output buffer has wrong dimension");
        let key = time_key(t);
        if let Some(stored) = self.samples.get(&key) {
            out.copy_from_slice(stored);
            return;
        }

        let (&last_key, _) = self.samples.last_key_value().expect("t=0 always stored");
        let value = if key > last_key {
            let t_last = f64::from_bits(last_key);
            let w_last = &self.samples[&last_key];
            let scale = (t - t_last).sqrt();
            let mut v = Vec::with_capacity(self.dim);
            for component in w_last.iter() {
                v.push(component + scale * standard_normal(&mut self.rng));
            }
            v
        } else {
            let (&left_key, left) = self
                .samples
                .range(..key)
                .next_back()
                .expect("t=0 bounds every interior query");
            let (&right_key, right) = self
                .samples
                .range(key..)
                .next()
                .expect("interior query has a right neighbour");
            let a = f64::from_bits(left_key);
            let b = f64::from_bits(right_key);
            let frac = (t - a) / (b - a);
            let std_dev = ((t - a) * (b - t) / (b - a)).sqrt();
            let mut v = Vec::with_capacity(self.dim);
            for (wl, wr) in left.iter().zip(right.iter()) {
                let mean = wl + frac * (wr - wl);
                v.push(mean + std_dev * standard_normal(&mut self.rng));
            }
            v
        };

        out.copy_from_slice(&value);
        self.samples.insert(key, value);
    }

    /// Returns `W(t)` as an owned vector.
    pub fn sample_at(&mut self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(t, &mut out);
        out
    }

    /// Writes the increment `W(t1) - W(t0)` into `out`.
    ///
    /// # Panics
    /// Panics unless `0 <= t0 < t1`.
    pub fn increment_into(&mut self, t0: f64, t1: f64, out: &mut [f64]) {
        assert!(t1 > t0, "increment needs t1 > t0, got [{t0}, {t1}]");
        // Sample the left endpoint first so a fresh query pair extends the
        // path in time order.
        let w0 = self.sample_at(t0);
        self.sample_into(t1, out);
        for (o, w) in out.iter_mut().zip(w0.iter()) {
            *o -= w;
        }
    }

    /// Returns the increment `W(t1) - W(t0)` as an owned vector.
    pub fn increment(&mut self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.increment_into(t0, t1, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero() {
        let mut path = BrownianPath::new(1, 3);
        assert_eq!(path.sample_at(0.0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn requery_returns_stored_value_bit_exactly() {
        let mut path = BrownianPath::new(7, 2);
        let first = path.sample_at(1.25);
        let again = path.sample_at(1.25);
        assert_eq!(first, again);
        // A bridge query between stored times must not disturb them.
        let mid = path.sample_at(0.6);
        assert_eq!(path.sample_at(1.25), first);
        assert_ne!(mid, first);
    }

    #[test]
    fn identical_seed_and_query_sequence_reproduces_samples() {
        let queries = [0.5, 2.0, 1.3, 0.1, 1.9, 0.7];
        let mut a = BrownianPath::new(99, 2);
        let mut b = BrownianPath::new(99, 2);
        for &t in &queries {
            assert_eq!(a.sample_at(t), b.sample_at(t));
        }
        assert_eq!(a.sample_count(), queries.len() + 1);
    }

    #[test]
    fn derived_paths_differ_by_index() {
        let mut a = BrownianPath::derive(5, 0, 1);
        let mut b = BrownianPath::derive(5, 1, 1);
        assert_ne!(a.sample_at(1.0), b.sample_at(1.0));
        let mut a2 = BrownianPath::derive(5, 0, 1);
        assert_eq!(a.sample_at(1.0), a2.sample_at(1.0));
    }

    #[test]
    fn increments_telescope() {
        let mut path = BrownianPath::new(3, 1);
        let w2 = path.sample_at(2.0)[0];
        let inc_a = path.increment(0.0, 0.8)[0];
        let inc_b = path.increment(0.8, 2.0)[0];
        assert!((inc_a + inc_b - w2).abs() < 1e-14);
    }

    #[test]
    fn bridge_point_lies_between_neighbour_information() {
        // With the bridge formula the conditional mean at the midpoint of
        // [0, t] is W(t)/2; check one draw sits within a few conditional
        // standard deviations of it.
        let mut path = BrownianPath::new(11, 1);
        let w1 = path.sample_at(1.0)[0];
        let mid = path.sample_at(0.5)[0];
        let cond_sd = (0.25f64).sqrt();
        assert!((mid - 0.5 * w1).abs() < 6.0 * cond_sd);
    }

    #[test]
    #[should_panic(expected = "invalid time")]
    fn negative_times_are_rejected() {
        let mut path = BrownianPath::new(1, 1);
        path.sample_at(-0.5);
    }

    #[test]
    #[should_panic(expected = "t1 > t0")]
    fn degenerate_increments_are_rejected() {
        let mut path = BrownianPath::new(1, 1);
        path.increment(1.0, 1.0);
    }
}
