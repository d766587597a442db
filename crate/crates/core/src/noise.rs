//! Counter-keyed randomness.
//!
//! Every random number is a pure function of a key, never of how many numbers
//! were drawn before it. That makes trajectories independent of thread count and
//! lets two integrators with different step sizes see the same Brownian path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Resolution of one base cell in integer ticks.
pub const TICK_BITS: u32 = 24;
pub const TICKS_PER_CELL: u64 = 1 << TICK_BITS;

fn keyed(words: [u64; 4]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Independent generator for `(master seed, component, index)`.
pub fn substream(seed: u64, component: u64, index: u64) -> ChaCha8Rng {
    keyed([seed, component, index, u64::MAX])
}

/// A multi-channel Brownian motion, sampled lazily on dyadic subintervals of
/// fixed-width base cells.
///
/// The increment over a base cell is drawn from a key that names the cell; finer
/// increments are filled in by Brownian-bridge bisection, each level keyed by its
/// position in the tree. Summing the two halves of any node reproduces the node.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    seed: u64,
    stream: u64,
    channels: usize,
    cell: f64,
    silent: bool,
}

impl BrownianPath {
    const TAG: u64 = 0x5749_454e_4552; // "WIENER"

    pub fn new(seed: u64, stream: u64, channels: usize, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell width must be positive");
        Self {
            seed,
            stream,
            channels,
            cell,
            silent: false,
        }
    }

    /// A path that is identically zero; turns every integrator deterministic.
    pub fn silent(channels: usize, cell: f64) -> Self {
        Self {
            silent: true,
            ..Self::new(0, 0, channels, cell)
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cell_width(&self) -> f64 {
        self.cell
    }

    /// Converts a duration into ticks. Durations must be dyadic fractions of a cell.
    pub fn ticks(&self, duration: f64) -> u64 {
        (duration / self.cell * TICKS_PER_CELL as f64).round() as u64
    }

    pub fn time_of(&self, ticks: u64) -> f64 {
        (ticks >> TICK_BITS) as f64 * self.cell
            + (ticks & (TICKS_PER_CELL - 1)) as f64 / TICKS_PER_CELL as f64 * self.cell
    }

    fn normals(&self, cell: u64, level: u32, j: u64, out: &mut [f64]) {
        debug_assert!(cell < 1 << 35);
        let node = (cell << 29) | ((level as u64) << TICK_BITS) | j;
        let mut rng = keyed([self.seed, Self::TAG, self.stream, node]);
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
        }
    }

    /// Increment over node `j` of `level` inside `cell`, written to `out`.
    fn node(&self, cell: u64, level: u32, j: u64, out: &mut [f64], scratch: &mut [f64]) {
        self.normals(cell, 0, 0, out);
        let root = self.cell.sqrt();
        out.iter_mut().for_each(|w| *w *= root);
        for l in 1..=level {
            let parent = j >> (level - l + 1);
            let child = (j >> (level - l)) & 1;
            // bridge: left half = parent / 2 + sqrt(h_parent / 4) xi
            let half_sd = 0.5 * (self.cell / (1u64 << (l - 1)) as f64).sqrt();
            self.normals(cell, l, parent, scratch);
            for (w, xi) in out.iter_mut().zip(scratch.iter()) {
                let left = 0.5 * *w + half_sd * xi;
                *w = if child == 0 { left } else { *w - left };
            }
        }
    }

    /// `W(end) - W(start)` for every channel, with times in ticks.
    pub fn increment(&self, start: u64, end: u64, out: &mut [f64]) {
        assert!(end >= start);
        assert_eq!(out.len(), self.channels);
        out.iter_mut().for_each(|w| *w = 0.0);
        if self.silent {
            return;
        }
        let mut piece = vec![0.0; self.channels];
        let mut scratch = vec![0.0; self.channels];
        let mut t = start;
        while t < end {
            let cell = t >> TICK_BITS;
            let offset = t & (TICKS_PER_CELL - 1);
            let align = if offset == 0 { TICK_BITS } else { offset.trailing_zeros() };
            let mut k = align;
            while (1u64 << k) > end - t {
                k -= 1;
            }
            let level = TICK_BITS - k;
            self.node(cell, level, offset >> k, &mut piece, &mut scratch);
            for (o, p) in out.iter_mut().zip(&piece) {
                *o += p;
            }
            t += 1 << k;
        }
    }
}
