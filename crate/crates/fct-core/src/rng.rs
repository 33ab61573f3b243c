//! Deterministic counter-based random numbers.
//!
//! splitmix64 over an incrementing counter: the scalar stream depends only on
//! the seed, never on platform or call-site history beyond draw count.

/// Single-owner deterministic generator. Not shareable across threads.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare_normal: None,
        }
    }

    /// Derive an independent stream, e.g. one per batch index.
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(splitmix(self.seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream ^ 0xa5a5))))
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.seed.wrapping_add(self.counter.wrapping_mul(0x9e3779b97f4a7c15));
        self.counter += 1;
        splitmix(x)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = (1.0 - self.uniform()).max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
