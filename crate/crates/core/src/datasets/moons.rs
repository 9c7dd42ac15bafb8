use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{ensure, Error, Result};
use crate::numerics::ComplexVector;
use crate::rng;

/// Steps per moons sequence.
pub const MOON_SEQUENCE_LEN: usize = 800;
/// Largest joint period allowed, so a sequence holds three full cycles.
pub const MAX_LCM: u64 = 266;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
}

/// Three moons rotating with integer periods from given starting angles.
#[derive(Clone, Debug, PartialEq)]
pub struct MoonSystem {
    pub periods: [u64; 3],
    pub phases: [f64; 3],
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(periods: &[u64]) -> u64 {
    periods.iter().fold(1, |acc, &p| acc / gcd(acc, p) * p)
}

impl MoonSystem {
    pub fn new(periods: [u64; 3], phases: [f64; 3]) -> Result<Self> {
        ensure!(periods.iter().all(|&p| p >= 1), "periods must be positive");
        let l = lcm(&periods);
        ensure!(l <= MAX_LCM, "periods {periods:?} have lcm {l} > {MAX_LCM}");
        ensure!(phases.iter().all(|p| p.is_finite()), "phases must be finite");
        Ok(MoonSystem { periods, phases })
    }

    pub fn lcm(&self) -> u64 {
        lcm(&self.periods)
    }
}

/// A fixed list of period triples that systems are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct MoonPool {
    pub triples: Vec<[u64; 3]>,
}

impl MoonPool {
    /// Every strictly increasing triple in `2..=12` with lcm at most
    /// [`MAX_LCM`], split so that every fifth triple is held out.
    pub fn standard(split: Split) -> MoonPool {
        let mut all = Vec::new();
        for a in 2..=12u64 {
            for b in a + 1..=12 {
                for c in b + 1..=12 {
                    if lcm(&[a, b, c]) <= MAX_LCM {
                        all.push([a, b, c]);
                    }
                }
            }
        }
        let triples = all
            .into_iter()
            .enumerate()
            .filter(|(i, _)| (i % 5 == 0) == (split == Split::Validation))
            .map(|(_, t)| t)
            .collect();
        MoonPool { triples }
    }

    pub fn contains(&self, t: &[u64; 3]) -> bool {
        self.triples.contains(t)
    }

    /// A system with a uniformly chosen triple and uniform phases.
    pub fn draw(&self, r: &mut rng::Rng) -> Result<MoonSystem> {
        if self.triples.is_empty() {
            return Err(Error::Exhausted("moon period pool is empty".into()));
        }
        let periods = self.triples[r.random_range(0..self.triples.len())];
        random_phases(periods, r)
    }

    /// Short human-readable description for manifests.
    pub fn describe(&self) -> String {
        let items: Vec<String> = self
            .triples
            .iter()
            .map(|t| format!("{}-{}-{}", t[0], t[1], t[2]))
            .collect();
        items.join(" ")
    }
}

/// A system with the given periods and uniform random phases.
pub fn random_phases(periods: [u64; 3], r: &mut rng::Rng) -> Result<MoonSystem> {
    let phases = [
        r.random_range(0.0..TAU),
        r.random_range(0.0..TAU),
        r.random_range(0.0..TAU),
    ];
    MoonSystem::new(periods, phases)
}

/// Draws a system from the standard pool of `split`.
pub fn gen_moon_system(seed: u64, split: Split) -> Result<MoonSystem> {
    let mut r = rng::stream(seed, "moon-system");
    MoonPool::standard(split).draw(&mut r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoonSequence {
    pub system: MoonSystem,
    /// `x_1..x_D`, each three unit-modulus coordinates.
    pub observations: Vec<ComplexVector>,
}

/// `x_{t,k} = exp(i (phi_k + 2 pi t / p_k))` for `t = 1..=len`.
pub fn gen_moon_sequence_len(system: &MoonSystem, len: usize) -> MoonSequence {
    let observations = (1..=len)
        .map(|t| {
            let v: Vec<Complex64> = (0..3)
                .map(|k| {
                    // Reduce t mod p first so long sequences stay exactly periodic.
                    let step = (t as u64 % system.periods[k]) as f64 / system.periods[k] as f64;
                    Complex64::from_polar(1.0, system.phases[k] + TAU * step)
                })
                .collect();
            ComplexVector::from_values(&v)
        })
        .collect();
    MoonSequence {
        system: system.clone(),
        observations,
    }
}

pub fn gen_moon_sequence(system: &MoonSystem) -> MoonSequence {
    gen_moon_sequence_len(system, MOON_SEQUENCE_LEN)
}
