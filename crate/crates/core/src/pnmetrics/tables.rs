use num_complex::Complex64;
use rayon::prelude::*;

use super::pair::coincident;
use super::PnChannelParams;
use crate::codebook::SuperimposedConstellation;
use crate::error::{Error, Result};

/// Largest number of per-resource symbol pairs tabulated in memory.
const MAX_TABLE_ENTRIES: u128 = 1 << 26;

/// Per-resource statistics for one ordered pair of resource symbols.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Entry {
    pub mean: f64,
    pub var: f64,
    pub d2: f64,
}

/// Mean and variance of `η_k` for every ordered pair of symbols of every
/// resource alphabet, so that codeword-pair statistics reduce to `K` lookups.
///
/// Entries use an algebraically equivalent, cancellation-free rearrangement
/// of the closed form: the variance is assembled as the variance of a
/// quadratic form in two independent Gaussians and is nonnegative by
/// construction. Symbol pairs that coincide contribute exactly zero.
#[derive(Debug, Clone)]
pub struct PairTables {
    sizes: Vec<usize>,
    tables: Vec<Vec<Entry>>,
}

fn unit(z: Complex64) -> Complex64 {
    let n = z.norm();
    if n == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        z / n
    }
}

/// Per-symbol quantities shared by every pair the symbol takes part in.
struct Symbol {
    z: Complex64,
    mag: f64,
    unit: Complex64,
    quad: f64,
    ln_quad: f64,
}

impl Symbol {
    fn new(z: Complex64, sp: f64, s: f64) -> Self {
        let mag = z.norm();
        let quad = sp * mag * mag + s;
        Self {
            z,
            mag,
            unit: unit(z),
            quad,
            ln_quad: quad.ln(),
        }
    }

    /// Mean and variance of `η_k` with `self` sent and `hat` considered.
    #[inline]
    fn terms(&self, hat: &Symbol, sp: f64, s: f64) -> (f64, f64) {
        if coincident(self.z, hat.z) {
            return (0.0, 0.0);
        }
        let (a, b) = (self.mag, hat.mag);
        let z = self.unit * hat.unit.conj();
        let (c, sn) = (z.re, z.im);
        let (own, hq) = (self.quad, hat.quad);
        let diff = a * c - b;
        let (a2, b2, sn2) = (a * a, b * b, sn * sn);
        let mean = self.ln_quad - hat.ln_quad + (sp * (b2 - a2 * c * c) - a2 * sn2) / hq
            - (diff * diff + a2 * sn2 * sp) / s;
        let bsh = sp * b2 / (s * hq);
        let q11 = sn2 * bsh;
        let q12 = c * sn * bsh;
        let q22 = sp * (b2 - a2) / (own * hq) - sn2 * bsh;
        let b1 = -2.0 * diff * c / s - 2.0 * a * sn2 / hq;
        let b2c = 2.0 * diff * sn / s - 2.0 * a * sn * c / hq;
        let var = 2.0 * (q11 * q11 * s * s + 2.0 * q12 * q12 * s * own + q22 * q22 * own * own)
            + b1 * b1 * s
            + b2c * b2c * own;
        (mean, var)
    }
}

#[cfg(test)]
fn stable_terms(w: Complex64, w_hat: Complex64, sp: f64, s: f64) -> (f64, f64) {
    Symbol::new(w, sp, s).terms(&Symbol::new(w_hat, sp, s), sp, s)
}

impl PairTables {
    pub fn new(phi: &SuperimposedConstellation, p: &PnChannelParams) -> Result<Self> {
        let total: u128 = phi
            .alphabets()
            .iter()
            .map(|a| (a.len() as u128).pow(2))
            .sum();
        if total > MAX_TABLE_ENTRIES {
            return Err(Error::BudgetRefusal {
                what: "per-resource symbol pairs",
                required: total,
                budget: MAX_TABLE_ENTRIES,
            });
        }
        let (sp, s) = (p.sigma_p2, p.half_n0());
        let mut tables = Vec::with_capacity(phi.alphabets().len());
        for alpha in phi.alphabets() {
            let n = alpha.len();
            let symbols: Vec<Symbol> = alpha.iter().map(|&z| Symbol::new(z, sp, s)).collect();
            let mut t = vec![Entry::default(); n * n];
            t.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let w = &symbols[i];
                for (e, wh) in row.iter_mut().zip(&symbols) {
                    let (mean, var) = w.terms(wh, sp, s);
                    *e = Entry {
                        mean,
                        var,
                        d2: (w.z - wh.z).norm_sqr(),
                    };
                }
            });
            tables.push(t);
        }
        Ok(Self {
            sizes: phi.alphabets().iter().map(Vec::len).collect(),
            tables,
        })
    }

    pub fn resources(&self) -> usize {
        self.sizes.len()
    }

    /// Alphabet size of resource `k`.
    #[inline]
    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    /// Row-major `size(k) × size(k)` table of resource `k`.
    #[inline]
    pub fn table(&self, k: usize) -> &[Entry] {
        &self.tables[k]
    }

    /// Statistics for symbol `a` sent and `b` considered on resource `k`.
    #[inline]
    pub fn entry(&self, k: usize, a: usize, b: usize) -> &Entry {
        &self.tables[k][a * self.sizes[k] + b]
    }
}

#[cfg(test)]
mod tests {
    use super::super::pair::resource_terms;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_form_matches_printed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &sp in &[0.0, 0.001, 0.01, 0.03, 0.3] {
            let p = PnChannelParams::new(sp, rng.random_range(0.01..1.0)).unwrap();
            for _ in 0..2000 {
                let w = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let wh = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let t = resource_terms(w, wh, &p);
                let (m, v) = stable_terms(w, wh, sp, p.half_n0());
                assert!((m - t.mean).abs() <= 1e-9 * (1.0 + t.mean.abs()), "{m} {}", t.mean);
                assert!((v - t.variance).abs() <= 1e-9 * (1.0 + t.variance.abs()), "{v} {}", t.variance);
            }
        }
    }

    #[test]
    fn zero_symbols_follow_arg_convention() {
        let p = PnChannelParams::new(0.02, 0.3).unwrap();
        let z = Complex64::new(0.0, 0.0);
        for other in [Complex64::new(-0.7, 0.4), Complex64::new(0.0, 1.1)] {
            for (a, b) in [(z, other), (other, z)] {
                let t = resource_terms(a, b, &p);
                let (m, v) = stable_terms(a, b, 0.02, 0.15);
                assert!((m - t.mean).abs() < 1e-12 * (1.0 + m.abs()));
                assert!((v - t.variance).abs() < 1e-12 * (1.0 + v.abs()));
            }
        }
        assert_eq!(stable_terms(z, z, 0.02, 0.15), (0.0, 0.0));
    }

    #[test]
    fn variance_is_nonnegative_near_coincidence() {
        let w = Complex64::new(1.3, -0.2);
        for eps in [1e-3, 1e-6, 1e-8] {
            let (_, v) = stable_terms(w, w * Complex64::from_polar(1.0, eps), 0.03, 0.05);
            assert!(v > 0.0);
        }
    }
}
