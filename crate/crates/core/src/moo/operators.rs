//! Variation and selection operators over mixed-kind genotypes.
//!
//! Numeric genes are varied in "search space": the raw value for linear
//! specs, its base-2 logarithm for log2 specs. Integer genes are rounded
//! half-to-even after variation and every gene is clamped to its bounds, so
//! all operators are closed over valid genotypes.

use rand::Rng;

use super::{GaConfig, Member};
use crate::space::{Genotype, ParamKind, ParameterSpace, ParameterSpec};

fn to_search(spec: &ParameterSpec, v: f64) -> f64 {
    if spec.is_log2() {
        v.max(1.0).log2()
    } else {
        v
    }
}

fn search_bounds(spec: &ParameterSpec) -> (f64, f64) {
    let (lo, hi) = spec.gene_bounds();
    (to_search(spec, lo), to_search(spec, hi))
}

/// Maps a search-space coordinate back to a valid gene value.
fn from_search(spec: &ParameterSpec, x: f64) -> f64 {
    let (lo, hi) = spec.gene_bounds();
    let v = match (spec.kind, spec.is_log2()) {
        (ParamKind::IntegerRange, true) => x.round_ties_even().exp2(),
        (ParamKind::IntegerRange, false) => x.round_ties_even(),
        (_, true) => x.exp2(),
        _ => x,
    };
    let v = v.clamp(lo, hi);
    if spec.kind == ParamKind::IntegerRange {
        // clamping to integral bounds keeps integrality
        v.round_ties_even().clamp(lo, hi)
    } else {
        v
    }
}

/// Chance that a numeric gene takes part in SBX once a pair is crossed.
pub const SBX_GENE_PROBABILITY: f64 = 0.5;

pub fn random_gene(spec: &ParameterSpec, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = spec.gene_bounds();
    match spec.kind {
        ParamKind::ContinuousRange => {
            if lo == hi {
                lo
            } else if spec.is_log2() {
                let (a, b) = search_bounds(spec);
                rng.gen_range(a..=b).exp2().clamp(lo, hi)
            } else {
                rng.gen_range(lo..=hi)
            }
        }
        ParamKind::IntegerRange if spec.is_log2() => {
            let a = lo.log2().ceil() as i32;
            let b = hi.log2().floor() as i32;
            if a <= b {
                2f64.powi(rng.gen_range(a..=b))
            } else {
                rng.gen_range(lo as i64..=hi as i64) as f64
            }
        }
        _ => rng.gen_range(lo as i64..=hi as i64) as f64,
    }
}

pub fn random_genotype(space: &ParameterSpace, rng: &mut impl Rng) -> Genotype {
    Genotype(space.specs.iter().map(|s| random_gene(s, rng)).collect())
}

/// Binary tournament under the crowded comparison. Returns a member index.
pub fn tournament_select(population: &[Member], rng: &mut impl Rng) -> usize {
    let n = population.len();
    let a = rng.gen_range(0..n);
    if n == 1 {
        return a;
    }
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    crowded_winner(&population[a], &population[b], a, b, rng)
}

fn crowded_winner(ma: &Member, mb: &Member, a: usize, b: usize, rng: &mut impl Rng) -> usize {
    if ma.rank != mb.rank {
        return if ma.rank < mb.rank { a } else { b };
    }
    if ma.crowding != mb.crowding {
        return if ma.crowding > mb.crowding { a } else { b };
    }
    if rng.gen_bool(0.5) {
        a
    } else {
        b
    }
}

/// SBX spread factor for a uniform draw `u`.
pub fn sbx_beta(u: f64, eta: f64) -> f64 {
    if u <= 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
    }
}

/// Simulated binary crossover of two coordinates; children keep the parents'
/// order.
pub fn sbx_pair(y1: f64, y2: f64, u: f64, eta: f64) -> (f64, f64) {
    let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
    let beta = sbx_beta(u, eta);
    let c_lo = 0.5 * ((lo + hi) - beta * (hi - lo));
    let c_hi = 0.5 * ((lo + hi) + beta * (hi - lo));
    if y1 <= y2 {
        (c_lo, c_hi)
    } else {
        (c_hi, c_lo)
    }
}

/// Polynomial-mutation perturbation (fraction of the range) for draw `u`.
pub fn polynomial_delta(u: f64, eta: f64) -> f64 {
    if u < 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0)) - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).powf(1.0 / (eta + 1.0))
    }
}

pub fn crossover(
    space: &ParameterSpace,
    p1: &Genotype,
    p2: &Genotype,
    rng: &mut impl Rng,
    config: &GaConfig,
) -> (Genotype, Genotype) {
    let mut c1 = p1.clone();
    let mut c2 = p2.clone();
    if rng.gen::<f64>() >= config.crossover_probability {
        return (c1, c2);
    }
    for (i, spec) in space.specs.iter().enumerate() {
        match spec.kind {
            ParamKind::IntegerRange | ParamKind::ContinuousRange => {
                let u: f64 = rng.gen();
                if !rng.gen_bool(SBX_GENE_PROBABILITY) {
                    continue;
                }
                let a = to_search(spec, p1.0[i]);
                let b = to_search(spec, p2.0[i]);
                if (a - b).abs() < 1e-14 {
                    continue;
                }
                let (mut x1, mut x2) = sbx_pair(a, b, u, config.sbx_eta);
                if rng.gen_bool(0.5) {
                    std::mem::swap(&mut x1, &mut x2);
                }
                c1.0[i] = from_search(spec, x1);
                c2.0[i] = from_search(spec, x2);
            }
            ParamKind::Categorical | ParamKind::Boolean => {
                if rng.gen_bool(0.5) {
                    c1.0[i] = p2.0[i];
                    c2.0[i] = p1.0[i];
                }
            }
        }
    }
    (c1, c2)
}

pub fn mutate(
    space: &ParameterSpace,
    g: &Genotype,
    rng: &mut impl Rng,
    config: &GaConfig,
) -> Genotype {
    let pm = config.mutation_probability_for(space.len());
    let mut out = g.clone();
    for (i, spec) in space.specs.iter().enumerate() {
        if rng.gen::<f64>() >= pm {
            continue;
        }
        match spec.kind {
            ParamKind::IntegerRange | ParamKind::ContinuousRange => {
                let (lo, hi) = search_bounds(spec);
                let u: f64 = rng.gen();
                let x = to_search(spec, g.0[i]) + polynomial_delta(u, config.mutation_eta) * (hi - lo);
                out.0[i] = from_search(spec, x);
            }
            ParamKind::Categorical | ParamKind::Boolean => {
                let n = spec.gene_bounds().1 as usize + 1;
                if n > 1 {
                    let cur = g.0[i] as usize;
                    let mut pick = rng.gen_range(0..n - 1);
                    if pick >= cur {
                        pick += 1;
                    }
                    out.0[i] = pick as f64;
                }
            }
        }
    }
    out
}
