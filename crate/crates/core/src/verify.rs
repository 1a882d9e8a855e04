//! Oracle suites that check the estimator and learner against independent
//! computations: finite differences, matrix algebra, exact dynamic
//! programming, exhaustive enumeration and Monte Carlo coverage.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::count::{lcb_closed_form, lcb_tabular_oracle, uncertainty, BucketVector, EncodingMode, GridSpec};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

// ---------------------------------------------------------------- gradients

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub shapes: usize,
    pub coordinates: usize,
    pub worst_relative_error: f64,
    pub worst_shape: Vec<usize>,
}

/// Relative error with an absolute floor so that coordinates whose true
/// derivative is zero are judged on absolute error.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares backprop against central differences of `L = Σ w ⊙ f(x)` for
/// random layer sizes and activations, over every parameter and input.
pub fn gradient_check(shapes: usize, h: f64, seed: u64) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    let mut report = GradientCheck {
        shapes,
        coordinates: 0,
        worst_relative_error: 0.0,
        worst_shape: Vec::new(),
    };
    for _ in 0..shapes {
        let depth = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
        let hidden = acts[rng.random_range(0..3)];
        let output = acts[rng.random_range(0..3)];
        let mut net = Mlp::new(&sizes, hidden, output, &mut rng);
        let batch = rng.random_range(1..=4);
        let mut x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-1.5..1.5));
        let w = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.random_range(-1.0..1.0));

        let cache = net.forward(x.view())?;
        let grads = net.backward(&cache, w.view())?;
        let analytic: Vec<f64> = grads.slices().flatten().copied().collect();
        let loss = |net: &Mlp, x: &Array2<f64>| -> Result<f64> { Ok((net.predict(x.view())? * &w).sum()) };

        let mut worst: f64 = 0.0;
        let n = analytic.len();
        for i in 0..n {
            let orig = param(&mut net, i, None);
            param(&mut net, i, Some(orig + h));
            let up = loss(&net, &x)?;
            param(&mut net, i, Some(orig - h));
            let down = loss(&net, &x)?;
            param(&mut net, i, Some(orig));
            worst = worst.max(relative_error((up - down) / (2.0 * h), analytic[i]));
        }
        for idx in 0..x.len() {
            let (r, c) = (idx / sizes[0], idx % sizes[0]);
            let orig = x[[r, c]];
            x[[r, c]] = orig + h;
            let up = loss(&net, &x)?;
            x[[r, c]] = orig - h;
            let down = loss(&net, &x)?;
            x[[r, c]] = orig;
            worst = worst.max(relative_error((up - down) / (2.0 * h), grads.input[[r, c]]));
        }
        report.coordinates += n + x.len();
        if worst >= report.worst_relative_error {
            report.worst_relative_error = worst;
            report.worst_shape = sizes;
        }
    }
    Ok(report)
}

/// Reads parameter `i` in flat order, writing `value` first when given.
fn param(net: &mut Mlp, i: usize, value: Option<f64>) -> f64 {
    let mut seen = 0;
    for slice in net.slices_mut() {
        if i < seen + slice.len() {
            if let Some(v) = value {
                slice[i - seen] = v;
            }
            return slice[i - seen];
        }
        seen += slice.len();
    }
    panic!("parameter index {i} out of range");
}

// ------------------------------------------------------------- lcb penalty

/// Largest disagreement between the matrix and closed-form tabular penalty
/// over random count vectors.
pub fn lcb_equivalence(vectors: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..vectors {
        let len = rng.random_range(1..=12);
        let counts: Vec<u64> = (0..len).map(|_| rng.random_range(0..=30)).collect();
        let lambda = rng.random_range(0.1..3.0);
        let epoch = rng.random_range(2..=1000);
        let matrix = lcb_tabular_oracle(&counts, lambda, epoch)?;
        let closed = lcb_closed_form(&counts, lambda, epoch)?;
        for (a, b) in matrix.iter().zip(&closed) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

// --------------------------------------------------------------- hoeffding

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleLaw {
    Bernoulli,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub n: usize,
    pub epoch: u64,
    pub law: SampleLaw,
    pub frequency: f64,
    /// `1 − 2/T²`
    pub bound: f64,
}

/// Fraction of trials in which the mean of `n` samples in `[0, 1]` lies
/// within `sqrt(ln T / n)` of the true mean.
pub fn hoeffding_coverage(n: usize, epoch: u64, law: SampleLaw, trials: usize, seed: u64) -> Coverage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = ((epoch as f64).ln() / n as f64).sqrt();
    let mut inside = 0usize;
    for _ in 0..trials {
        let sum: f64 = (0..n)
            .map(|_| match law {
                SampleLaw::Bernoulli => f64::from(u8::from(rng.random_bool(0.5))),
                SampleLaw::Uniform => rng.random::<f64>(),
            })
            .sum();
        if (sum / n as f64 - 0.5).abs() <= radius {
            inside += 1;
        }
    }
    Coverage {
        n,
        epoch,
        law,
        frequency: inside as f64 / trials as f64,
        bound: 1.0 - 2.0 / (epoch as f64).powi(2),
    }
}

// ---------------------------------------------------------------- encoding

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodingSweep {
    pub state_dims: usize,
    pub action_dims: usize,
    pub partitions: u32,
    pub margin: u32,
    pub vectors: usize,
    pub radix_collisions: usize,
    pub weighted_collisions: usize,
}

fn bare_grid(state_dims: usize, action_dims: usize, partitions: u32, margin: u32, encoding: EncodingMode) -> GridSpec {
    let d = state_dims + action_dims;
    GridSpec {
        state_dims,
        action_dims,
        lo: vec![0.0; d],
        hi: vec![1.0; d],
        partitions,
        margin,
        mapped: vec![true; state_dims],
        encoding,
    }
}

/// Number of bucket vectors whose code was already taken by another vector.
fn collisions(grid: &GridSpec) -> (usize, usize) {
    let base = grid.digit_base();
    let d = grid.digit_count();
    let total = base.pow(d as u32) as usize;
    let mut seen: HashMap<u64, usize> = HashMap::with_capacity(total);
    let mut clashes = 0;
    let mut digits = vec![0u32; d];
    for index in 0..total {
        let mut rest = index as u64;
        for digit in digits.iter_mut() {
            *digit = (rest % base) as u32;
            rest /= base;
        }
        let code = grid.code(&BucketVector(digits.clone())).expect("small grids fit in u64");
        if seen.insert(code, index).is_some() {
            clashes += 1;
        }
    }
    (total, clashes)
}

/// Exhaustive collision counts of both encodings for every split of
/// `1..=max_dims` digits into state and action digits (at least one action
/// digit), `1..=max_partitions` and `1..=max_margin`.
pub fn encoding_sweep(max_dims: usize, max_partitions: u32, max_margin: u32) -> Vec<EncodingSweep> {
    let mut out = Vec::new();
    for d in 1..=max_dims {
        for action_dims in 1..=d {
            let state_dims = d - action_dims;
            for g in 1..=max_partitions {
                for m in 1..=max_margin {
                    let (vectors, radix) =
                        collisions(&bare_grid(state_dims, action_dims, g, m, EncodingMode::Radix));
                    let (_, weighted) = collisions(&bare_grid(state_dims, action_dims, g, m, EncodingMode::WeightedSum));
                    out.push(EncodingSweep {
                        state_dims,
                        action_dims,
                        partitions: g,
                        margin: m,
                        vectors,
                        radix_collisions: radix,
                        weighted_collisions: weighted,
                    });
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------ monotonicity

/// First violation of strict monotonicity of `u`, if any: decreasing in the
/// count over `1..=max_count` at each epoch in `epochs`, and increasing in
/// the epoch over `2..=max_epoch` at each count in `counts`.
pub fn uncertainty_monotonicity(
    kappa: f64,
    max_count: u64,
    max_epoch: u64,
    epochs: &[u64],
    counts: &[u64],
) -> Option<String> {
    for &t in epochs {
        for n in 1..max_count {
            if !(uncertainty(kappa, t, n + 1) < uncertainty(kappa, t, n)) {
                return Some(format!("u(T={t}) not decreasing from n={n} to n={}", n + 1));
            }
        }
    }
    for &n in counts {
        for t in 2..max_epoch {
            if !(uncertainty(kappa, t + 1, n) > uncertainty(kappa, t, n)) {
                return Some(format!("u(n={n}) not increasing from T={t} to T={}", t + 1));
            }
        }
    }
    None
}

// ------------------------------------------------------ policy improvement

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementCheck {
    pub seeds: usize,
    pub iterations: usize,
    /// Most negative `Q_new − Q_old` seen (positive when every step improved
    /// strictly).
    pub worst_change: f64,
    pub final_gain: f64,
}

/// Exact soft action values of `policy` (`[s][a]` probabilities) with the
/// per-pair penalty subtracted from the reward, by a direct linear solve of
/// `(I − γ P_π) q = r − u − γ P ψ H`.
pub fn penalized_soft_q(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    penalty: &[f64],
    psi: f64,
) -> Result<Vec<Vec<f64>>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let neg_entropy: Vec<f64> = policy
        .iter()
        .map(|p| p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum())
        .collect();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..ns {
        for act in 0..na {
            let row = s * na + act;
            let probs = mdp.next_state_probs(s, act);
            b[row] = mdp.reward(s, act) - penalty[row];
            for (s2, &p) in probs.iter().enumerate() {
                b[row] -= mdp.gamma * p * psi * neg_entropy[s2];
                for a2 in 0..na {
                    a[(row, s2 * na + a2)] -= mdp.gamma * p * policy[s2][a2];
                }
            }
        }
    }
    let q = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonFinite("singular policy-evaluation system".into()))?;
    Ok((0..ns).map(|s| (0..na).map(|a| q[s * na + a]).collect()).collect())
}

/// `π(a|s) ∝ exp(Q(s, a)/ψ)`.
fn soft_greedy(q: &[Vec<f64>], psi: f64) -> Vec<Vec<f64>> {
    q.iter()
        .map(|row| {
            let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = row.iter().map(|&x| ((x - top) / psi).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Soft policy iteration on the chain with a fixed count penalty
/// `κ·sqrt(ln T / n)` from random visit counts, starting from a random
/// policy, for each seed.
pub fn tabular_policy_improvement(
    seeds: usize,
    iterations: usize,
    kappa: f64,
    psi: f64,
) -> Result<ImprovementCheck> {
    let mdp = TabularMdp::chain();
    let n = mdp.n_states * mdp.n_actions;
    let mut worst = f64::INFINITY;
    let mut gain = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let epoch = rng.random_range(2..=100);
        let penalty: Vec<f64> = (0..n)
            .map(|_| uncertainty(kappa, epoch, rng.random_range(0..=20)))
            .collect();
        let mut policy: Vec<Vec<f64>> = (0..mdp.n_states)
            .map(|_| {
                let p = rng.random_range(0.01..0.99);
                vec![p, 1.0 - p]
            })
            .collect();
        let mut q = penalized_soft_q(&mdp, &policy, &penalty, psi)?;
        let start = q.clone();
        for _ in 0..iterations {
            policy = soft_greedy(&q, psi);
            let next = penalized_soft_q(&mdp, &policy, &penalty, psi)?;
            for (new_row, old_row) in next.iter().zip(&q) {
                for (new, old) in new_row.iter().zip(old_row) {
                    worst = worst.min(new - old);
                }
            }
            q = next;
        }
        gain += q.iter().flatten().zip(start.iter().flatten()).map(|(a, b)| a - b).sum::<f64>() / n as f64;
    }
    Ok(ImprovementCheck {
        seeds,
        iterations,
        worst_change: worst,
        final_gain: gain / seeds as f64,
    })
}

// --------------------------------------------------------------- aliasing

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AliasingReport {
    pub margin: u32,
    /// Mass of samples outside the data range whose digit coincides with an
    /// in-range digit.
    pub aliased_mass: f64,
}

/// Probability that a Gaussian centred on the data range lands in a wrapped
/// bucket that shares its digit with an in-range bucket, per margin.
pub fn aliasing_mass(partitions: u32, margins: &[u32], std_over_width: f64, samples: usize, seed: u64) -> Vec<AliasingReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.5, std_over_width).expect("positive standard deviation");
    let xs: Vec<f64> = (0..samples).map(|_| normal.sample(&mut rng)).collect();
    let g = partitions as i64;
    margins
        .iter()
        .map(|&m| {
            let base = g * m as i64;
            let aliased = xs
                .iter()
                .filter(|&&x| {
                    let raw = (g as f64 * x).floor() as i64;
                    !(0..g).contains(&raw) && raw.rem_euclid(base) < g
                })
                .count();
            AliasingReport {
                margin: m,
                aliased_mass: aliased as f64 / samples as f64,
            }
        })
        .collect()
}

// ------------------------------------------------------------------ runner

/// Runs every suite at its acceptance settings; reports in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();

    let g = gradient_check(24, 1e-5, seed)?;
    out.push(SuiteReport {
        name: "gradient-check",
        passed: g.worst_relative_error <= 1e-4,
        detail: format!(
            "{} shapes, {} coordinates, worst relative error {:.3e}",
            g.shapes, g.coordinates, g.worst_relative_error
        ),
    });

    let lcb = lcb_equivalence(100, seed)?;
    out.push(SuiteReport {
        name: "lcb-equivalence",
        passed: lcb <= 1e-10,
        detail: format!("100 count vectors, max |matrix − closed form| {lcb:.3e}"),
    });

    let mut worst_margin = f64::INFINITY;
    let mut detail = Vec::new();
    for (n, t) in [(10, 10), (50, 100), (200, 1000)] {
        for law in [SampleLaw::Bernoulli, SampleLaw::Uniform] {
            let c = hoeffding_coverage(n, t, law, 10_000, seed);
            worst_margin = worst_margin.min(c.frequency - (c.bound - 0.01));
            detail.push(format!("n={n} T={t} {law:?} {:.4}", c.frequency));
        }
    }
    out.push(SuiteReport {
        name: "hoeffding-coverage",
        passed: worst_margin >= 0.0,
        detail: detail.join(", "),
    });

    let sweep = encoding_sweep(4, 4, 2);
    let radix: usize = sweep.iter().map(|s| s.radix_collisions).sum();
    let weighted: usize = sweep.iter().map(|s| s.weighted_collisions).sum();
    out.push(SuiteReport {
        name: "encoding",
        passed: radix == 0 && weighted > 0,
        detail: format!("{} grids: radix collisions {radix}, weighted-sum collisions {weighted}", sweep.len()),
    });

    let mono = uncertainty_monotonicity(1.0, 10_000, 1000, &[2, 10, 1000], &[1, 100, 10_000]);
    out.push(SuiteReport {
        name: "uncertainty-monotonicity",
        passed: mono.is_none(),
        detail: mono.unwrap_or_else(|| "strict in n over [1, 1e4] and in T over [2, 1e3]".into()),
    });

    let imp = tabular_policy_improvement(5, 30, 1.0, 0.2)?;
    out.push(SuiteReport {
        name: "policy-improvement",
        passed: imp.worst_change >= -1e-9,
        detail: format!(
            "{} seeds × {} iterations, worst ΔQ {:.3e}, mean total gain {:.3}",
            imp.seeds, imp.iterations, imp.worst_change, imp.final_gain
        ),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_agree_on_a_few_shapes() {
        let g = gradient_check(5, 1e-5, 3).unwrap();
        assert!(g.worst_relative_error < 1e-4, "{g:?}");
    }

    #[test]
    fn broken_gradient_would_be_caught() {
        // the relative error of a wrong value is large
        assert!(relative_error(1.0, 1.01) > 1e-4);
        assert!(relative_error(0.0, 1e-11) < 1e-4);
    }

    #[test]
    fn lcb_routes_agree() {
        assert!(lcb_equivalence(10, 1).unwrap() < 1e-10);
    }

    #[test]
    fn coverage_is_a_frequency() {
        let c = hoeffding_coverage(10, 10, SampleLaw::Bernoulli, 500, 0);
        assert!((0.0..=1.0).contains(&c.frequency));
        assert_eq!(c.bound, 0.98);
    }

    #[test]
    fn tiny_grid_collision_counts() {
        // one state digit and one action digit, G = 2, M = 1: weights 2 and 2
        let s = encoding_sweep(2, 2, 1);
        let row = s
            .iter()
            .find(|r| (r.state_dims, r.action_dims, r.partitions) == (1, 1, 2))
            .unwrap();
        assert_eq!(row.vectors, 4);
        assert_eq!(row.radix_collisions, 0);
        assert_eq!(row.weighted_collisions, 1);
    }

    #[test]
    fn monotonicity_detects_a_flat_region() {
        assert!(uncertainty_monotonicity(1.0, 100, 50, &[5], &[3]).is_none());
        // with κ = 0 nothing is strict
        assert!(uncertainty_monotonicity(0.0, 3, 3, &[5], &[]).is_some());
    }

    #[test]
    fn soft_evaluation_matches_iterated_backups() {
        let mdp = TabularMdp::chain();
        let policy = vec![vec![0.3, 0.7]; 5];
        let penalty: Vec<f64> = (0..10).map(|i| 0.01 * i as f64).collect();
        let psi = 0.2;
        let exact = penalized_soft_q(&mdp, &policy, &penalty, psi).unwrap();
        let mut q = vec![vec![0.0; 2]; 5];
        for _ in 0..5000 {
            let v: Vec<f64> = (0..5)
                .map(|s| (0..2).map(|a| policy[s][a] * (q[s][a] - psi * policy[s][a].ln())).sum())
                .collect();
            q = (0..5)
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            let next: f64 = mdp.next_state_probs(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                            mdp.reward(s, a) - penalty[s * 2 + a] + mdp.gamma * next
                        })
                        .collect()
                })
                .collect();
        }
        for (a, b) in exact.iter().flatten().zip(q.iter().flatten()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn improvement_holds_on_one_seed() {
        let r = tabular_policy_improvement(1, 10, 1.0, 0.2).unwrap();
        assert!(r.worst_change >= -1e-9);
        assert!(r.final_gain > 0.0);
    }

    #[test]
    fn wider_margins_alias_less() {
        let r = aliasing_mass(8, &[1, 2, 3], 0.3, 100_000, 0);
        assert!(r[0].aliased_mass > r[1].aliased_mass);
        assert!(r[1].aliased_mass >= r[2].aliased_mass);
    }
}
