//! Independent reference computations shared by the integration tests. Nothing here calls
//! the closed forms under test; masks, weights and penalties are rebuilt from their
//! definitions.

#![allow(dead_code)]

use structured_dropout::{Matrix, SeededRng};

/// Unit-mask distributions as the oracles understand them.
#[derive(Clone, Copy, Debug)]
pub enum UnitLaw {
    Bernoulli { theta: f64 },
    Partitioned { theta: f64, block: usize },
    /// Keep seeds with probability `theta`; a unit survives iff a seed lies within the
    /// `window` positions centred on it (circularly).
    Windowed { theta: f64, window: usize },
}

impl UnitLaw {
    fn bits(&self, d: usize) -> usize {
        match *self {
            UnitLaw::Bernoulli { .. } | UnitLaw::Windowed { .. } => d,
            UnitLaw::Partitioned { block, .. } => d / block,
        }
    }

    fn theta(&self) -> f64 {
        match *self {
            UnitLaw::Bernoulli { theta }
            | UnitLaw::Partitioned { theta, .. }
            | UnitLaw::Windowed { theta, .. } => theta,
        }
    }

    fn expand(&self, bits: &[bool], d: usize) -> Vec<f64> {
        match *self {
            UnitLaw::Bernoulli { .. } => bits.iter().map(|&b| b as u8 as f64).collect(),
            UnitLaw::Partitioned { block, .. } => {
                (0..d).map(|i| bits[i / block] as u8 as f64).collect()
            }
            UnitLaw::Windowed { window, .. } => {
                let half = (window - 1) / 2;
                (0..d)
                    .map(|i| {
                        let hit = (0..window).any(|o| bits[(i + d + o - half) % d]);
                        hit as u8 as f64
                    })
                    .collect()
            }
        }
    }
}

/// Every outcome of `n` independent Ber(θ) bits with its probability.
pub fn outcomes(n: usize, theta: f64) -> Vec<(Vec<bool>, f64)> {
    (0u32..1 << n)
        .map(|code| {
            let bits: Vec<bool> = (0..n).map(|k| code & (1 << k) != 0).collect();
            let kept = bits.iter().filter(|&&b| b).count() as i32;
            let p = theta.powi(kept) * (1.0 - theta).powi(n as i32 - kept);
            (bits, p)
        })
        .collect()
}

pub fn sq(x: f64) -> f64 {
    x * x
}

/// `‖Y − U diag(s) Vᵀ X‖²_F` with explicit loops.
pub fn gated_loss(u: &Matrix, v: &Matrix, x: &Matrix, y: &Matrix, gate: &[f64]) -> f64 {
    let (a, d) = u.shape();
    let (b, n) = x.shape();
    let mut total = 0.0;
    for col in 0..n {
        let hidden: Vec<f64> = (0..d)
            .map(|j| gate[j] * (0..b).map(|k| v.get(k, j) * x.get(k, col)).sum::<f64>())
            .collect();
        for row in 0..a {
            let pred: f64 = (0..d).map(|j| u.get(row, j) * hidden[j]).sum();
            total += sq(y.get(row, col) - pred);
        }
    }
    total
}

/// Expected masked loss under `law` with units rescaled by their enumerated keep rate.
pub fn enumerate_unit_law(u: &Matrix, v: &Matrix, x: &Matrix, y: &Matrix, law: UnitLaw) -> f64 {
    let d = u.cols();
    let all = outcomes(law.bits(d), law.theta());
    let mut mean = vec![0.0; d];
    for (bits, p) in &all {
        for (m, z) in mean.iter_mut().zip(law.expand(bits, d)) {
            *m += p * z;
        }
    }
    all.iter()
        .map(|(bits, p)| {
            let gate: Vec<f64> =
                law.expand(bits, d).iter().zip(&mean).map(|(z, m)| z / m).collect();
            p * gated_loss(u, v, x, y, &gate)
        })
        .sum()
}

/// Expected DropConnect loss `E‖Y − (1/θ) U (V ⊙ Z)ᵀ X‖²` over every mask `Z`.
pub fn enumerate_dropconnect(u: &Matrix, v: &Matrix, x: &Matrix, y: &Matrix, theta: f64) -> f64 {
    let (b, d) = v.shape();
    outcomes(b * d, theta)
        .iter()
        .map(|(bits, p)| {
            let gated =
                Matrix::from_fn(b, d, |k, j| if bits[k * d + j] { v.get(k, j) / theta } else { 0.0 })
                    .unwrap();
            p * gated_loss(u, &gated, x, y, &vec![1.0; d])
        })
        .sum()
}

/// `‖Y − UVᵀX‖²_F`.
pub fn fit(u: &Matrix, v: &Matrix, x: &Matrix, y: &Matrix) -> f64 {
    gated_loss(u, v, x, y, &vec![1.0; u.cols()])
}

/// `Σᵢ ‖Σ_{j∈block i} uⱼ (Xᵀvⱼ)ᵀ‖²_F` with explicit loops.
pub fn block_penalty(u: &Matrix, v: &Matrix, x: &Matrix, block: usize) -> f64 {
    block_norms(u, v, x, block).iter().map(|a| a * a).sum()
}

/// `‖Σ_{j∈block i} uⱼ (Xᵀvⱼ)ᵀ‖_F` per block.
pub fn block_norms(u: &Matrix, v: &Matrix, x: &Matrix, block: usize) -> Vec<f64> {
    let (a, d) = u.shape();
    let (b, n) = x.shape();
    (0..d / block)
        .map(|blk| {
            let mut total = 0.0;
            for row in 0..a {
                for col in 0..n {
                    let entry: f64 = (blk * block..(blk + 1) * block)
                        .map(|j| {
                            u.get(row, j) * (0..b).map(|k| v.get(k, j) * x.get(k, col)).sum::<f64>()
                        })
                        .sum();
                    total += entry * entry;
                }
            }
            total.sqrt()
        })
        .collect()
}

/// `Σᵢ ‖uᵢ‖² ‖Xᵀvᵢ‖²`.
pub fn dropout_penalty(u: &Matrix, v: &Matrix, x: &Matrix) -> f64 {
    block_penalty(u, v, x, 1)
}

/// `Σᵢ ‖uᵢ‖² Σₖ vₖᵢ² ‖xₖ‖²`, rows `xₖ` of `X`.
pub fn connection_penalty(u: &Matrix, v: &Matrix, x: &Matrix) -> f64 {
    let (b, d) = v.shape();
    (0..d)
        .map(|i| {
            let un: f64 = u.column(i).iter().map(|w| w * w).sum();
            let vn: f64 = (0..b)
                .map(|k| sq(v.get(k, i)) * x.row(k).iter().map(|w| w * w).sum::<f64>())
                .sum();
            un * vn
        })
        .sum()
}

/// `b × n` matrix with mutually orthogonal rows of random lengths (`b ≤ n`).
pub fn orthogonal_rows(rng: &mut SeededRng, b: usize, n: usize) -> Matrix {
    let g = rng.gaussian_matrix::<f64>(n, b);
    let q = structured_dropout::svd(&g).unwrap().left;
    let scales: Vec<f64> = (0..b).map(|_| 0.5 + 2.0 * rng.uniform()).collect();
    Matrix::from_fn(b, n, |k, col| scales[k] * q.get(col, k)).unwrap()
}

/// `sup_q ⟨a,q⟩ − max_{|S|≤r} ¼‖q_S‖²` by coordinate and block pattern search.
///
/// The inner maximum enumerates supports explicitly, so the oracle is the double conjugate
/// of `‖x‖²` restricted to `r`-sparse `x`, computed without any sorting formula.
pub fn double_conjugate(a: &[f64], r: usize) -> f64 {
    let n = a.len();
    let supports: Vec<Vec<usize>> = (0u32..1 << n)
        .filter(|s| s.count_ones() as usize <= r.min(n))
        .map(|s| (0..n).filter(|&i| s & (1 << i) != 0).collect())
        .collect();
    let conj = |q: &[f64]| {
        supports
            .iter()
            .map(|s| 0.25 * s.iter().map(|&i| q[i] * q[i]).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let value = |q: &[f64]| a.iter().zip(q).map(|(x, y)| x * y).sum::<f64>() - conj(q);
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for lo in 0..n {
        for hi in lo + 1..=n {
            let dir: Vec<f64> = (0..n).map(|i| if (lo..hi).contains(&i) { 1.0 } else { 0.0 }).collect();
            directions.push(dir.iter().map(|x| -x).collect());
            directions.push(dir);
        }
    }
    let mut q: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
    let mut best = value(&q);
    let scale = a.iter().copied().fold(0.0, f64::max).max(1e-300);
    let mut step = scale;
    while step > 1e-13 * scale {
        let mut improved = false;
        for dir in &directions {
            let trial: Vec<f64> = q.iter().zip(dir).map(|(x, d)| x + step * d).collect();
            let v = value(&trial);
            if v > best {
                best = v;
                q = trial;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Euclidean projection onto `{p : 0 ≤ p ≤ 1, Σp ≤ r}`.
///
/// `t ↦ Σ clip(vᵢ − t, 0, 1)` is piecewise linear with breakpoints `vᵢ` and `vᵢ − 1`; the
/// shift is found exactly on the segment where the sum crosses `r`.
pub fn project_capped_simplex(v: &[f64], r: f64) -> Vec<f64> {
    let clip = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, 1.0)).collect::<Vec<_>>();
    let total = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, 1.0)).sum::<f64>();
    if total(0.0) <= r {
        return clip(0.0);
    }
    let mut knots: Vec<f64> = v.iter().flat_map(|&x| [x, x - 1.0]).filter(|&t| t > 0.0).collect();
    knots.push(0.0);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (f_lo, f_hi) = (total(lo), total(hi));
        if f_lo >= r && f_hi <= r {
            let t = if f_lo == f_hi { lo } else { lo + (f_lo - r) * (hi - lo) / (f_lo - f_hi) };
            return clip(t);
        }
    }
    clip(*knots.last().unwrap())
}

/// `min_x Σ(mᵢ − xᵢ)² + β‖x‖²₍ᵣ₎` via the variational form
/// `min_{0≤p≤1, Σp≤r} Σ β mᵢ² / (pᵢ + β)`, solved by projected gradient from random starts.
pub fn envelope_minimum(m: &[f64], r: usize, beta: f64, iterations: usize, restarts: usize, rng: &mut SeededRng) -> f64 {
    let n = m.len();
    let objective = |p: &[f64]| -> f64 { m.iter().zip(p).map(|(mi, pi)| beta * mi * mi / (pi + beta)).sum() };
    let top = m.iter().map(|x| x * x).fold(0.0, f64::max);
    let lipschitz = (2.0 * top / (beta * beta)).max(1e-300);
    let step = 1.0 / lipschitz;
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let start: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let mut p = project_capped_simplex(&start, r as f64);
        for _ in 0..iterations {
            let g: Vec<f64> = m.iter().zip(&p).map(|(mi, pi)| -beta * mi * mi / sq(pi + beta)).collect();
            let moved: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi - step * gi).collect();
            p = project_capped_simplex(&moved, r as f64);
        }
        best = best.min(objective(&p));
    }
    best
}

/// Random descending nonnegative spectrum of length `len`.
pub fn random_spectrum(rng: &mut SeededRng, len: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..len).map(|_| rng.standard_normal().abs() * 3.0).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Uniform integer in `lo..=hi`.
pub fn pick(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}
