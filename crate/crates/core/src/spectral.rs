//! Factor pairs, the block-norm balance report, the spectral k-support envelope of the
//! DropBlock regularizer and the closed-form minimizer of the envelope objective.
//!
//! Throughout, `β = (1−θ̄)/θ̄` where `θ̄` is the retain probability at width `r`; the retain
//! probability at width `d` follows from `(1−θ(d))/θ(d) = (d/r)·β`.

use crate::dropout::check_theta;
use crate::error::{Error, Result};
use crate::kernel::{svd, DenseMatrix};
use crate::scalar::Scalar;

/// Factors `U` (`a × d`) and `V` (`b × d`) of a one-hidden-layer linear network, with hidden
/// units grouped into `k = d / r` blocks of `r` consecutive columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair<T> {
    u: DenseMatrix<T>,
    v: DenseMatrix<T>,
    block_size: usize,
}

impl<T: Scalar> FactorPair<T> {
    pub fn new(u: DenseMatrix<T>, v: DenseMatrix<T>, block_size: usize) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(Error::Dimension(format!(
                "U has {} columns but V has {}",
                u.cols(),
                v.cols()
            )));
        }
        if block_size == 0 || !u.cols().is_multiple_of(block_size) {
            return Err(Error::BlockPartition {
                width: u.cols(),
                block: block_size,
            });
        }
        Ok(Self { u, v, block_size })
    }

    pub fn u(&self) -> &DenseMatrix<T> {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix<T> {
        &self.v
    }

    pub fn into_parts(self) -> (DenseMatrix<T>, DenseMatrix<T>) {
        (self.u, self.v)
    }

    pub fn width(&self) -> usize {
        self.u.cols()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.width() / self.block_size
    }

    /// Columns of block `i` of `U` and `V`.
    pub fn block(&self, i: usize) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
        let range = i * self.block_size..(i + 1) * self.block_size;
        Ok((self.u.columns(range.clone())?, self.v.columns(range)?))
    }

    /// `U Vᵀ`.
    pub fn product(&self) -> DenseMatrix<T> {
        self.u.matmul_t(&self.v).expect("factor widths agree")
    }

    /// `U Vᵀ X`.
    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.u.matmul(&self.v.t_matmul(x)?)
    }

    /// `Uᵢ Vᵢᵀ X` for every block.
    pub fn block_products(&self, x: &DenseMatrix<T>) -> Result<Vec<DenseMatrix<T>>> {
        (0..self.num_blocks())
            .map(|i| {
                let (ui, vi) = self.block(i)?;
                ui.matmul(&vi.t_matmul(x)?)
            })
            .collect()
    }

    /// `αᵢ = ‖Uᵢ Vᵢᵀ X‖_F`.
    pub fn block_norms(&self, x: &DenseMatrix<T>) -> Result<Vec<T>> {
        Ok(self
            .block_products(x)?
            .iter()
            .map(DenseMatrix::frobenius_norm)
            .collect())
    }
}

/// Block norms of a factor pair and whether they are equal.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReport<T> {
    pub block_norms: Vec<T>,
    /// `max α / min α`; infinite when some block vanishes and another does not, 1 when all
    /// vanish.
    pub max_ratio: T,
    pub is_balanced: bool,
}

pub const TRAINED_BALANCE_TOL: f64 = 1e-2;
pub const EXACT_BALANCE_TOL: f64 = 1e-9;

pub fn balance_report<T: Scalar>(
    factors: &FactorPair<T>,
    x: &DenseMatrix<T>,
    tol: T,
) -> Result<BalanceReport<T>> {
    let block_norms = factors.block_norms(x)?;
    let max = block_norms.iter().copied().fold(T::zero(), T::max);
    let min = block_norms.iter().copied().fold(T::infinity(), T::min);
    let max_ratio = if max == T::zero() {
        T::one()
    } else if min == T::zero() {
        T::infinity()
    } else {
        max / min
    };
    Ok(BalanceReport {
        is_balanced: max_ratio <= T::one() + tol,
        block_norms,
        max_ratio,
    })
}

/// Retain probability at hidden width `d` given the retain probability `θ̄` at width `r`:
/// `θ̄r / (θ̄r + (1−θ̄)d)`.
pub fn width_scaled_theta(theta_bar: f64, width: usize, block_size: usize) -> Result<f64> {
    check_theta(theta_bar)?;
    let r = block_size as f64;
    let d = width as f64;
    Ok(theta_bar * r / (theta_bar * r + (1.0 - theta_bar) * d))
}

/// `(1−θ)/θ`.
pub fn dropout_ratio(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok((1.0 - theta) / theta)
}

/// `(d/r) Σᵢ ‖UᵢVᵢᵀX‖²_F`, the DropBlock penalty with the width-scaled retain probability,
/// divided by `β`.
pub fn width_scaled_penalty<T: Scalar>(factors: &FactorPair<T>, x: &DenseMatrix<T>) -> Result<T> {
    let blocks: T = factors
        .block_norms(x)?
        .iter()
        .map(|&a| a * a)
        .sum();
    Ok(T::from_usize_lossy(factors.num_blocks()) * blocks)
}

/// `‖Y − UVᵀX‖²_F + (d/r)·β·Σᵢ ‖UᵢVᵢᵀX‖²_F`.
pub fn objective_f<T: Scalar>(
    factors: &FactorPair<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    theta_bar: f64,
) -> Result<T> {
    let beta = envelope_beta(theta_bar)?;
    let fit = y.sub(&factors.apply(x)?)?.frobenius_sq();
    Ok(fit + T::lit(beta) * width_scaled_penalty(factors, x)?)
}

fn envelope_beta(theta_bar: f64) -> Result<f64> {
    if !(theta_bar > 0.0 && theta_bar < 1.0) {
        return Err(Error::DegenerateScheme(format!(
            "retain probability must lie in (0, 1), got {theta_bar}"
        )));
    }
    Ok((1.0 - theta_bar) / theta_bar)
}

fn check_spectrum<T: Scalar>(values: &[T]) -> Result<()> {
    for (i, &s) in values.iter().enumerate() {
        if !s.is_finite() || s < T::zero() {
            return Err(Error::InvalidSpectrum(format!("entry {i} is {s}")));
        }
        if i > 0 && values[i - 1] < s {
            return Err(Error::InvalidSpectrum(format!(
                "entries {} and {i} are not descending ({} < {s})",
                i - 1,
                values[i - 1]
            )));
        }
    }
    Ok(())
}

/// Squared spectral k-support envelope `β·‖a‖²₍ᵣ₎` of a descending spectrum, with the split
/// index `ρ*`.
///
/// For each `ρ ∈ 1..=r` the candidate is `Σ_{i<ρ} aᵢ² + (Σ_{i≥ρ} aᵢ)²/(r−ρ+1)`. Only splits with
/// `(Σ_{i≥ρ} aᵢ)/(r−ρ+1) ≤ a_{ρ−1}` are admissible; the largest admissible candidate is the
/// envelope and the smallest index attaining it is returned. Spectra shorter than `r` are
/// padded with zeros.
pub fn k_support_sq<T: Scalar>(values: &[T], r: usize, beta: T) -> Result<(T, usize)> {
    check_spectrum(values)?;
    if r == 0 {
        return Err(Error::InvalidArgument("r must be positive".into()));
    }
    if beta.is_nan() || beta < T::zero() || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("β must be finite and nonnegative, got {beta}")));
    }
    let at = |i: usize| values.get(i).copied().unwrap_or_else(T::zero);
    let total: T = values.iter().copied().sum();
    let slack = T::lit(1e-12);
    let mut head_sq = T::zero();
    let mut head_sum = T::zero();
    let mut best: Option<(T, usize)> = None;
    for rho in 1..=r {
        if rho > 1 {
            let a = at(rho - 2);
            head_sq = head_sq + a * a;
            head_sum = head_sum + a;
        }
        let tail = (total - head_sum).max(T::zero());
        let slots = T::from_usize_lossy(r - rho + 1);
        let admissible = rho == 1 || tail / slots <= at(rho - 2) * (T::one() + slack) + slack * total;
        if !admissible {
            continue;
        }
        let candidate = head_sq + tail * tail / slots;
        match best {
            Some((b, _)) if candidate <= b + slack * b => {}
            _ => best = Some((candidate, rho)),
        }
    }
    let (value, rho) = best.expect("ρ = 1 is always admissible");
    Ok((beta * value, rho))
}

/// Scaled conjugate `¼ Σ_{i≤r} σᵢ²` of the envelope (with `β = 1`).
pub fn fenchel_conjugate<T: Scalar>(values: &[T], r: usize) -> Result<T> {
    check_spectrum(values)?;
    Ok(T::lit(0.25) * values.iter().take(r).map(|&s| s * s).sum::<T>())
}

/// Closed-form minimizer of `‖Y − A‖²_F + β‖A‖²₍ᵣ₎` and the constants that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMinimizer<T> {
    pub rho: usize,
    pub lambda: usize,
    pub shrunk_values: Vec<T>,
    pub objective: T,
    pub beta: T,
    pub s_sum: T,
    pub c_const: T,
}

/// Envelope objective `Σ (mᵢ − xᵢ)² + β‖x‖²₍ᵣ₎` for spectra sharing singular vectors.
pub fn envelope_objective<T: Scalar>(target: &[T], x: &[T], r: usize, beta: T) -> Result<T> {
    if target.len() != x.len() {
        return Err(Error::Dimension(format!(
            "spectra of length {} and {}",
            target.len(),
            x.len()
        )));
    }
    let fit: T = target.iter().zip(x).map(|(&m, &a)| (m - a) * (m - a)).sum();
    Ok(fit + k_support_sq(x, r, beta)?.0)
}

/// Shrunk spectrum for a candidate split `(ρ, λ)`: the first `ρ−1` values scaled by
/// `1/(β+1)`, values `ρ..=λ` reduced by `βS/c` and clipped at zero, the rest zeroed.
fn candidate<T: Scalar>(m: &[T], r: usize, beta: T, rho: usize, lambda: usize) -> (Vec<T>, T, T) {
    let one = T::one();
    let head = (rho - 1).min(lambda);
    let s: T = if lambda >= rho {
        m[rho - 1..lambda].iter().copied().sum()
    } else {
        T::zero()
    };
    let c = T::from_usize_lossy(r) + beta * T::from_usize_lossy(lambda)
        - (beta + one) * T::from_usize_lossy(rho - 1);
    let shift = if lambda >= rho { beta * s / c } else { T::zero() };
    let x = m
        .iter()
        .enumerate()
        .map(|(i, &mi)| {
            if i < head {
                mi / (beta + one)
            } else if i < lambda {
                (mi - shift).max(T::zero())
            } else {
                T::zero()
            }
        })
        .collect();
    (x, s, c)
}

/// Global minimizer `A*` of `‖Y − A‖²_F + β‖A‖²₍ᵣ₎` with `β = (1−θ̄)/θ̄`.
///
/// Every split `(ρ, λ)` with `ρ ∈ 1..=r` and `λ ∈ 1..=min(a, N)` is evaluated; non-monotone
/// candidates are discarded and the smallest objective wins, ties going to smaller `λ` and
/// then smaller `ρ`.
pub fn global_minimizer<T: Scalar>(
    y: &DenseMatrix<T>,
    r: usize,
    theta_bar: f64,
) -> Result<(SpectralMinimizer<T>, DenseMatrix<T>)> {
    let beta = T::lit(envelope_beta(theta_bar)?);
    if r == 0 {
        return Err(Error::InvalidArgument("r must be positive".into()));
    }
    let decomposition = svd(y)?;
    let m = &decomposition.singular_values;
    let scale = m.first().copied().unwrap_or_else(T::zero);
    let order_slack = T::lit(1e-12) * scale;
    let mut best: Option<SpectralMinimizer<T>> = None;
    for lambda in 1..=m.len() {
        for rho in 1..=r {
            let (x, s_sum, c_const) = candidate(m, r, beta, rho, lambda);
            if x.windows(2).any(|w| w[1] > w[0] + order_slack) {
                continue;
            }
            let mut sorted = x.clone();
            sorted.sort_by(|p, q| q.partial_cmp(p).expect("finite candidate"));
            let objective = envelope_objective(m, &sorted, r, beta)?;
            let better = match &best {
                None => true,
                Some(b) => objective < b.objective - T::lit(1e-13) * (T::one() + b.objective),
            };
            if better {
                best = Some(SpectralMinimizer {
                    rho,
                    lambda,
                    shrunk_values: sorted,
                    objective,
                    beta,
                    s_sum,
                    c_const,
                });
            }
        }
    }
    let best = best.expect("split (1, 1) is always monotone");
    let a_star = decomposition.compose(&best.shrunk_values)?;
    Ok((best, a_star))
}

/// `(1/√2)[U U]`, `(1/√2)[V V]`: same product, half the DropBlock penalty.
pub fn duplicate_halving<T: Scalar>(factors: &FactorPair<T>) -> FactorPair<T> {
    let c = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let u = factors.u.scale(c);
    let v = factors.v.scale(c);
    FactorPair {
        u: DenseMatrix::hstack(&[u.clone(), u]).expect("equal row counts"),
        v: DenseMatrix::hstack(&[v.clone(), v]).expect("equal row counts"),
        block_size: factors.block_size,
    }
}

/// Replicates each block in proportion to its share of `‖α‖₁` over `d̂` new blocks.
///
/// Block `i` is emitted `⌊αᵢ d̂/‖α‖₁⌋` times rescaled to product norm `‖α‖₁/d̂`, plus one
/// remainder copy carrying the fractional part. Vanishing blocks and
/// empty remainders are omitted, so the result has at most `d̂ + k` blocks.
pub fn rebalance<T: Scalar>(
    factors: &FactorPair<T>,
    x: &DenseMatrix<T>,
    target_blocks: usize,
) -> Result<FactorPair<T>> {
    let k = factors.num_blocks();
    if target_blocks < k {
        return Err(Error::InvalidArgument(format!(
            "target of {target_blocks} blocks is below the current {k}"
        )));
    }
    let alpha: Vec<f64> = factors.block_norms(x)?.iter().map(|a| a.as_f64()).collect();
    let l1: f64 = alpha.iter().sum();
    if l1 == 0.0 {
        return Err(Error::DegenerateFactor(
            "every block product vanishes; nothing to rebalance".into(),
        ));
    }
    let d_hat = target_blocks as f64;
    // Product norm carried by one full copy.
    let unit = l1 / d_hat;
    let mut u_blocks = Vec::new();
    let mut v_blocks = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let share = a * d_hat / l1;
        let nearest = share.round();
        let share = if (share - nearest).abs() <= 1e-9 * d_hat { nearest } else { share };
        let copies = share.floor();
        let remainder = share - copies;
        let (ui, vi) = factors.block(i)?;
        let mut push = |norm: f64| {
            let s = T::lit((norm / a).sqrt());
            u_blocks.push(ui.scale(s));
            v_blocks.push(vi.scale(s));
        };
        for _ in 0..copies as usize {
            push(unit);
        }
        if remainder > 0.0 {
            push(unit * remainder);
        }
    }
    FactorPair::new(
        DenseMatrix::hstack(&u_blocks)?,
        DenseMatrix::hstack(&v_blocks)?,
        factors.block_size,
    )
}

/// Calls [`rebalance`] with `d̂ = k, 2k, 4k, …` up to `max_blocks`, stopping once two
/// consecutive width-scaled penalties agree to `1e-6` relative, and returns the factors with
/// the smallest penalty among the input and every candidate.
///
/// The penalty is not monotone in `d̂` (small targets spend blocks on remainders), so the
/// search runs until the sequence settles rather than until the first increase.
pub fn rebalance_doubling<T: Scalar>(
    factors: &FactorPair<T>,
    x: &DenseMatrix<T>,
    max_blocks: usize,
) -> Result<FactorPair<T>> {
    let mut target = factors.num_blocks().max(1);
    let mut best = factors.clone();
    let mut best_penalty = width_scaled_penalty(factors, x)?.as_f64();
    let mut previous: Option<f64> = None;
    while target <= max_blocks.max(factors.num_blocks()) {
        let next = rebalance(factors, x, target)?;
        let penalty = width_scaled_penalty(&next, x)?.as_f64();
        if penalty < best_penalty {
            best = next;
            best_penalty = penalty;
        }
        if previous.is_some_and(|p| (p - penalty).abs() <= 1e-6 * p) {
            break;
        }
        previous = Some(penalty);
        target *= 2;
    }
    Ok(best)
}
