//! Mask distributions for Dropout, DropBlock and DropConnect, their characteristic matrices,
//! and the closed-form regularizers they induce on a linear layer.
//!
//! For a mask `z` with mean `μ` and covariance `C`, the characteristic matrix is
//! `C̄ = diag(μ)⁻¹ · C · diag(μ)⁻¹`. Rescaling kept units by `1/μᵢ` makes the expected squared
//! loss equal the plain loss plus `⟨C̄, UᵀU ⊙ VᵀV⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{DenseMatrix, SeededRng};
use crate::scalar::Scalar;
use crate::spectral::FactorPair;

/// A mask distribution over the hidden units (or, for DropConnect, over the input weights).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DropoutScheme {
    /// Every unit kept independently with probability `theta`.
    Bernoulli { theta: f64 },
    /// Consecutive blocks of `block` units kept or dropped together, each block with
    /// probability `theta`.
    DropBlockPartitioned { theta: f64, block: usize },
    /// Blocks at arbitrary positions on a circular array of units. Each position is a keep
    /// seed with probability `theta`; a unit survives iff at least one seed lies among the
    /// `window` positions centred on it.
    DropBlockOriginal { theta: f64, window: usize },
    /// Each entry of the `b × d` input weight matrix kept independently with probability
    /// `theta`.
    DropConnect { theta: f64 },
}

impl DropoutScheme {
    pub fn theta(&self) -> f64 {
        match *self {
            Self::Bernoulli { theta }
            | Self::DropBlockPartitioned { theta, .. }
            | Self::DropBlockOriginal { theta, .. }
            | Self::DropConnect { theta } => theta,
        }
    }

    /// Block size of the induced partition; 1 for schemes without one.
    pub fn block_size(&self) -> usize {
        match *self {
            Self::DropBlockPartitioned { block, .. } => block,
            _ => 1,
        }
    }

    /// Same variant with a different retain parameter.
    pub fn with_theta(&self, theta: f64) -> Self {
        match *self {
            Self::Bernoulli { .. } => Self::Bernoulli { theta },
            Self::DropBlockPartitioned { block, .. } => Self::DropBlockPartitioned { theta, block },
            Self::DropBlockOriginal { window, .. } => Self::DropBlockOriginal { theta, window },
            Self::DropConnect { .. } => Self::DropConnect { theta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta())?;
        match *self {
            Self::DropBlockPartitioned { block: 0, .. } => {
                Err(Error::InvalidArgument("block size must be positive".into()))
            }
            Self::DropBlockOriginal { window, .. } if window.is_multiple_of(2) => Err(
                Error::InvalidArgument(format!("window must be a positive odd count, got {window}")),
            ),
            _ => Ok(()),
        }
    }

    /// Validates the scheme against a hidden width `d`.
    pub fn validate_width(&self, width: usize) -> Result<()> {
        self.validate()?;
        if width == 0 {
            return Err(Error::Dimension("width must be positive".into()));
        }
        match *self {
            Self::DropBlockPartitioned { block, .. } if !width.is_multiple_of(block) => {
                Err(Error::BlockPartition { width, block })
            }
            Self::DropBlockOriginal { window, .. } if window > width => Err(Error::InvalidArgument(
                format!("window {window} exceeds width {width}"),
            )),
            _ => Ok(()),
        }
    }

    /// Number of independent Bernoulli variables behind one mask draw.
    pub fn independent_variables(&self, width: usize, inputs: usize) -> usize {
        match *self {
            Self::Bernoulli { .. } | Self::DropBlockOriginal { .. } => width,
            Self::DropBlockPartitioned { block, .. } => width / block.max(1),
            Self::DropConnect { .. } => width * inputs,
        }
    }
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta == 0.0 {
        return Err(Error::DegenerateScheme(
            "retain probability 0 makes the 1/θ rescaling undefined".into(),
        ));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retain probability must lie in (0, 1], got {theta}"
        )));
    }
    Ok(())
}

/// A single mask draw.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskSample {
    /// Per-unit keep flags `z ∈ {0,1}^d`.
    Units(Vec<bool>),
    /// Per-weight keep flags `Z ∈ {0,1}^{b×d}`, row-major.
    Connections {
        rows: usize,
        cols: usize,
        keep: Vec<bool>,
    },
}

impl MaskSample {
    pub fn units(&self) -> Option<&[bool]> {
        match self {
            Self::Units(z) => Some(z),
            Self::Connections { .. } => None,
        }
    }

    pub fn kept(&self) -> usize {
        match self {
            Self::Units(z) => z.iter().filter(|&&k| k).count(),
            Self::Connections { keep, .. } => keep.iter().filter(|&&k| k).count(),
        }
    }

    /// Keep flags as 0/1 scalars.
    pub fn as_scalars<T: Scalar>(&self) -> Vec<T> {
        let flags = match self {
            Self::Units(z) => z,
            Self::Connections { keep, .. } => keep,
        };
        flags.iter().map(|&k| if k { T::one() } else { T::zero() }).collect()
    }
}

/// Draws one mask of width `d` for a unit-level scheme.
///
/// DropConnect masks cover the weight matrix rather than the units and are drawn with
/// [`sample_connection_mask`].
pub fn sample_mask(scheme: &DropoutScheme, width: usize, rng: &mut SeededRng) -> Result<MaskSample> {
    scheme.validate_width(width)?;
    let z = match *scheme {
        DropoutScheme::Bernoulli { theta } => (0..width).map(|_| rng.bernoulli(theta)).collect(),
        DropoutScheme::DropBlockPartitioned { theta, block } => {
            let mut z = Vec::with_capacity(width);
            for _ in 0..width / block {
                let keep = rng.bernoulli(theta);
                z.extend(std::iter::repeat_n(keep, block));
            }
            z
        }
        DropoutScheme::DropBlockOriginal { theta, window } => {
            let seeds: Vec<bool> = (0..width).map(|_| rng.bernoulli(theta)).collect();
            windowed_keep(&seeds, window)
        }
        DropoutScheme::DropConnect { .. } => {
            return Err(Error::InvalidArgument(
                "DropConnect masks the b×d weight matrix; use sample_connection_mask".into(),
            ))
        }
    };
    Ok(MaskSample::Units(z))
}

/// Unit `i` is kept iff some seed lies within the circular window centred on `i`.
pub(crate) fn windowed_keep(seeds: &[bool], window: usize) -> Vec<bool> {
    let d = seeds.len();
    let half = window / 2;
    (0..d)
        .map(|i| (0..window).any(|o| seeds[(i + d - half + o) % d]))
        .collect()
}

/// Draws a `b × d` DropConnect mask of i.i.d. Ber(θ) entries.
pub fn sample_connection_mask(
    theta: f64,
    inputs: usize,
    width: usize,
    rng: &mut SeededRng,
) -> Result<MaskSample> {
    check_theta(theta)?;
    if inputs == 0 || width == 0 {
        return Err(Error::Dimension("DropConnect mask shape must be positive".into()));
    }
    let keep = (0..inputs * width).map(|_| rng.bernoulli(theta)).collect();
    Ok(MaskSample::Connections {
        rows: inputs,
        cols: width,
        keep,
    })
}

/// Mean vector `μ` and characteristic matrix `C̄` of a mask distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicMatrix<T> {
    pub mean: Vec<T>,
    pub cbar: DenseMatrix<T>,
}

impl<T: Scalar> CharacteristicMatrix<T> {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Mask covariance `C = diag(μ) · C̄ · diag(μ)`.
    pub fn covariance(&self) -> DenseMatrix<T> {
        let d = self.width();
        DenseMatrix::from_parts(
            d,
            d,
            (0..d * d)
                .map(|k| self.mean[k / d] * self.cbar.get(k / d, k % d) * self.mean[k % d])
                .collect(),
        )
    }
}

/// Exact mean and characteristic matrix of `scheme` at width `d`.
///
/// DropConnect returns the Dropout characteristic matrix at the same `θ`. Its expected
/// objective equals the resulting Dropout objective only when the rows of the input are
/// orthogonal; see [`dropconnect_expected_penalty`].
pub fn characteristic_matrix<T: Scalar>(
    scheme: &DropoutScheme,
    width: usize,
) -> Result<CharacteristicMatrix<T>> {
    scheme.validate_width(width)?;
    let theta = scheme.theta();
    let d = width;
    let (mean, cbar): (f64, Vec<f64>) = match *scheme {
        DropoutScheme::Bernoulli { .. } | DropoutScheme::DropConnect { .. } => {
            let c = (1.0 - theta) / theta;
            (theta, (0..d * d).map(|k| if k / d == k % d { c } else { 0.0 }).collect())
        }
        DropoutScheme::DropBlockPartitioned { block, .. } => {
            let c = (1.0 - theta) / theta;
            (
                theta,
                (0..d * d)
                    .map(|k| if (k / d) / block == (k % d) / block { c } else { 0.0 })
                    .collect(),
            )
        }
        DropoutScheme::DropBlockOriginal { window, .. } => {
            // P(unit dropped) = q^w with q = 1 - θ the probability a position is not a seed;
            // both units dropped iff no seed in the union of their windows.
            let q = 1.0 - theta;
            let drop = q.powi(window as i32);
            let mu = 1.0 - drop;
            let cbar = (0..d * d)
                .map(|k| {
                    let union = window_union(k / d, k % d, window, d);
                    let both_kept = 1.0 - 2.0 * drop + q.powi(union as i32);
                    (both_kept - mu * mu) / (mu * mu)
                })
                .collect();
            (mu, cbar)
        }
    };
    Ok(CharacteristicMatrix {
        mean: vec![T::lit(mean); d],
        cbar: DenseMatrix::from_vec(d, d, cbar.into_iter().map(T::lit).collect())?,
    })
}

/// Size of the union of the circular windows of units `i` and `j`.
fn window_union(i: usize, j: usize, window: usize, d: usize) -> usize {
    let half = window / 2;
    let covers = |centre: usize, pos: usize| (pos + d + half - centre) % d < window;
    (0..d).filter(|&p| covers(i, p) || covers(j, p)).count()
}

/// Generalized dropout regularizer `Σᵢⱼ c̄ᵢⱼ (uᵢᵀuⱼ)(vᵢᵀvⱼ) = ⟨C̄, UᵀU ⊙ VᵀV⟩`.
///
/// `v` is whatever multiplies the mask on the right: `XᵀV` for a linear network or a
/// feature matrix `g(X)ᵀ`.
pub fn regularizer_generalized<T: Scalar>(
    characteristic: &CharacteristicMatrix<T>,
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
) -> Result<T> {
    let d = characteristic.width();
    if u.cols() != d || v.cols() != d {
        return Err(Error::Dimension(format!(
            "factors have {} and {} columns, characteristic matrix is {d}x{d}",
            u.cols(),
            v.cols()
        )));
    }
    let gu = u.t_matmul(u)?;
    let gv = v.t_matmul(v)?;
    gu.hadamard(&gv)?.inner(&characteristic.cbar)
}

/// DropBlock regularizer `((1−θ)/θ) Σᵢ ‖UᵢVᵢᵀX‖²_F` over blocks of `r` consecutive columns.
pub fn regularizer_dropblock<T: Scalar>(
    factors: &FactorPair<T>,
    x: &DenseMatrix<T>,
    theta: f64,
) -> Result<T> {
    check_theta(theta)?;
    let blocks: T = factors
        .block_products(x)?
        .iter()
        .map(DenseMatrix::frobenius_sq)
        .sum();
    Ok(T::lit((1.0 - theta) / theta) * blocks)
}

/// DropConnect regularizer on the input weights `V`: `((1−θ)/θ) Σᵢ ‖uᵢ‖² ‖Mᵀvᵢ‖²`, with `M`
/// the input to the masked layer (`X` for a linear network, `g(X)` for a feature extractor).
pub fn regularizer_dropconnect<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    m: &DenseMatrix<T>,
    theta: f64,
) -> Result<T> {
    check_theta(theta)?;
    if u.cols() != v.cols() || v.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "U is {}x{}, V is {}x{}, M is {}x{}",
            u.rows(),
            u.cols(),
            v.rows(),
            v.cols(),
            m.rows(),
            m.cols()
        )));
    }
    let mv = m.t_matmul(v)?; // N×d, column i is Mᵀvᵢ
    let total = (0..u.cols())
        .map(|i| {
            let un: T = u.column(i).iter().map(|&x| x * x).sum();
            let vn: T = mv.column(i).iter().map(|&x| x * x).sum();
            un * vn
        })
        .sum::<T>();
    Ok(T::lit((1.0 - theta) / theta) * total)
}

/// Exact expected DropConnect penalty `((1−θ)/θ) Σᵢ ‖uᵢ‖² Σₖ vₖᵢ² ‖mₖ‖²`, with `mₖ` the rows
/// of `M`.
///
/// The weights feeding unit `i` are masked independently, so the variance of its output is
/// `Σₖ vₖᵢ² ‖mₖ‖²` rather than `‖Mᵀvᵢ‖²`. The two agree, and DropConnect matches Dropout,
/// exactly when the rows of `M` are mutually orthogonal.
pub fn dropconnect_expected_penalty<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    m: &DenseMatrix<T>,
    theta: f64,
) -> Result<T> {
    check_theta(theta)?;
    if u.cols() != v.cols() || v.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "U is {}x{}, V is {}x{}, M is {}x{}",
            u.rows(),
            u.cols(),
            v.rows(),
            v.cols(),
            m.rows(),
            m.cols()
        )));
    }
    let row_sq: Vec<T> = (0..m.rows())
        .map(|k| m.row(k).iter().map(|&x| x * x).sum())
        .collect();
    let total = (0..u.cols())
        .map(|i| {
            let un: T = u.column(i).iter().map(|&x| x * x).sum();
            let vn: T = (0..v.rows()).map(|k| v.get(k, i) * v.get(k, i) * row_sq[k]).sum();
            un * vn
        })
        .sum::<T>();
    Ok(T::lit((1.0 - theta) / theta) * total)
}

/// Seed probability for [`DropoutScheme::DropBlockOriginal`] that gives the same per-unit
/// drop rate `1 − θ` as partitioned DropBlock: `1 − (1 − θ)^{1/w}`.
pub fn theta_correction(theta_partitioned: f64, window: usize) -> Result<f64> {
    check_theta(theta_partitioned)?;
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    Ok(1.0 - (1.0 - theta_partitioned).powf(1.0 / window as f64))
}
