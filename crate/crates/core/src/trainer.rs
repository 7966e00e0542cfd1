//! Dropout-family SGD on `Y ≈ U Vᵀ X`, a full-batch gradient descent on the equivalent
//! deterministic objective, and exact / Monte-Carlo estimators of the stochastic objective.

use serde::{Deserialize, Serialize};

use crate::dropout::{
    characteristic_matrix, dropconnect_expected_penalty, regularizer_generalized,
    sample_connection_mask, sample_mask, windowed_keep, CharacteristicMatrix, DropoutScheme,
    MaskSample,
};
use crate::error::{Error, Result};
use crate::kernel::{DenseMatrix, SeededRng};
use crate::scalar::Scalar;
use crate::spectral::FactorPair;

/// Stream ids used by [`train`] under the configured seed.
pub const MASK_STREAM: u64 = 16;
pub const MONITOR_STREAM: u64 = 17;

pub const ENUMERATION_CAP: usize = 20;
pub const DIVERGENCE_FACTOR: f64 = 1e6;
pub const DEFAULT_LOG_STRIDE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Masked SGD as in the stochastic algorithm.
    StochasticSgd,
    /// Gradient descent on the closed-form deterministic objective.
    FullBatchDeterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    SingleSample,
    FullBatch,
}

/// Training parameters. Retain probability and block size are carried by `scheme`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub scheme: DropoutScheme,
    pub iterations: usize,
    pub seed: u64,
    pub mode: TrainingMode,
    pub batch: BatchMode,
    pub log_stride: usize,
    /// Masks averaged for the stochastic objective at each logged iterate.
    pub monitor_samples: usize,
}

impl TrainingConfig {
    pub fn new(scheme: DropoutScheme, learning_rate: f64, iterations: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            scheme,
            iterations,
            seed,
            mode: TrainingMode::StochasticSgd,
            batch: BatchMode::SingleSample,
            log_stride: DEFAULT_LOG_STRIDE,
            monitor_samples: 1,
        }
    }

    pub fn retain_probability(&self) -> f64 {
        self.scheme.theta()
    }

    pub fn block_size(&self) -> usize {
        self.scheme.block_size()
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.log_stride == 0 {
            return Err(Error::InvalidArgument("log stride must be at least 1".into()));
        }
        if self.monitor_samples == 0 {
            return Err(Error::InvalidArgument("monitor samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One logged iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord<T> {
    pub iteration: usize,
    /// Full-data loss under freshly drawn masks (averaged over `monitor_samples`).
    pub stochastic_objective: T,
    /// Closed-form expectation of the stochastic objective.
    pub deterministic_objective: T,
    /// `‖UᵢVᵢᵀX‖_F` per block.
    pub block_norms: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTrace<T> {
    pub records: Vec<TraceRecord<T>>,
    pub u: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
    pub learning_rate: f64,
}

impl<T: Scalar> TrainingTrace<T> {
    pub fn last(&self) -> &TraceRecord<T> {
        self.records.last().expect("traces log the initial iterate")
    }

    pub fn factors(&self, block_size: usize) -> Result<FactorPair<T>> {
        FactorPair::new(self.u.clone(), self.v.clone(), block_size)
    }
}

fn unit_mask<T: Scalar>(mask: &MaskSample, width: usize) -> Result<Vec<T>> {
    match mask {
        MaskSample::Units(z) if z.len() == width => Ok(mask.as_scalars()),
        MaskSample::Units(z) => Err(Error::Dimension(format!(
            "mask has length {} but the hidden width is {width}",
            z.len()
        ))),
        MaskSample::Connections { .. } => Err(Error::InvalidArgument(
            "unit-level step given a connection mask".into(),
        )),
    }
}

fn check_step_shapes<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x_t: &[T],
    y_t: &[T],
) -> Result<()> {
    if u.cols() != v.cols() || v.rows() != x_t.len() || u.rows() != y_t.len() {
        return Err(Error::Dimension(format!(
            "U is {}x{}, V is {}x{}, x has {} entries, y has {}",
            u.rows(),
            u.cols(),
            v.rows(),
            v.cols(),
            x_t.len(),
            y_t.len()
        )));
    }
    Ok(())
}

/// One step of masked SGD on a single sample, with both factors updated from the pre-step
/// iterates:
///
/// `ε = (1/θ) U D_z Vᵀ x − y`, `U ← U − (η/θ) ε xᵀ V D_z`, `V ← V − (η/θ) x εᵀ U D_z`.
///
/// `theta` is the rescaling (the mean of each mask coordinate).
pub fn sgd_step<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x_t: &[T],
    y_t: &[T],
    mask: &MaskSample,
    eta: T,
    theta: T,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    check_step_shapes(u, v, x_t, y_t)?;
    let z: Vec<T> = unit_mask(mask, u.cols())?;
    let hidden = v.t_matvec(x_t)?;
    let gated: Vec<T> = hidden.iter().zip(&z).map(|(&h, &k)| h * k).collect();
    let inv = T::one() / theta;
    let pred = u.matvec(&gated)?;
    let err: Vec<T> = pred.iter().zip(y_t).map(|(&p, &y)| p * inv - y).collect();
    let back = u.t_matvec(&err)?;
    let gated_back: Vec<T> = back.iter().zip(&z).map(|(&b, &k)| b * k).collect();
    let step = eta * inv;
    let d = u.cols();
    let u_next = DenseMatrix::from_fn(u.rows(), d, |i, j| u.get(i, j) - step * err[i] * gated[j])?;
    let v_next =
        DenseMatrix::from_fn(v.rows(), d, |i, j| v.get(i, j) - step * x_t[i] * gated_back[j])?;
    Ok((u_next, v_next))
}

/// DropConnect counterpart of [`sgd_step`]: the mask gates individual entries of `V`.
///
/// `ε = (1/θ) U (V ⊙ Z)ᵀ x − y`, `U ← U − (η/θ) ε xᵀ (V ⊙ Z)`, `V ← V − (η/θ) (x εᵀ U) ⊙ Z`.
pub fn dropconnect_step<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x_t: &[T],
    y_t: &[T],
    mask: &MaskSample,
    eta: T,
    theta: T,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    check_step_shapes(u, v, x_t, y_t)?;
    let gated_v = gate_connections(v, mask)?;
    let z: DenseMatrix<T> = DenseMatrix::from_parts(v.rows(), v.cols(), mask.as_scalars());
    let inv = T::one() / theta;
    let hidden = gated_v.t_matvec(x_t)?;
    let pred = u.matvec(&hidden)?;
    let err: Vec<T> = pred.iter().zip(y_t).map(|(&p, &y)| p * inv - y).collect();
    let back = u.t_matvec(&err)?;
    let step = eta * inv;
    let u_next =
        DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u.get(i, j) - step * err[i] * hidden[j])?;
    let v_next = DenseMatrix::from_fn(v.rows(), v.cols(), |i, j| {
        v.get(i, j) - step * x_t[i] * back[j] * z.get(i, j)
    })?;
    Ok((u_next, v_next))
}

fn gate_connections<T: Scalar>(v: &DenseMatrix<T>, mask: &MaskSample) -> Result<DenseMatrix<T>> {
    match mask {
        MaskSample::Connections { rows, cols, .. } if (*rows, *cols) == v.shape() => {
            v.hadamard(&DenseMatrix::from_parts(*rows, *cols, mask.as_scalars()))
        }
        MaskSample::Connections { rows, cols, .. } => Err(Error::Dimension(format!(
            "connection mask is {rows}x{cols} but V is {}x{}",
            v.rows(),
            v.cols()
        ))),
        MaskSample::Units(_) => Err(Error::InvalidArgument(
            "DropConnect step given a unit mask".into(),
        )),
    }
}

/// Mean of each mask coordinate, the factor kept units are rescaled by.
pub fn rescale_factor(scheme: &DropoutScheme, width: usize) -> Result<f64> {
    Ok(match scheme {
        DropoutScheme::DropConnect { theta } => *theta,
        _ => characteristic_matrix::<f64>(scheme, width)?.mean[0],
    })
}

fn check_data<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
) -> Result<()> {
    if u.cols() != v.cols() || v.rows() != x.rows() || u.rows() != y.rows() || x.cols() != y.cols()
    {
        return Err(Error::Dimension(format!(
            "U is {}x{}, V is {}x{}, X is {}x{}, Y is {}x{}",
            u.rows(),
            u.cols(),
            v.rows(),
            v.cols(),
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(())
}

/// Full-data loss `‖Y − (1/μ) U D_z Vᵀ X‖²_F` under one mask (or `‖Y − (1/θ) U (V⊙Z)ᵀ X‖²_F`
/// for a connection mask).
pub fn masked_objective<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    mask: &MaskSample,
    rescale: T,
) -> Result<T> {
    check_data(u, v, x, y)?;
    let inv = T::one() / rescale;
    let pred = match mask {
        MaskSample::Units(_) => {
            let z: Vec<T> = unit_mask(mask, u.cols())?;
            let scaled: Vec<T> = z.iter().map(|&k| k * inv).collect();
            u.scale_columns(&scaled)?.matmul(&v.t_matmul(x)?)?
        }
        MaskSample::Connections { .. } => {
            u.matmul(&gate_connections(v, mask)?.t_matmul(x)?)?.scale(inv)
        }
    };
    Ok(y.sub(&pred)?.frobenius_sq())
}

/// Closed-form expectation `‖Y − UVᵀX‖²_F + ⟨C̄, UᵀU ⊙ VᵀXXᵀV⟩` of the stochastic objective.
pub fn deterministic_objective<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    characteristic: &CharacteristicMatrix<T>,
) -> Result<T> {
    check_data(u, v, x, y)?;
    let w = x.t_matmul(v)?;
    let fit = y.sub(&u.matmul_t(&w)?)?.frobenius_sq();
    Ok(fit + regularizer_generalized(characteristic, u, &w)?)
}

/// Closed-form expectation of the stochastic objective under `scheme`: the characteristic
/// matrix form for unit masks, the exact connection-mask penalty for DropConnect.
pub fn expected_objective_closed_form<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    scheme: &DropoutScheme,
) -> Result<T> {
    Penalty::new(scheme, u.cols())?.objective(u, v, x, y)
}

enum Penalty<T> {
    Units(CharacteristicMatrix<T>),
    Connections { theta: f64 },
}

impl<T: Scalar> Penalty<T> {
    fn new(scheme: &DropoutScheme, width: usize) -> Result<Self> {
        scheme.validate_width(width)?;
        Ok(match *scheme {
            DropoutScheme::DropConnect { theta } => Self::Connections { theta },
            _ => Self::Units(characteristic_matrix(scheme, width)?),
        })
    }

    fn objective(
        &self,
        u: &DenseMatrix<T>,
        v: &DenseMatrix<T>,
        x: &DenseMatrix<T>,
        y: &DenseMatrix<T>,
    ) -> Result<T> {
        match self {
            Self::Units(cm) => deterministic_objective(u, v, x, y, cm),
            Self::Connections { theta } => {
                check_data(u, v, x, y)?;
                let fit = y.sub(&u.matmul(&v.t_matmul(x)?)?)?.frobenius_sq();
                Ok(fit + dropconnect_expected_penalty(u, v, x, *theta)?)
            }
        }
    }
}

/// Exact expectation of the stochastic objective by enumerating every outcome of the
/// independent Bernoulli variables behind the mask.
pub fn expected_objective_exact<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    scheme: &DropoutScheme,
) -> Result<T> {
    check_data(u, v, x, y)?;
    let d = u.cols();
    let b = v.rows();
    scheme.validate_width(d)?;
    let variables = scheme.independent_variables(d, b);
    if variables > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge {
            variables,
            cap: ENUMERATION_CAP,
        });
    }
    let theta = scheme.theta();
    let rescale = T::lit(rescale_factor(scheme, d)?);
    let mut total = T::zero();
    for bits in 0u64..1 << variables {
        let flags: Vec<bool> = (0..variables).map(|k| bits >> k & 1 == 1).collect();
        let kept = flags.iter().filter(|&&f| f).count();
        let weight = theta.powi(kept as i32) * (1.0 - theta).powi((variables - kept) as i32);
        if weight == 0.0 {
            continue;
        }
        let mask = match *scheme {
            DropoutScheme::Bernoulli { .. } => MaskSample::Units(flags),
            DropoutScheme::DropBlockPartitioned { block, .. } => MaskSample::Units(
                flags.iter().flat_map(|&f| std::iter::repeat_n(f, block)).collect(),
            ),
            DropoutScheme::DropBlockOriginal { window, .. } => {
                MaskSample::Units(windowed_keep(&flags, window))
            }
            DropoutScheme::DropConnect { .. } => MaskSample::Connections {
                rows: b,
                cols: d,
                keep: flags,
            },
        };
        total = total + T::lit(weight) * masked_objective(u, v, x, y, &mask, rescale)?;
    }
    Ok(total)
}

fn draw_mask(
    scheme: &DropoutScheme,
    width: usize,
    inputs: usize,
    rng: &mut SeededRng,
) -> Result<MaskSample> {
    match *scheme {
        DropoutScheme::DropConnect { theta } => sample_connection_mask(theta, inputs, width, rng),
        _ => sample_mask(scheme, width, rng),
    }
}

/// Sample mean and standard error of the stochastic objective over `n_samples` i.i.d. masks.
pub fn expected_objective_mc<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    scheme: &DropoutScheme,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<(T, T)> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo estimation needs at least 2 samples, got {n_samples}"
        )));
    }
    check_data(u, v, x, y)?;
    let d = u.cols();
    let rescale = T::lit(rescale_factor(scheme, d)?);
    // Welford accumulation in f64.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n_samples {
        let mask = draw_mask(scheme, d, v.rows(), rng)?;
        let value = masked_objective(u, v, x, y, &mask, rescale)?.as_f64();
        let delta = value - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (value - mean);
    }
    let n = n_samples as f64;
    let std_err = (m2 / (n - 1.0) / n).sqrt();
    Ok((T::lit(mean), T::lit(std_err)))
}

/// Gradients of the deterministic objective in terms of `G = XXᵀ` and `P = YXᵀ`.
struct GramObjective<T> {
    gram: DenseMatrix<T>,
    cross: DenseMatrix<T>,
    penalty: GramPenalty<T>,
}

enum GramPenalty<T> {
    Characteristic(DenseMatrix<T>),
    /// `c Σᵢ ‖uᵢ‖² vᵢᵀ diag(G) vᵢ`.
    Connections { ratio: T, gram_diag: Vec<T> },
}

impl<T: Scalar> GramObjective<T> {
    fn new(x: &DenseMatrix<T>, y: &DenseMatrix<T>, penalty: &Penalty<T>) -> Result<Self> {
        let gram = x.matmul_t(x)?;
        let penalty = match penalty {
            Penalty::Units(cm) => GramPenalty::Characteristic(cm.cbar.clone()),
            Penalty::Connections { theta } => GramPenalty::Connections {
                ratio: T::lit((1.0 - theta) / theta),
                gram_diag: gram.diagonal(),
            },
        };
        Ok(Self {
            cross: y.matmul_t(x)?,
            gram,
            penalty,
        })
    }

    fn gradients(
        &self,
        u: &DenseMatrix<T>,
        v: &DenseMatrix<T>,
    ) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
        let two = T::lit(2.0);
        let gv = self.gram.matmul(v)?;
        let vgv = v.t_matmul(&gv)?;
        let utu = u.t_matmul(u)?;
        let pv = self.cross.matmul(v)?;
        let ptu = self.cross.t_matmul(u)?;
        // fit: ∇U = −2(PV − U VᵀGV), ∇V = −2(PᵀU − GV UᵀU)
        let fit_u = u.matmul(&vgv)?.sub(&pv)?;
        let fit_v = gv.matmul(&utu)?.sub(&ptu)?;
        let (pen_u, pen_v) = match &self.penalty {
            // ∇U = 2U(C̄ ⊙ VᵀGV), ∇V = 2GV(C̄ ⊙ UᵀU)
            GramPenalty::Characteristic(cbar) => (
                u.matmul(&cbar.hadamard(&vgv)?)?,
                gv.matmul(&cbar.hadamard(&utu)?)?,
            ),
            GramPenalty::Connections { ratio, gram_diag } => {
                let weighted: Vec<T> = (0..v.cols())
                    .map(|i| (0..v.rows()).map(|k| v.get(k, i) * v.get(k, i) * gram_diag[k]).sum())
                    .collect();
                let u_sq = utu.diagonal();
                let dv = DenseMatrix::from_fn(v.rows(), v.cols(), |k, i| gram_diag[k] * v.get(k, i))?;
                (
                    u.scale_columns(&weighted)?.scale(*ratio),
                    dv.scale_columns(&u_sq)?.scale(*ratio),
                )
            }
        };
        Ok((
            fit_u.add(&pen_u)?.scale(two),
            fit_v.add(&pen_v)?.scale(two),
        ))
    }
}

/// Runs `cfg.iterations` steps from `(init_u, init_v)`.
///
/// Iterate 0, every `log_stride`-th iterate and the final iterate are logged. Single-sample
/// SGD visits the columns of `(X, Y)` cyclically. Masks come from stream [`MASK_STREAM`] of
/// `cfg.seed` and the logged stochastic objective from [`MONITOR_STREAM`], so a run is a pure
/// function of its inputs.
pub fn train<T: Scalar>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    init_u: &DenseMatrix<T>,
    init_v: &DenseMatrix<T>,
    cfg: &TrainingConfig,
) -> Result<TrainingTrace<T>> {
    cfg.validate()?;
    check_data(init_u, init_v, x, y)?;
    let d = init_u.cols();
    let b = init_v.rows();
    cfg.scheme.validate_width(d)?;
    let penalty = Penalty::<T>::new(&cfg.scheme, d)?;
    let rescale_f64 = rescale_factor(&cfg.scheme, d)?;
    let rescale = T::lit(rescale_f64);
    let eta = T::lit(cfg.learning_rate);
    let block = cfg.block_size();
    let n = x.cols();

    let mut masks = SeededRng::new(cfg.seed, MASK_STREAM);
    let mut monitor = SeededRng::new(cfg.seed, MONITOR_STREAM);
    let mut u = init_u.clone();
    let mut v = init_v.clone();
    let mut records = Vec::with_capacity(cfg.iterations / cfg.log_stride + 2);

    let mut log = |iteration: usize, u: &DenseMatrix<T>, v: &DenseMatrix<T>| -> Result<T> {
        let deterministic = penalty.objective(u, v, x, y)?;
        let mut stochastic = 0.0;
        for _ in 0..cfg.monitor_samples {
            let mask = draw_mask(&cfg.scheme, d, b, &mut monitor)?;
            stochastic += masked_objective(u, v, x, y, &mask, rescale)?.as_f64();
        }
        let block_norms = FactorPair::new(u.clone(), v.clone(), block)?.block_norms(x)?;
        records.push(TraceRecord {
            iteration,
            stochastic_objective: T::lit(stochastic / cfg.monitor_samples as f64),
            deterministic_objective: deterministic,
            block_norms,
        });
        Ok(deterministic)
    };

    let initial = log(0, &u, &v)?.as_f64();
    let ceiling = DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE);
    let gram = match cfg.mode {
        TrainingMode::FullBatchDeterministic => {
            Some(GramObjective::new(x, y, &penalty)?)
        }
        TrainingMode::StochasticSgd => None,
    };
    let columns: Vec<(Vec<T>, Vec<T>)> = match (cfg.mode, cfg.batch) {
        (TrainingMode::StochasticSgd, BatchMode::SingleSample) => {
            (0..n).map(|t| (x.column(t), y.column(t))).collect()
        }
        _ => Vec::new(),
    };

    for t in 1..=cfg.iterations {
        (u, v) = match (&gram, cfg.batch) {
            (Some(g), _) => {
                let (gu, gv) = g.gradients(&u, &v)?;
                (u.axpy(-eta, &gu)?, v.axpy(-eta, &gv)?)
            }
            (None, BatchMode::SingleSample) => {
                let (x_t, y_t) = &columns[(t - 1) % n];
                let mask = draw_mask(&cfg.scheme, d, b, &mut masks)?;
                match cfg.scheme {
                    DropoutScheme::DropConnect { .. } => {
                        dropconnect_step(&u, &v, x_t, y_t, &mask, eta, rescale)?
                    }
                    _ => sgd_step(&u, &v, x_t, y_t, &mask, eta, rescale)?,
                }
            }
            (None, BatchMode::FullBatch) => {
                let mask = draw_mask(&cfg.scheme, d, b, &mut masks)?;
                full_batch_masked_step(&u, &v, x, y, &mask, eta, rescale)?
            }
        };
        if t % cfg.log_stride == 0 || t == cfg.iterations {
            let value = log(t, &u, &v)?.as_f64();
            if !value.is_finite() || value > ceiling {
                return Err(Error::Divergence {
                    eta: cfg.learning_rate,
                    iteration: t,
                });
            }
        } else if !u.as_slice().iter().chain(v.as_slice()).all(|w| w.is_finite()) {
            return Err(Error::Divergence {
                eta: cfg.learning_rate,
                iteration: t,
            });
        }
    }
    Ok(TrainingTrace {
        records,
        u,
        v,
        learning_rate: cfg.learning_rate,
    })
}

/// Masked step over every column at once: the single-sample update summed over samples.
fn full_batch_masked_step<T: Scalar>(
    u: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    mask: &MaskSample,
    eta: T,
    theta: T,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let inv = T::one() / theta;
    let step = eta * inv;
    match mask {
        MaskSample::Units(_) => {
            let z: Vec<T> = unit_mask(mask, u.cols())?;
            let gated = v.t_matmul(x)?; // d×N
            let hidden = DenseMatrix::from_fn(gated.rows(), gated.cols(), |i, j| {
                gated.get(i, j) * z[i]
            })?;
            let err = u.matmul(&hidden)?.scale(inv).sub(y)?; // a×N
            let grad_u = err.matmul_t(&hidden)?;
            let back = x.matmul_t(&err)?.matmul(u)?.scale_columns(&z)?; // b×d
            Ok((u.axpy(-step, &grad_u)?, v.axpy(-step, &back)?))
        }
        MaskSample::Connections { rows, cols, .. } => {
            let gated_v = gate_connections(v, mask)?;
            let z = DenseMatrix::from_parts(*rows, *cols, mask.as_scalars());
            let hidden = gated_v.t_matmul(x)?;
            let err = u.matmul(&hidden)?.scale(inv).sub(y)?;
            let grad_u = err.matmul_t(&hidden)?;
            let back = x.matmul_t(&err)?.matmul(u)?.hadamard(&z)?;
            Ok((u.axpy(-step, &grad_u)?, v.axpy(-step, &back)?))
        }
    }
}

/// Default step size `0.5/‖X‖₂²`, divided by `N` for single-sample SGD.
pub fn default_learning_rate<T: Scalar>(x: &DenseMatrix<T>, batch: BatchMode) -> Result<f64> {
    let top = crate::kernel::singular_values(x)?
        .first()
        .map_or(0.0, |s| s.as_f64());
    if top == 0.0 {
        return Err(Error::InvalidArgument("X is zero".into()));
    }
    let eta = 0.5 / (top * top);
    Ok(match batch {
        BatchMode::SingleSample => eta / x.cols() as f64,
        BatchMode::FullBatch => eta,
    })
}

/// [`train`], halving the learning rate after each divergence, at most `max_halvings` times.
pub fn train_with_halving<T: Scalar>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
    init_u: &DenseMatrix<T>,
    init_v: &DenseMatrix<T>,
    cfg: &TrainingConfig,
    max_halvings: usize,
) -> Result<TrainingTrace<T>> {
    let mut cfg = cfg.clone();
    let mut attempt = 0;
    loop {
        match train(x, y, init_u, init_v, &cfg) {
            Err(Error::Divergence { .. }) if attempt < max_halvings => {
                attempt += 1;
                cfg.learning_rate *= 0.5;
            }
            other => return other,
        }
    }
}
