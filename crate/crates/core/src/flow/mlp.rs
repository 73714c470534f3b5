//! Small per-point velocity network with pooled global context.
//!
//! Per point i the input row is `[conditioning_i | position_i | time
//! embedding]`. A first tanh layer produces hidden rows; their mean is the
//! global context vector, concatenated back onto every row before the
//! second tanh layer and the linear output head. Mean pooling is the only
//! cross-point coupling, so the model is permutation-equivariant.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TrainingSample, VelocityModel};
use crate::error::{Error, Result};
use crate::features::{encode_scalar, ConditioningMatrix};
use crate::geom::Vec3;

/// Parameter-free skip: adds three input columns (an encoded 3-vector such
/// as the noisy-initialization coordinates) directly onto the output, so
/// the network only has to learn the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipSpec {
    /// Column of the x component within the conditioning rows.
    pub offset: usize,
    /// Column stride between the x, y and z components.
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub time_frequencies: usize,
    /// Sinusoidal frequencies for the current-position channels.
    pub position_frequencies: usize,
    pub seed: u64,
    pub skip: Option<SkipSpec>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden1: 160,
            hidden2: 160,
            time_frequencies: 10,
            position_frequencies: 6,
            seed: 0,
            skip: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpVelocityModel {
    cond_width: usize,
    config: MlpConfig,
    w1: DMatrix<f64>, // d_in x h1
    b1: DVector<f64>,
    w2: DMatrix<f64>, // 2 h1 x h2
    b2: DVector<f64>,
    w3: DMatrix<f64>, // h2 x 3
    b3: DVector<f64>,
}

/// Gradients with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    w3: DMatrix<f64>,
    b3: DVector<f64>,
}

impl MlpGradients {
    pub fn merge(mut self, other: MlpGradients) -> MlpGradients {
        self.w1 += other.w1;
        self.b1 += other.b1;
        self.w2 += other.w2;
        self.b2 += other.b2;
        self.w3 += other.w3;
        self.b3 += other.b3;
        self
    }

    pub fn scaled(mut self, factor: f64) -> MlpGradients {
        self.w1 *= factor;
        self.b1 *= factor;
        self.w2 *= factor;
        self.b2 *= factor;
        self.w3 *= factor;
        self.b3 *= factor;
        self
    }

    /// Flattened in the same order as [`MlpVelocityModel::flatten_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.b2.as_slice());
        out.extend_from_slice(self.w3.as_slice());
        out.extend_from_slice(self.b3.as_slice());
        out
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

impl MlpVelocityModel {
    pub fn new(cond_width: usize, config: MlpConfig) -> Result<Self> {
        if cond_width == 0 || config.hidden1 == 0 || config.hidden2 == 0 {
            return Err(Error::InvalidArgument("mlp layer widths".into()));
        }
        if let Some(skip) = &config.skip {
            if skip.offset + 2 * skip.stride >= cond_width {
                return Err(Error::InvalidArgument(
                    "skip columns exceed the conditioning width".into(),
                ));
            }
        }
        let d_in = cond_width
            + 3 * (2 * config.position_frequencies + 1)
            + 2 * config.time_frequencies
            + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            cond_width,
            config,
            w1: xavier(d_in, config.hidden1, &mut rng),
            b1: DVector::zeros(config.hidden1),
            w2: xavier(2 * config.hidden1, config.hidden2, &mut rng),
            b2: DVector::zeros(config.hidden2),
            w3: xavier(config.hidden2, 3, &mut rng),
            b3: DVector::zeros(3),
        })
    }

    pub fn cond_width(&self) -> usize {
        self.cond_width
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_width(&self) -> usize {
        self.cond_width
            + 3 * (2 * self.config.position_frequencies + 1)
            + 2 * self.config.time_frequencies + 1
    }

    fn build_input(
        &self,
        t: f64,
        positions: &[Vec3],
        conditioning: &ConditioningMatrix,
    ) -> Result<DMatrix<f64>> {
        if conditioning.rows() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} conditioning rows for {} points",
                conditioning.rows(),
                positions.len()
            )));
        }
        if conditioning.width() != self.cond_width {
            return Err(Error::ShapeMismatch(format!(
                "conditioning width {} vs model {}",
                conditioning.width(),
                self.cond_width
            )));
        }
        let n = positions.len();
        let cw = self.cond_width;
        let lp = self.config.position_frequencies;
        let pos_block = 2 * lp + 1;
        let t_emb = encode_scalar(t, self.config.time_frequencies);
        let mut x = DMatrix::zeros(n, self.input_width());
        x.view_mut((0, 0), (n, cw)).copy_from(conditioning.matrix());
        for r in 0..n {
            for axis in 0..3 {
                let enc = encode_scalar(positions[r][axis], lp);
                for (j, &e) in enc.iter().enumerate() {
                    x[(r, cw + axis * pos_block + j)] = e;
                }
            }
            for (j, &e) in t_emb.iter().enumerate() {
                x[(r, cw + 3 * pos_block + j)] = e;
            }
        }
        Ok(x)
    }

    fn forward_from_input(&self, x: &DMatrix<f64>) -> Forward {
        let n = x.nrows();
        let h1 = self.config.hidden1;
        let mut a = x * &self.w1;
        add_row_broadcast(&mut a, &self.b1);
        a.apply(|v| *v = v.tanh());

        let mut context = RowDVector::zeros(h1);
        for c in 0..h1 {
            context[c] = a.column(c).sum() / n as f64;
        }
        let mut a2 = DMatrix::zeros(n, 2 * h1);
        a2.view_mut((0, 0), (n, h1)).copy_from(&a);
        for r in 0..n {
            for c in 0..h1 {
                a2[(r, h1 + c)] = context[c];
            }
        }

        let mut b = &a2 * &self.w2;
        add_row_broadcast(&mut b, &self.b2);
        b.apply(|v| *v = v.tanh());

        let mut v = &b * &self.w3;
        add_row_broadcast(&mut v, &self.b3);
        if let Some(skip) = &self.config.skip {
            for r in 0..n {
                for axis in 0..3 {
                    v[(r, axis)] += x[(r, skip.offset + axis * skip.stride)];
                }
            }
        }

        Forward { a, a2, b, v }
    }

    /// Loss and parameter gradients on one sample (full backward pass
    /// through the mean pooling).
    pub fn loss_and_gradients(&self, sample: &TrainingSample) -> Result<(f64, MlpGradients)> {
        let x = self.build_input(sample.t, &sample.positions, &sample.conditioning)?;
        let fwd = self.forward_from_input(&x);
        let n = x.nrows();
        let h1 = self.config.hidden1;

        let mut diff = fwd.v.clone();
        for r in 0..n {
            diff[(r, 0)] -= sample.target[r].x;
            diff[(r, 1)] -= sample.target[r].y;
            diff[(r, 2)] -= sample.target[r].z;
        }
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / (3.0 * n as f64);

        let d_v = diff.map(|v| 2.0 * v / (3.0 * n as f64));
        let g_w3 = fwd.b.transpose() * &d_v;
        let g_b3 = column_sums(&d_v);
        let d_b = &d_v * self.w3.transpose();
        let d_z2 = d_b.zip_map(&fwd.b, |g, b| g * (1.0 - b * b));
        let g_w2 = fwd.a2.transpose() * &d_z2;
        let g_b2 = column_sums(&d_z2);
        let d_a2 = &d_z2 * self.w2.transpose();

        // Mean-pool backward: context column gradients spread uniformly.
        let mut d_a = d_a2.view((0, 0), (n, h1)).into_owned();
        for c in 0..h1 {
            let pooled: f64 = d_a2.column(h1 + c).sum() / n as f64;
            for r in 0..n {
                d_a[(r, c)] += pooled;
            }
        }
        let d_z1 = d_a.zip_map(&fwd.a, |g, a| g * (1.0 - a * a));
        let g_w1 = x.transpose() * &d_z1;
        let g_b1 = column_sums(&d_z1);

        Ok((
            loss,
            MlpGradients {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
                w3: g_w3,
                b3: g_b3,
            },
        ))
    }

    pub fn loss(&self, sample: &TrainingSample) -> Result<f64> {
        let x = self.build_input(sample.t, &sample.positions, &sample.conditioning)?;
        let fwd = self.forward_from_input(&x);
        let n = x.nrows();
        let mut sum = 0.0;
        for r in 0..n {
            sum += (fwd.v[(r, 0)] - sample.target[r].x).powi(2)
                + (fwd.v[(r, 1)] - sample.target[r].y).powi(2)
                + (fwd.v[(r, 2)] - sample.target[r].z).powi(2);
        }
        Ok(sum / (3.0 * n as f64))
    }

    pub fn apply_gradients(&mut self, grads: &MlpGradients, learning_rate: f64) {
        self.w1 -= &grads.w1 * learning_rate;
        self.b1 -= &grads.b1 * learning_rate;
        self.w2 -= &grads.w2 * learning_rate;
        self.b2 -= &grads.b2 * learning_rate;
        self.w3 -= &grads.w3 * learning_rate;
        self.b3 -= &grads.b3 * learning_rate;
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    /// Parameters flattened in a fixed order (column-major per matrix).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.b2.as_slice());
        out.extend_from_slice(self.w3.as_slice());
        out.extend_from_slice(self.b3.as_slice());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters provided, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0usize;
        for seg in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ] {
            seg.copy_from_slice(&flat[offset..offset + seg.len()]);
            offset += seg.len();
        }
        Ok(())
    }

    fn nudge_param(&mut self, index: usize, delta: f64) {
        let mut offset = 0usize;
        for seg in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ] {
            if index < offset + seg.len() {
                seg[index - offset] += delta;
                return;
            }
            offset += seg.len();
        }
        unreachable!("parameter index out of range");
    }

    /// Serializes the model: text header, then the parameter blob as
    /// little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (skip_offset, skip_stride) = match &self.config.skip {
            Some(s) => (s.offset as i64, s.stride as i64),
            None => (-1, -1),
        };
        let header = format!(
            "fmpose-checkpoint v2\ncond_width {}\nhidden1 {}\nhidden2 {}\ntime_frequencies {}\nposition_frequencies {}\nseed {}\nskip {} {}\nparams {}\n",
            self.cond_width,
            self.config.hidden1,
            self.config.hidden2,
            self.config.time_frequencies,
            self.config.position_frequencies,
            self.config.seed,
            skip_offset,
            skip_stride,
            self.param_count()
        );
        let mut bytes = header.into_bytes();
        for v in self.flatten_params() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: "<checkpoint>".into(),
            line,
            message: message.into(),
        };
        // Header: 9 newline-terminated lines, then the blob.
        let mut offset = 0usize;
        let mut lines = Vec::new();
        for line_no in 0..9 {
            let rest = &bytes[offset..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| parse_err(line_no + 1, "truncated header"))?;
            lines.push(
                std::str::from_utf8(&rest[..end])
                    .map_err(|_| parse_err(line_no + 1, "header is not utf-8"))?
                    .to_string(),
            );
            offset += end + 1;
        }
        if lines[0] != "fmpose-checkpoint v2" {
            return Err(parse_err(1, "unknown checkpoint version"));
        }
        let field = |i: usize, key: &str| -> Result<u64> {
            let parts: Vec<&str> = lines[i].split_whitespace().collect();
            if parts.len() != 2 || parts[0] != key {
                return Err(parse_err(i + 1, &format!("expected '{key} <value>'")));
            }
            parts[1]
                .parse()
                .map_err(|_| parse_err(i + 1, "invalid integer"))
        };
        let cond_width = field(1, "cond_width")? as usize;
        let hidden1 = field(2, "hidden1")? as usize;
        let hidden2 = field(3, "hidden2")? as usize;
        let time_frequencies = field(4, "time_frequencies")? as usize;
        let position_frequencies = field(5, "position_frequencies")? as usize;
        let seed = field(6, "seed")?;
        let skip_parts: Vec<&str> = lines[7].split_whitespace().collect();
        if skip_parts.len() != 3 || skip_parts[0] != "skip" {
            return Err(parse_err(8, "expected 'skip <offset> <stride>'"));
        }
        let skip_offset: i64 = skip_parts[1]
            .parse()
            .map_err(|_| parse_err(8, "invalid skip offset"))?;
        let skip_stride: i64 = skip_parts[2]
            .parse()
            .map_err(|_| parse_err(8, "invalid skip stride"))?;
        let skip = if skip_offset >= 0 {
            Some(SkipSpec {
                offset: skip_offset as usize,
                stride: skip_stride as usize,
            })
        } else {
            None
        };
        let count = field(8, "params")? as usize;

        let blob = &bytes[offset..];
        if blob.len() != count * 8 {
            return Err(parse_err(9, "parameter blob size mismatch"));
        }
        let mut params = Vec::with_capacity(count);
        for chunk in blob.chunks_exact(8) {
            params.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let mut model = MlpVelocityModel::new(
            cond_width,
            MlpConfig {
                hidden1,
                hidden2,
                time_frequencies,
                position_frequencies,
                seed,
                skip,
            },
        )?;
        model.set_params(&params)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }
}

impl VelocityModel for MlpVelocityModel {
    fn velocity(
        &self,
        t: f64,
        positions: &[Vec3],
        conditioning: &ConditioningMatrix,
    ) -> Result<Vec<Vec3>> {
        let x = self.build_input(t, positions, conditioning)?;
        let fwd = self.forward_from_input(&x);
        Ok((0..positions.len())
            .map(|r| Vec3::new(fwd.v[(r, 0)], fwd.v[(r, 1)], fwd.v[(r, 2)]))
            .collect())
    }
}

struct Forward {
    a: DMatrix<f64>,
    a2: DMatrix<f64>,
    b: DMatrix<f64>,
    v: DMatrix<f64>,
}

fn add_row_broadcast(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for c in 0..m.ncols() {
        let b = bias[c];
        for r in 0..m.nrows() {
            m[(r, c)] += b;
        }
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |c, _| m.column(c).sum())
}

/// Compares analytic gradients against central finite differences of the
/// loss over a seeded random subset of parameters; returns the maximum
/// relative error.
pub fn gradient_check(
    model: &MlpVelocityModel,
    sample: &TrainingSample,
    epsilon: f64,
    subset: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (_, grads) = model.loss_and_gradients(sample)?;
    let analytic = grads.to_flat();
    let total = model.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for _ in 0..subset.min(total) {
        let idx = rng.gen_range(0..total);
        probe.nudge_param(idx, epsilon);
        let hi = probe.loss(sample)?;
        probe.nudge_param(idx, -2.0 * epsilon);
        let lo = probe.loss(sample)?;
        probe.nudge_param(idx, epsilon);
        let numeric = (hi - lo) / (2.0 * epsilon);
        let denom = analytic[idx].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[idx] - numeric).abs() / denom);
    }
    Ok(worst)
}
