//! Trajectories, block-Hankel matrices and their past/future partition.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, RowSpace};

/// A finite multivariate time series. Samples are stored row-wise with the
/// input channels first; `channel_map[k]` is the caller-facing index of the
/// `k`-th stored channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: DMatrix<f64>,
    inputs: usize,
    channel_map: Vec<usize>,
}

impl Trajectory {
    /// `data` is `T × q` with the first `inputs` columns being inputs.
    pub fn new(data: DMatrix<f64>, inputs: usize) -> Result<Self> {
        let (t, q) = data.shape();
        if t == 0 || q == 0 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs T >= 1 and q >= 1 (got T={t}, q={q})"
            )));
        }
        if inputs > q {
            return Err(Error::InvalidArgument(format!(
                "{inputs} inputs declared for {q} channels"
            )));
        }
        Ok(Trajectory {
            data,
            inputs,
            channel_map: (0..q).collect(),
        })
    }

    /// Builds from separate input (`T × m`) and output (`T × p`) blocks.
    pub fn from_io(u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::dim(format!(
                "input has {} samples, output has {}",
                u.nrows(),
                y.nrows()
            )));
        }
        let t = u.nrows();
        let (m, p) = (u.ncols(), y.ncols());
        let data = DMatrix::from_fn(t, m + p, |i, j| if j < m { u[(i, j)] } else { y[(i, j - m)] });
        Trajectory::new(data, m)
    }

    /// Builds from samples in arbitrary channel order; `input_channels` names
    /// the columns of `data` that are inputs.
    pub fn with_input_channels(data: &DMatrix<f64>, input_channels: &[usize]) -> Result<Self> {
        let q = data.ncols();
        let mut seen = vec![false; q];
        for &c in input_channels {
            if c >= q || seen[c] {
                return Err(Error::InvalidArgument(format!(
                    "bad input channel index {c} for {q} channels"
                )));
            }
            seen[c] = true;
        }
        let channel_map: Vec<usize> = input_channels
            .iter()
            .copied()
            .chain((0..q).filter(|c| !seen[*c]))
            .collect();
        let stored = DMatrix::from_fn(data.nrows(), q, |i, j| data[(i, channel_map[j])]);
        let mut w = Trajectory::new(stored, input_channels.len())?;
        w.channel_map = channel_map;
        Ok(w)
    }

    /// Inverse of [`Trajectory::from_stacked`]-style layout: `v = (w(0); w(1); …)`.
    pub fn from_stacked(v: &DVector<f64>, channels: usize, inputs: usize) -> Result<Self> {
        if channels == 0 || v.len() % channels != 0 {
            return Err(Error::dim(format!(
                "stacked vector of length {} is not a multiple of {channels}",
                v.len()
            )));
        }
        let t = v.len() / channels;
        Trajectory::new(DMatrix::from_fn(t, channels, |i, j| v[i * channels + j]), inputs)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.channels() - self.inputs
    }

    pub fn channel_map(&self) -> &[usize] {
        &self.channel_map
    }

    /// `T × q` sample matrix, inputs first.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        self.data.columns(0, self.inputs).into_owned()
    }

    pub fn output_matrix(&self) -> DMatrix<f64> {
        self.data.columns(self.inputs, self.outputs()).into_owned()
    }

    /// Samples `start .. start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::HorizonExceedsData {
                depth: start + len,
                len: self.len(),
            });
        }
        Ok(Trajectory {
            data: self.data.rows(start, len).into_owned(),
            inputs: self.inputs,
            channel_map: self.channel_map.clone(),
        })
    }

    /// `(w(0); w(1); …; w(T−1))` with each sample inputs-first.
    pub fn stacked(&self) -> DVector<f64> {
        let q = self.channels();
        DVector::from_fn(self.len() * q, |k, _| self.data[(k / q, k % q)])
    }

    /// `(u(0); …; u(T−1))`.
    pub fn stacked_inputs(&self) -> DVector<f64> {
        let m = self.inputs;
        DVector::from_fn(self.len() * m, |k, _| self.data[(k / m, k % m)])
    }

    /// `(y(0); …; y(T−1))`.
    pub fn stacked_outputs(&self) -> DVector<f64> {
        let (m, p) = (self.inputs, self.outputs());
        DVector::from_fn(self.len() * p, |k, _| self.data[(k / p, m + k % p)])
    }

    pub fn column_rms(&self, channel: usize) -> f64 {
        let col = self.data.column(channel);
        (col.norm_squared() / col.len() as f64).sqrt()
    }

    pub(crate) fn data_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    fn header(&self) -> Vec<String> {
        (0..self.inputs)
            .map(|i| format!("u{}", i + 1))
            .chain((0..self.outputs()).map(|i| format!("y{}", i + 1)))
            .collect()
    }

    /// CSV with header `u1..um,y1..yp`, one row per sample.
    pub fn to_csv_string(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in self.data.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let inputs = headers.iter().take_while(|h| h.starts_with('u')).count();
        if headers.iter().skip(inputs).any(|h| !h.starts_with('y')) {
            return Err(Error::Parse("trajectory header must be u1..um,y1..yp".into()));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            for cell in rec.iter() {
                values.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{cell:?}: {e}")))?,
                );
            }
            rows += 1;
        }
        Trajectory::new(DMatrix::from_row_slice(rows, headers.len(), &values), inputs)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::from_csv_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let env = TrajectoryEnvelope {
            t: self.len(),
            q: self.channels(),
            m: self.inputs,
            data: crate::linalg::serde_rows::to_rows(&self.data),
        };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: TrajectoryEnvelope = serde_json::from_str(text)?;
        let data = crate::linalg::serde_rows::from_rows(&env.data, env.q).map_err(Error::Parse)?;
        if data.shape() != (env.t, env.q) {
            return Err(Error::Parse(format!(
                "envelope declares {}x{} but data is {}x{}",
                env.t,
                env.q,
                data.nrows(),
                data.ncols()
            )));
        }
        Trajectory::new(data, env.m)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryEnvelope {
    #[serde(rename = "T")]
    t: usize,
    q: usize,
    m: usize,
    data: Vec<Vec<f64>>,
}

/// Model class `L^{q,n}_{m,ℓ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemClass {
    pub channels: usize,
    pub inputs: usize,
    pub order: usize,
    pub lag: usize,
}

impl SystemClass {
    pub fn new(channels: usize, inputs: usize, order: usize, lag: usize) -> Result<Self> {
        if inputs > channels {
            return Err(Error::InvalidArgument("more inputs than channels".into()));
        }
        let p = channels - inputs;
        if p > 0 && (lag > order || order > lag * p) {
            return Err(Error::InvalidArgument(format!(
                "need lag <= n <= lag*(q-m); got lag={lag}, n={order}, q-m={p}"
            )));
        }
        Ok(SystemClass {
            channels,
            inputs,
            order,
            lag,
        })
    }

    /// Dimension `mL + n` of the restricted behavior for `L >= lag`.
    pub fn behavior_dim(&self, depth: usize) -> usize {
        self.inputs * depth + self.order
    }
}

/// Block-Hankel matrix of depth `depth`: block column `j` is `(w(j); …; w(j+depth−1))`.
pub fn build_hankel(w: &Trajectory, depth: usize) -> Result<DMatrix<f64>> {
    let t = w.len();
    if depth == 0 {
        return Err(Error::InvalidArgument("Hankel depth must be positive".into()));
    }
    if depth > t {
        return Err(Error::HorizonExceedsData { depth, len: t });
    }
    let q = w.channels();
    let cols = t - depth + 1;
    let d = w.data();
    Ok(DMatrix::from_fn(q * depth, cols, |r, j| d[(j + r / q, r % q)]))
}

/// Hankel matrix of depth `Tini + L` split into past/future input/output blocks.
#[derive(Debug, Clone)]
pub struct HankelPartition {
    pub up: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    tini: usize,
    horizon: usize,
    source: Arc<Trajectory>,
    regressor_rows: OnceLock<Arc<RowSpace>>,
}

fn block_rows(w: &Trajectory, start: usize, count: usize, cols: usize, input: bool) -> DMatrix<f64> {
    let (m, p) = (w.inputs(), w.outputs());
    let (width, offset) = if input { (m, 0) } else { (p, m) };
    let d = w.data();
    DMatrix::from_fn(width * count, cols, |r, j| {
        d[(j + start + r / width, offset + r % width)]
    })
}

impl HankelPartition {
    pub fn new(w: &Trajectory, tini: usize, horizon: usize) -> Result<Self> {
        if tini == 0 || horizon == 0 {
            return Err(Error::InvalidArgument("Tini and L must be positive".into()));
        }
        let depth = tini + horizon;
        if depth > w.len() {
            return Err(Error::HorizonExceedsData { depth, len: w.len() });
        }
        let cols = w.len() - depth + 1;
        Ok(HankelPartition {
            up: block_rows(w, 0, tini, cols, true),
            yp: block_rows(w, 0, tini, cols, false),
            uf: block_rows(w, tini, horizon, cols, true),
            yf: block_rows(w, tini, horizon, cols, false),
            tini,
            horizon,
            source: Arc::new(w.clone()),
            regressor_rows: OnceLock::new(),
        })
    }

    pub fn tini(&self) -> usize {
        self.tini
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn columns(&self) -> usize {
        self.up.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.source.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.source.outputs()
    }

    pub fn channels(&self) -> usize {
        self.source.channels()
    }

    pub fn source(&self) -> &Trajectory {
        &self.source
    }

    /// `(Up; Yp)`.
    pub fn past(&self) -> DMatrix<f64> {
        vstack(&[&self.up, &self.yp])
    }

    /// `(Up; Yp; Uf)`, the regressor of the least-squares predictor.
    pub fn regressor(&self) -> DMatrix<f64> {
        vstack(&[&self.up, &self.yp, &self.uf])
    }

    /// Rows of the future part `H_L` arranged sample-major `(w(Tini); …)` like a stacked trajectory.
    pub fn future_time_major(&self) -> DMatrix<f64> {
        let (m, p) = (self.inputs(), self.outputs());
        let q = m + p;
        DMatrix::from_fn(q * self.horizon, self.columns(), |r, j| {
            let (t, c) = (r / q, r % q);
            if c < m {
                self.uf[(t * m + c, j)]
            } else {
                self.yf[(t * p + c - m, j)]
            }
        })
    }

    /// Rows of the past part arranged sample-major.
    pub fn past_time_major(&self) -> DMatrix<f64> {
        let (m, p) = (self.inputs(), self.outputs());
        let q = m + p;
        DMatrix::from_fn(q * self.tini, self.columns(), |r, j| {
            let (t, c) = (r / q, r % q);
            if c < m {
                self.up[(t * m + c, j)]
            } else {
                self.yp[(t * p + c - m, j)]
            }
        })
    }

    /// Inverse permutation back to `H_{Tini+L}(w)`.
    pub fn reassemble(&self) -> DMatrix<f64> {
        vstack(&[&self.past_time_major(), &self.future_time_major()])
    }

    /// Cached orthonormal row-space basis of `(Up; Yp; Uf)`.
    pub fn regressor_row_space(&self) -> Arc<RowSpace> {
        self.regressor_rows
            .get_or_init(|| Arc::new(RowSpace::new(&self.regressor())))
            .clone()
    }
}

pub(crate) fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Outcome of a persistency-of-excitation rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeCheck {
    pub satisfied: bool,
    pub rank: usize,
    pub required: usize,
}

/// Tests `rank H_depth(w) = m·depth + n` at relative tolerance `tol`.
pub fn check_pe_rank(w: &Trajectory, depth: usize, sys: &SystemClass, tol: f64) -> Result<PeCheck> {
    let h = build_hankel(w, depth)?;
    let rank = numerical_rank(&h, tol);
    let required = sys.behavior_dim(depth);
    Ok(PeCheck {
        satisfied: rank == required,
        rank,
        required,
    })
}
