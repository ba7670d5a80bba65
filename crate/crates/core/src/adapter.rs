//! Measurement-noise adapter: a two-layer dilated causal 1-D CNN over a
//! window of raw IMU samples, followed by an affine layer producing
//! `z = [z_lat, z_up]` and the covariance
//! `N = diag(sigma_lat^2 10^(beta tanh z_lat), sigma_up^2 10^(beta tanh z_up))`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ImuSample, MeasurementNoise};

pub const CHANNELS: usize = 6;
pub const HIDDEN: usize = 32;
pub const KERNEL: usize = 5;
pub const DILATION1: usize = 1;
pub const DILATION2: usize = 3;
pub const OUTPUTS: usize = 2;
/// Number of IMU samples seen by the adapter.
pub const WINDOW: usize = 15;

const FORMAT_TAG: &str = "aidr-adapter";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("cannot access weight file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported weight file version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> WeightsError {
    WeightsError::Parse { line, msg: msg.into() }
}

/// Dilated causal convolution with kernel size [`KERNEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub dilation: usize,
    /// `out_ch x in_ch x KERNEL`, row-major. Tap `KERNEL - 1` multiplies the
    /// newest sample.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            dilation,
            kernel: vec![0.0; out_ch * in_ch * KERNEL],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn check(&self, name: &str) -> Result<(), WeightsError> {
        if self.kernel.len() != self.out_ch * self.in_ch * KERNEL || self.bias.len() != self.out_ch {
            return Err(WeightsError::Shape(format!(
                "{name}: kernel has {} values and bias {} for {}x{}x{KERNEL}",
                self.kernel.len(),
                self.bias.len(),
                self.out_ch,
                self.in_ch
            )));
        }
        if self.dilation == 0 {
            return Err(WeightsError::Shape(format!("{name}: dilation must be positive")));
        }
        Ok(())
    }

    /// Output at time `t` of an input stored as `in_ch` rows of `len` samples.
    /// Samples before index 0 read as zero.
    fn output_at(&self, input: &[f64], len: usize, t: usize, out: &mut [f64]) {
        for (o, out_o) in out.iter_mut().enumerate().take(self.out_ch) {
            let mut acc = self.bias[o];
            for c in 0..self.in_ch {
                let row = &input[c * len..(c + 1) * len];
                let taps = &self.kernel[(o * self.in_ch + c) * KERNEL..(o * self.in_ch + c + 1) * KERNEL];
                for (k, w) in taps.iter().enumerate() {
                    let back = (KERNEL - 1 - k) * self.dilation;
                    if back <= t {
                        acc += w * row[t - back];
                    }
                }
            }
            *out_o = acc;
        }
    }
}

/// Per-channel standardization of the raw `[omega; accel]` input.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }
}

impl Normalization {
    /// Channel statistics over all given samples. Channels with (near) zero
    /// spread keep a unit scale.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a ImuSample>) -> Self {
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let mut n = 0usize;
        for s in samples {
            for (c, v) in s.channels().iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        let mut out = Self::default();
        for c in 0..CHANNELS {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            out.mean[c] = mean;
            out.std[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out
    }
}

/// Weights of the adapter network plus its input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterWeights {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    /// `OUTPUTS x HIDDEN`, row-major.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub normalization: Normalization,
}

/// Units switched off during a training pass; surviving units are rescaled
/// by `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub conv1: [bool; HIDDEN],
    pub conv2: [bool; HIDDEN],
    pub scale: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Self {
        let mut conv1 = [true; HIDDEN];
        let mut conv2 = [true; HIDDEN];
        for keep in conv1.iter_mut().chain(conv2.iter_mut()) {
            *keep = rng.random::<f64>() >= p;
        }
        Self {
            conv1,
            conv2,
            scale: 1.0 / (1.0 - p),
        }
    }
}

/// Covariance scaling applied to the network output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseScale {
    pub beta: f64,
    pub sigma_lat: f64,
    pub sigma_up: f64,
}

impl Default for NoiseScale {
    fn default() -> Self {
        Self {
            beta: 3.0,
            sigma_lat: crate::model::SIGMA_LAT,
            sigma_up: crate::model::SIGMA_UP,
        }
    }
}

impl NoiseScale {
    pub fn from_config(cfg: &crate::config::FilterConfig) -> Self {
        Self {
            beta: cfg.beta,
            sigma_lat: cfg.sigma_lat,
            sigma_up: cfg.sigma_up,
        }
    }

    pub fn covariance(&self, z: [f64; 2]) -> MeasurementNoise {
        MeasurementNoise {
            lat: self.sigma_lat * self.sigma_lat * 10f64.powf(self.beta * z[0].tanh()),
            up: self.sigma_up * self.sigma_up * 10f64.powf(self.beta * z[1].tanh()),
        }
    }
}

/// A full window of samples, oldest first, or shorter at sequence start.
#[derive(Clone, Copy, Debug)]
pub struct ImuWindow<'a> {
    samples: &'a [ImuSample],
}

impl<'a> ImuWindow<'a> {
    /// Window ending at (and including) sample `n`.
    pub fn ending_at(samples: &'a [ImuSample], n: usize) -> Self {
        let start = (n + 1).saturating_sub(WINDOW);
        Self {
            samples: &samples[start..=n],
        }
    }

    pub fn new(samples: &'a [ImuSample]) -> Self {
        assert!(samples.len() <= WINDOW, "window holds at most {WINDOW} samples");
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl AdapterWeights {
    /// All-zero weights of the canonical architecture.
    pub fn zeros() -> Self {
        Self {
            conv1: ConvLayer::zeros(CHANNELS, HIDDEN, DILATION1),
            conv2: ConvLayer::zeros(HIDDEN, HIDDEN, DILATION2),
            fc_weight: vec![0.0; OUTPUTS * HIDDEN],
            fc_bias: vec![0.0; OUTPUTS],
            normalization: Normalization::default(),
        }
    }

    /// Kernels uniform in `+-1/sqrt(fan_in)`, conv biases likewise, and a
    /// zero affine layer so the untrained adapter returns `z = 0`.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros();
        for layer in [&mut w.conv1, &mut w.conv2] {
            let bound = 1.0 / ((layer.in_ch * KERNEL) as f64).sqrt();
            for v in layer.kernel.iter_mut().chain(layer.bias.iter_mut()) {
                *v = rng.random_range(-bound..bound);
            }
        }
        w
    }

    /// Number of trainable scalars; normalization statistics excluded.
    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.fc_weight.len() + self.fc_bias.len()
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        self.conv1.check("conv1")?;
        self.conv2.check("conv2")?;
        if (self.conv1.in_ch, self.conv1.out_ch, self.conv1.dilation) != (CHANNELS, HIDDEN, DILATION1) {
            return Err(WeightsError::Shape(format!(
                "conv1 must be {CHANNELS}->{HIDDEN} with dilation {DILATION1}, got {}->{} with dilation {}",
                self.conv1.in_ch, self.conv1.out_ch, self.conv1.dilation
            )));
        }
        if (self.conv2.in_ch, self.conv2.out_ch, self.conv2.dilation) != (HIDDEN, HIDDEN, DILATION2) {
            return Err(WeightsError::Shape(format!(
                "conv2 must be {HIDDEN}->{HIDDEN} with dilation {DILATION2}, got {}->{} with dilation {}",
                self.conv2.in_ch, self.conv2.out_ch, self.conv2.dilation
            )));
        }
        if self.fc_weight.len() != OUTPUTS * HIDDEN || self.fc_bias.len() != OUTPUTS {
            return Err(WeightsError::Shape(format!(
                "fc must be {OUTPUTS}x{HIDDEN} plus {OUTPUTS} biases, got {} and {}",
                self.fc_weight.len(),
                self.fc_bias.len()
            )));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(WeightsError::Shape("normalization std must be positive".into()));
        }
        Ok(())
    }

    /// Raw network output `z` for one window.
    pub fn logits(&self, window: &ImuWindow<'_>, dropout: Option<&DropoutMask>) -> [f64; 2] {
        // normalized input, left-padded with zeros to WINDOW samples
        let mut input = [0.0; CHANNELS * WINDOW];
        let pad = WINDOW - window.len();
        for (i, s) in window.samples.iter().enumerate() {
            for (c, v) in s.channels().iter().enumerate() {
                input[c * WINDOW + pad + i] =
                    (v - self.normalization.mean[c]) / self.normalization.std[c];
            }
        }

        // conv1 is only needed at the times conv2 reads at the last step
        let last = WINDOW - 1;
        let mut hidden1 = [0.0; HIDDEN * WINDOW];
        let mut col = [0.0; HIDDEN];
        for k in 0..KERNEL {
            let back = k * DILATION2;
            if back > last {
                break;
            }
            let t = last - back;
            self.conv1.output_at(&input, WINDOW, t, &mut col);
            for (o, v) in col.iter().enumerate() {
                let mut a = v.max(0.0);
                if let Some(mask) = dropout {
                    a = if mask.conv1[o] { a * mask.scale } else { 0.0 };
                }
                hidden1[o * WINDOW + t] = a;
            }
        }

        let mut hidden2 = [0.0; HIDDEN];
        self.conv2.output_at(&hidden1, WINDOW, last, &mut hidden2);
        for (o, v) in hidden2.iter_mut().enumerate() {
            *v = v.max(0.0);
            if let Some(mask) = dropout {
                *v = if mask.conv2[o] { *v * mask.scale } else { 0.0 };
            }
        }

        let mut z = [0.0; 2];
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &self.fc_weight[j * HIDDEN..(j + 1) * HIDDEN];
            *zj = self.fc_bias[j] + row.iter().zip(hidden2.iter()).map(|(w, h)| w * h).sum::<f64>();
        }
        z
    }

    /// Measurement covariance for one window.
    pub fn forward(&self, window: &ImuWindow<'_>, scale: &NoiseScale, dropout: Option<&DropoutMask>) -> MeasurementNoise {
        scale.covariance(self.logits(window, dropout))
    }

    /// Covariance for every propagation step of a sequence: entry `k` is the
    /// covariance of the update following sample `k`, computed from the
    /// window ending at sample `k`.
    pub fn noise_sequence(
        &self,
        samples: &[ImuSample],
        scale: &NoiseScale,
        dropout: Option<&DropoutMask>,
    ) -> Vec<MeasurementNoise> {
        let steps = samples.len().saturating_sub(1);
        (0..steps)
            .map(|k| self.forward(&ImuWindow::ending_at(samples, k), scale, dropout))
            .collect()
    }

    /// Raw `z` for every propagation step, as in [`Self::noise_sequence`].
    pub fn logit_sequence(&self, samples: &[ImuSample], dropout: Option<&DropoutMask>) -> Vec<[f64; 2]> {
        let steps = samples.len().saturating_sub(1);
        (0..steps)
            .map(|k| self.logits(&ImuWindow::ending_at(samples, k), dropout))
            .collect()
    }

    /// Trainable parameters flattened in file order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.conv1.kernel);
        v.extend_from_slice(&self.conv1.bias);
        v.extend_from_slice(&self.conv2.kernel);
        v.extend_from_slice(&self.conv2.bias);
        v.extend_from_slice(&self.fc_weight);
        v.extend_from_slice(&self.fc_bias);
        v
    }

    /// Inverse of [`Self::to_flat`]; keeps the current normalization.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut rest = flat;
        for dst in [
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn to_text(&self) -> String {
        let mut doc = TensorDoc::new();
        self.write_sections(&mut doc);
        doc.render()
    }

    pub(crate) fn write_sections(&self, doc: &mut TensorDoc) {
        doc.header(format!("window {WINDOW}"));
        doc.header(format!(
            "conv1 in={} out={} kernel={KERNEL} dilation={}",
            self.conv1.in_ch, self.conv1.out_ch, self.conv1.dilation
        ));
        doc.header(format!(
            "conv2 in={} out={} kernel={KERNEL} dilation={}",
            self.conv2.in_ch, self.conv2.out_ch, self.conv2.dilation
        ));
        doc.header(format!("fc in={HIDDEN} out={OUTPUTS}"));
        doc.section("normalization.mean", &[CHANNELS], &self.normalization.mean);
        doc.section("normalization.std", &[CHANNELS], &self.normalization.std);
        doc.section(
            "conv1.kernel",
            &[self.conv1.out_ch, self.conv1.in_ch, KERNEL],
            &self.conv1.kernel,
        );
        doc.section("conv1.bias", &[self.conv1.out_ch], &self.conv1.bias);
        doc.section(
            "conv2.kernel",
            &[self.conv2.out_ch, self.conv2.in_ch, KERNEL],
            &self.conv2.kernel,
        );
        doc.section("conv2.bias", &[self.conv2.out_ch], &self.conv2.bias);
        doc.section("fc.weight", &[OUTPUTS, HIDDEN], &self.fc_weight);
        doc.section("fc.bias", &[OUTPUTS], &self.fc_bias);
    }

    pub fn from_text(text: &str) -> Result<Self, WeightsError> {
        let doc = TensorDoc::parse(text)?;
        Self::from_doc(&doc)
    }

    pub(crate) fn from_doc(doc: &TensorDoc) -> Result<Self, WeightsError> {
        let window = doc.header_value("window")?;
        if window.trim() != WINDOW.to_string() {
            return Err(WeightsError::Shape(format!("window {window} (expected {WINDOW})")));
        }
        let conv1 = parse_layer_header(doc, "conv1")?;
        let conv2 = parse_layer_header(doc, "conv2")?;
        let (fc_in, fc_out) = {
            let h = doc.header_value("fc")?;
            let kv = key_values(&h, doc.header_line("fc"))?;
            (get_kv(&kv, "in", doc.header_line("fc"))?, get_kv(&kv, "out", doc.header_line("fc"))?)
        };
        if (fc_in, fc_out) != (HIDDEN, OUTPUTS) {
            return Err(WeightsError::Shape(format!("fc {fc_in}->{fc_out} (expected {HIDDEN}->{OUTPUTS})")));
        }

        let mut w = AdapterWeights {
            conv1: ConvLayer::zeros(conv1.0, conv1.1, conv1.2),
            conv2: ConvLayer::zeros(conv2.0, conv2.1, conv2.2),
            ..AdapterWeights::zeros()
        };
        w.validate()?;
        w.normalization.mean.copy_from_slice(doc.tensor("normalization.mean", &[CHANNELS])?);
        w.normalization.std.copy_from_slice(doc.tensor("normalization.std", &[CHANNELS])?);
        w.conv1.kernel = doc.tensor("conv1.kernel", &[HIDDEN, CHANNELS, KERNEL])?.to_vec();
        w.conv1.bias = doc.tensor("conv1.bias", &[HIDDEN])?.to_vec();
        w.conv2.kernel = doc.tensor("conv2.kernel", &[HIDDEN, HIDDEN, KERNEL])?.to_vec();
        w.conv2.bias = doc.tensor("conv2.bias", &[HIDDEN])?.to_vec();
        w.fc_weight = doc.tensor("fc.weight", &[OUTPUTS, HIDDEN])?.to_vec();
        w.fc_bias = doc.tensor("fc.bias", &[OUTPUTS])?.to_vec();
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        write_file(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_text(&read_file(path.as_ref())?)
    }
}

/// Convenience wrapper matching the free-function style of the other modules.
pub fn load_weights(path: impl AsRef<Path>) -> Result<AdapterWeights, WeightsError> {
    AdapterWeights::load(path)
}

pub fn save_weights(w: &AdapterWeights, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    w.save(path)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), WeightsError> {
    std::fs::write(path, text).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_file(path: &Path) -> Result<String, WeightsError> {
    std::fs::read_to_string(path).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn key_values(text: &str, line: usize) -> Result<Vec<(String, String)>, WeightsError> {
    text.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(line, format!("expected key=value, got `{tok}`")))
        })
        .collect()
}

fn get_kv(kv: &[(String, String)], key: &str, line: usize) -> Result<usize, WeightsError> {
    let (_, v) = kv
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| parse_err(line, format!("missing `{key}`")))?;
    v.parse().map_err(|_| parse_err(line, format!("`{key}` is not an integer: {v}")))
}

fn parse_layer_header(doc: &TensorDoc, name: &str) -> Result<(usize, usize, usize), WeightsError> {
    let line = doc.header_line(name);
    let kv = key_values(&doc.header_value(name)?, line)?;
    let kernel = get_kv(&kv, "kernel", line)?;
    if kernel != KERNEL {
        return Err(WeightsError::Shape(format!("{name}: kernel size {kernel} (expected {KERNEL})")));
    }
    Ok((get_kv(&kv, "in", line)?, get_kv(&kv, "out", line)?, get_kv(&kv, "dilation", line)?))
}

/// Versioned text container: a tag line, header lines, then tensors.
///
/// ```text
/// aidr-adapter v1
/// window 15
/// [fc.bias] 2
/// 0e0
/// 0e0
/// ```
#[derive(Clone, Debug, Default)]
pub(crate) struct TensorDoc {
    headers: Vec<(String, String, usize)>,
    sections: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl TensorDoc {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn header(&mut self, line: String) {
        let (k, v) = line.split_once(' ').unwrap_or((&line, ""));
        self.headers.push((k.to_string(), v.to_string(), 0));
    }

    pub(crate) fn section(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        self.sections.push((name.to_string(), shape.to_vec(), values.to_vec()));
    }

    pub(crate) fn render(&self) -> String {
        let mut out = format!("{FORMAT_TAG} v{FORMAT_VERSION}\n");
        for (k, v, _) in &self.headers {
            let _ = writeln!(out, "{k} {v}");
        }
        for (name, shape, values) in &self.sections {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "[{name}] {}", dims.join(" "));
            let row = *shape.last().unwrap_or(&1).max(&1);
            for chunk in values.chunks(row) {
                let cells: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
        out
    }

    pub(crate) fn parse(text: &str) -> Result<Self, WeightsError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(FORMAT_TAG) {
            return Err(parse_err(1, format!("missing `{FORMAT_TAG}` tag")));
        }
        let version = parts.next().unwrap_or("");
        if version != format!("v{FORMAT_VERSION}") {
            return Err(WeightsError::Version {
                found: version.to_string(),
            });
        }

        let mut doc = TensorDoc::new();
        let mut current: Option<(String, Vec<usize>, Vec<f64>, usize)> = None;
        let mut last_line = 1;
        for (no, line) in lines {
            last_line = no;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                if let Some(done) = current.take() {
                    doc.finish_section(done)?;
                }
                let (name, dims) = rest
                    .split_once(']')
                    .ok_or_else(|| parse_err(no, "unterminated section name"))?;
                let shape = dims
                    .split_whitespace()
                    .map(|d| d.parse::<usize>().map_err(|_| parse_err(no, format!("bad dimension `{d}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                current = Some((name.to_string(), shape, Vec::new(), no));
            } else if let Some((_, _, values, _)) = current.as_mut() {
                for tok in line.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| parse_err(no, format!("not a number: `{tok}`")))?;
                    values.push(v);
                }
            } else {
                let (k, v) = line.split_once(' ').unwrap_or((line, ""));
                doc.headers.push((k.to_string(), v.to_string(), no));
            }
        }
        if let Some(done) = current.take() {
            doc.finish_section(done).map_err(|e| match e {
                WeightsError::Parse { msg, .. } => parse_err(last_line, msg),
                other => other,
            })?;
        }
        Ok(doc)
    }

    fn finish_section(&mut self, (name, shape, values, line): (String, Vec<usize>, Vec<f64>, usize)) -> Result<(), WeightsError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(parse_err(
                line,
                format!("section [{name}] declares {expected} values but holds {}", values.len()),
            ));
        }
        self.sections.push((name, shape, values));
        Ok(())
    }

    pub(crate) fn header_value(&self, key: &str) -> Result<String, WeightsError> {
        self.headers
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.clone())
            .ok_or_else(|| parse_err(0, format!("missing header `{key}`")))
    }

    fn header_line(&self, key: &str) -> usize {
        self.headers.iter().find(|(k, _, _)| k == key).map_or(0, |h| h.2)
    }

    pub(crate) fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f64], WeightsError> {
        let (_, s, v) = self
            .sections
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| parse_err(0, format!("missing section [{name}]")))?;
        if s != shape {
            return Err(WeightsError::Shape(format!("[{name}] has shape {s:?}, expected {shape:?}")));
        }
        Ok(v)
    }

    pub(crate) fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _, _)| n == name)
    }
}
