//! Python module `signkd`. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use signkd::augment::{apply_policy, AugmentPolicy};
use signkd::ctc;
use signkd::data::{synth_samples, LandmarkSequence, SynthConfig};
use signkd::metrics;
use signkd::mslr::{self, MslrConfig};
use signkd::params::ParamStore;
use signkd::quant::{self, QuantizedMslr};
use signkd::textcorr::{self, CorrectOptions, CorruptionSpec};
use signkd::Tensor;

fn err(e: signkd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// CTC negative log-likelihood of `target` and its gradient with respect to
/// the log-probabilities.
#[pyfunction]
fn ctc_loss(logp: Vec<Vec<f64>>, target: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (loss, grad) = ctc::ctc_loss_and_grad(&to_tensor(logp)?, &target).map_err(err)?;
    Ok((loss, to_rows(&grad)))
}

#[pyfunction]
fn greedy_decode(logp: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(ctc::greedy_decode(&to_tensor(logp)?).0)
}

#[pyfunction]
#[pyo3(signature = (logp, width = 10))]
fn beam_decode(logp: Vec<Vec<f64>>, width: usize) -> PyResult<Vec<usize>> {
    Ok(ctc::beam_decode(&to_tensor(logp)?, width).map_err(err)?.0)
}

/// `(substitutions, insertions, deletions, reference_len, wer)` over
/// whitespace-separated tokens.
#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> PyResult<(usize, usize, usize, usize, f64)> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let b = metrics::wer(&r, &h).map_err(err)?;
    Ok((b.substitutions, b.insertions, b.deletions, b.reference_len, b.wer()))
}

#[pyfunction]
fn preprocess(text: &str) -> String {
    textcorr::preprocess(text)
}

#[pyfunction]
#[pyo3(signature = (clean, candidates, seed, substitution = 0.05, deletion = 0.05, insertion = 0.05, shuffle = 0.05, window = 3))]
#[allow(clippy::too_many_arguments)]
fn corrupt(
    clean: Vec<usize>,
    candidates: Vec<usize>,
    seed: u64,
    substitution: f64,
    deletion: f64,
    insertion: f64,
    shuffle: f64,
    window: usize,
) -> PyResult<Vec<usize>> {
    let spec = CorruptionSpec {
        shuffle,
        substitution,
        deletion,
        insertion,
        window,
    };
    Ok(textcorr::corrupt(&clean, &spec, &candidates, seed).map_err(err)?.corrupted)
}

/// Synthetic samples as `(frames, gloss_text, target_ids)` with frames as
/// `[T][keypoints * coords]`.
#[pyfunction]
#[pyo3(signature = (num_samples, vocab_size, seed, keypoints = 138, coords = 2, frames_per_gloss = 16, noise_level = 0.05))]
fn synth(
    num_samples: usize,
    vocab_size: usize,
    seed: u64,
    keypoints: usize,
    coords: usize,
    frames_per_gloss: usize,
    noise_level: f64,
) -> PyResult<Vec<(Vec<Vec<f64>>, String, Vec<usize>)>> {
    let cfg = SynthConfig {
        seed,
        num_samples,
        vocab_size,
        keypoints,
        coords,
        frames_per_gloss,
        noise_level,
        ..SynthConfig::default()
    };
    let (_, samples) = synth_samples(&cfg).map_err(err)?;
    Ok(samples
        .into_iter()
        .map(|s| (to_rows(&s.sequence.to_tensor()), s.gloss, s.target.0))
        .collect())
}

/// Applies the default augmentation policy to `[T][keypoints * coords]` frames.
#[pyfunction]
#[pyo3(signature = (frames, keypoints, coords, seed))]
fn augment(frames: Vec<Vec<f64>>, keypoints: usize, coords: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let t = frames.len();
    let seq = LandmarkSequence::new("py", t, keypoints, coords, frames.concat()).map_err(err)?;
    let out = apply_policy(&seq, &AugmentPolicy::default(), seed).map_err(err)?;
    Ok(to_rows(&out.to_tensor()))
}

/// The convolution + BiLSTM recognizer.
#[pyclass]
struct Mslr {
    config: MslrConfig,
    params: ParamStore,
}

#[pymethods]
impl Mslr {
    #[new]
    #[pyo3(signature = (input_dim, vocab_size, seed, channels = vec![128, 128, 256, 256], strides = vec![1, 1, 2, 2], kernel = 5))]
    fn new(
        input_dim: usize,
        vocab_size: usize,
        seed: u64,
        channels: Vec<usize>,
        strides: Vec<usize>,
        kernel: usize,
    ) -> PyResult<Self> {
        let hidden = channels.last().copied().unwrap_or(0) / 2;
        let config = MslrConfig {
            input_dim,
            vocab_size,
            channels,
            strides,
            kernel,
            hidden,
            ..MslrConfig::default()
        };
        let params = mslr::init_params(&config, seed).map_err(err)?;
        Ok(Self { config, params })
    }

    /// `(conv_logp, bilstm_logp)` for `[T][input_dim]` frames.
    fn forward(&self, frames: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let out = mslr::forward_tensor(&to_tensor(frames)?, &self.params, &self.config).map_err(err)?;
        Ok((to_rows(&out.conv_logp), to_rows(&out.bilstm_logp)))
    }

    fn recognize(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let out = mslr::forward_tensor(&to_tensor(frames)?, &self.params, &self.config).map_err(err)?;
        Ok(ctc::greedy_decode(&out.bilstm_logp).0)
    }

    fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    fn flops(&self, frames: usize) -> PyResult<u64> {
        self.config.count_flops(frames).map_err(err)
    }

    /// Calibrates on the given sequences and returns the int8 model.
    fn quantize(&self, calibration: Vec<Vec<Vec<f64>>>) -> PyResult<QuantizedModel> {
        let inputs = calibration.into_iter().map(to_tensor).collect::<PyResult<Vec<_>>>()?;
        let ranges = quant::calibrate(&self.params, &self.config, &inputs).map_err(err)?;
        let inner = QuantizedMslr::new(&self.params, &self.config, &ranges).map_err(err)?;
        Ok(QuantizedModel { inner })
    }
}

#[pyclass]
struct QuantizedModel {
    inner: QuantizedMslr,
}

#[pymethods]
impl QuantizedModel {
    /// `(conv_logp, bilstm_logp, saturated_values)`.
    fn forward(&self, frames: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
        let (out, stats) = self.inner.forward(&to_tensor(frames)?).map_err(err)?;
        Ok((to_rows(&out.conv_logp), to_rows(&out.bilstm_logp), stats.saturated))
    }

    fn packed_size(&self) -> PyResult<usize> {
        self.inner.packed_size().map_err(err)
    }
}

/// A pretrained two-stage gloss corrector loaded from an archive.
#[pyclass]
struct Corrector {
    inner: textcorr::Corrector,
}

#[pymethods]
impl Corrector {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: textcorr::Corrector::load(path).map_err(err)?,
        })
    }

    #[pyo3(signature = (ids, dual = true, preprocess = true))]
    fn correct(&self, ids: Vec<usize>, dual: bool, preprocess: bool) -> PyResult<Vec<usize>> {
        self.inner.correct(&ids, CorrectOptions { dual, preprocess }).map_err(err)
    }
}

#[pymodule]
#[pyo3(name = "signkd")]
fn signkd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ctc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_decode, m)?)?;
    m.add_function(wrap_pyfunction!(beam_decode, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_class::<Mslr>()?;
    m.add_class::<QuantizedModel>()?;
    m.add_class::<Corrector>()?;
    Ok(())
}
