use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use signkd::archive::Archive;
use signkd::augment::apply_policy;
use signkd::ctc::greedy_decode;
use signkd::data::{write_synth_dataset, DatasetManifest, LandmarkSequence, ManifestRecord, SynthConfig, Vocabulary};
use signkd::distill::{KdWeights, TeacherStreams};
use signkd::metrics::{report, wer, WerBreakdown};
use signkd::mslr::{forward, init_params, MslrConfig};
use signkd::params::ParamStore;
use signkd::quant::{bench, calibrate, f32_checkpoint_size, frame_agreement, reference_forward, QuantizedMslr, SaturationStats};
use signkd::rng::derive_seed;
use signkd::textcorr::{gloss_corpus, preprocess, pretrain, CorrectOptions, Corrector};
use signkd::train::{train, TrainConfig, TrainSample};

use crate::config::RunConfig;
use crate::CorrectFlags;

pub type CmdResult<T = ()> = Result<T, Box<dyn Error>>;

fn fail<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(msg.into().into())
}

/// Seed streams derived from the global seed.
mod stream {
    pub const SYNTH: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const INIT: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const CORRECTOR: u64 = 4;
    pub const GRAMMAR: u64 = 5;
}

pub struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

/// A checkpoint together with what is needed to run it.
struct Model {
    params: ParamStore,
    config: MslrConfig,
    vocab: Vocabulary,
}

fn meta_json<T: serde::de::DeserializeOwned>(a: &Archive, key: &str) -> CmdResult<T> {
    let text = a.text(key).ok_or_else(|| format!("archive lacks {key}"))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_model(path: &Path) -> CmdResult<Model> {
    let a = Archive::load(path)?;
    Ok(Model {
        params: ParamStore::from_archive(&a)?,
        config: meta_json(&a, "meta.mslr_config")?,
        vocab: Vocabulary::from_text(&a.text("meta.vocab").ok_or("checkpoint lacks its vocabulary")?)?,
    })
}

fn load_corrector(path: &Path) -> CmdResult<(Corrector, Vocabulary)> {
    let a = Archive::load(path)?;
    let vocab = Vocabulary::from_text(&a.text("meta.vocab").ok_or("corrector lacks its vocabulary")?)?;
    Ok((Corrector::from_archive(&a)?, vocab))
}

fn correct_options(flags: &CorrectFlags) -> CorrectOptions {
    CorrectOptions {
        dual: !flags.single,
        preprocess: !flags.no_preprocess,
    }
}

impl Run {
    pub fn start(cfg: RunConfig) -> CmdResult<Self> {
        let out = cfg.output_dir.clone();
        fs::create_dir_all(&out)?;
        let hash = cfg.hash();
        fs::write(out.join("resolved_config.toml"), cfg.to_toml())?;
        eprintln!("config_hash={hash}");
        Ok(Self { cfg, hash, out })
    }

    fn seed(&self, path: &[u64]) -> u64 {
        derive_seed(self.cfg.seed(), path)
    }

    fn meta(&self) -> Vec<(&str, &str)> {
        vec![("config_hash", self.hash.as_str())]
    }

    fn write_text(&self, name: &str, body: &str) -> CmdResult<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, format!("# config_hash={}\n{body}", self.hash))?;
        Ok(path)
    }

    fn manifest_or(&self, given: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> CmdResult<PathBuf> {
        given
            .or_else(|| fallback.clone())
            .ok_or_else(|| format!("no {what} manifest: pass one or set it under [data]").into())
    }

    fn vocabulary(&self, manifest: &Path) -> CmdResult<Vocabulary> {
        let path = match &self.cfg.data.vocab {
            Some(p) => p.clone(),
            None => manifest.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
        };
        Ok(Vocabulary::load(&path).map_err(|e| format!("vocabulary {}: {e}", path.display()))?)
    }

    fn save_manifest(&self, m: &DatasetManifest, path: &Path) -> CmdResult {
        fs::write(path, format!("# config_hash={}\n{}", self.hash, m.to_tsv()))?;
        Ok(())
    }

    fn samples(&self, manifest: &DatasetManifest, vocab: &Vocabulary, teachers: bool) -> CmdResult<Vec<TrainSample>> {
        manifest
            .records
            .iter()
            .map(|r| {
                let target = vocab.encode(&r.gloss);
                vocab.validate(target.ids())?;
                let teacher = match (&r.teacher, teachers) {
                    (Some(t), true) => Some(TeacherStreams::load(t)?),
                    (None, true) => {
                        return fail(format!("{} has no teacher streams", r.landmarks.display()))
                    }
                    _ => None,
                };
                Ok(TrainSample {
                    sequence: LandmarkSequence::load(&r.landmarks)?,
                    target,
                    teacher,
                })
            })
            .collect()
    }

    fn model_config(&self, vocab: &Vocabulary) -> CmdResult<MslrConfig> {
        let mut m = self.cfg.model.clone();
        if m.vocab_size == 0 {
            m.vocab_size = vocab.len();
        }
        if m.vocab_size != vocab.len() {
            return fail(format!("model.vocab_size {} does not match the {}-entry vocabulary", m.vocab_size, vocab.len()));
        }
        Ok(m)
    }

    pub fn synth(&self) -> CmdResult {
        let dir = self.out.join("data");
        let s = &self.cfg.splits;
        for (i, (split, n)) in [("train", s.train), ("dev", s.dev), ("test", s.test)].into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let sc = SynthConfig {
                seed: self.seed(&[stream::SYNTH, i as u64]),
                num_samples: n,
                split: split.into(),
                ..self.cfg.synth.clone()
            };
            let path = write_synth_dataset(&sc, &dir)?;
            let m = DatasetManifest::parse(&fs::read_to_string(&path)?, split)?;
            self.save_manifest(&m, &path)?;
            println!("wrote {} ({n} samples)", path.display());
        }
        Ok(())
    }

    pub fn augment(&self, input: Option<PathBuf>) -> CmdResult {
        let path = self.manifest_or(input, &self.cfg.data.train, "input")?;
        let m = DatasetManifest::load(&path)?;
        let dir = self.out.join("augmented");
        fs::create_dir_all(dir.join("landmarks"))?;
        let mut outm = DatasetManifest::new(format!("{}_aug", m.split));
        for (i, r) in m.records.iter().enumerate() {
            let seq = LandmarkSequence::load(&r.landmarks)?;
            let aug = apply_policy(&seq, &self.cfg.augment, self.seed(&[stream::AUGMENT, i as u64]))?;
            let rel = PathBuf::from("landmarks").join(format!("{}.lmk", seq.id));
            aug.save(dir.join(&rel))?;
            outm.records.push(ManifestRecord {
                landmarks: rel,
                gloss: r.gloss.clone(),
                teacher: r.teacher.clone(),
            });
        }
        let mpath = dir.join(format!("{}.tsv", outm.split));
        self.save_manifest(&outm, &mpath)?;
        println!("wrote {} ({} samples)", mpath.display(), outm.records.len());
        Ok(())
    }

    pub fn train(&self, distill: bool) -> CmdResult {
        let train_path = self.manifest_or(None, &self.cfg.data.train, "training")?;
        let vocab = self.vocabulary(&train_path)?;
        let mcfg = self.model_config(&vocab)?;
        let train_set = self.samples(&DatasetManifest::load(&train_path)?, &vocab, distill)?;
        let dev_set = match &self.cfg.data.dev {
            Some(p) => self.samples(&DatasetManifest::load(p)?, &vocab, false)?,
            None => Vec::new(),
        };
        let t = &self.cfg.train;
        let tc = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed(&[stream::TRAIN]),
            optimizer: t.optimizer.clone(),
            linear_decay: t.linear_decay,
            augment: t.augment,
            policy: self.cfg.augment.clone(),
            kd: if distill || self.cfg.kd.use_self {
                self.cfg.kd.clone()
            } else {
                KdWeights::off()
            },
            stop_at_zero_train_wer: t.stop_at_zero_train_wer,
        };
        let mut params = init_params(&mcfg, self.seed(&[stream::INIT]))?;
        let log_path = self.out.join("train_log.txt");
        let mut log = fs::File::create(&log_path)?;
        writeln!(log, "# config_hash={}", self.hash)?;
        let mut io_err = None;
        train(&mcfg, &tc, &mut params, &train_set, &dev_set, |l| {
            println!("{l}");
            if let Err(e) = writeln!(log, "{l}") {
                io_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        let ckpt = self.out.join("model.ckpt");
        let cfg_json = serde_json::to_string(&mcfg)?;
        let vocab_text = vocab.to_text();
        let mut meta = self.meta();
        meta.push(("mslr_config", &cfg_json));
        meta.push(("vocab", &vocab_text));
        params.save(&ckpt, &meta)?;
        println!("wrote {}", ckpt.display());
        Ok(())
    }

    pub fn export_teacher(&self, checkpoint: &Path, manifest: Option<PathBuf>) -> CmdResult {
        let model = load_model(checkpoint)?;
        let path = self.manifest_or(manifest, &self.cfg.data.train, "input")?;
        let m = DatasetManifest::load(&path)?;
        let dir = self.out.join("teacher");
        fs::create_dir_all(&dir)?;
        let mut outm = DatasetManifest::new(m.split.clone());
        for r in &m.records {
            let seq = LandmarkSequence::load(&r.landmarks)?;
            let streams = TeacherStreams::from_outputs(seq.id.clone(), &forward(&seq, &model.params, &model.config)?)?;
            let tpath = dir.join(format!("{}.tch", seq.id));
            streams.save(&tpath)?;
            outm.records.push(ManifestRecord {
                teacher: Some(fs::canonicalize(&tpath)?),
                landmarks: fs::canonicalize(&r.landmarks)?,
                gloss: r.gloss.clone(),
            });
        }
        let mpath = self.out.join(format!("{}_teacher.tsv", m.split));
        self.save_manifest(&outm, &mpath)?;
        println!("wrote {} ({} teacher files)", mpath.display(), outm.records.len());
        Ok(())
    }

    pub fn eval_transcripts(&self, hyp: &Path, reference: &Path) -> CmdResult {
        let h = DatasetManifest::parse(&fs::read_to_string(hyp)?, "hyp")?;
        let r = DatasetManifest::parse(&fs::read_to_string(reference)?, "ref")?;
        if h.records.len() != r.records.len() {
            return fail(format!("{} hypotheses for {} references", h.records.len(), r.records.len()));
        }
        let mut rows = Vec::new();
        for (hr, rr) in h.records.iter().zip(&r.records) {
            if hr.landmarks != rr.landmarks {
                return fail(format!(
                    "record order differs: {} vs {}",
                    hr.landmarks.display(),
                    rr.landmarks.display()
                ));
            }
            let id = rr.landmarks.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let b = wer(
                &rr.gloss.split_whitespace().collect::<Vec<_>>(),
                &hr.gloss.split_whitespace().collect::<Vec<_>>(),
            )?;
            rows.push((id, b));
        }
        self.finish_report(&rows, "")
    }

    fn finish_report(&self, rows: &[(String, WerBreakdown)], extra: &str) -> CmdResult {
        let body = report(rows.iter().map(|(id, b)| (id.as_str(), *b))) + extra;
        self.write_text("eval_report.txt", &body)?;
        print!("{body}");
        Ok(())
    }

    pub fn eval_model(
        &self,
        checkpoint: Option<PathBuf>,
        quantized: Option<PathBuf>,
        manifest: Option<PathBuf>,
        corrector: Option<PathBuf>,
        flags: &CorrectFlags,
    ) -> CmdResult {
        let Some(checkpoint) = checkpoint else {
            return fail("eval needs --checkpoint or --hyp with --reference");
        };
        let model = load_model(&checkpoint)?;
        let q = quantized.map(|p| QuantizedMslr::load(p)).transpose()?;
        let corr = corrector.map(|p| load_corrector(&p)).transpose()?;
        let path = self.manifest_or(manifest, &self.cfg.data.test, "evaluation")?;
        let samples = self.samples(&DatasetManifest::load(&path)?, &model.vocab, false)?;
        let mut rows = Vec::new();
        let mut sat = SaturationStats::default();
        for s in &samples {
            let x = s.sequence.to_tensor();
            let logp = match &q {
                Some(q) => {
                    let (out, st) = q.forward(&x)?;
                    sat.saturated += st.saturated;
                    sat.total += st.total;
                    out.bilstm_logp
                }
                None => reference_forward(&x, &model.params, &model.config)?.bilstm_logp,
            };
            let mut hyp = greedy_decode(&logp);
            if let Some((c, cv)) = &corr {
                let text = model.vocab.decode(hyp.ids());
                let ids = cv.encode(&text).0;
                let fixed = c.correct(&ids, correct_options(flags))?;
                hyp = model.vocab.encode(&cv.decode(&fixed));
            }
            rows.push((s.sequence.id.clone(), wer(&s.target, &hyp)?));
        }
        let extra = if q.is_some() {
            format!("saturated={} of {}\n", sat.saturated, sat.total)
        } else {
            String::new()
        };
        self.finish_report(&rows, &extra)
    }

    pub fn pretrain_corrector(&self, corpus: Option<PathBuf>) -> CmdResult {
        let (vocab, sentences) = match corpus {
            Some(p) => {
                let lines: Vec<String> = fs::read_to_string(&p)?
                    .lines()
                    .map(preprocess)
                    .filter(|l| !l.is_empty())
                    .collect();
                if lines.is_empty() {
                    return fail(format!("{} holds no sentences", p.display()));
                }
                (Vocabulary::build(&lines)?, lines)
            }
            None => {
                let g = &self.cfg.textcorr.grammar;
                (g.vocabulary(), gloss_corpus(g, self.cfg.textcorr.corpus_size, self.seed(&[stream::GRAMMAR]))?)
            }
        };
        let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s).0).collect();
        let cc = signkd::textcorr::CorrectorConfig {
            seed: self.seed(&[stream::CORRECTOR, self.cfg.corrector.seed]),
            ..self.cfg.corrector.clone()
        };
        let mut log = String::new();
        let (c, _) = pretrain(&ids, &vocab, &cc, |l| {
            let line = format!("stage={} epoch={} loss={:.9}", l.stage, l.epoch, l.loss);
            println!("{line}");
            let _ = writeln!(log, "{line}");
        })?;
        self.write_text("corrector_log.txt", &log)?;
        let path = self.out.join("corrector.sgt");
        let vocab_text = vocab.to_text();
        let mut meta = self.meta();
        meta.push(("vocab", &vocab_text));
        c.save(&path, &meta)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn correct(&self, corrector: &Path, input: &Path, flags: &CorrectFlags) -> CmdResult {
        let (c, vocab) = load_corrector(corrector)?;
        let opts = correct_options(flags);
        let mut out = String::new();
        for line in fs::read_to_string(input)?.lines() {
            let text = if opts.preprocess { preprocess(line) } else { line.to_string() };
            let ids = vocab.encode(&text).0;
            let fixed = if ids.is_empty() { ids } else { c.correct(&ids, opts)? };
            writeln!(out, "{}", vocab.decode(&fixed))?;
        }
        self.write_text("corrected.txt", &out)?;
        print!("{out}");
        Ok(())
    }

    pub fn quantize(&self, checkpoint: &Path, calibration: Option<PathBuf>, manifest: Option<PathBuf>) -> CmdResult {
        let model = load_model(checkpoint)?;
        let calib_path = self.manifest_or(calibration, &self.cfg.data.train, "calibration")?;
        let calib: Vec<_> = DatasetManifest::load(&calib_path)?
            .records
            .iter()
            .take(self.cfg.quant.calibration_samples)
            .map(|r| Ok(LandmarkSequence::load(&r.landmarks)?.to_tensor()))
            .collect::<CmdResult<_>>()?;
        let ranges = calibrate(&model.params, &model.config, &calib)?;
        let q = QuantizedMslr::new(&model.params, &model.config, &ranges)?;
        let path = self.out.join("model.q8");
        let mut a = q.to_archive()?;
        a.push_bytes("meta.config_hash", self.hash.as_bytes().to_vec())?;
        a.save(&path)?;
        let packed = fs::metadata(&path)?.len();
        let f32_size = f32_checkpoint_size(&model.params)?;
        let mut body = format!(
            "packed_bytes={packed}\nf32_bytes={f32_size}\nratio={:.4}\n",
            packed as f64 / f32_size as f64
        );
        let eval_path = manifest.or_else(|| self.cfg.data.test.clone());
        if let Some(p) = eval_path {
            let samples = self.samples(&DatasetManifest::load(&p)?, &model.vocab, false)?;
            let (mut agree, mut frames) = (0.0, 0usize);
            let (mut wf, mut wq) = (WerBreakdown::default(), WerBreakdown::default());
            let mut sat = SaturationStats::default();
            for s in &samples {
                let x = s.sequence.to_tensor();
                let f = reference_forward(&x, &model.params, &model.config)?;
                let (o, st) = q.forward(&x)?;
                sat.saturated += st.saturated;
                sat.total += st.total;
                let t = f.bilstm_logp.rows();
                agree += frame_agreement(&f, &o) * t as f64;
                frames += t;
                wf += wer(&s.target, &greedy_decode(&f.bilstm_logp))?;
                wq += wer(&s.target, &greedy_decode(&o.bilstm_logp))?;
            }
            write!(
                body,
                "frame_agreement={:.6}\nwer_fp32={:.6}\nwer_int8={:.6}\nsaturated={} of {}\n",
                agree / frames as f64,
                wf.wer(),
                wq.wer(),
                sat.saturated,
                sat.total
            )?;
        }
        self.write_text("quant_report.txt", &body)?;
        print!("wrote {}\n{body}", path.display());
        Ok(())
    }

    pub fn bench(&self, checkpoint: &Path, quantized: &Path, manifest: Option<PathBuf>) -> CmdResult {
        let model = load_model(checkpoint)?;
        let q = QuantizedMslr::load(quantized)?;
        let path = self.manifest_or(manifest, &self.cfg.data.test, "benchmark")?;
        let inputs: Vec<_> = DatasetManifest::load(&path)?
            .records
            .iter()
            .map(|r| Ok(LandmarkSequence::load(&r.landmarks)?.to_tensor()))
            .collect::<CmdResult<_>>()?;
        let r = bench(&model.params, &q, &inputs, self.cfg.quant.bench_repeats)?;
        let body = format!(
            "sequences={}\nfp32_frames_per_s={:.1}\nint8_frames_per_s={:.1}\nspeedup={:.3}\n",
            r.sequences,
            r.fp32_fps,
            r.int8_fps,
            r.speedup()
        );
        self.write_text("bench_report.txt", &body)?;
        print!("{body}");
        Ok(())
    }
}
