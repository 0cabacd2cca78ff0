//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its reports there and finishes with a run manifest.

use std::fmt::Write as _;
use std::path::PathBuf;

use conceptmark_core::attribution::{entry_truth, evaluate_encrypted, evaluate_heldout, evaluate_images, sample_attributed};
use conceptmark_core::baseline::FeatureIndex;
use conceptmark_core::codec::{cosine, read_secrets, write_secrets, CarrierBank};
use conceptmark_core::concepts::{entry_path, read_dataset, watermarks, ConceptId, ConceptRegistry, Dataset};
use conceptmark_core::diffusion::{
    load_checkpoint, save_checkpoint, Denoiser, IdentityCodec, IterationLog, LatentCodec, NoiseSchedule, PatchAutoencoder,
};
use conceptmark_core::parallel::Exec;
use conceptmark_core::robustness::robustness_report;
use conceptmark_core::{Error as CoreError, Image};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_file, write_report, Manifest};
use crate::pipeline::{self, Registries};

pub const BANK: &str = "bank.pmwb";
pub const SECRETS: &str = "secrets.txt";
pub const CONTENT_SECRETS: &str = "content_secrets.txt";
pub const DATASET: &str = "dataset";
pub const CHECKPOINT: &str = "model.pmck";
pub const AUTOENCODER: &str = "autoencoder.pmae";

/// Loaded per-run state plus the manifest being assembled.
pub struct Run {
    pub cfg: RunConfig,
    pub exec: Exec,
    manifest: Manifest,
}

fn require(path: PathBuf, producer: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput { path, producer })
    }
}

fn mismatch(msg: String) -> CliError {
    CliError::Core(CoreError::ShapeMismatch(msg))
}

impl Run {
    pub fn new(cfg: RunConfig, exec: Exec) -> Self {
        Run { cfg, exec, manifest: Manifest::default() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn input(&mut self, name: &str, producer: &'static str) -> CliResult<PathBuf> {
        let p = require(self.path(name), producer)?;
        self.manifest.input(&p);
        Ok(p)
    }

    fn report(&mut self, name: &str, body: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_report(&p, body)?;
        self.manifest.output(&p);
        Ok(p)
    }

    fn finish(self, command: &str) -> CliResult<()> {
        self.manifest.write(command, &self.cfg)?;
        Ok(())
    }

    fn bank(&mut self) -> CliResult<CarrierBank> {
        let p = self.input(BANK, "gen-bank")?;
        let bank = CarrierBank::load(&p)?;
        let shape = self.cfg.shape()?;
        if bank.shape() != shape || bank.bits() != self.cfg.codec.bits {
            return Err(mismatch(format!(
                "bank holds {} bits at {}, config asks for {} bits at {shape}",
                bank.bits(),
                bank.shape(),
                self.cfg.codec.bits
            )));
        }
        Ok(bank)
    }

    fn registry(&mut self, name: &str, seed: u64, expected: usize) -> CliResult<ConceptRegistry> {
        let p = self.input(name, "gen-bank")?;
        let reg = ConceptRegistry::from_secrets(read_secrets(&p)?, seed)?;
        if reg.len() != expected || reg.bits() != self.cfg.codec.bits {
            return Err(mismatch(format!(
                "{} holds {} secrets of {} bits, config asks for {expected} of {}",
                p.display(),
                reg.len(),
                reg.bits(),
                self.cfg.codec.bits
            )));
        }
        Ok(reg)
    }

    fn registries(&mut self) -> CliResult<Registries> {
        let seeds = self.cfg.seeds();
        let media = self.registry(SECRETS, seeds.registry, self.cfg.concepts.count)?;
        let content = if self.cfg.concepts.dual {
            Some(self.registry(CONTENT_SECRETS, seeds.content_registry, self.cfg.concepts.content_count)?)
        } else {
            None
        };
        Ok(Registries { media, content })
    }

    fn dataset(&mut self) -> CliResult<Dataset> {
        let p = self.input(DATASET, "build-dataset")?;
        let ds = read_dataset(&p)?;
        let shape = self.cfg.shape()?;
        if ds.shape != shape {
            return Err(mismatch(format!("dataset images are {}, config asks for {shape}", ds.shape)));
        }
        if ds.is_dual() != self.cfg.concepts.dual {
            return Err(CliError::Config(format!(
                "dataset dual={} disagrees with concepts.dual={}",
                ds.is_dual(),
                self.cfg.concepts.dual
            )));
        }
        Ok(ds)
    }

    fn codec(&mut self) -> CliResult<Box<dyn LatentCodec>> {
        match self.cfg.diffusion.latent.as_str() {
            "patch" => {
                let p = self.input(AUTOENCODER, "train")?;
                Ok(Box::new(PatchAutoencoder::load(&p)?))
            }
            _ => Ok(Box::new(IdentityCodec)),
        }
    }

    fn model(&mut self) -> CliResult<(Denoiser, NoiseSchedule)> {
        let p = self.input(CHECKPOINT, "train")?;
        Ok(load_checkpoint(&p)?)
    }
}

pub fn gen_bank(mut run: Run) -> CliResult<String> {
    let bank = pipeline::generate_bank(&run.cfg, run.exec)?;
    let regs = Registries::generate(&run.cfg)?;
    std::fs::create_dir_all(&run.cfg.out).map_err(|e| CliError::io(&run.cfg.out, e))?;
    let bank_path = run.path(BANK);
    bank.save(&bank_path)?;
    run.manifest.output(&bank_path);
    let mut lines = vec![("media", SECRETS, &regs.media)];
    if let Some(c) = &regs.content {
        lines.push(("content", CONTENT_SECRETS, c));
    }
    let mut body = String::from("registry,concepts,bits,codebook,min_hamming\n");
    for (label, file, reg) in lines {
        let p = run.path(file);
        write_secrets(&p, reg.secrets())?;
        run.manifest.output(&p);
        writeln!(body, "{label},{},{},{:?},{}", reg.len(), reg.bits(), reg.codebook(), reg.min_hamming()).expect("string write");
    }
    let report = run.report("gen-bank.csv", &body)?;
    run.finish("gen-bank")?;
    Ok(format!("wrote {} and {}", bank_path.display(), report.display()))
}

pub fn build_dataset(mut run: Run) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let ds = pipeline::build_dataset(&run.cfg, &bank, &regs)?;
    let dir = run.path(DATASET);
    conceptmark_core::concepts::write_dataset(&ds, &dir)?;
    run.manifest.output(&dir);
    let (train, held) = (ds.train().count(), ds.held_out().count());
    let psnr = pipeline::mean_psnr(&ds)?;
    let body = format!("images,train,heldout,strength,mean_psnr\n{},{train},{held},{},{psnr:.6}\n", ds.entries.len(), ds.strength);
    run.report("build-dataset.csv", &body)?;
    run.finish("build-dataset")?;
    Ok(format!("wrote {} ({train} train, {held} held out, mean PSNR {psnr:.2} dB)", dir.display()))
}

pub fn train(mut run: Run, mut progress: impl FnMut(&IterationLog)) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let ds = run.dataset()?;
    let dec = pipeline::decoder(&run.cfg, &bank)?;
    let schedule = run.cfg.schedule()?;
    let codec: Box<dyn LatentCodec> = match pipeline::fit_autoencoder(&run.cfg, &ds)? {
        Some(ae) => {
            let p = run.path(AUTOENCODER);
            ae.save(&p)?;
            run.manifest.output(&p);
            Box::new(ae)
        }
        None => Box::new(IdentityCodec),
    };
    let every = run.cfg.train.log_every;
    let (model, logs) = pipeline::train_model(&run.cfg, run.exec, &ds, &schedule, codec.as_ref(), &dec, &regs, |l| {
        if l.iteration % every == 0 {
            progress(l)
        }
    })?;
    let mut body = format!("{}\n", IterationLog::HEADER);
    for (k, l) in logs.iter().enumerate() {
        if l.iteration % every == 0 || k + 1 == logs.len() {
            writeln!(body, "{l}").expect("string write");
        }
    }
    run.report("train_log.csv", &body)?;
    let ck = run.path(CHECKPOINT);
    save_checkpoint(&ck, &model, &schedule)?;
    run.manifest.output(&ck);
    run.finish("train")?;
    let last = logs.last().map_or(String::new(), |l| format!(", final loss {:.4}", l.loss.total));
    Ok(format!("wrote {} after {} iterations{last}", ck.display(), logs.len()))
}

pub fn sample(mut run: Run) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let (model, schedule) = run.model()?;
    let codec = run.codec()?;
    let dec = pipeline::decoder(&run.cfg, &bank)?;
    let at = regs.attributor(&dec)?;
    let conditional = model.config().classes > 0;
    let per_class = run.cfg.eval.samples_per_class;
    let (images, report) = sample_attributed(
        run.exec,
        &model,
        &schedule,
        codec.as_ref(),
        &at,
        run.cfg.concepts.count,
        per_class,
        conditional,
        run.cfg.seeds().eval,
    )?;
    let dir = run.path("samples");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (k, img) in images.iter().enumerate() {
        img.write_pnm(&dir.join(format!("{k:06}.{}", if img.shape().channels == 1 { "pgm" } else { "ppm" })))?;
    }
    run.manifest.output(&dir);
    let mut body = format!("# conditional={conditional} reverse=ddpm\n");
    body.push_str(&report.to_text());
    let p = run.report("sample.csv", &body)?;
    run.finish("sample")?;
    Ok(format!(
        "wrote {} images and {} (accuracy {:.4}, null rate {:.4})",
        images.len(),
        p.display(),
        report.accuracy(),
        report.null_rate()
    ))
}

fn collect_images(inputs: &[PathBuf], out: &mut Vec<PathBuf>) -> CliResult<()> {
    for p in inputs {
        if p.is_dir() {
            let mut children = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(p, err)))
                .collect::<CliResult<Vec<_>>>()?;
            children.retain(|c| c.is_dir() || matches!(c.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")));
            children.sort();
            collect_images(&children, out)?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::MissingInput { path: p.clone(), producer: "sample" });
        }
    }
    Ok(())
}

pub fn attribute(mut run: Run, inputs: &[PathBuf]) -> CliResult<String> {
    if inputs.is_empty() {
        return Err(CliError::Config("attribute needs at least one image or directory".into()));
    }
    let bank = run.bank()?;
    let regs = run.registries()?;
    let dec = pipeline::decoder(&run.cfg, &bank)?;
    let at = regs.attributor(&dec)?;
    let mut files = Vec::new();
    collect_images(inputs, &mut files)?;
    let mut items = Vec::with_capacity(files.len());
    for f in &files {
        run.manifest.input(f);
        let img = Image::read_pnm(f)?;
        if img.shape() != bank.shape() {
            return Err(mismatch(format!("{} is {}, the bank expects {}", f.display(), img.shape(), bank.shape())));
        }
        items.push((f.display().to_string(), Vec::new(), img));
    }
    let report = evaluate_images(run.exec, &items, &at)?;
    let p = run.report("attribute.csv", &report.to_text())?;
    run.finish("attribute")?;
    Ok(format!("attributed {} images, wrote {}", items.len(), p.display()))
}

/// Visual-similarity baseline: held-out encrypted images are matched against
/// the clean training images.
fn baseline_text(exec: Exec, ds: &Dataset) -> CliResult<(String, f64)> {
    let train: Vec<(&Image, ConceptId)> = ds.train().map(|e| (&e.clean, e.concept)).collect();
    let index = FeatureIndex::build(exec, &train);
    let mut body = String::from("path,true,predicted,cosine\n");
    let (mut correct, mut total) = (0usize, 0usize);
    for (i, e) in ds.entries.iter().enumerate() {
        if e.partition != conceptmark_core::concepts::Partition::HeldOut {
            continue;
        }
        let (pred, cos) = index.nearest_concept(&e.encrypted)?;
        correct += usize::from(pred == e.concept);
        total += 1;
        writeln!(body, "{},{},{},{cos:.6}", entry_path(ds.shape, i), e.concept, pred).expect("string write");
    }
    let acc = correct as f64 / total.max(1) as f64;
    writeln!(body, "# summary\nimages,{total}\naccuracy,{acc:.6}").expect("string write");
    Ok((body, acc))
}

pub fn eval(mut run: Run) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let ds = run.dataset()?;
    let dec = pipeline::decoder(&run.cfg, &bank)?;
    let at = regs.attributor(&dec)?;
    let (header, report) = if run.path(CHECKPOINT).exists() {
        let (model, schedule) = run.model()?;
        let codec = run.codec()?;
        let proto = pipeline::heldout_protocol(&run.cfg, model.config().classes > 0)?;
        let header = format!("# protocol=heldout t={}..={} reverse={}\n", proto.t_min, proto.t_max, run.cfg.eval.reverse);
        (header, evaluate_heldout(run.exec, &model, &schedule, codec.as_ref(), &ds, &at, proto)?)
    } else {
        ("# protocol=codec-only\n".to_string(), evaluate_encrypted(run.exec, &ds, &at)?)
    };
    let p = run.report("eval.csv", &(header + &report.to_text()))?;
    let (base, base_acc) = baseline_text(run.exec, &ds)?;
    run.report("baseline.csv", &base)?;
    run.finish("eval")?;
    let acc = if report.heads.len() > 1 { report.combined_accuracy() } else { report.accuracy() };
    Ok(format!("wrote {} (accuracy {acc:.4}, baseline {base_acc:.4})", p.display()))
}

pub fn robustness(mut run: Run) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let ds = run.dataset()?;
    let dec = pipeline::decoder(&run.cfg, &bank)?;
    let at = regs.attributor(&dec)?;
    let items: Vec<(String, Vec<ConceptId>, Image)> = ds
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.partition == conceptmark_core::concepts::Partition::HeldOut)
        .map(|(i, e)| (entry_path(ds.shape, i), entry_truth(e), e.encrypted.clone()))
        .collect();
    let degradations = run.cfg.degradations()?;
    let rep = robustness_report(run.exec, &items, &at, &degradations, run.cfg.seeds().eval)?;
    let p = run.report("robustness.csv", &rep.to_text())?;
    run.finish("robustness")?;
    let (m, sd) = rep.mean_std();
    Ok(format!("wrote {} (clean {:.4}, degraded {m:.4} ± {sd:.4})", p.display(), rep.clean.accuracy()))
}

/// Cosine matrix of registry watermarks and its off-diagonal extremes.
pub fn cosine_matrix(exec: Exec, reg: &ConceptRegistry, bank: &CarrierBank) -> CliResult<Vec<Vec<f64>>> {
    let wms = watermarks(reg, bank)?;
    let rows = conceptmark_core::parallel::map_range(exec, wms.len(), |i| {
        wms.iter().map(|w| cosine(&wms[i].pattern, &w.pattern)).collect::<Result<Vec<_>, _>>()
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>, _>>()?)
}

pub fn ortho_report(mut run: Run) -> CliResult<String> {
    let bank = run.bank()?;
    let regs = run.registries()?;
    let m = cosine_matrix(run.exec, &regs.media, &bank)?;
    let mut body = String::new();
    let (mut max_off, mut diag_err) = (0.0f64, 0.0f64);
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
        for (j, v) in row.iter().enumerate() {
            if i == j {
                diag_err = diag_err.max((v - 1.0).abs());
            } else {
                max_off = max_off.max(v.abs());
            }
        }
    }
    writeln!(body, "# summary\nwatermarks,{}\nshape,{}\nmax_offdiag_abs,{max_off:.6}\nmax_diag_error,{diag_err:.3e}", m.len(), bank.shape())
        .expect("string write");
    let p = run.report("ortho.csv", &body)?;
    run.finish("ortho-report")?;
    Ok(format!("wrote {} ({}x{} matrix, max off-diagonal |cos| {max_off:.4})", p.display(), m.len(), m.len()))
}

fn gnuplot_script(table: &str, kind: &str) -> String {
    format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset xlabel '{kind}'\nset ylabel 'accuracy'\n\
         set y2label 'PSNR (dB)'\nset y2tics\nplot '{table}' every ::1 using 1:2 with linespoints title 'accuracy', \\\n\
         '' every ::1 using 1:3 axes x1y2 with linespoints title 'psnr'\n"
    )
}

pub fn sweep(mut run: Run, mut progress: impl FnMut(&str)) -> CliResult<String> {
    let kind = run.cfg.sweep.kind.clone();
    let mut body = format!("# sweep={kind} iterations={}\n{kind},accuracy,psnr\n", run.cfg.sweep.iterations);
    let mut rows = Vec::new();
    for x in run.cfg.sweep_values() {
        let mut c = run.cfg.clone();
        let as_count = || -> CliResult<usize> {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(CliError::Config(format!("sweep value {x} is not a positive integer")))
            }
        };
        match kind.as_str() {
            "strength" => c.codec.strength = x,
            "concepts" => c.concepts.count = as_count()?,
            _ => c.concepts.per_concept = as_count()?,
        }
        c.validate()?;
        let (report, psnr) = pipeline::evaluate_point(&c, run.exec, c.sweep.iterations)?;
        let acc = if report.heads.len() > 1 { report.combined_accuracy() } else { report.accuracy() };
        let line = format!("{x},{acc:.6},{psnr:.6}");
        progress(&line);
        writeln!(body, "{line}").expect("string write");
        rows.push((x, acc, psnr));
    }
    let table = format!("sweep_{kind}.csv");
    let p = run.report(&table, &body)?;
    if run.cfg.sweep.plot {
        let gp = run.path(&format!("sweep_{kind}.gp"));
        write_file(&gp, gnuplot_script(&table, &kind).as_bytes())?;
        run.manifest.output(&gp);
    }
    run.finish("sweep")?;
    Ok(format!("wrote {} ({} points)", p.display(), rows.len()))
}
